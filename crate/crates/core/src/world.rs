//! Occluded 2-D gridworld with a synthetic feature sensor.
//!
//! Coordinates are cell indices with `x` to the right and `y` downwards. A
//! heading of `h` degrees points along `(cos h, sin h)`, so turning right adds
//! 10 degrees and turning left subtracts 10. Cells are 0.25 m wide.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

pub const TURN_STEP_DEG: i32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub cell_size_m: f64,
    /// Target fraction of interior cells covered by wall segments.
    pub wall_density: f64,
    pub wall_segment_len: (usize, usize),
    /// Inclusive range of target cell counts; targets are rectangles up to 7x7.
    pub target_cells: (usize, usize),
    pub fov_deg: f64,
    pub range_m: f64,
    /// Observed-cell count at which the apparent-size factor saturates.
    pub cap_cells: usize,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub start_distance_m: (f64, f64),
    pub prototype_seed: u64,
    /// Probability that the target cue reports "not visible" although target
    /// cells are in view, emulating a lost tracker. Features are unaffected.
    pub cue_dropout: f64,
    pub max_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            class_count: 8,
            feature_dim: 16,
            grid_width: 32,
            grid_height: 32,
            cell_size_m: 0.25,
            wall_density: 0.12,
            wall_segment_len: (3, 8),
            target_cells: (20, 49),
            fov_deg: 90.0,
            range_m: 8.0,
            cap_cells: 30,
            sigma0: 1.0,
            sigma_min: 0.05,
            start_distance_m: (3.0, 6.0),
            prototype_seed: 2024,
            cue_dropout: 0.0,
            max_attempts: 64,
        }
    }
}

const MAX_TARGET_SIDE: usize = 7;

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidConfig(m));
        if self.class_count < 2 || self.feature_dim == 0 {
            return bad("need at least 2 classes and a positive feature dimension".into());
        }
        if self.grid_width < 8 || self.grid_height < 8 {
            return bad("grid must be at least 8x8".into());
        }
        if !(self.cell_size_m > 0.0) || !(self.range_m > 0.0) {
            return bad("cell size and range must be positive".into());
        }
        if !(0.0..0.6).contains(&self.wall_density) {
            return bad(format!("wall_density {} outside [0, 0.6)", self.wall_density));
        }
        let (lo, hi) = self.target_cells;
        if lo == 0 || lo > hi || hi > MAX_TARGET_SIDE * MAX_TARGET_SIDE {
            return bad(format!("target_cells range {lo}..={hi} invalid"));
        }
        let (smin, smax) = self.wall_segment_len;
        if smin == 0 || smin > smax {
            return bad("wall_segment_len range invalid".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 360.0) {
            return bad("fov_deg must be in (0, 360)".into());
        }
        if self.cap_cells == 0 {
            return bad("cap_cells must be positive".into());
        }
        if !(self.sigma0 >= 0.0) || !(self.sigma_min >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        let (dmin, dmax) = self.start_distance_m;
        if !(dmin >= 0.0 && dmin <= dmax) {
            return bad("start_distance_m range invalid".into());
        }
        if !(0.0..=1.0).contains(&self.cue_dropout) {
            return bad("cue_dropout must be in [0, 1]".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight];

    pub fn index(self) -> usize {
        match self {
            Action::MoveForward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    /// Degrees, a multiple of 10 in `[0, 360)`.
    pub heading: i32,
}

impl Pose {
    pub fn new(x: i32, y: i32, heading: i32) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn turned(self, delta: i32) -> Self {
        Self::new(self.x, self.y, self.heading + delta)
    }
}

/// Snaps to the 10-degree lattice in `[0, 360)`.
pub fn normalize_heading(h: i32) -> i32 {
    let step = TURN_STEP_DEG;
    let snapped = ((h as f64 / step as f64).round() as i32) * step;
    snapped.rem_euclid(360)
}

/// Wraps an angle difference into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

const OCTANTS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Heading rounded to the nearest axis or diagonal.
pub fn heading_octant(heading: i32) -> (i32, i32) {
    let i = (heading as f64 / 45.0).round() as i32;
    OCTANTS[i.rem_euclid(8) as usize]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    target: Vec<(i32, i32)>,
    target_class: usize,
}

impl Scene {
    /// Builds a scene from explicit parts. Target cells must be in bounds, not
    /// walls and non-empty.
    pub fn from_parts(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        target: Vec<(i32, i32)>,
        target_class: usize,
    ) -> Result<Self, WorldError> {
        if walls.len() != width * height {
            return Err(WorldError::InvalidConfig("wall bitmap size mismatch".into()));
        }
        let mut scene = Self {
            seed: 0,
            width,
            height,
            walls,
            target: Vec::new(),
            target_class,
        };
        if target.is_empty() {
            return Err(WorldError::InvalidConfig("target needs at least one cell".into()));
        }
        if target.iter().any(|&(x, y)| !scene.in_bounds(x, y) || scene.is_wall(x, y)) {
            return Err(WorldError::InvalidConfig("target cells must be free".into()));
        }
        scene.target = target;
        Ok(scene)
    }

    /// Open room of the given size with a border wall.
    pub fn open_room(width: usize, height: usize, target: Vec<(i32, i32)>, class: usize) -> Result<Self, WorldError> {
        let mut walls = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    walls[y * width + x] = true;
                }
            }
        }
        Self::from_parts(width, height, walls, target, class)
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Out-of-bounds counts as wall.
    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        !self.in_bounds(x, y) || self.walls[y as usize * self.width + x as usize]
    }

    pub fn set_wall(&mut self, x: i32, y: i32, wall: bool) {
        if self.in_bounds(x, y) && !self.is_target(x, y) {
            self.walls[y as usize * self.width + x as usize] = wall;
        }
    }

    pub fn is_target(&self, x: i32, y: i32) -> bool {
        self.target.contains(&(x, y))
    }

    /// Free for the agent: in bounds, not a wall and not part of the target.
    pub fn is_free(&self, x: i32, y: i32) -> bool {
        !self.is_wall(x, y) && !self.is_target(x, y)
    }

    pub fn target_cells(&self) -> &[(i32, i32)] {
        &self.target
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    /// Mean of the target cell centres, in cell units.
    pub fn target_center(&self) -> (f64, f64) {
        let n = self.target.len() as f64;
        let (sx, sy) = self
            .target
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64 + 0.5, b + y as f64 + 0.5));
        (sx / n, sy / n)
    }

    pub fn wall_count(&self) -> usize {
        self.walls.iter().filter(|&&w| w).count()
    }

    /// `true` if the straight segment between the two cell centres passes
    /// through no wall. A ray through an exact corner is blocked when either
    /// cell sharing that corner is a wall. Target cells do not occlude.
    pub fn line_of_sight(&self, from: (i32, i32), to: (i32, i32)) -> bool {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let (sx, sy) = (dx.signum(), dy.signum());
        let (nx, ny) = (dx.abs() as i64, dy.abs() as i64);
        let (mut cx, mut cy) = from;
        let (mut i, mut j) = (0i64, 0i64);
        while (cx, cy) != to {
            // boundary crossings at t = (2i+1)/(2nx) and (2j+1)/(2ny)
            let x_first = j >= ny || (i < nx && (2 * i + 1) * ny < (2 * j + 1) * nx);
            let y_first = i >= nx || (j < ny && (2 * j + 1) * nx < (2 * i + 1) * ny);
            if x_first {
                cx += sx;
                i += 1;
            } else if y_first {
                cy += sy;
                j += 1;
            } else {
                if self.is_wall(cx + sx, cy) || self.is_wall(cx, cy + sy) {
                    return false;
                }
                cx += sx;
                cy += sy;
                i += 1;
                j += 1;
            }
            if (cx, cy) != to && self.is_wall(cx, cy) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityStats {
    pub visibility: f64,
    pub distance_m: f64,
    pub observed_cells: usize,
}

/// What the policy may see about the target besides the features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub visible: bool,
    pub visibility: f64,
    pub distance_m: f64,
    pub observed_cells: usize,
    /// Target-centre bearing relative to the heading, degrees, positive to
    /// the right. Present only while the target is visible.
    pub bearing_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub cue: Cue,
    pub quality: f64,
    /// Ground truth; never part of the policy input.
    pub true_class: usize,
}

/// Observation quality from view statistics.
pub fn view_quality(stats: &VisibilityStats, cap_cells: usize) -> f64 {
    if stats.observed_cells == 0 {
        return 0.0;
    }
    let near = (1.0 - (stats.distance_m - 3.0) / 3.0).clamp(0.0, 1.0);
    let size = (stats.observed_cells as f64 / cap_cells as f64).min(1.0);
    (0.2 * stats.visibility + 0.2 * near + 0.6 * size).clamp(0.0, 1.0)
}

/// `n` independent unit vectors of dimension `d`.
pub fn random_unit_vectors<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// World configuration plus the class prototypes it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: WorldConfig,
    prototypes: Vec<Vec<f64>>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.prototype_seed);
        let prototypes = random_unit_vectors(config.class_count, config.feature_dim, &mut rng);
        Ok(Self { config, prototypes })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    fn cells_per_meter(&self) -> f64 {
        1.0 / self.config.cell_size_m
    }

    /// Euclidean distance in metres between the agent and the target centre.
    pub fn target_distance(&self, scene: &Scene, x: i32, y: i32) -> f64 {
        let (tx, ty) = scene.target_center();
        (tx - (x as f64 + 0.5)).hypot(ty - (y as f64 + 0.5)) * self.config.cell_size_m
    }

    /// Bearing of the target centre relative to the heading, in `(-180, 180]`.
    pub fn bearing_error(&self, scene: &Scene, pose: Pose) -> f64 {
        let (tx, ty) = scene.target_center();
        let angle = (ty - (pose.y as f64 + 0.5)).atan2(tx - (pose.x as f64 + 0.5)).to_degrees();
        wrap_degrees(angle - pose.heading as f64)
    }

    pub fn generate_scene(&self, seed: u64) -> Result<Scene, WorldError> {
        let c = &self.config;
        for attempt in 0..c.max_attempts {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, attempt as u64]));
            if let Some(mut scene) = self.try_generate(&mut rng) {
                scene.seed = seed;
                return Ok(scene);
            }
        }
        Err(WorldError::GenerationFailed {
            seed,
            attempts: c.max_attempts,
        })
    }

    fn try_generate(&self, rng: &mut ChaCha8Rng) -> Option<Scene> {
        let c = &self.config;
        let (w, h) = (c.grid_width, c.grid_height);
        let mut scene = Scene::open_room(w, h, vec![(1, 1)], 0).ok()?;
        scene.target.clear();

        let interior = (w - 2) * (h - 2);
        let wanted = (c.wall_density * interior as f64).round() as usize;
        let mut placed = 0;
        let mut guard = 0;
        while placed < wanted && guard < 10 * interior {
            guard += 1;
            let len = rng.random_range(c.wall_segment_len.0..=c.wall_segment_len.1) as i32;
            let horizontal = rng.random_bool(0.5);
            let x0 = rng.random_range(1..w as i32 - 1);
            let y0 = rng.random_range(1..h as i32 - 1);
            for k in 0..len {
                let (x, y) = if horizontal { (x0 + k, y0) } else { (x0, y0 + k) };
                if x >= w as i32 - 1 || y >= h as i32 - 1 || placed >= wanted {
                    break;
                }
                if !scene.is_wall(x, y) {
                    scene.set_wall(x, y, true);
                    placed += 1;
                }
            }
        }

        let (lo, hi) = c.target_cells;
        let (tw, th) = loop {
            let tw = rng.random_range(1..=MAX_TARGET_SIDE);
            let th = rng.random_range(1..=MAX_TARGET_SIDE);
            if (lo..=hi).contains(&(tw * th)) {
                break (tw as i32, th as i32);
            }
        };
        let class = rng.random_range(0..c.class_count);
        for _ in 0..64 {
            if tw >= w as i32 - 2 || th >= h as i32 - 2 {
                return None;
            }
            let x0 = rng.random_range(1..w as i32 - 1 - tw);
            let y0 = rng.random_range(1..h as i32 - 1 - th);
            let cells: Vec<(i32, i32)> = (0..th)
                .flat_map(|dy| (0..tw).map(move |dx| (x0 + dx, y0 + dy)))
                .collect();
            if cells.iter().any(|&(x, y)| scene.is_wall(x, y)) {
                continue;
            }
            scene.target = cells;
            scene.target_class = class;
            if !self.start_candidates(&scene).is_empty() {
                return Some(scene);
            }
            scene.target.clear();
        }
        None
    }

    /// Free cells whose distance to the target centre lies in the start range.
    pub fn start_candidates(&self, scene: &Scene) -> Vec<(i32, i32)> {
        let (dmin, dmax) = self.config.start_distance_m;
        let mut out = Vec::new();
        for y in 0..scene.height as i32 {
            for x in 0..scene.width as i32 {
                if scene.is_free(x, y) {
                    let d = self.target_distance(scene, x, y);
                    if d >= dmin && d <= dmax {
                        out.push((x, y));
                    }
                }
            }
        }
        out
    }

    pub fn step(&self, scene: &Scene, pose: Pose, action: Action) -> Pose {
        match action {
            Action::TurnLeft => pose.turned(-TURN_STEP_DEG),
            Action::TurnRight => pose.turned(TURN_STEP_DEG),
            Action::MoveForward => {
                if self.forward_blocked(scene, pose) {
                    pose
                } else {
                    let (dx, dy) = heading_octant(pose.heading);
                    Pose::new(pose.x + dx, pose.y + dy, pose.heading)
                }
            }
        }
    }

    /// Forward is blocked by a non-free destination or, diagonally, by two
    /// non-free orthogonal neighbours.
    pub fn forward_blocked(&self, scene: &Scene, pose: Pose) -> bool {
        let (dx, dy) = heading_octant(pose.heading);
        let (nx, ny) = (pose.x + dx, pose.y + dy);
        if !scene.is_free(nx, ny) {
            return true;
        }
        dx != 0 && dy != 0 && !scene.is_free(pose.x + dx, pose.y) && !scene.is_free(pose.x, pose.y + dy)
    }

    pub fn in_view(&self, pose: Pose, cell: (i32, i32)) -> bool {
        let dx = (cell.0 - pose.x) as f64;
        let dy = (cell.1 - pose.y) as f64;
        if dx.hypot(dy) > self.config.range_m * self.cells_per_meter() + 1e-9 {
            return false;
        }
        if dx == 0.0 && dy == 0.0 {
            return true;
        }
        let off = wrap_degrees(dy.atan2(dx).to_degrees() - pose.heading as f64);
        off.abs() <= self.config.fov_deg / 2.0 + 1e-9
    }

    pub fn visibility_stats(&self, scene: &Scene, pose: Pose) -> VisibilityStats {
        let observed = scene
            .target
            .iter()
            .filter(|&&cell| self.in_view(pose, cell) && scene.line_of_sight((pose.x, pose.y), cell))
            .count();
        VisibilityStats {
            visibility: observed as f64 / scene.target.len() as f64,
            distance_m: self.target_distance(scene, pose.x, pose.y),
            observed_cells: observed,
        }
    }

    /// Draws one observation. Consumes `feature_dim` normal draws, plus one
    /// uniform draw when cue dropout is enabled.
    pub fn observe<R: Rng + ?Sized>(&self, scene: &Scene, pose: Pose, rng: &mut R) -> Observation {
        let c = &self.config;
        let stats = self.visibility_stats(scene, pose);
        let q = view_quality(&stats, c.cap_cells);
        let mu = self.prototype(scene.target_class);
        let features: Vec<f64> = if stats.observed_cells == 0 {
            (0..c.feature_dim)
                .map(|_| c.sigma0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            let s = c.sigma0 * (1.0 - q) + c.sigma_min;
            mu.iter()
                .map(|m| q * m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut visible = stats.observed_cells > 0;
        if c.cue_dropout > 0.0 && rng.random::<f64>() < c.cue_dropout {
            visible = false;
        }
        Observation {
            features,
            cue: Cue {
                visible,
                visibility: if visible { stats.visibility } else { 0.0 },
                distance_m: stats.distance_m,
                observed_cells: if visible { stats.observed_cells } else { 0 },
                bearing_deg: visible.then(|| self.bearing_error(scene, pose)),
            },
            quality: q,
            true_class: scene.target_class,
        }
    }

    /// Privileged heuristic: turn to centre the target, then walk towards it.
    ///
    /// Turns whenever the bearing error exceeds 5 degrees (180 degrees turns
    /// left). When aligned it moves forward if farther than 1.5 m and the
    /// move is possible, otherwise it dithers around the target direction.
    pub fn fixation_action(&self, scene: &Scene, pose: Pose) -> Action {
        let err = self.bearing_error(scene, pose);
        if err.abs() > 5.0 {
            return if err > 0.0 && err < 180.0 {
                Action::TurnRight
            } else {
                Action::TurnLeft
            };
        }
        if self.target_distance(scene, pose.x, pose.y) > 1.5 && !self.forward_blocked(scene, pose) {
            return Action::MoveForward;
        }
        if err > 0.0 {
            Action::TurnRight
        } else {
            Action::TurnLeft
        }
    }

    /// Text rendering: `#` wall, `T` target, `.` free, agent as a heading arrow.
    pub fn ascii(&self, scene: &Scene, pose: Option<Pose>) -> String {
        let mut out = String::new();
        if let Some(p) = pose {
            let _ = writeln!(out, "@ ({}, {}) heading {} {}", p.x, p.y, p.heading, heading_glyph(p.heading));
        }
        for y in 0..scene.height as i32 {
            for x in 0..scene.width as i32 {
                let ch = match pose {
                    Some(p) if p.x == x && p.y == y => heading_glyph(p.heading),
                    _ if scene.is_wall(x, y) => '#',
                    _ if scene.is_target(x, y) => 'T',
                    _ => '.',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

fn heading_glyph(heading: i32) -> char {
    const GLYPHS: [char; 8] = ['>', '\\', 'v', '/', '<', '\\', '^', '/'];
    let i = (heading as f64 / 45.0).round() as i32;
    GLYPHS[i.rem_euclid(8) as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(WorldConfig::default()).unwrap()
    }

    #[test]
    fn scenes_are_deterministic() {
        let w = world();
        assert_eq!(w.generate_scene(17).unwrap(), w.generate_scene(17).unwrap());
        assert_ne!(w.generate_scene(17).unwrap(), w.generate_scene(18).unwrap());
    }

    #[test]
    fn hundred_seeds_generate() {
        let w = world();
        for seed in 0..100 {
            let s = w.generate_scene(seed).unwrap();
            assert!(!s.target_cells().is_empty());
            assert!(s.target_cells().iter().all(|&(x, y)| !s.is_wall(x, y)));
            assert!(!w.start_candidates(&s).is_empty());
        }
    }

    #[test]
    fn turn_inverse_and_full_rotation() {
        let w = world();
        let s = w.generate_scene(1).unwrap();
        let (x, y) = w.start_candidates(&s)[0];
        let p = Pose::new(x, y, 40);
        assert_eq!(w.step(&s, w.step(&s, p, Action::TurnLeft), Action::TurnRight), p);
        let mut q = p;
        for _ in 0..36 {
            q = w.step(&s, q, Action::TurnLeft);
        }
        assert_eq!(q, p);
    }

    #[test]
    fn forward_into_wall_is_noop() {
        let w = world();
        let s = Scene::open_room(10, 10, vec![(7, 7)], 0).unwrap();
        let p = Pose::new(1, 1, 180);
        assert_eq!(w.step(&s, p, Action::MoveForward), p);
        let p = Pose::new(3, 3, 0);
        assert_eq!(w.step(&s, p, Action::MoveForward), Pose::new(4, 3, 0));
        let p = Pose::new(6, 6, 40);
        assert_eq!(w.step(&s, p, Action::MoveForward), p, "target cells block movement");
    }

    #[test]
    fn diagonal_squeeze_is_blocked() {
        let w = world();
        let mut s = Scene::open_room(10, 10, vec![(8, 8)], 0).unwrap();
        s.set_wall(4, 3, true);
        s.set_wall(3, 4, true);
        let p = Pose::new(3, 3, 40);
        assert_eq!(w.step(&s, p, Action::MoveForward), p);
        s.set_wall(3, 4, false);
        assert_eq!(w.step(&s, p, Action::MoveForward), Pose::new(4, 4, 40));
    }

    #[test]
    fn wall_occludes_target() {
        let w = world();
        let mut s = Scene::open_room(20, 20, vec![(12, 9), (12, 10)], 2).unwrap();
        for y in 5..15 {
            s.set_wall(9, y, true);
        }
        let st = w.visibility_stats(&s, Pose::new(4, 10, 0));
        assert_eq!(st.observed_cells, 0);
        assert_eq!(st.visibility, 0.0);
    }

    #[test]
    fn unobstructed_target_is_fully_visible() {
        let w = world();
        let s = Scene::open_room(20, 20, vec![(12, 9), (12, 10), (13, 9), (13, 10)], 2).unwrap();
        let st = w.visibility_stats(&s, Pose::new(4, 10, 0));
        assert_eq!(st.visibility, 1.0);
        assert_eq!(st.observed_cells, 4);
    }

    #[test]
    fn target_straddling_fov_edge() {
        // heading 10: cone spans -35..55 degrees; (9,10) sits at 51.3, (9,11) at 56.3
        let w = world();
        let s = Scene::open_room(20, 20, vec![(9, 10), (9, 11)], 0).unwrap();
        let st = w.visibility_stats(&s, Pose::new(5, 5, 10));
        assert_eq!(st.visibility, 0.5);
    }

    #[test]
    fn open_room_visibility_is_fov_fraction() {
        let mut cfg = WorldConfig::default();
        cfg.wall_density = 0.0;
        let w = World::new(cfg).unwrap();
        for seed in 0..20 {
            let s = w.generate_scene(seed).unwrap();
            for &(x, y) in w.start_candidates(&s).iter().take(10) {
                for heading in (0..360).step_by(30) {
                    let p = Pose::new(x, y, heading);
                    let in_fov = s.target_cells().iter().filter(|&&c| w.in_view(p, c)).count();
                    let st = w.visibility_stats(&s, p);
                    assert_eq!(st.observed_cells, in_fov);
                }
            }
        }
    }

    #[test]
    fn corner_ray_blocked_by_either_neighbour() {
        let mut s = Scene::open_room(10, 10, vec![(5, 5)], 0).unwrap();
        assert!(s.line_of_sight((2, 2), (5, 5)));
        s.set_wall(3, 2, true);
        assert!(!s.line_of_sight((2, 2), (5, 5)));
    }

    #[test]
    fn observation_branches() {
        let mut cfg = WorldConfig::default();
        cfg.sigma_min = 0.0;
        let w = World::new(cfg).unwrap();
        // 40 cells within 3 m, fully visible: q = 1
        let target: Vec<(i32, i32)> = (0..5).flat_map(|dy| (0..8).map(move |dx| (12 + dx, 8 + dy))).collect();
        let s = Scene::open_room(32, 32, target, 3).unwrap();
        let p = Pose::new(7, 10, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = w.observe(&s, p, &mut rng);
        assert_eq!(o.quality, 1.0);
        assert_eq!(o.features, w.prototype(3));

        // facing away: pure noise with scale sigma0
        let mut rng_a = ChaCha8Rng::seed_from_u64(4);
        let mut rng_b = ChaCha8Rng::seed_from_u64(4);
        let o = w.observe(&s, Pose::new(7, 10, 180), &mut rng_a);
        let eps: Vec<f64> = (0..16).map(|_| rng_b.sample::<f64, _>(StandardNormal)).collect();
        assert_eq!(o.features, eps);
        assert!(!o.cue.visible && o.cue.bearing_deg.is_none() && o.quality == 0.0);
    }

    #[test]
    fn observation_is_deterministic_given_stream() {
        let w = world();
        let s = w.generate_scene(3).unwrap();
        let (x, y) = w.start_candidates(&s)[0];
        let p = Pose::new(x, y, 0);
        let a = w.observe(&s, p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = w.observe(&s, p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn fixation_examples() {
        let w = world();
        let s = Scene::open_room(40, 40, vec![(25, 10)], 0).unwrap();
        assert_eq!(w.fixation_action(&s, Pose::new(5, 10, 0)), Action::MoveForward);
        assert_eq!(w.fixation_action(&s, Pose::new(25, 2, 0)), Action::TurnRight);
        assert_eq!(w.fixation_action(&s, Pose::new(30, 10, 0)), Action::TurnLeft);
    }

    #[test]
    fn ascii_dump() {
        let w = world();
        let s = Scene::open_room(5, 4, vec![(3, 2)], 0).unwrap();
        let text = w.ascii(&s, Some(Pose::new(1, 1, 90)));
        assert_eq!(text, "@ (1, 1) heading 90 v\n#####\n#v..#\n#..T#\n#####\n");
    }
}
