//! Difficulty scoring and reproducible test sets.
//!
//! An instance's difficulty combines three factors of its initial view:
//! visible fraction of the target, relative distance mapped from `[3, 6]` m
//! onto `[1, 0]`, and apparent size (observed cells over the cap). Test sets
//! are stored as JSONL with a header line carrying the seed, the config and a
//! checksum of the body.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::hex;
use crate::world::{normalize_heading, Pose, VisibilityStats, World, WorldConfig, WorldError};
use crate::{csv_schema_comment, derive_seed};

pub const W_VISIBILITY: f64 = 0.2;
pub const W_DISTANCE: f64 = 0.2;
pub const W_PIXELS: f64 = 0.6;
pub const HARD_BELOW: f64 = 0.33;
pub const EASY_FROM: f64 = 0.66;
pub const NEAR_M: f64 = 3.0;
pub const FAR_M: f64 = 6.0;
pub const TESTSET_VERSION: u32 = 1;
pub const TESTSET_KIND: &str = "evidar-testset";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    Range { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: invalid record: {reason}")]
    Validation { line: usize, reason: String },
    #[error("body checksum mismatch: header says {expected}, content hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("could not place instance {index} (master seed {seed}) after {attempts} attempts")]
    GenerationFailed { seed: u64, index: usize, attempts: usize },
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Easy,
    Moderate,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Moderate, Level::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Moderate => "moderate",
            Level::Hard => "hard",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), BenchError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(BenchError::Range {
            name,
            value,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

/// `0.2 visibility + 0.2 (1 - (d - 3) / 3) + 0.6 pixels_norm`, clamped to `[0, 1]`.
pub fn difficulty_score(visibility: f64, distance_m: f64, pixels_norm: f64) -> Result<f64, BenchError> {
    check_unit("visibility", visibility)?;
    check_unit("pixels_norm", pixels_norm)?;
    if !(NEAR_M..=FAR_M).contains(&distance_m) {
        return Err(BenchError::Range {
            name: "distance_m",
            value: distance_m,
            lo: NEAR_M,
            hi: FAR_M,
        });
    }
    let near = 1.0 - (distance_m - NEAR_M) / (FAR_M - NEAR_M);
    Ok((W_VISIBILITY * visibility + W_DISTANCE * near + W_PIXELS * pixels_norm).clamp(0.0, 1.0))
}

/// Hard below 0.33, Easy from 0.66, Moderate in between.
pub fn difficulty_level(score: f64) -> Level {
    if score < HARD_BELOW {
        Level::Hard
    } else if score < EASY_FROM {
        Level::Moderate
    } else {
        Level::Easy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub visibility: f64,
    pub distance_m: f64,
    pub pixels_norm: f64,
    pub score: f64,
    pub level: Level,
}

impl DifficultyRecord {
    pub fn new(visibility: f64, distance_m: f64, pixels_norm: f64) -> Result<Self, BenchError> {
        let score = difficulty_score(visibility, distance_m, pixels_norm)?;
        Ok(Self {
            visibility,
            distance_m,
            pixels_norm,
            score,
            level: difficulty_level(score),
        })
    }

    pub fn from_stats(stats: &VisibilityStats, cap_cells: usize) -> Result<Self, BenchError> {
        let pixels_norm = (stats.observed_cells as f64 / cap_cells as f64).min(1.0);
        Self::new(stats.visibility, stats.distance_m, pixels_norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInstance {
    pub scene_seed: u64,
    pub start: Pose,
    pub target_class: usize,
    pub stats: VisibilityStats,
    pub score: f64,
    pub level: Level,
}

impl EpisodeInstance {
    pub fn record(&self, cap_cells: usize) -> Result<DifficultyRecord, BenchError> {
        DifficultyRecord::from_stats(&self.stats, cap_cells)
    }

    /// Checks the stored score and level against the stored stats.
    pub fn validate(&self, world: &WorldConfig) -> Result<(), String> {
        if self.target_class >= world.class_count {
            return Err(format!("target_class {} out of range", self.target_class));
        }
        if !(0.0..=1.0).contains(&self.stats.visibility) {
            return Err(format!("visibility {} outside [0, 1]", self.stats.visibility));
        }
        if self.start.heading % 10 != 0 || !(0..360).contains(&self.start.heading) {
            return Err(format!("heading {} not on the 10-degree lattice", self.start.heading));
        }
        let rec = self.record(world.cap_cells).map_err(|e| e.to_string())?;
        if (rec.score - self.score).abs() > 1e-12 {
            return Err(format!("score {} does not match factors (expected {})", self.score, rec.score));
        }
        if rec.level != self.level || difficulty_level(self.score) != self.level {
            return Err(format!("level {} inconsistent with score {}", self.level, self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub world: WorldConfig,
    /// Start heading is the target bearing plus a uniform offset in
    /// `[-heading_jitter_deg, heading_jitter_deg]`, snapped to 10 degrees.
    pub heading_jitter_deg: f64,
    /// At least this many target cells must be in view at the start.
    pub min_initial_cells: usize,
    pub starts_per_scene: usize,
    pub max_attempts: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            heading_jitter_deg: 30.0,
            min_initial_cells: 1,
            starts_per_scene: 16,
            max_attempts: 32,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.world.validate()?;
        let (dmin, dmax) = self.world.start_distance_m;
        if dmin < NEAR_M || dmax > FAR_M {
            return Err(BenchError::Config(format!(
                "start distance range [{dmin}, {dmax}] must lie within [{NEAR_M}, {FAR_M}] m"
            )));
        }
        if !(self.heading_jitter_deg >= 0.0 && self.heading_jitter_deg <= 180.0) {
            return Err(BenchError::Config("heading_jitter_deg must be in [0, 180]".into()));
        }
        if self.starts_per_scene == 0 || self.max_attempts == 0 {
            return Err(BenchError::Config("attempt counts must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub seed: u64,
    pub config: BenchConfig,
    pub instances: Vec<EpisodeInstance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    v: u32,
    kind: String,
    seed: u64,
    n: usize,
    config: BenchConfig,
    config_hash: String,
    body_sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    v: u32,
    scene_seed: u64,
    start: Pose,
    target_class: usize,
    stats: VisibilityStats,
    score: f64,
    level: Level,
}

impl From<&EpisodeInstance> for Row {
    fn from(i: &EpisodeInstance) -> Self {
        Self {
            v: TESTSET_VERSION,
            scene_seed: i.scene_seed,
            start: i.start,
            target_class: i.target_class,
            stats: i.stats,
            score: i.score,
            level: i.level,
        }
    }
}

impl From<Row> for EpisodeInstance {
    fn from(r: Row) -> Self {
        Self {
            scene_seed: r.scene_seed,
            start: r.start,
            target_class: r.target_class,
            stats: r.stats,
            score: r.score,
            level: r.level,
        }
    }
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instance counts indexed by [`Level::index`].
    pub fn level_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for i in &self.instances {
            c[i.level.index()] += 1;
        }
        c
    }

    pub fn world(&self) -> Result<World, BenchError> {
        Ok(World::new(self.config.world.clone())?)
    }

    fn body_lines(&self) -> Vec<String> {
        self.instances
            .iter()
            .map(|inst| serde_json::to_string(&Row::from(inst)).expect("row serializes"))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let body = self.body_lines();
        let mut h = Sha256::new();
        for line in &body {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        let header = Header {
            v: TESTSET_VERSION,
            kind: TESTSET_KIND.into(),
            seed: self.seed,
            n: self.instances.len(),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            body_sha256: hex(&h.finalize()),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for line in body {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    /// Parses every row first, then validates each record, then checks the
    /// body checksum, so corruption is reported by line where possible.
    pub fn from_jsonl(text: &str) -> Result<Self, BenchError> {
        let mut lines = text.split_terminator('\n');
        let header_line = lines.next().ok_or(BenchError::Parse {
            line: 1,
            reason: "empty file".into(),
        })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| BenchError::Parse {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
        if header.v != TESTSET_VERSION || header.kind != TESTSET_KIND {
            return Err(BenchError::Parse {
                line: 1,
                reason: format!("unsupported test set {} v{}", header.kind, header.v),
            });
        }
        if header.config_hash != header.config.hash() {
            return Err(BenchError::Parse {
                line: 1,
                reason: "config_hash does not match config".into(),
            });
        }
        header.config.validate().map_err(|e| BenchError::Parse {
            line: 1,
            reason: e.to_string(),
        })?;

        let mut instances: Vec<EpisodeInstance> = Vec::with_capacity(header.n.min(1 << 16));
        let mut hasher = Sha256::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let row: Row = serde_json::from_str(line).map_err(|e| BenchError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
            if row.v != TESTSET_VERSION {
                return Err(BenchError::Parse {
                    line: line_no,
                    reason: format!("row version {}", row.v),
                });
            }
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            instances.push(row.into());
        }
        if instances.len() != header.n {
            return Err(BenchError::Parse {
                line: instances.len() + 2,
                reason: format!("header promises {} rows, found {}", header.n, instances.len()),
            });
        }
        for (i, inst) in instances.iter().enumerate() {
            inst.validate(&header.config.world)
                .map_err(|reason| BenchError::Validation { line: i + 2, reason })?;
        }
        let actual = hex(&hasher.finalize());
        if actual != header.body_sha256 {
            return Err(BenchError::ChecksumMismatch {
                expected: header.body_sha256,
                actual,
            });
        }
        Ok(Self {
            seed: header.seed,
            config: header.config,
            instances,
        })
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", csv_schema_comment("level-summary"))?;
        writeln!(w, "level,count,mean_score")?;
        for level in Level::ALL {
            let scores: Vec<f64> = self
                .instances
                .iter()
                .filter(|i| i.level == level)
                .map(|i| i.score)
                .collect();
            let mean = if scores.is_empty() {
                f64::NAN
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            };
            writeln!(w, "{level},{},{mean}", scores.len())?;
        }
        Ok(())
    }
}

/// Instance `index` of the stream identified by `seed`; used for test sets and
/// for training episodes alike.
pub fn sample_instance(world: &World, config: &BenchConfig, seed: u64, index: usize) -> Result<EpisodeInstance, BenchError> {
    for attempt in 0..config.max_attempts {
        let scene_seed = derive_seed(&[seed, index as u64, attempt as u64]);
        let scene = match world.generate_scene(scene_seed) {
            Ok(s) => s,
            Err(WorldError::GenerationFailed { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let candidates = world.start_candidates(&scene);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[scene_seed, 0x57a7]));
        for _ in 0..config.starts_per_scene {
            let (x, y) = candidates[rng.random_range(0..candidates.len())];
            let base = Pose::new(x, y, 0);
            let bearing = world.bearing_error(&scene, base);
            let j = config.heading_jitter_deg;
            let offset = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            let start = Pose::new(x, y, normalize_heading((bearing + offset).round() as i32));
            let stats = world.visibility_stats(&scene, start);
            if stats.observed_cells < config.min_initial_cells.max(1) {
                continue;
            }
            let rec = DifficultyRecord::from_stats(&stats, config.world.cap_cells)?;
            return Ok(EpisodeInstance {
                scene_seed,
                start,
                target_class: scene.target_class(),
                stats,
                score: rec.score,
                level: rec.level,
            });
        }
    }
    Err(BenchError::GenerationFailed {
        seed,
        index,
        attempts: config.max_attempts,
    })
}

/// Samples `n` instances. Instance `i` depends only on `(seed, i)`, so the
/// result is the same for any number of worker threads.
pub fn generate_test_set(n: usize, seed: u64, config: &BenchConfig) -> Result<TestSet, BenchError> {
    if n == 0 {
        return Err(BenchError::Config("n must be at least 1".into()));
    }
    config.validate()?;
    let world = World::new(config.world.clone())?;
    let instances = (0..n)
        .into_par_iter()
        .map(|i| sample_instance(&world, config, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TestSet {
        seed,
        config: config.clone(),
        instances,
    })
}
