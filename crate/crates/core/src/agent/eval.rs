use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fusion::{fuse_strategy, FusionKind};
use super::policy::PolicyNet;
use super::rollout::{rollout, Controller, EpisodeRng, EpisodeTrace, RewardKind, RolloutSpec};
use super::{AgentError, Recognizer};
use crate::bench::{Level, TestSet};
use crate::{csv_schema_comment, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Learned policy, greedy at evaluation time.
    Ours,
    Random,
    Fixation,
    SingleView,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Ours, AgentKind::Random, AgentKind::Fixation, AgentKind::SingleView];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ours => "ours",
            AgentKind::Random => "random",
            AgentKind::Fixation => "fixation",
            AgentKind::SingleView => "singleview",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown agent '{s}' (expected ours, random, fixation or singleview)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub n: usize,
    /// Final-step success rates in `[0, 1]`.
    pub top1: f64,
    pub top3: f64,
    /// Top-1 of the strategy applied to the first `t + 1` opinions.
    pub step_top1: Vec<f64>,
    /// Mean single-step uncertainty over every observation.
    pub mean_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub success: f64,
    pub mean_u_prefuse: f64,
    /// Uncertainty of the evidential running fusion, whatever the strategy.
    pub mean_u_fused: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentKind,
    pub fusion: FusionKind,
    pub sigma: f64,
    pub overall: LevelMetrics,
    /// Indexed by [`Level::index`].
    pub levels: Vec<LevelMetrics>,
    pub steps: Vec<StepMetrics>,
    /// Episodes in which some Dempster combination was skipped.
    pub conflict_episodes: usize,
}

impl EvalReport {
    pub fn level(&self, level: Level) -> &LevelMetrics {
        &self.levels[level.index()]
    }
}

struct Scored {
    level: Level,
    top1: bool,
    top3: bool,
    step_hits: Vec<bool>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    top1: usize,
    top3: usize,
    step_hits: Vec<usize>,
    u_sum: f64,
    u_count: usize,
}

impl Acc {
    fn add(&mut self, s: &Scored, trace: &EpisodeTrace) {
        self.n += 1;
        self.top1 += usize::from(s.top1);
        self.top3 += usize::from(s.top3);
        if self.step_hits.len() < s.step_hits.len() {
            self.step_hits.resize(s.step_hits.len(), 0);
        }
        for (acc, &hit) in self.step_hits.iter_mut().zip(&s.step_hits) {
            *acc += usize::from(hit);
        }
        for op in &trace.opinions {
            self.u_sum += op.uncertainty();
            self.u_count += 1;
        }
    }

    fn finish(&self) -> LevelMetrics {
        let rate = |k: usize| if self.n == 0 { 0.0 } else { k as f64 / self.n as f64 };
        LevelMetrics {
            n: self.n,
            top1: rate(self.top1),
            top3: rate(self.top3),
            step_top1: self.step_hits.iter().map(|&k| rate(k)).collect(),
            mean_u: if self.u_count == 0 { 0.0 } else { self.u_sum / self.u_count as f64 },
        }
    }
}

fn score(trace: &EpisodeTrace, level: Level, fusion: FusionKind) -> Result<Scored, AgentError> {
    let y = trace.true_class;
    let mut step_hits = Vec::with_capacity(trace.opinions.len());
    for t in 1..=trace.opinions.len() {
        step_hits.push(fuse_strategy(fusion, &trace.opinions[..t])?.prediction() == y);
    }
    let last = fuse_strategy(fusion, &trace.opinions)?;
    Ok(Scored {
        level,
        top1: last.prediction() == y,
        top3: last.top_k_contains(3, y),
        step_hits,
    })
}

fn report(agent: AgentKind, fusion: FusionKind, sigma: f64, traces: &[EpisodeTrace], scored: &[Scored]) -> EvalReport {
    let mut overall = Acc::default();
    let mut levels: Vec<Acc> = Level::ALL.iter().map(|_| Acc::default()).collect();
    for (s, tr) in scored.iter().zip(traces) {
        overall.add(s, tr);
        levels[s.level.index()].add(s, tr);
    }
    let n = traces.len().max(1) as f64;
    let len = traces.iter().map(|t| t.opinions.len()).max().unwrap_or(0);
    let steps = (0..len)
        .map(|t| {
            let (mut pre, mut fused) = (0.0, 0.0);
            for tr in traces {
                pre += tr.opinions[t].uncertainty();
                fused += tr.fused[t].uncertainty();
            }
            StepMetrics {
                step: t + 1,
                success: overall.step_hits[t] as f64 / n,
                mean_u_prefuse: pre / n,
                mean_u_fused: fused / n,
            }
        })
        .collect();
    EvalReport {
        agent,
        fusion,
        sigma,
        overall: overall.finish(),
        levels: levels.iter().map(Acc::finish).collect(),
        steps,
        conflict_episodes: traces.iter().filter(|t| t.conflicts > 0).count(),
    }
}

/// Rolls out every test instance once per noise level and scores the same
/// trajectories under each fusion strategy.
///
/// Instance `i` uses the episode streams of `derive_seed([seed, i])` at every
/// noise level, so only the injected perturbation changes between levels.
/// Results do not depend on the number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_matrix<R: Recognizer + ?Sized>(
    agent: AgentKind,
    policy: Option<&PolicyNet>,
    recognizer: &R,
    test_set: &TestSet,
    fusions: &[FusionKind],
    sigmas: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Vec<EvalReport>, AgentError> {
    let world = test_set.world()?;
    if recognizer.class_count() != world.config().class_count {
        return Err(AgentError::Config(format!(
            "recognizer has {} classes, test set world has {}",
            recognizer.class_count(),
            world.config().class_count
        )));
    }
    let controller = match agent {
        AgentKind::Ours => Controller::Learned {
            policy: policy.ok_or_else(|| AgentError::Config("agent 'ours' needs a policy checkpoint".into()))?,
            greedy: true,
        },
        AgentKind::Random => Controller::Random,
        AgentKind::Fixation => Controller::Fixation,
        AgentKind::SingleView => Controller::SingleView,
    };
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(AgentError::Config(format!("noise level {s} must be finite and non-negative")));
    }

    let mut reports = Vec::with_capacity(sigmas.len() * fusions.len());
    for &sigma in sigmas {
        let spec = RolloutSpec {
            horizon,
            reward: RewardKind::Belief,
            feature_noise: sigma,
        };
        let traces: Vec<EpisodeTrace> = test_set
            .instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let scene = world.generate_scene(inst.scene_seed)?;
                if scene.target_class() != inst.target_class {
                    return Err(AgentError::SceneMismatch {
                        index: i,
                        expected: inst.target_class,
                        found: scene.target_class(),
                    });
                }
                let mut rng = EpisodeRng::new(derive_seed(&[seed, i as u64]));
                rollout(&world, &scene, inst.start, &controller, recognizer, &spec, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        for &fusion in fusions {
            let scored: Vec<Scored> = traces
                .par_iter()
                .zip(&test_set.instances)
                .map(|(tr, inst)| score(tr, inst.level, fusion))
                .collect::<Result<_, _>>()?;
            reports.push(report(agent, fusion, sigma, &traces, &scored));
        }
    }
    Ok(reports)
}

/// Single-cell convenience wrapper around [`evaluate_matrix`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate<R: Recognizer + ?Sized>(
    agent: AgentKind,
    policy: Option<&PolicyNet>,
    recognizer: &R,
    test_set: &TestSet,
    fusion: FusionKind,
    sigma: f64,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport, AgentError> {
    let mut r = evaluate_matrix(agent, policy, recognizer, test_set, &[fusion], &[sigma], horizon, seed)?;
    Ok(r.remove(0))
}

pub const EVAL_CSV_HEADER: &str = "agent,fusion,sigma,level,top1,top3,mean_u,n";
pub const STEP_CSV_HEADER: &str = "agent,fusion,sigma,step,success,mean_u_prefuse,mean_u_fused";

pub fn write_eval_csv<W: Write>(mut w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "{}", csv_schema_comment("evaluation"))?;
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for r in reports {
        let rows = std::iter::once(("overall", &r.overall)).chain(Level::ALL.iter().map(|l| (l.name(), r.level(*l))));
        for (name, m) in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.agent, r.fusion, r.sigma, name, m.top1, m.top3, m.mean_u, m.n
            )?;
        }
    }
    Ok(())
}

pub fn write_step_csv<W: Write>(mut w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "{}", csv_schema_comment("step-curve"))?;
    writeln!(w, "{STEP_CSV_HEADER}")?;
    for r in reports {
        for s in &r.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.agent, r.fusion, r.sigma, s.step, s.success, s.mean_u_prefuse, s.mean_u_fused
            )?;
        }
    }
    Ok(())
}
