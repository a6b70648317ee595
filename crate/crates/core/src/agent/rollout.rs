use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fusion::RunningFusion;
use super::policy::{policy_input, PolicyNet};
use super::{AgentError, Recognizer, ACTION_COUNT};
use crate::derive_seed;
use crate::numerics::log_softmax;
use crate::opinion::{opinion_from_evidence, rank_descending, Opinion};
use crate::world::{Action, Pose, Scene, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// Belief assigned to the true class.
    Belief,
    /// 1 when the single-step prediction is correct, else 0.
    Binary,
}

/// Belief in the true class: zero for a vacuous opinion, approaching one as
/// evidence for the true class dominates.
pub fn compute_reward(opinion: &Opinion, true_class: usize) -> f64 {
    opinion.belief(true_class)
}

fn reward(kind: RewardKind, opinion: &Opinion, true_class: usize) -> f64 {
    match kind {
        RewardKind::Belief => compute_reward(opinion, true_class),
        RewardKind::Binary => f64::from(u8::from(opinion.argmax() == true_class)),
    }
}

/// Who picks the actions.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Learned { policy: &'a PolicyNet, greedy: bool },
    Random,
    Fixation,
    /// No motion; the episode ends after the first observation.
    SingleView,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSpec {
    /// Number of observations `T`; `T - 1` actions are taken.
    pub horizon: usize,
    pub reward: RewardKind,
    /// Extra Gaussian feature noise in units of the sensor's noise floor.
    pub feature_noise: f64,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        Self {
            horizon: 10,
            reward: RewardKind::Belief,
            feature_noise: 0.0,
        }
    }
}

/// Independent streams for observations, actions and injected noise, so the
/// same episode seed gives every agent the same sensor draws.
#[derive(Debug, Clone)]
pub struct EpisodeRng {
    pub obs: ChaCha8Rng,
    pub act: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl EpisodeRng {
    pub fn new(seed: u64) -> Self {
        Self {
            obs: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1])),
            act: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 2])),
            noise: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 3])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub true_class: usize,
    /// Pose at each observation.
    pub poses: Vec<Pose>,
    /// Single-step opinion at each observation.
    pub opinions: Vec<Opinion>,
    /// Running evidential fusion after each observation.
    pub fused: Vec<Opinion>,
    pub conflicts: usize,
    pub visible: Vec<bool>,
    pub actions: Vec<Action>,
    /// `rewards[t]` is earned by `actions[t]` at the following observation.
    pub rewards: Vec<f64>,
    /// Learned controllers only: policy inputs, log-probabilities and values
    /// at each action.
    pub inputs: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

fn sample_categorical<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

/// Runs one episode from `start`.
pub fn rollout<R: Recognizer + ?Sized>(
    world: &World,
    scene: &Scene,
    start: Pose,
    controller: &Controller,
    recognizer: &R,
    spec: &RolloutSpec,
    rng: &mut EpisodeRng,
) -> Result<EpisodeTrace, AgentError> {
    if spec.horizon < 2 {
        return Err(AgentError::Config(format!("horizon {} must be at least 2", spec.horizon)));
    }
    let steps = match controller {
        Controller::SingleView => 1,
        _ => spec.horizon,
    };
    let cfg = world.config();
    let y = scene.target_class();
    let mut trace = EpisodeTrace {
        true_class: y,
        poses: Vec::with_capacity(steps),
        opinions: Vec::with_capacity(steps),
        fused: Vec::with_capacity(steps),
        conflicts: 0,
        visible: Vec::with_capacity(steps),
        actions: Vec::new(),
        rewards: Vec::new(),
        inputs: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
    };
    let mut fusion = RunningFusion::new();
    let mut pose = start;
    let mut prev: Option<Action> = None;
    let mut h = match controller {
        Controller::Learned { policy, .. } => policy.initial_state(),
        _ => Vec::new(),
    };

    for t in 0..steps {
        let obs = world.observe(scene, pose, &mut rng.obs);
        let features: Vec<f64> = if spec.feature_noise > 0.0 {
            let s = spec.feature_noise * cfg.sigma_min;
            obs.features
                .iter()
                .map(|f| f + s * rng.noise.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            obs.features.clone()
        };
        let op = opinion_from_evidence(&recognizer.evidence(&obs, &features)?);
        trace.fused.push(fusion.push(&op)?.clone());
        if t > 0 {
            trace.rewards.push(reward(spec.reward, &op, y));
        }
        trace.poses.push(pose);
        trace.visible.push(obs.cue.visible);
        if t + 1 == steps {
            trace.opinions.push(op);
            break;
        }

        let action = match controller {
            Controller::Learned { policy, greedy } => {
                let input = policy_input(&op, &obs.cue, prev, cfg.range_m);
                let step = policy.step(&input, &h)?;
                let logp = log_softmax(&step.logits);
                let a = if *greedy {
                    rank_descending(&logp)[0]
                } else {
                    sample_categorical(&logp, &mut rng.act)
                };
                trace.inputs.push(input);
                trace.log_probs.push(logp[a]);
                trace.values.push(step.value);
                h = step.h;
                Action::from_index(a).expect("three actions")
            }
            Controller::Random => Action::from_index(rng.act.random_range(0..ACTION_COUNT)).expect("three actions"),
            Controller::Fixation => world.fixation_action(scene, pose),
            Controller::SingleView => unreachable!("single view takes no action"),
        };
        trace.opinions.push(op);
        trace.actions.push(action);
        pose = world.step(scene, pose, action);
        prev = Some(action);
    }
    trace.conflicts = fusion.conflicts;
    Ok(trace)
}
