//! Active recognition agents.
//!
//! A recurrent policy reads per-step cue statistics and the current opinion,
//! chooses among three motions, and is trained with PPO against a frozen
//! evidential recognizer. Opinions collected along an episode are combined by
//! one of several fusion strategies; evaluation reports success per difficulty
//! level and per step.

mod eval;
mod fusion;
mod policy;
mod ppo;
mod rollout;
mod staged;

use thiserror::Error;

pub use eval::{
    evaluate, evaluate_matrix, write_eval_csv, write_step_csv, AgentKind, EvalReport, LevelMetrics, StepMetrics,
    EVAL_CSV_HEADER, STEP_CSV_HEADER,
};
pub use fusion::{fuse_strategy, FusionKind, FusionOutcome, RunningFusion};
pub use policy::{policy_input, PolicyNet, POLICY_INPUT_DIM, POLICY_KIND};
pub use ppo::{
    clipped_surrogate, clipped_surrogate_grad, gae_advantages, normalize_advantages, ppo_loss, PolicyConfig,
    PolicyTrainer, UpdateStats, UPDATE_CSV_HEADER,
};
pub use rollout::{compute_reward, rollout, Controller, EpisodeRng, EpisodeTrace, RewardKind, RolloutSpec};
pub use staged::{collect_stage1, staged_train, Stage1Config, StagedConfig, StagedOutput};

use crate::bench::BenchError;
use crate::edl::{EdlError, EvidentialClassifier};
use crate::numerics::{NumericsError, Parameterized};
use crate::opinion::{EvidenceVector, OpinionError};
use crate::world::{Observation, WorldError};

pub const ACTION_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite PPO loss at update {update} (minibatch seed {minibatch_seed})")]
    NonFiniteLoss { update: usize, minibatch_seed: u64 },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("stage 1 failed: {0}")]
    Stage1(String),
    #[error("scene for instance {index} regenerated with class {found}, test set says {expected}")]
    SceneMismatch { index: usize, expected: usize, found: usize },
    #[error(transparent)]
    Edl(#[from] EdlError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Opinion(#[from] OpinionError),
}

/// Anything that turns an observation into class evidence.
///
/// The observation is passed alongside the (possibly perturbed) features so
/// test doubles can cheat; learned recognizers look at `features` only.
pub trait Recognizer: Sync {
    fn class_count(&self) -> usize;

    fn evidence(&self, obs: &Observation, features: &[f64]) -> Result<EvidenceVector, AgentError>;

    /// Parameter digest, used to check that training leaves it untouched.
    fn fingerprint(&self) -> String;
}

impl Recognizer for EvidentialClassifier {
    fn class_count(&self) -> usize {
        EvidentialClassifier::class_count(self)
    }

    fn evidence(&self, _obs: &Observation, features: &[f64]) -> Result<EvidenceVector, AgentError> {
        Ok(EvidentialClassifier::evidence(self, features)?)
    }

    fn fingerprint(&self) -> String {
        self.checksum()
    }
}

/// Puts `strength` evidence on the true class whenever any target cell is
/// in view, and none otherwise.
#[derive(Debug, Clone, Copy)]
pub struct OracleRecognizer {
    pub class_count: usize,
    pub strength: f64,
}

impl Recognizer for OracleRecognizer {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn evidence(&self, obs: &Observation, _features: &[f64]) -> Result<EvidenceVector, AgentError> {
        let mut e = vec![0.0; self.class_count];
        if obs.quality > 0.0 {
            e[obs.true_class] = self.strength;
        }
        Ok(EvidenceVector::new(e)?)
    }

    fn fingerprint(&self) -> String {
        format!("oracle:{}:{}", self.class_count, self.strength)
    }
}
