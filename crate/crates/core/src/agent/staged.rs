use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{PolicyConfig, PolicyTrainer, UpdateStats};
use super::policy::PolicyNet;
use super::{AgentError, Recognizer};
use crate::bench::{sample_instance, BenchConfig};
use crate::derive_seed;
use crate::edl::{train_recognizer, Dataset, EpochMetrics, EvidentialClassifier, TrainConfig, TrainStatus};
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    /// Fixation episodes to collect.
    pub episodes: usize,
    pub horizon: usize,
    /// Keep frames without any target cell in view. They are pure noise and
    /// teach the recognizer to stay vacuous on such inputs.
    pub include_invisible: bool,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            episodes: 1000,
            horizon: 10,
            include_invisible: true,
            seed: 1,
        }
    }
}

const STAGE1_STREAM: u64 = 0x5354_4731;

/// Runs the fixation heuristic and labels its observations with the true
/// class. Frames with no target cell in view are dropped unless
/// `include_invisible` is set.
pub fn collect_stage1(world: &World, bench: &BenchConfig, config: &Stage1Config) -> Result<Dataset, AgentError> {
    if config.episodes == 0 || config.horizon == 0 {
        return Err(AgentError::Config("stage 1 needs at least one episode and one step".into()));
    }
    let stream = derive_seed(&[config.seed, STAGE1_STREAM]);
    let per_episode: Vec<Vec<(Vec<f64>, usize)>> = (0..config.episodes)
        .into_par_iter()
        .map(|i| {
            let inst = sample_instance(world, bench, stream, i)?;
            let scene = world.generate_scene(inst.scene_seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[stream, i as u64]));
            let mut pose = inst.start;
            let mut out = Vec::new();
            for _ in 0..config.horizon {
                let obs = world.observe(&scene, pose, &mut rng);
                if obs.cue.visible || config.include_invisible {
                    out.push((obs.features, obs.true_class));
                }
                pose = world.step(&scene, pose, world.fixation_action(&scene, pose));
            }
            Ok(out)
        })
        .collect::<Result<_, AgentError>>()?;
    let mut data = Dataset::default();
    for (x, y) in per_episode.into_iter().flatten() {
        data.push(x, y);
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagedConfig {
    pub bench: BenchConfig,
    pub stage1: Stage1Config,
    pub recognizer: TrainConfig,
    pub policy: PolicyConfig,
}

impl StagedConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        self.bench.validate()?;
        self.recognizer.validate()?;
        self.policy.validate()
    }
}

#[derive(Debug, Clone)]
pub struct StagedOutput {
    pub recognizer: EvidentialClassifier,
    /// Empty when a pretrained recognizer was supplied.
    pub recognizer_metrics: Vec<EpochMetrics>,
    pub policy: PolicyNet,
    pub history: Vec<UpdateStats>,
}

/// Trains the recognizer on fixation data, then the policy against the frozen
/// recognizer. A supplied `pretrained` recognizer skips stage one.
pub fn staged_train(config: &StagedConfig, pretrained: Option<EvidentialClassifier>) -> Result<StagedOutput, AgentError> {
    config.validate()?;
    let world = World::new(config.bench.world.clone())?;
    let (recognizer, recognizer_metrics) = match pretrained {
        Some(r) => (r, Vec::new()),
        None => {
            let data = collect_stage1(&world, &config.bench, &config.stage1)?;
            if data.is_empty() {
                return Err(AgentError::Stage1("no visible observations collected".into()));
            }
            let trained = train_recognizer(&data, world.config().class_count, &config.recognizer)
                .map_err(|e| AgentError::Stage1(e.to_string()))?;
            if let TrainStatus::Diverged { epoch, seed } = trained.status {
                return Err(AgentError::Stage1(format!("recognizer diverged at epoch {epoch} (seed {seed})")));
            }
            (trained.model, trained.metrics)
        }
    };
    if recognizer.feature_dim() != world.config().feature_dim || recognizer.class_count() != world.config().class_count {
        return Err(AgentError::Config("recognizer shape does not match the world".into()));
    }

    let before = recognizer.fingerprint();
    let mut trainer = PolicyTrainer::new(&world, &config.bench, &recognizer, config.policy.clone())?;
    trainer.run(|_, _| Ok(()))?;
    let (policy, history) = (trainer.policy, trainer.history);
    assert_eq!(before, recognizer.fingerprint(), "recognizer changed during policy training");
    Ok(StagedOutput {
        recognizer,
        recognizer_metrics,
        policy,
        history,
    })
}
