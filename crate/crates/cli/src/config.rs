use std::fs;
use std::path::Path;

use evidar_core::agent::{AgentKind, FusionKind, PolicyConfig, Stage1Config, StagedConfig};
use evidar_core::bench::BenchConfig;
use evidar_core::edl::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Every section has defaults, so `{}` is a valid
/// config; `evidar --print-config` dumps the full resolved form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. When set it replaces the seeds of stage 1, the recognizer
    /// and the policy.
    pub seed: Option<u64>,
    pub bench: BenchConfig,
    pub stage1: Stage1Config,
    pub recognizer: TrainConfig,
    pub policy: PolicyConfig,
    pub dataset: DatasetConfig,
    pub evaluation: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n: 2000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub agents: Vec<AgentKind>,
    pub fusions: Vec<FusionKind>,
    pub sigmas: Vec<f64>,
    pub horizon: usize,
    /// Seeds the per-episode sensor and action streams.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            agents: AgentKind::ALL.to_vec(),
            fusions: vec![FusionKind::Evidential],
            sigmas: vec![0.0],
            horizon: 10,
            seed: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(config.resolved())
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default().resolved()),
        }
    }

    /// Pushes the master seed down into the per-stage configs.
    pub fn resolved(mut self) -> Self {
        if let Some(s) = self.seed {
            self.stage1.seed = s;
            self.recognizer.seed = s;
            self.policy.seed = s;
        }
        self
    }

    pub fn staged(&self) -> StagedConfig {
        StagedConfig {
            bench: self.bench.clone(),
            stage1: self.stage1.clone(),
            recognizer: self.recognizer.clone(),
            policy: self.policy.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.staged().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let ev = &self.evaluation;
        if ev.agents.is_empty() || ev.fusions.is_empty() || ev.sigmas.is_empty() {
            return Err(CliError::Usage("evaluation needs at least one agent, fusion and sigma".into()));
        }
        if let Some(s) = ev.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(CliError::Usage(format!("sigma {s} must be finite and non-negative")));
        }
        if ev.horizon < 2 {
            return Err(CliError::Usage("evaluation horizon must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
