//! Proximal policy optimisation with generalised advantage estimation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use super::rollout::{rollout, Controller, EpisodeRng, EpisodeTrace, RewardKind, RolloutSpec};
use super::{AgentError, Recognizer};
use crate::bench::{sample_instance, BenchConfig};
use crate::numerics::{
    add_scaled, clip_grad_norm, log_softmax, log_softmax_backward, zeros_like, Checkpoint, Momentum,
    NumericsError, Parameterized,
};
use crate::world::World;
use crate::{csv_schema_comment, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    pub updates: usize,
    pub episodes_per_update: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Episodes per minibatch; each contributes `horizon - 1` transitions.
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub step_size: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub reward: RewardKind,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            updates: 200,
            episodes_per_update: 128,
            horizon: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            step_size: 0.3,
            momentum: 0.9,
            clip_norm: 1.0,
            reward: RewardKind::Belief,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if self.hidden_dim == 0 || self.episodes_per_update == 0 || self.epochs == 0 || self.minibatch == 0 {
            return bad("hidden_dim, episodes_per_update, epochs and minibatch must be positive");
        }
        if self.horizon < 2 {
            return bad("horizon must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must be in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        if !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return bad("step_size and clip_norm must be positive, momentum in [0, 1)");
        }
        Ok(())
    }
}

/// Generalised advantage estimates and returns for one trajectory.
///
/// `next_value` bootstraps after the last reward; pass 0 for a finished
/// episode.
pub fn gae_advantages(rewards: &[f64], values: &[f64], next_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { next_value };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Standardises all advantages jointly. A strictly increasing affine map, so
/// the ordering is preserved.
pub fn normalize_advantages(adv: &mut [Vec<f64>]) {
    let n = adv.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        return;
    }
    let mean = adv.iter().flatten().sum::<f64>() / n as f64;
    let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for a in adv.iter_mut().flatten() {
        *a = (*a - mean) * scale;
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// Derivative of [`clipped_surrogate`] in the ratio. Zero once the clipped
/// branch is active, including at the clip boundary itself.
pub fn clipped_surrogate_grad(ratio: f64, adv: f64, clip: f64) -> f64 {
    let active = if adv >= 0.0 {
        ratio < 1.0 + clip
    } else {
        ratio > 1.0 - clip
    };
    if active {
        adv
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

struct EpisodeGrad {
    loss: f64,
    grad: PolicyNet,
    parts: LossParts,
}

fn episode_loss_grad(
    policy: &PolicyNet,
    ep: &EpisodeTrace,
    adv: &[f64],
    ret: &[f64],
    cfg: &PolicyConfig,
    scale: f64,
) -> Result<EpisodeGrad, NumericsError> {
    let n = ep.inputs.len();
    let mut h = policy.initial_state();
    let mut steps = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    for x in &ep.inputs {
        let s = policy.step(x, &h)?;
        h = s.h.clone();
        hs.push(s.h.clone());
        steps.push(s);
    }

    let mut grad = zeros_like(policy);
    let mut loss = 0.0;
    let mut parts = LossParts::default();
    let mut dh_heads = Vec::with_capacity(n);
    for t in 0..n {
        let s = &steps[t];
        let logp = log_softmax(&s.logits);
        let a = ep.actions[t].index();
        let ratio = (logp[a] - ep.log_probs[t]).exp();
        let surr = clipped_surrogate(ratio, adv[t], cfg.clip);
        let entropy: f64 = -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        let verr = s.value - ret[t];
        loss += scale * (-surr + cfg.value_coef * 0.5 * verr * verr - cfg.entropy_coef * entropy);
        parts.policy += scale * -surr;
        parts.value += scale * 0.5 * verr * verr;
        parts.entropy += scale * entropy;
        parts.approx_kl += scale * (ep.log_probs[t] - logp[a]);
        if clipped_surrogate_grad(ratio, adv[t], cfg.clip) == 0.0 && adv[t] != 0.0 {
            parts.clip_fraction += scale;
        }

        let mut dlogp = vec![0.0; logp.len()];
        dlogp[a] = -scale * clipped_surrogate_grad(ratio, adv[t], cfg.clip) * ratio;
        let mut dlogits = log_softmax_backward(&logp, &dlogp);
        for (j, d) in dlogits.iter_mut().enumerate() {
            let p = logp[j].exp();
            *d += scale * cfg.entropy_coef * p * (logp[j] + entropy);
        }
        let mut dh = policy.actor.backward(&hs[t], &dlogits, &mut grad.actor)?;
        let dv = scale * cfg.value_coef * verr;
        for (x, y) in dh.iter_mut().zip(policy.critic.backward(&hs[t], &[dv], &mut grad.critic)?) {
            *x += y;
        }
        dh_heads.push(dh);
    }

    let mut carry = vec![0.0; policy.hidden_dim()];
    for t in (0..n).rev() {
        let dh: Vec<f64> = dh_heads[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let (_, dprev) = policy.gru.backward(&steps[t].cache, &dh, &mut grad.gru)?;
        carry = dprev;
    }
    Ok(EpisodeGrad { loss, grad, parts })
}

/// Mean PPO loss over every transition of `episodes` and its gradient.
///
/// The loss per transition is `-surrogate + value_coef/2 (V - R)^2 -
/// entropy_coef H`; advantages are used as given.
pub fn ppo_loss(
    policy: &PolicyNet,
    episodes: &[&EpisodeTrace],
    advantages: &[Vec<f64>],
    returns: &[Vec<f64>],
    cfg: &PolicyConfig,
) -> Result<(f64, PolicyNet, LossParts), AgentError> {
    let total: usize = episodes.iter().map(|e| e.inputs.len()).sum();
    if total == 0 {
        return Ok((0.0, zeros_like(policy), LossParts::default()));
    }
    let scale = 1.0 / total as f64;
    let per_episode: Vec<EpisodeGrad> = episodes
        .par_iter()
        .zip(advantages.par_iter().zip(returns.par_iter()))
        .map(|(ep, (adv, ret))| episode_loss_grad(policy, ep, adv, ret, cfg, scale))
        .collect::<Result<_, _>>()?;
    let mut grad = zeros_like(policy);
    let mut loss = 0.0;
    let mut parts = LossParts::default();
    for e in &per_episode {
        add_scaled(&mut grad, &e.grad, 1.0);
        loss += e.loss;
        parts.policy += e.parts.policy;
        parts.value += e.parts.value;
        parts.entropy += e.parts.entropy;
        parts.approx_kl += e.parts.approx_kl;
        parts.clip_fraction += e.parts.clip_fraction;
    }
    Ok((loss, grad, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    /// Mean undiscounted episode reward.
    pub mean_return: f64,
    /// Mean true-class belief of the fused opinion at the last step.
    pub mean_final_belief: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub const UPDATE_CSV_HEADER: &str =
    "update,mean_return,mean_final_belief,policy_loss,value_loss,entropy,approx_kl,clip_fraction";

impl UpdateStats {
    pub fn write_csv<W: Write>(mut w: W, rows: &[UpdateStats]) -> std::io::Result<()> {
        writeln!(w, "{}", csv_schema_comment("policy-updates"))?;
        writeln!(w, "{UPDATE_CSV_HEADER}")?;
        for s in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.update,
                s.mean_return,
                s.mean_final_belief,
                s.policy_loss,
                s.value_loss,
                s.entropy,
                s.approx_kl,
                s.clip_fraction
            )?;
        }
        Ok(())
    }
}

const TRAIN_STREAM: u64 = 0x7261_696e;
const INIT_STREAM: u64 = 0x696e_6974;

/// Stage-two trainer. All randomness of update `k` derives from
/// `(seed, k)`, so a run resumed from a checkpoint continues exactly as an
/// uninterrupted one would.
pub struct PolicyTrainer<'a, R: Recognizer + ?Sized> {
    world: &'a World,
    bench: &'a BenchConfig,
    recognizer: &'a R,
    config: PolicyConfig,
    pub policy: PolicyNet,
    optimizer: Momentum,
    pub update: usize,
    pub history: Vec<UpdateStats>,
}

impl<'a, R: Recognizer + ?Sized> PolicyTrainer<'a, R> {
    pub fn new(world: &'a World, bench: &'a BenchConfig, recognizer: &'a R, config: PolicyConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, INIT_STREAM]));
        let policy = PolicyNet::init(config.hidden_dim, &mut rng);
        let optimizer = Momentum::new(config.step_size, config.momentum, policy.param_count());
        Ok(Self {
            world,
            bench,
            recognizer,
            config,
            policy,
            optimizer,
            update: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.update >= self.config.updates
    }

    /// Collects the episodes of the current update in parallel.
    pub fn collect(&self) -> Result<Vec<EpisodeTrace>, AgentError> {
        let spec = RolloutSpec {
            horizon: self.config.horizon,
            reward: self.config.reward,
            feature_noise: 0.0,
        };
        let controller = Controller::Learned {
            policy: &self.policy,
            greedy: false,
        };
        let stream = derive_seed(&[self.config.seed, TRAIN_STREAM]);
        let per_update = self.config.episodes_per_update;
        (0..per_update)
            .into_par_iter()
            .map(|e| {
                let index = self.update * per_update + e;
                let inst = sample_instance(self.world, self.bench, stream, index)?;
                let scene = self.world.generate_scene(inst.scene_seed)?;
                let mut rng = EpisodeRng::new(derive_seed(&[self.config.seed, self.update as u64, e as u64]));
                rollout(self.world, &scene, inst.start, &controller, self.recognizer, &spec, &mut rng)
            })
            .collect()
    }

    /// One collection plus `epochs` passes of minibatch updates.
    pub fn step(&mut self) -> Result<UpdateStats, AgentError> {
        let cfg = self.config.clone();
        let episodes = self.collect()?;
        let mut adv = Vec::with_capacity(episodes.len());
        let mut ret = Vec::with_capacity(episodes.len());
        for ep in &episodes {
            let (a, r) = gae_advantages(&ep.rewards, &ep.values, 0.0, cfg.gamma, cfg.gae_lambda);
            adv.push(a);
            ret.push(r);
        }

        let mut order: Vec<usize> = (0..episodes.len()).collect();
        let mut last_parts = LossParts::default();
        for epoch in 0..cfg.epochs {
            let mb_seed = derive_seed(&[cfg.seed, self.update as u64, epoch as u64, 0x6d62]);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mb_seed));
            for chunk in order.chunks(cfg.minibatch) {
                let eps: Vec<&EpisodeTrace> = chunk.iter().map(|&i| &episodes[i]).collect();
                let mut mb_adv: Vec<Vec<f64>> = chunk.iter().map(|&i| adv[i].clone()).collect();
                let mb_ret: Vec<Vec<f64>> = chunk.iter().map(|&i| ret[i].clone()).collect();
                normalize_advantages(&mut mb_adv);
                let (loss, mut grad, parts) = ppo_loss(&self.policy, &eps, &mb_adv, &mb_ret, &cfg)?;
                if !loss.is_finite() || !grad.is_finite() {
                    return Err(AgentError::NonFiniteLoss {
                        update: self.update,
                        minibatch_seed: mb_seed,
                    });
                }
                clip_grad_norm(&mut grad, cfg.clip_norm);
                self.optimizer.step(&mut self.policy, &grad);
                last_parts = parts;
            }
        }

        let n = episodes.len() as f64;
        let stats = UpdateStats {
            update: self.update,
            mean_return: episodes.iter().map(EpisodeTrace::total_reward).sum::<f64>() / n,
            mean_final_belief: episodes
                .iter()
                .map(|e| e.fused.last().map_or(0.0, |o| o.belief(e.true_class)))
                .sum::<f64>()
                / n,
            policy_loss: last_parts.policy,
            value_loss: last_parts.value,
            entropy: last_parts.entropy,
            approx_kl: last_parts.approx_kl,
            clip_fraction: last_parts.clip_fraction,
        };
        self.history.push(stats.clone());
        self.update += 1;
        Ok(stats)
    }

    /// Runs until `config.updates`, calling `on_update` after each one.
    pub fn run<F>(&mut self, mut on_update: F) -> Result<(), AgentError>
    where
        F: FnMut(&Self, &UpdateStats) -> Result<(), AgentError>,
    {
        while !self.is_done() {
            let stats = self.step()?;
            on_update(self, &stats)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.policy
            .to_checkpoint(serde_json::json!({
                "update": self.update,
                "config": self.config,
                "history": self.history,
            }))
            .with_tensor("optimizer.velocity", self.optimizer.velocity.clone())
    }

    /// Restores policy, optimizer state and progress. The stored config must
    /// match `config` except for the number of updates.
    pub fn resume(
        world: &'a World,
        bench: &'a BenchConfig,
        recognizer: &'a R,
        config: PolicyConfig,
        ck: &Checkpoint,
    ) -> Result<Self, AgentError> {
        let mut trainer = Self::new(world, bench, recognizer, config)?;
        let stored: PolicyConfig = ck
            .meta
            .get("config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(NumericsError::from)?
            .ok_or_else(|| AgentError::Config("checkpoint has no training config".into()))?;
        let comparable = |c: &PolicyConfig| PolicyConfig { updates: 0, ..c.clone() };
        if comparable(&stored) != comparable(&trainer.config) {
            return Err(AgentError::Config("checkpoint was trained with a different policy config".into()));
        }
        trainer.policy = PolicyNet::from_checkpoint(ck)?;
        let velocity = ck
            .tensor("optimizer.velocity")
            .ok_or_else(|| NumericsError::Checkpoint("optimizer.velocity missing".into()))?;
        if velocity.data.len() != trainer.optimizer.velocity.len() {
            return Err(NumericsError::Checkpoint("optimizer state size mismatch".into()).into());
        }
        trainer.optimizer.velocity = velocity.data.clone();
        trainer.update = ck.meta.get("update").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        trainer.history = ck
            .meta
            .get("history")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(NumericsError::from)?
            .unwrap_or_default();
        Ok(trainer)
    }
}
