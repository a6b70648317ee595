//! Evidential classifier and its training.
//!
//! The classifier maps a feature vector to non-negative evidence through one
//! hidden `tanh` layer and an evidence activation. Training minimises the
//! expected cross-entropy under the Dirichlet `alpha = e + 1` plus an annealed
//! KL term that pulls misleading (non-target) evidence towards the uniform
//! Dirichlet.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    clip_grad_norm, digamma, lgamma, trigamma, zeros_like, add_scaled, Activation, Affine,
    Checkpoint, Momentum, NumericsError, Parameterized,
};
use crate::opinion::{opinion_from_evidence, rank_descending, EvidenceVector, Opinion, OpinionError};

#[derive(Debug, Error)]
pub enum EdlError {
    #[error("label is not one-hot")]
    NotOneHot,
    #[error("label {label} outside 0..{class_count}")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("dirichlet parameter alpha[{index}] = {value} is below 1")]
    InvalidAlpha { index: usize, value: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Opinion(#[from] OpinionError),
}

/// A validated one-hot label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    class_count: usize,
}

impl OneHot {
    pub fn new(class: usize, class_count: usize) -> Result<Self, EdlError> {
        if class >= class_count {
            return Err(EdlError::LabelOutOfRange {
                label: class,
                class_count,
            });
        }
        Ok(Self { class, class_count })
    }

    /// Accepts a dense vector with exactly one entry equal to 1 and the rest 0.
    pub fn from_dense(y: &[f64]) -> Result<Self, EdlError> {
        let ones: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(EdlError::NotOneHot);
        }
        Self::new(ones[0], y.len())
    }

    pub fn class(&self) -> usize {
        self.class
    }
}

fn check_alpha(alpha: &[f64], y: OneHot) -> Result<(), EdlError> {
    if alpha.len() != y.class_count {
        return Err(NumericsError::ShapeMismatch {
            expected: y.class_count,
            got: alpha.len(),
        }
        .into());
    }
    match alpha.iter().enumerate().find(|(_, &a)| !(a >= 1.0) || !a.is_finite()) {
        Some((index, &value)) => Err(EdlError::InvalidAlpha { index, value }),
        None => Ok(()),
    }
}

/// Sum in ascending order, so relabelling classes cannot change the result by
/// rounding.
fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// `log S - log alpha_y`.
pub fn edl_loss(alpha: &[f64], y: OneHot) -> Result<f64, EdlError> {
    check_alpha(alpha, y)?;
    let s = ordered_sum(alpha.iter().copied());
    Ok(s.ln() - alpha[y.class].ln())
}

fn edl_loss_grad(alpha: &[f64], y: OneHot) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    alpha
        .iter()
        .enumerate()
        .map(|(k, a)| 1.0 / s - if k == y.class { 1.0 / a } else { 0.0 })
        .collect()
}

/// Target component replaced by 1: `y + (1 - y) * alpha`.
fn remove_target(alpha: &[f64], y: OneHot) -> Vec<f64> {
    let mut a = alpha.to_vec();
    a[y.class] = 1.0;
    a
}

/// `KL(Dir(alpha~) || Dir(1, ..., 1))` with the target evidence removed.
pub fn kl_regularizer(alpha: &[f64], y: OneHot) -> Result<f64, EdlError> {
    check_alpha(alpha, y)?;
    let a = remove_target(alpha, y);
    if a.iter().all(|&v| v == 1.0) {
        return Ok(0.0);
    }
    let k = a.len() as f64;
    let s = ordered_sum(a.iter().copied());
    let psi_s = digamma(s)?;
    let terms = a
        .iter()
        .map(|&ak| Ok((ak - 1.0) * (digamma(ak)? - psi_s) - lgamma(ak)?))
        .collect::<Result<Vec<f64>, EdlError>>()?;
    let kl = lgamma(s)? - lgamma(k)? + ordered_sum(terms);
    // analytically non-negative; clamp rounding noise near alpha~ = 1
    Ok(kl.max(0.0))
}

fn kl_regularizer_grad(alpha: &[f64], y: OneHot) -> Result<Vec<f64>, EdlError> {
    let a = remove_target(alpha, y);
    let s: f64 = a.iter().sum();
    let excess: f64 = a.iter().map(|x| x - 1.0).sum();
    let tri_s = trigamma(s)?;
    a.iter()
        .enumerate()
        .map(|(k, &ak)| {
            if k == y.class {
                Ok(0.0)
            } else {
                Ok((ak - 1.0) * trigamma(ak)? - tri_s * excess)
            }
        })
        .collect()
}

/// `L_edl + lambda * L_kl`.
pub fn total_loss(alpha: &[f64], y: OneHot, lambda_kl: f64) -> Result<f64, EdlError> {
    let base = edl_loss(alpha, y)?;
    if lambda_kl == 0.0 {
        return Ok(base);
    }
    Ok(base + lambda_kl * kl_regularizer(alpha, y)?)
}

/// Gradient of [`total_loss`] with respect to `alpha`.
pub fn total_loss_grad_alpha(alpha: &[f64], y: OneHot, lambda_kl: f64) -> Result<Vec<f64>, EdlError> {
    check_alpha(alpha, y)?;
    let mut g = edl_loss_grad(alpha, y);
    if lambda_kl != 0.0 {
        for (gi, ki) in g.iter_mut().zip(kl_regularizer_grad(alpha, y)?) {
            *gi += lambda_kl * ki;
        }
    }
    Ok(g)
}

/// Linear ramp `min(1, epoch / horizon)`.
pub fn anneal_lambda(epoch: usize, horizon: usize) -> f64 {
    assert!(horizon >= 1, "annealing horizon must be at least 1");
    (epoch as f64 / horizon as f64).min(1.0)
}

/// Feature vector to evidence: `D -> hidden (tanh) -> K -> evidence activation`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialClassifier {
    pub hidden: Affine,
    pub output: Affine,
    pub activation: Activation,
}

/// Forward intermediates for [`EvidentialClassifier::backward`].
pub struct ClassifierCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    evidence: Vec<f64>,
}

impl ClassifierCache {
    pub fn alpha(&self) -> Vec<f64> {
        self.evidence.iter().map(|e| e + 1.0).collect()
    }
}

pub const CLASSIFIER_KIND: &str = "recognizer";

impl EvidentialClassifier {
    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden_dim: usize,
        class_count: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Affine::init(feature_dim, hidden_dim, 1.0, rng),
            output: Affine::init(hidden_dim, class_count, 1.0, rng),
            activation,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.output.output_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<ClassifierCache, EdlError> {
        let hidden = Activation::Tanh.forward(&self.hidden.forward(x)?);
        let logits = self.output.forward(&hidden)?;
        let evidence = self.activation.forward(&logits);
        Ok(ClassifierCache {
            x: x.to_vec(),
            hidden,
            logits,
            evidence,
        })
    }

    pub fn evidence(&self, x: &[f64]) -> Result<EvidenceVector, EdlError> {
        Ok(EvidenceVector::new(self.forward(x)?.evidence)?)
    }

    pub fn opinion(&self, x: &[f64]) -> Result<Opinion, EdlError> {
        Ok(opinion_from_evidence(&self.evidence(x)?))
    }

    /// Backpropagates `dL/dalpha` (equal to `dL/de`) into `grad`.
    pub fn backward(&self, cache: &ClassifierCache, d_alpha: &[f64], grad: &mut Self) -> Result<(), EdlError> {
        let d_logits = self.activation.backward(&cache.logits, &cache.evidence, d_alpha)?;
        let d_hidden = self.output.backward(&cache.hidden, &d_logits, &mut grad.output)?;
        let d_pre = Activation::Tanh.backward(&cache.hidden, &cache.hidden, &d_hidden)?;
        // tanh derivative only needs the output; pass it for both arguments
        self.hidden.backward(&cache.x, &d_pre, &mut grad.hidden)?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            CLASSIFIER_KIND,
            self,
            serde_json::json!({
                "feature_dim": self.feature_dim(),
                "hidden_dim": self.hidden.output_dim,
                "class_count": self.class_count(),
                "activation": self.activation,
            }),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EdlError> {
        ck.expect_kind(CLASSIFIER_KIND)?;
        let field = |name: &str| -> Result<usize, EdlError> {
            ck.meta
                .get(name)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| NumericsError::Checkpoint(format!("meta.{name} missing")).into())
        };
        let activation: Activation = ck
            .meta
            .get("activation")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(NumericsError::from)?
            .unwrap_or(Activation::Exp);
        let mut model = Self {
            hidden: Affine::zeros(field("feature_dim")?, field("hidden_dim")?),
            output: Affine::zeros(field("hidden_dim")?, field("class_count")?),
            activation,
        };
        ck.restore_into(&mut model)?;
        Ok(model)
    }
}

impl Parameterized for EvidentialClassifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.hidden.visit(&mut |n, s, d| f(&format!("hidden.{n}"), s, d));
        self.output.visit(&mut |n, s, d| f(&format!("output.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.hidden.visit_mut(&mut |n, d| f(&format!("hidden.{n}"), d));
        self.output.visit_mut(&mut |n, d| f(&format!("output.{n}"), d));
    }
}

/// Loss and parameter gradient of [`total_loss`] for one labelled feature vector.
pub fn grad_total_loss(
    features: &[f64],
    y: OneHot,
    lambda_kl: f64,
    model: &EvidentialClassifier,
) -> Result<(f64, EvidentialClassifier), EdlError> {
    let mut grad = zeros_like(model);
    let loss = accumulate_grad(features, y, lambda_kl, model, &mut grad, 1.0)?;
    Ok((loss, grad))
}

fn accumulate_grad(
    features: &[f64],
    y: OneHot,
    lambda_kl: f64,
    model: &EvidentialClassifier,
    grad: &mut EvidentialClassifier,
    scale: f64,
) -> Result<f64, EdlError> {
    let cache = model.forward(features)?;
    let alpha = cache.alpha();
    let loss = total_loss(&alpha, y, lambda_kl)?;
    let d_alpha: Vec<f64> = total_loss_grad_alpha(&alpha, y, lambda_kl)?
        .into_iter()
        .map(|g| g * scale)
        .collect();
    model.backward(&cache, &d_alpha, grad)?;
    Ok(loss)
}

/// Single-observation training samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, label: usize) {
        self.features.push(x);
        self.labels.push(label);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Epochs for the KL weight to ramp from 0 to 1.
    pub anneal_horizon: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// Fraction of the data held out for validation.
    pub val_fraction: f64,
    /// Pure-noise probes used to measure out-of-distribution uncertainty.
    pub ood_samples: usize,
    /// Probe standard deviation relative to the per-dimension RMS of the
    /// training features.
    pub ood_scale: f64,
    /// Samples per gradient shard; fixed so the reduction order never
    /// depends on how many workers run.
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            step_size: 1e-2,
            momentum: 0.9,
            clip_norm: 5.0,
            anneal_horizon: 10,
            hidden_dim: 64,
            activation: Activation::Exp,
            val_fraction: 0.2,
            ood_samples: 500,
            ood_scale: 1.0,
            shard_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EdlError> {
        let bad = |m: &str| Err(EdlError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.shard_size == 0 || self.hidden_dim == 0 {
            return bad("epochs, batch_size, shard_size and hidden_dim must be positive");
        }
        if self.anneal_horizon == 0 {
            return bad("anneal_horizon must be at least 1");
        }
        if !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return bad("step_size and clip_norm must be positive, momentum in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if self.activation == Activation::Tanh {
            return bad("tanh can produce negative evidence; use exp, softplus or sigmoid");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub lambda_kl: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub mean_u_id: f64,
    pub mean_u_ood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    /// Loss became non-finite; parameters are from the last finite epoch.
    Diverged { epoch: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainedRecognizer {
    pub model: EvidentialClassifier,
    pub metrics: Vec<EpochMetrics>,
    pub status: TrainStatus,
}

impl TrainedRecognizer {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

pub const METRICS_CSV_HEADER: &str = "epoch,loss,lambda_kl,train_acc,val_acc,mean_u_id,mean_u_ood";

pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(w, "{}", crate::csv_schema_comment("recognizer-metrics"))?;
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            m.epoch, m.loss, m.lambda_kl, m.train_acc, m.val_acc, m.mean_u_id, m.mean_u_ood
        )?;
    }
    Ok(())
}

fn accuracy_and_uncertainty(
    model: &EvidentialClassifier,
    features: &[Vec<f64>],
    labels: Option<&[usize]>,
) -> Result<(f64, f64), EdlError> {
    if features.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut correct = 0usize;
    let mut u = 0.0;
    for (i, x) in features.iter().enumerate() {
        let op = model.opinion(x)?;
        u += op.uncertainty();
        if let Some(l) = labels {
            correct += usize::from(op.argmax() == l[i]);
        }
    }
    let n = features.len() as f64;
    Ok((correct as f64 / n, u / n))
}

struct ShardResult {
    grad: EvidentialClassifier,
    loss_sum: f64,
    correct: usize,
    diverged: bool,
}

fn shard_gradient(
    model: &EvidentialClassifier,
    data: &Dataset,
    shard: &[usize],
    class_count: usize,
    lambda: f64,
    scale: f64,
) -> Result<ShardResult, EdlError> {
    let mut out = ShardResult {
        grad: zeros_like(model),
        loss_sum: 0.0,
        correct: 0,
        diverged: false,
    };
    for &i in shard {
        let y = OneHot::new(data.labels[i], class_count)?;
        let cache = model.forward(&data.features[i])?;
        let alpha = cache.alpha();
        if alpha.iter().any(|a| !a.is_finite()) {
            out.diverged = true;
            return Ok(out);
        }
        out.correct += usize::from(rank_descending(&cache.evidence)[0] == y.class);
        let loss = total_loss(&alpha, y, lambda)?;
        out.loss_sum += loss;
        let d_alpha: Vec<f64> = total_loss_grad_alpha(&alpha, y, lambda)?
            .into_iter()
            .map(|g| g * scale)
            .collect();
        model.backward(&cache, &d_alpha, &mut out.grad)?;
    }
    Ok(out)
}

/// Trains a fresh classifier on single observations.
///
/// Deterministic for a given config seed. A non-finite loss stops training
/// and is reported through [`TrainStatus::Diverged`].
pub fn train_recognizer(
    data: &Dataset,
    class_count: usize,
    config: &TrainConfig,
) -> Result<TrainedRecognizer, EdlError> {
    config.validate()?;
    if data.is_empty() {
        return Err(EdlError::EmptyDataset);
    }
    if let Some(&label) = data.labels.iter().find(|&&l| l >= class_count) {
        return Err(EdlError::LabelOutOfRange { label, class_count });
    }
    let feature_dim = data.features[0].len();
    if let Some(x) = data.features.iter().find(|x| x.len() != feature_dim) {
        return Err(NumericsError::ShapeMismatch {
            expected: feature_dim,
            got: x.len(),
        }
        .into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EvidentialClassifier::init(
        feature_dim,
        config.hidden_dim,
        class_count,
        config.activation,
        &mut rng,
    );

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * config.val_fraction).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_x: Vec<Vec<f64>> = val_idx.iter().map(|&i| data.features[i].clone()).collect();
    let val_y: Vec<usize> = val_idx.iter().map(|&i| data.labels[i]).collect();
    let rms = (data.features.iter().flatten().map(|v| v * v).sum::<f64>()
        / (data.len() * feature_dim) as f64)
        .sqrt();
    let ood_sd = config.ood_scale * rms;
    let ood_x: Vec<Vec<f64>> = (0..config.ood_samples)
        .map(|_| {
            (0..feature_dim)
                .map(|_| ood_sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut train_idx = train_idx.to_vec();

    let mut opt = Momentum::new(config.step_size, config.momentum, model.param_count());
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut status = TrainStatus::Completed;

    for epoch in 0..config.epochs {
        let lambda = anneal_lambda(epoch, config.anneal_horizon);
        train_idx.shuffle(&mut rng);
        let snapshot = model.clone();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut diverged = false;

        for batch in train_idx.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let shards: Vec<ShardResult> = batch
                .par_chunks(config.shard_size)
                .map(|shard| shard_gradient(&model, data, shard, class_count, lambda, scale))
                .collect::<Result<_, _>>()?;
            let mut grad = zeros_like(&model);
            for r in &shards {
                add_scaled(&mut grad, &r.grad, 1.0);
                loss_sum += r.loss_sum;
                correct += r.correct;
                diverged |= r.diverged;
            }
            if diverged {
                break;
            }
            clip_grad_norm(&mut grad, config.clip_norm);
            opt.step(&mut model, &grad);
            if !model.is_finite() {
                diverged = true;
                break;
            }
        }

        if diverged || !loss_sum.is_finite() {
            model = snapshot;
            status = TrainStatus::Diverged {
                epoch,
                seed: config.seed,
            };
            break;
        }

        let (val_acc, mean_u_id) = accuracy_and_uncertainty(&model, &val_x, Some(&val_y))?;
        let (_, mean_u_ood) = accuracy_and_uncertainty(&model, &ood_x, None)?;
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / train_idx.len() as f64,
            lambda_kl: lambda,
            train_acc: correct as f64 / train_idx.len() as f64,
            val_acc,
            mean_u_id,
            mean_u_ood,
        });
    }

    Ok(TrainedRecognizer {
        model,
        metrics,
        status,
    })
}

/// Class-prototype classification task: `x = mu_c + noise * eps` with unit
/// prototypes `mu_c`, classes assigned round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeTask {
    pub class_count: usize,
    pub feature_dim: usize,
    pub samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PrototypeTask {
    fn default() -> Self {
        Self {
            class_count: 8,
            feature_dim: 16,
            samples: 4000,
            noise: 0.2,
            seed: 11,
        }
    }
}

impl PrototypeTask {
    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let prototypes = crate::world::random_unit_vectors(self.class_count, self.feature_dim, &mut rng);
        let mut data = Dataset::default();
        for i in 0..self.samples {
            let c = i % self.class_count;
            let x = prototypes[c]
                .iter()
                .map(|m| m + self.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            data.push(x, c);
        }
        data
    }
}
