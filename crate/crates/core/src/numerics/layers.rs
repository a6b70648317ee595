use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_len, NumericsError, Parameterized};

/// Fully connected layer `y = W x + b`, `W` stored row-major as `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            weight: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim, dim);
        for i in 0..dim {
            a.weight[i * dim + i] = 1.0;
        }
        a
    }

    /// Glorot-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain * (2.0 / (input_dim + output_dim) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut a = Self::zeros(input_dim, output_dim);
        for w in a.weight.iter_mut() {
            *w = normal.sample(rng);
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        check_len(self.input_dim, x.len())?;
        Ok(self
            .bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weight[o * self.input_dim..(o + 1) * self.input_dim];
                b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad` and returns `W^T dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine) -> Result<Vec<f64>, NumericsError> {
        check_len(self.input_dim, x.len())?;
        check_len(self.output_dim, dy.len())?;
        let mut dx = vec![0.0; self.input_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.input_dim..(o + 1) * self.input_dim;
            for ((gw, w), (xi, dxi)) in grad.weight[row.clone()]
                .iter_mut()
                .zip(&self.weight[row])
                .zip(x.iter().zip(dx.iter_mut()))
            {
                *gw += g * xi;
                *dxi += g * w;
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Affine {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("weight", &[self.output_dim, self.input_dim], &self.weight);
        f("bias", &[self.output_dim], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Elementwise nonlinearities. `Exp`, `Softplus` and `Sigmoid` produce
/// non-negative evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `exp(clamp(z, -10, 10))`
    Exp,
    /// `ln(1 + exp(z))`
    Softplus,
    Sigmoid,
    Tanh,
}

/// Evidence activation inputs are clamped to this range before `exp`.
pub const EXP_CLAMP: f64 = 10.0;

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Exp => z.clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
            Activation::Softplus => softplus(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Exp => {
                if z.abs() > EXP_CLAMP {
                    0.0
                } else {
                    y
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn forward(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn backward(self, z: &[f64], y: &[f64], dy: &[f64]) -> Result<Vec<f64>, NumericsError> {
        check_len(z.len(), y.len())?;
        check_len(z.len(), dy.len())?;
        Ok(z.iter()
            .zip(y)
            .zip(dy)
            .map(|((&z, &y), &g)| g * self.derivative(z, y))
            .collect())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Gradient w.r.t. logits given the gradient w.r.t. the log-probabilities.
pub fn log_softmax_backward(logp: &[f64], dlogp: &[f64]) -> Vec<f64> {
    let total: f64 = dlogp.iter().sum();
    logp.iter()
        .zip(dlogp)
        .map(|(lp, g)| g - lp.exp() * total)
        .collect()
}
