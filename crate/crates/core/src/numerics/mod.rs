//! Small dense-layer kit with hand-written backward passes.
//!
//! Vectors are plain `&[f64]`; weight matrices are row-major with one row per
//! output unit. Gradient accumulators are values of the same type as the
//! parameters they mirror, zeroed with [`Parameterized::zero`].

mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod optim;
pub mod special;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, numeric_gradient, FD_STEP};
pub use gru::{GruCache, GruCell};
pub use layers::{log_softmax, log_softmax_backward, softmax, Activation, Affine};
pub use optim::{clip_grad_norm, Momentum};
pub use special::{digamma, lgamma, trigamma};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("argument {x} outside the domain x > 0")]
    Domain { x: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), NumericsError> {
    if expected == got {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch { expected, got })
    }
}

/// A set of named parameter tensors visited in a fixed order.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Panics if `flat` does not hold exactly [`param_count`](Self::param_count) values.
    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, d| d.fill(0.0));
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, d| ok &= d.iter().all(|x| x.is_finite()));
        ok
    }

    /// SHA-256 over names, shapes and little-endian values.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |name, shape, data| {
            h.update(name.as_bytes());
            for s in shape {
                h.update((*s as u64).to_le_bytes());
            }
            for x in data {
                h.update(x.to_le_bytes());
            }
        });
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fresh zeroed copy with identical shapes, for use as a gradient buffer.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut g = p.clone();
    g.zero();
    g
}

/// `acc += scale * other`, tensor by tensor. Both must share a layout.
pub fn add_scaled<P: Parameterized>(acc: &mut P, other: &P, scale: f64) {
    let src = other.to_flat();
    let mut offset = 0;
    acc.visit_mut(&mut |_, d| {
        let n = d.len();
        for (x, y) in d.iter_mut().zip(&src[offset..offset + n]) {
            *x += scale * y;
        }
        offset += n;
    });
}

/// Euclidean norm of all values.
pub fn global_norm<P: Parameterized>(p: &P) -> f64 {
    let mut s = 0.0;
    p.visit(&mut |_, _, d| s += d.iter().map(|x| x * x).sum::<f64>());
    s.sqrt()
}
