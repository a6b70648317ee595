use super::{global_norm, Parameterized};

/// Scales `grad` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<P: Parameterized>(grad: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Gradient descent with heavy-ball momentum: `v = m v + g; p -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64, param_count: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; param_count],
        }
    }

    pub fn step<P: Parameterized, G: Parameterized>(&mut self, params: &mut P, grad: &G) {
        let g = grad.to_flat();
        assert_eq!(g.len(), self.velocity.len(), "optimizer state does not match model");
        for (v, gi) in self.velocity.iter_mut().zip(&g) {
            *v = self.momentum * *v + gi;
        }
        let mut offset = 0;
        let (lr, vel) = (self.lr, &self.velocity);
        params.visit_mut(&mut |_, d| {
            let n = d.len();
            for (p, v) in d.iter_mut().zip(&vel[offset..offset + n]) {
                *p -= lr * v;
            }
            offset += n;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Affine;

    #[test]
    fn clipping_caps_norm() {
        let mut g = Affine::zeros(2, 1);
        g.weight = vec![3.0, 4.0];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn momentum_minimizes_quadratic() {
        // f(p) = 0.5 |p - 1|^2
        let mut p = Affine::zeros(2, 1);
        let mut opt = Momentum::new(0.1, 0.9, p.param_count());
        for _ in 0..300 {
            let mut g = p.clone();
            g.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x -= 1.0));
            opt.step(&mut p, &g);
        }
        assert!(p.to_flat().iter().all(|x| (x - 1.0).abs() < 1e-6));
    }
}
