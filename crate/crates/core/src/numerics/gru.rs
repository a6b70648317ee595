//! Gated recurrent cell.
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = (1 - z) ⊙ h + z ⊙ n
//! ```

use rand::Rng;

use super::layers::sigmoid;
use super::{check_len, Affine, NumericsError, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Input projections (carry the biases).
    pub wz: Affine,
    pub wr: Affine,
    pub wn: Affine,
    /// Recurrent projections, bias unused and kept at zero.
    pub uz: Affine,
    pub ur: Affine,
    pub un: Affine,
}

/// Forward intermediates needed by [`GruCell::backward`].
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rh: Vec<f64>,
}

fn no_bias(a: &mut Affine) {
    a.bias.fill(0.0);
}

impl GruCell {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut cell = Self {
            input_dim,
            hidden_dim,
            wz: Affine::init(input_dim, hidden_dim, 1.0, rng),
            wr: Affine::init(input_dim, hidden_dim, 1.0, rng),
            wn: Affine::init(input_dim, hidden_dim, 1.0, rng),
            uz: Affine::init(hidden_dim, hidden_dim, 1.0, rng),
            ur: Affine::init(hidden_dim, hidden_dim, 1.0, rng),
            un: Affine::init(hidden_dim, hidden_dim, 1.0, rng),
        };
        no_bias(&mut cell.uz);
        no_bias(&mut cell.ur);
        no_bias(&mut cell.un);
        cell
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim]
    }

    pub fn forward(&self, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, GruCache), NumericsError> {
        check_len(self.hidden_dim, h.len())?;
        let xz = self.wz.forward(x)?;
        let xr = self.wr.forward(x)?;
        let xn = self.wn.forward(x)?;
        let hz = self.uz.forward(h)?;
        let hr = self.ur.forward(h)?;
        let z: Vec<f64> = xz.iter().zip(&hz).map(|(a, b)| sigmoid(a + b)).collect();
        let r: Vec<f64> = xr.iter().zip(&hr).map(|(a, b)| sigmoid(a + b)).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let hn = self.un.forward(&rh)?;
        let n: Vec<f64> = xn.iter().zip(&hn).map(|(a, b)| (a + b).tanh()).collect();
        let out = (0..self.hidden_dim)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i])
            .collect();
        Ok((
            out,
            GruCache {
                x: x.to_vec(),
                h: h.to_vec(),
                z,
                r,
                n,
                rh,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns `(dx, dh_prev)`.
    pub fn backward(
        &self,
        cache: &GruCache,
        dh_out: &[f64],
        grad: &mut GruCell,
    ) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        check_len(self.hidden_dim, dh_out.len())?;
        let hd = self.hidden_dim;
        let GruCache { x, h, z, r, n, rh } = cache;

        let mut dh: Vec<f64> = (0..hd).map(|i| dh_out[i] * (1.0 - z[i])).collect();
        let dz_pre: Vec<f64> = (0..hd)
            .map(|i| dh_out[i] * (n[i] - h[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let dn_pre: Vec<f64> = (0..hd)
            .map(|i| dh_out[i] * z[i] * (1.0 - n[i] * n[i]))
            .collect();

        let mut dx = self.wn.backward(x, &dn_pre, &mut grad.wn)?;
        let drh = self.un.backward(rh, &dn_pre, &mut grad.un)?;
        let dr_pre: Vec<f64> = (0..hd)
            .map(|i| drh[i] * h[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..hd {
            dh[i] += drh[i] * r[i];
        }

        for (w, u, gw, gu, d) in [
            (&self.wz, &self.uz, &mut grad.wz, &mut grad.uz, &dz_pre),
            (&self.wr, &self.ur, &mut grad.wr, &mut grad.ur, &dr_pre),
        ] {
            let dxi = w.backward(x, d, gw)?;
            let dhi = u.backward(h, d, gu)?;
            for (a, b) in dx.iter_mut().zip(dxi) {
                *a += b;
            }
            for (a, b) in dh.iter_mut().zip(dhi) {
                *a += b;
            }
        }
        // recurrent biases are structurally zero
        grad.uz.bias.fill(0.0);
        grad.ur.bias.fill(0.0);
        grad.un.bias.fill(0.0);
        Ok((dx, dh))
    }
}

impl Parameterized for GruCell {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, layer) in [
            ("wz", &self.wz),
            ("wr", &self.wr),
            ("wn", &self.wn),
        ] {
            layer.visit(&mut |n, s, d| f(&format!("{name}.{n}"), s, d));
        }
        for (name, layer) in [("uz", &self.uz), ("ur", &self.ur), ("un", &self.un)] {
            f(&format!("{name}.weight"), &[self.hidden_dim, self.hidden_dim], &layer.weight);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (name, layer) in [
            ("wz", &mut self.wz),
            ("wr", &mut self.wr),
            ("wn", &mut self.wn),
        ] {
            layer.visit_mut(&mut |n, d| f(&format!("{name}.{n}"), d));
        }
        for (name, layer) in [
            ("uz", &mut self.uz),
            ("ur", &mut self.ur),
            ("un", &mut self.un),
        ] {
            f(&format!("{name}.weight"), &mut layer.weight);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Unrolled three steps so the recurrent path is exercised.
    fn sequence_loss(cell: &GruCell, xs: &[Vec<f64>], h0: &[f64], w: &[f64]) -> f64 {
        let mut h = h0.to_vec();
        let mut total = 0.0;
        for x in xs {
            h = cell.forward(x, &h).unwrap().0;
            total += h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ind, hid) = (5, 6);
            let cell = GruCell::init(ind, hid, &mut rng);
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..ind).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let h0: Vec<f64> = (0..hid).map(|_| rng.random_range(-0.5..0.5)).collect();
            let w: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();

            let mut caches = Vec::new();
            let mut h = h0.clone();
            for x in &xs {
                let (next, c) = cell.forward(x, &h).unwrap();
                caches.push(c);
                h = next;
            }
            let mut grad = zeros_like(&cell);
            let mut dh = vec![0.0; hid];
            let mut dxs = vec![Vec::new(); xs.len()];
            for (t, c) in caches.iter().enumerate().rev() {
                for (a, b) in dh.iter_mut().zip(&w) {
                    *a += b;
                }
                let (dx, dprev) = cell.backward(c, &dh, &mut grad).unwrap();
                dxs[t] = dx;
                dh = dprev;
            }

            let err = finite_diff_check(
                |p| {
                    let mut c = cell.clone();
                    c.set_flat(p);
                    sequence_loss(&c, &xs, &h0, &w)
                },
                &cell.to_flat(),
                &grad.to_flat(),
            );
            assert!(err <= 1e-5, "seed {seed}: params {err}");

            let err = finite_diff_check(|h| sequence_loss(&cell, &xs, h, &w), &h0, &dh);
            assert!(err <= 1e-5, "seed {seed}: h0 {err}");

            let err = finite_diff_check(
                |x0| {
                    let mut xs2 = xs.clone();
                    xs2[0] = x0.to_vec();
                    sequence_loss(&cell, &xs2, &h0, &w)
                },
                &xs[0],
                &dxs[0],
            );
            assert!(err <= 1e-5, "seed {seed}: x0 {err}");
        }
    }

    #[test]
    fn zero_input_zero_state_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = GruCell::init(3, 4, &mut rng);
        let (h, _) = cell.forward(&[0.0; 3], &cell.initial_state()).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1.0));
    }
}
