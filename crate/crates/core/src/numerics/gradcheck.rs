/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(mut f: F, params: &[f64]) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Max over parameters of `|analytic - numeric| / max(1e-8, |numeric|)`.
///
/// Panics if `analytic` and `params` differ in length.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    numeric_gradient(f, params)
        .iter()
        .zip(analytic)
        .map(|(n, a)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}
