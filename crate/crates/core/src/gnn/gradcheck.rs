use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest per-coordinate relative error between `analytic` and central differences,
/// with denominator `max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let numeric = numeric_gradient(f, params, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max))
}
