use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference check. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over coordinates.
pub fn check_gradient<F>(mut f: F, x: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if x.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, gradient has {}",
            x.len(),
            analytic.len()
        )));
    }
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        xp[k] = x[k] + FD_STEP;
        let fp = f(&xp);
        xp[k] = x[k] - FD_STEP;
        let fm = f(&xp);
        xp[k] = x[k];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {k}")));
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max((analytic[k] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
