use super::OracleError;
use nalgebra::{DMatrix, DVector};

/// Central finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FDConfig {
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
}

impl FDConfig {
    /// For forward quantities such as projections and Jacobians.
    pub const FORWARD: FDConfig = FDConfig {
        step: 1e-5,
        tolerance: 1e-5,
    };
    /// For whole-pipeline loss gradients.
    pub const END_TO_END: FDConfig = FDConfig {
        step: 1e-4,
        tolerance: 1e-3,
    };

    pub fn new(step: f64, tolerance: f64) -> Result<Self, OracleError> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(OracleError::InvalidConfig(format!("step must be positive, got {step}")));
        }
        Ok(Self { step, tolerance })
    }
}

impl Default for FDConfig {
    fn default() -> Self {
        Self::FORWARD
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Relative error of two equally sized collections using max-abs norms.
pub fn relative_error_max_norm(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-8, f64::max);
    diff / scale
}

/// Central-difference Jacobian of `f` at `x`, one column per input coordinate.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, config: &FDConfig) -> Result<DMatrix<f64>, OracleError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = config.step;
    if !(h > 0.0) {
        return Err(OracleError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        if fp.len() != fm.len() || cols.first().is_some_and(|c: &DVector<f64>| c.len() != fp.len()) {
            return Err(OracleError::InvalidConfig("function output size changed".into()));
        }
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite { coordinate: i });
        }
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, x.len(), |r, c| cols[c][r]))
}
