use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Least-squares fit `G(r) ≈ g0 + slope·r + curvature·r²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub g0: f64,
    pub slope: f64,
    pub curvature: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

pub fn slope_estimate(radii: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if radii.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: radii.len(), found: values.len() });
    }
    if radii.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope estimation needs at least 3 radii, got {}",
            radii.len()
        )));
    }
    if radii.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("radii and values must be finite".into()));
    }
    let mut distinct = radii.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Degenerate("slope fit needs 3 distinct radii".into()));
    }
    // scale radii to O(1) so the normal matrix is well conditioned
    let s = distinct.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    let n = radii.len();
    let a = DMatrix::from_fn(n, 3, |i, j| (radii[i] / s).powi(j as i32));
    let y = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(Error::Degenerate("slope fit design matrix is singular".into()));
    }
    let c = svd.solve(&y, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let fitted = &a * &c;
    let residual = ((&fitted - &y).norm_squared() / n as f64).sqrt();
    Ok(SlopeFit { g0: c[0], slope: c[1] / s, curvature: c[2] / (s * s), residual })
}
