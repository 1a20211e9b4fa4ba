//! Brute-force checks of the sensitivities: ball suprema at finite radii by
//! linear programming, the bicausal distance between grid measures, and
//! explicit feasible families that realize the lower bound.

mod ball;
mod bicausal;
mod family;
mod lp;
mod slope;

pub use ball::{dro_lp, dro_lp_detail, BallSolution, DiscreteBallProblem, SHIFT_ANGLES};
pub use bicausal::{bicausal_distance, wasserstein_distance, wp_1d_cost};
pub use family::{
    feasible_family_general, feasible_family_mart_marginal, interior, FamilyMember, FeasibleFamily, MAX_NEWTON,
};
pub use lp::{LinearProgram, LpSolution, MAX_VARIABLES};
pub use slope::{slope_estimate, SlopeFit};

use serde::Serialize;

use crate::criterion::{Fn2, GradientField};
use crate::error::{Error, Result};
use crate::measure::{build_model, GridMeasure, ModelFamily, ModelSpec};
use crate::sensitivity::{sensitivity, Ball, ConstraintSet, Metric};

/// Default radii of the slope fits.
pub const DEFAULT_RADII: [f64; 4] = [0.02, 0.05, 0.1, 0.2];
/// Relative tolerance of the slope comparison.
pub const SLOPE_TOL: f64 = 0.05;
/// Absolute slack of the slope comparison, which decides zero references.
pub const SLOPE_ABS_TOL: f64 = 1e-9;

/// Bachelier `σ = 1` on a 5×5 Gauss–Hermite grid: a small exact martingale.
pub fn canned_measure() -> GridMeasure {
    build_model(&ModelSpec::new(ModelFamily::Bachelier, 1.0, 5, 5)).expect("canned model is valid")
}

/// Ball suprema at each radius, the fitted slope and the closed-form
/// reference it is compared with.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub objective: String,
    pub constraints: String,
    pub p: f64,
    pub radii: Vec<f64>,
    /// `None` where the LP failed; the reason is in `errors`.
    pub values: Vec<Option<f64>>,
    pub fit: Option<SlopeFit>,
    pub reference: f64,
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub errors: Vec<String>,
}

impl OracleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let slope = self.fit.map_or("n/a".to_string(), |f| format!("{:.6}", f.slope));
        format!(
            "{} [{}] p={}: LP slope {} vs closed form {:.6} -> {}",
            self.objective,
            self.constraints,
            self.p,
            slope,
            self.reference,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Objective `f` with its gradient, for LP values and the closed form.
pub struct Objective {
    pub name: String,
    pub f: Fn2,
    pub d1: Fn2,
    pub d2: Fn2,
}

impl Objective {
    /// `f = y2`.
    pub fn x2() -> Self {
        use std::sync::Arc;
        Self { name: "x2".into(), f: Arc::new(|_, b| b), d1: Arc::new(|_, _| 0.0), d2: Arc::new(|_, _| 1.0) }
    }
}

/// Fits the slope of `r ↦ sup_{W_p(μ,μ') ≤ r} ∫ f dμ'` over `radii` and
/// compares it with the classical-ball sensitivity of `∫ f dμ`.
pub fn ball_slope_check(
    mu: &GridMeasure,
    objective: &Objective,
    constraints: &ConstraintSet,
    p: f64,
    radii: &[f64],
) -> Result<OracleReport> {
    if radii.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope estimation needs at least 3 radii, got {}",
            radii.len()
        )));
    }
    let metric = Metric::new(Ball::Wp, p)?;
    let g = GradientField::from_fns(mu, |a, b| (objective.d1)(a, b), |a, b| (objective.d2)(a, b));
    let reference = sensitivity(mu, &g, metric, constraints, None)?.value;
    let mut values = Vec::with_capacity(radii.len());
    let mut errors = Vec::new();
    for &r in radii {
        let f = |a: f64, b: f64| (objective.f)(a, b);
        let solved =
            DiscreteBallProblem::with_shifted_support(mu, &f, r, p, constraints).and_then(|prob| dro_lp(&prob));
        match solved {
            Ok(v) => values.push(Some(v)),
            Err(e) => {
                errors.push(format!("r = {r}: {e}"));
                values.push(None);
            }
        }
    }
    let (rs, vs): (Vec<f64>, Vec<f64>) =
        radii.iter().zip(&values).filter_map(|(r, v)| v.map(|v| (*r, v))).unzip();
    let fit = match slope_estimate(&rs, &vs) {
        Ok(f) => Some(f),
        Err(e) => {
            errors.push(format!("slope fit: {e}"));
            None
        }
    };
    let relative_error = fit.map(|f| (f.slope - reference).abs() / reference.abs());
    let pass = errors.is_empty()
        && fit.is_some_and(|f| (f.slope - reference).abs() <= SLOPE_TOL * reference.abs() + SLOPE_ABS_TOL);
    Ok(OracleReport {
        objective: objective.name.clone(),
        constraints: constraints.label(),
        p,
        radii: radii.to_vec(),
        values,
        fit,
        reference,
        relative_error: relative_error.filter(|v| v.is_finite()),
        tolerance: SLOPE_TOL,
        pass,
        errors,
    })
}

/// The four constraint sets of the canned sandwich: none, martingale,
/// fixed second marginal, and martingale with fixed second marginal.
pub fn sandwich_sets() -> Vec<ConstraintSet> {
    vec![
        ConstraintSet::none(),
        ConstraintSet::martingale(),
        ConstraintSet { marginal2: true, ..ConstraintSet::none() },
        ConstraintSet { marginal2: true, ..ConstraintSet::martingale() },
    ]
}

#[cfg(test)]
mod tests;
