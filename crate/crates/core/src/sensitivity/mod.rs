//! Derivative at radius zero of the worst-case value over (adapted)
//! Wasserstein balls, with martingale, marginal and general constraints.
//!
//! Every sensitivity is `inf_θ ‖∂^d g + A θ‖_{L^{p'}(μ)}` for a linear
//! hedging map `A` determined by the active constraints:
//!
//! * mean constraints `φ_k` contribute `λ_k ∂^d φ_k`,
//! * a conditional constraint `ψ` (the martingale one is `ψ = x2 - x1`)
//!   contributes `h(x1) ∂^d ψ`,
//! * a fixed first marginal contributes `(f1(x1), 0)`,
//! * a fixed second marginal contributes `(0, f2(x2))`, with `f2` constant
//!   on the bins of a [`BinPartition`].
//!
//! For `p = 2` the closed forms below solve the normal equations directly;
//! [`solve_foc`] handles every case by Newton iteration on the same program.

pub mod constraints;
mod foc;
pub mod metric;
mod problem;
pub mod report;

pub use constraints::{CondConstraint, ConstraintSet, MeanConstraint};
pub use foc::{FOC_TOL, MAX_ITER};
pub use metric::{adapted_gradient, n_map, n_map_adapted, n_map_pair, Ball, Metric};
pub use problem::default_bins;
pub use report::{Method, SensitivityReport};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::criterion::GradientField;
use crate::error::{Error, Result};
use crate::fredholm::{FredholmOperator, NormKind};
use crate::measure::{cond_exp_1, BinPartition, GridMeasure};
use problem::HedgeProblem;

fn is_p2(metric: &Metric) -> bool {
    metric.p == 2.0
}

fn require_martingale(mu: &GridMeasure) -> Result<()> {
    if mu.is_martingale() {
        Ok(())
    } else {
        Err(Error::NotMartingale(mu.martingale_residual()))
    }
}

fn closed(prob: &HedgeProblem<'_>, theta: &[f64], label: String) -> Result<SensitivityReport> {
    SensitivityReport::assemble(prob, theta, Method::ClosedForm, 0, label)
}

/// `‖∂^d g‖_{L^{p'}(μ)}` with direction `N_d(∂^d g) / c`.
pub fn sens_unconstrained(mu: &GridMeasure, g: &GradientField, metric: Metric) -> Result<SensitivityReport> {
    let cs = ConstraintSet::none();
    let prob = HedgeProblem::new(mu, g, metric, &cs, None)?;
    closed(&prob, &[], cs.label())
}

/// `inf_h ‖∂^d g + h(X1) J‖` with `J = (-1, 1)`.
pub fn sens_martingale(mu: &GridMeasure, g: &GradientField, metric: Metric) -> Result<SensitivityReport> {
    require_martingale(mu)?;
    let cs = ConstraintSet::martingale();
    if !is_p2(&metric) {
        return solve_foc(mu, g, metric, &cs, None);
    }
    let prob = HedgeProblem::new(mu, g, metric, &cs, None)?;
    let e1g1 = cond_exp_1(mu, &prob.g.g1)?;
    let e1g2 = cond_exp_1(mu, &prob.g.g2)?;
    let h: Vec<f64> = e1g1.iter().zip(&e1g2).map(|(a, b)| 0.5 * (a - b)).collect();
    closed(&prob, &h, cs.label())
}

/// Both marginals fixed: `f1 = -E1[g1]`, `f2 = -E2[g2]` at `p = 2`.
pub fn sens_marginal(
    mu: &GridMeasure,
    g: &GradientField,
    metric: Metric,
    bins: Option<&BinPartition>,
) -> Result<SensitivityReport> {
    let cs = ConstraintSet::marginals();
    if !is_p2(&metric) {
        return solve_foc(mu, g, metric, &cs, bins);
    }
    let prob = HedgeProblem::new(mu, g, metric, &cs, bins)?;
    let assign = prob.bin_assignment().expect("second marginal is active");
    let mut theta: Vec<f64> = cond_exp_1(mu, &prob.g.g1)?.into_iter().map(|v| -v).collect();
    theta.extend(assign.average(mu, &prob.g.g2).into_iter().map(|v| -v));
    closed(&prob, &theta, cs.label())
}

/// Martingale and both marginals. At `p = 2` the dynamic hedge solves
/// `h - E1[E2[h]] = E1[E2[g2]] - E1[g2]` (zero-mean representative), then
/// `f1 = h - E1[g1]` and `f2 = -E2[g2 + h]`.
pub fn sens_mart_marginal(
    mu: &GridMeasure,
    g: &GradientField,
    metric: Metric,
    bins: Option<&BinPartition>,
) -> Result<SensitivityReport> {
    require_martingale(mu)?;
    let cs = ConstraintSet::martingale_marginals();
    if !is_p2(&metric) {
        return solve_foc(mu, g, metric, &cs, bins);
    }
    let prob = HedgeProblem::new(mu, g, metric, &cs, bins)?;
    let (partition, assign) = prob.bins.as_ref().expect("second marginal is active");
    let op = FredholmOperator::build(mu, partition)?;
    let e2g2 = assign.lift(&assign.average(mu, &prob.g.g2));
    let a = cond_exp_1(mu, &e2g2)?;
    let b = cond_exp_1(mu, &prob.g.g2)?;
    let rhs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let sol = op.solve(&rhs)?;
    let h = sol.h.clone();
    let e1g1 = cond_exp_1(mu, &prob.g.g1)?;
    let f1: Vec<f64> = h.iter().zip(&e1g1).map(|(h, e)| h - e).collect();
    let shifted: Vec<f64> = (0..mu.len()).map(|k| prob.g.g2[k] + h[mu.row_of(k)]).collect();
    let f2: Vec<f64> = assign.average(mu, &shifted).into_iter().map(|v| -v).collect();
    let mut theta = h;
    theta.extend(f1);
    theta.extend(f2);
    let mut report = closed(&prob, &theta, cs.label())?;
    report.contraction_norm = Some(sol.norm);
    report.fallback = sol.fallback;
    if sol.norm >= 1.0 - 1e-12 || sol.fallback {
        report.warnings.push(format!(
            "E1∘E2 is not a contraction on zero-mean functions (norm {:.6}); informational discrepancy fails",
            sol.norm
        ));
    }
    report.warnings.extend(sol.warnings);
    Ok(report)
}

/// Mean constraints `φ` and an optional conditional constraint `ψ`.
/// At `p = 2` the bordered normal equations are solved after eliminating the
/// per-atom `h` block; a singular system is reported with the assumption it
/// violates.
pub fn sens_general(
    mu: &GridMeasure,
    g: &GradientField,
    metric: Metric,
    phi: &[MeanConstraint],
    psi: Option<&CondConstraint>,
) -> Result<SensitivityReport> {
    let mut cs = ConstraintSet::none();
    cs.mean_phi = phi.to_vec();
    cs.cond_psi = psi.cloned();
    if !is_p2(&metric) {
        return solve_foc(mu, g, metric, &cs, None);
    }
    let prob = HedgeProblem::new(mu, g, metric, &cs, None)?;
    let theta = general_p2(&prob)?;
    closed(&prob, &theta, cs.label())
}

fn dot_at(a: &GradientField, b: &GradientField, k: usize) -> f64 {
    a.g1[k] * b.g1[k] + a.g2[k] * b.g2[k]
}

fn general_p2(prob: &HedgeProblem<'_>) -> Result<Vec<f64>> {
    let mu = prob.mu;
    let n1 = mu.n1();
    let n2 = mu.n2();
    let k = prob.phis.len();
    let row_mean = |i: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        (0..n2).map(|j| mu.q()[i * n2 + j] * f(i * n2 + j)).sum()
    };
    let mut h_coef: Option<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = None;
    if let Some(psi) = &prob.psi {
        let a: Vec<f64> = (0..n1).map(|i| row_mean(i, &|c| dot_at(psi, psi, c))).collect();
        let amax = a.iter().fold(0.0_f64, |m, v| m.max(*v));
        if let Some(i) = a.iter().position(|v| !(*v > 1e-12 * amax.max(f64::MIN_POSITIVE))) {
            return Err(Error::Assumption(format!(
                "E1[|∂ψ|²] vanishes at first-stage atom {i}: the conditional constraint is degenerate"
            )));
        }
        let b: Vec<Vec<f64>> = (0..n1)
            .map(|i| prob.phis.iter().map(|phi| row_mean(i, &|c| dot_at(psi, phi, c))).collect())
            .collect();
        let c: Vec<f64> = (0..n1).map(|i| row_mean(i, &|c| dot_at(psi, &prob.g, c))).collect();
        h_coef = Some((a, b, c));
    }
    let mut lambda = vec![0.0; k];
    if k > 0 {
        let mut hm = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for (u, pu) in prob.phis.iter().enumerate() {
            rhs[u] = -mu.expect(&(0..mu.len()).map(|c| dot_at(pu, &prob.g, c)).collect::<Vec<_>>());
            for (v, pv) in prob.phis.iter().enumerate() {
                hm[(u, v)] = mu.expect(&(0..mu.len()).map(|c| dot_at(pu, pv, c)).collect::<Vec<_>>());
            }
        }
        if let Some((a, b, c)) = &h_coef {
            for i in 0..n1 {
                let w = mu.w1()[i];
                for u in 0..k {
                    rhs[u] += w * b[i][u] * c[i] / a[i];
                    for v in 0..k {
                        hm[(u, v)] -= w * b[i][u] * b[i][v] / a[i];
                    }
                }
            }
        }
        let eig = SymmetricEigen::new(hm.clone());
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let low = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if !(low > 1e-10 * top.max(f64::MIN_POSITIVE)) {
            let what = if h_coef.is_some() {
                "the Schur complement H of the bordered system is singular (mean and conditional constraints are redundant)"
            } else {
                "E[∂δφ ∂δφᵀ] is singular (mean constraints are redundant)"
            };
            return Err(Error::Assumption(what.into()));
        }
        let sol = hm.lu().solve(&rhs).ok_or_else(|| Error::Assumption("singular normal matrix".into()))?;
        lambda = sol.iter().copied().collect();
    }
    let mut theta = lambda.clone();
    if let Some((a, b, c)) = &h_coef {
        for i in 0..n1 {
            let s: f64 = (0..k).map(|u| b[i][u] * lambda[u]).sum();
            theta.push(-(c[i] + s) / a[i]);
        }
    }
    Ok(theta)
}

/// Newton solve of the first-order conditions for any `p > 1` and any
/// constraint set. Non-convergence is reported through the warnings and
/// the FOC residual, never silently.
pub fn solve_foc(
    mu: &GridMeasure,
    g: &GradientField,
    metric: Metric,
    constraints: &ConstraintSet,
    bins: Option<&BinPartition>,
) -> Result<SensitivityReport> {
    if constraints.has_martingale() {
        require_martingale(mu)?;
    }
    let prob = HedgeProblem::new(mu, g, metric, constraints, bins)?;
    let out = foc::newton(&prob, vec![0.0; prob.n_unknowns()]);
    let mut theta = out.theta;
    prob.normalize(&mut theta);
    let mut report = SensitivityReport::assemble(&prob, &theta, Method::Newton, out.iterations, constraints.label())?;
    report.warnings.extend(out.warnings);
    if prob.martingale && prob.bins.is_some() && prob.layout.f1.is_some() {
        let (partition, _) = prob.bins.as_ref().expect("checked");
        let norm = FredholmOperator::build(mu, partition)?.contraction_norm(NormKind::L2);
        report.contraction_norm = Some(norm);
        if norm >= 1.0 - 1e-12 {
            report.warnings.push(format!(
                "E1∘E2 is not a contraction on zero-mean functions (norm {norm:.6}); the hedge is not unique"
            ));
        }
    }
    Ok(report)
}

/// Dispatches to the `p = 2` closed form when one exists for the constraint
/// set, and to [`solve_foc`] otherwise.
pub fn sensitivity(
    mu: &GridMeasure,
    g: &GradientField,
    metric: Metric,
    constraints: &ConstraintSet,
    bins: Option<&BinPartition>,
) -> Result<SensitivityReport> {
    constraints.validate()?;
    let mart = constraints.has_martingale();
    let general_psi = constraints.cond_psi.as_ref().is_some_and(|p| !p.is_martingale());
    let no_phi = constraints.mean_phi.is_empty();
    let (m1, m2) = (constraints.marginal1, constraints.marginal2);
    if !is_p2(&metric) {
        if !mart && !general_psi && no_phi && !m1 && !m2 {
            return sens_unconstrained(mu, g, metric);
        }
        return solve_foc(mu, g, metric, constraints, bins);
    }
    match (mart, general_psi, no_phi, m1, m2) {
        (false, false, true, false, false) => sens_unconstrained(mu, g, metric),
        (true, false, true, false, false) => sens_martingale(mu, g, metric),
        (false, false, true, true, true) => sens_marginal(mu, g, metric, bins),
        (true, false, true, true, true) => sens_mart_marginal(mu, g, metric, bins),
        (_, _, _, false, false) => sens_general(mu, g, metric, &constraints.mean_phi, constraints.effective_psi().as_ref()),
        _ => solve_foc(mu, g, metric, constraints, bins),
    }
}

#[cfg(test)]
mod tests;
