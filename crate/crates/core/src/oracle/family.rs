//! Explicit measures inside the constrained sets, built by displacing `μ`
//! along a direction and restoring the constraints with a Newton solve.
//! Their value gains give lower bounds for the sensitivities.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::criterion::{Criterion, GradientField};
use crate::error::{Error, Result};
use crate::fredholm::{FredholmOperator, NormKind};
use crate::measure::{cond_exp_1, BinPartition, GridMeasure};
use crate::sensitivity::{CondConstraint, MeanConstraint};

pub const MAX_NEWTON: usize = 50;
/// Residual target of the Newton solves, relative to the support scale.
const NEWTON_TOL: f64 = 1e-13;

/// One member `ν_r` of a feasible family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyMember {
    pub r: f64,
    /// Mean-constraint multipliers (empty for the martingale-marginal family).
    pub lambda: Vec<f64>,
    /// `h_r` of the general family or `a_r` of the martingale-marginal one,
    /// on first-stage atoms.
    pub h: Vec<f64>,
    /// `|λ_r| + ‖h_r‖_{L²(μ1)}`.
    pub multiplier_norm: f64,
    /// Largest constraint residual of `ν_r`.
    pub residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub measure: GridMeasure,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibleFamily {
    pub members: Vec<FamilyMember>,
    pub warnings: Vec<String>,
}

impl FeasibleFamily {
    /// Finite differences `(c(ν_r) - c(μ)) / r` for every member.
    pub fn difference_quotients(&self, c: &Criterion, mu: &GridMeasure) -> Vec<(f64, f64)> {
        let base = c.value(mu);
        self.members.iter().map(|m| (m.r, (c.value(&m.measure) - base) / m.r)).collect()
    }

    /// Richardson extrapolation `2 D(r/2) - D(r)` over the first two members,
    /// which must have radii `r` and `r/2`.
    pub fn richardson_slope(&self, c: &Criterion, mu: &GridMeasure) -> Result<f64> {
        let d = self.difference_quotients(c, mu);
        let [(r0, d0), (r1, d1), ..] = d.as_slice() else {
            return Err(Error::InvalidArgument("Richardson extrapolation needs two family members".into()));
        };
        if ((r0 / r1) - 2.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("radii must halve, got {r0} and {r1}")));
        }
        Ok(2.0 * d1 - d0)
    }
}

fn outer_row(mu: &GridMeasure, i: usize) -> bool {
    i == 0 || i + 1 == mu.n1()
}

fn outer_atom(mu: &GridMeasure, k: usize) -> bool {
    let j = k % mu.n2();
    outer_row(mu, mu.row_of(k)) || j == 0 || j + 1 == mu.n2()
}

/// Zeroes a displacement on the outermost atom layer: first-stage rows
/// `0` and `n1 - 1`, and for the second component also columns `0` and
/// `n2 - 1` of every row.
pub fn interior(mu: &GridMeasure, theta: &GradientField) -> GradientField {
    let n = mu.len();
    let g1 = (0..n).map(|k| if outer_row(mu, mu.row_of(k)) { 0.0 } else { theta.g1[k] }).collect();
    let g2 = (0..n).map(|k| if outer_atom(mu, k) { 0.0 } else { theta.g2[k] }).collect();
    GradientField { g1, g2 }
}

fn check_direction(mu: &GridMeasure, d: &GradientField, what: &str) -> Result<()> {
    if d.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: d.len() });
    }
    let n2 = mu.n2();
    for i in 0..mu.n1() {
        let row = &d.g1[i * n2..(i + 1) * n2];
        if row.iter().any(|v| *v != row[0]) {
            return Err(Error::InvalidArgument(format!("{what}: first component must be constant on each first-stage row")));
        }
    }
    for k in 0..mu.len() {
        if (outer_row(mu, mu.row_of(k)) && d.g1[k] != 0.0) || (outer_atom(mu, k) && d.g2[k] != 0.0) {
            return Err(Error::InvalidArgument(format!("{what}: must vanish on the outermost atom layer")));
        }
    }
    Ok(())
}

fn l2_mu1(mu: &GridMeasure, h: &[f64]) -> f64 {
    mu.w1().iter().zip(h).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

fn support_scale(mu: &GridMeasure) -> f64 {
    mu.x1().iter().chain(mu.x2()).fold(1.0_f64, |a, v| a.max(v.abs()))
}

/// Constraint values `(φ_k(ν), E^ν[ψ | X1 = row i])` at displaced positions.
fn constraint_values(
    mu: &GridMeasure,
    y1: &[f64],
    y2: &[f64],
    phi: &[MeanConstraint],
    psi: Option<&CondConstraint>,
) -> Vec<f64> {
    let n2 = mu.n2();
    let mut out = Vec::with_capacity(phi.len() + mu.n1());
    for c in phi {
        let v: f64 = (0..mu.len()).map(|a| mu.mass(a) * (c.f)(y1[a / n2], y2[a])).sum();
        out.push(v - c.level);
    }
    if let Some(c) = psi {
        for i in 0..mu.n1() {
            out.push((0..n2).map(|j| mu.q()[i * n2 + j] * (c.psi)(y1[i], y2[i * n2 + j])).sum());
        }
    }
    out
}

/// Family `ν_r = μ ∘ Γ(r, λ_r, h_r)^{-1}` with
/// `Γ = X + rΘ + Σ_k λ_k u_k + (0, ∂x2ψ(X) h(X1))`, where `(λ_r, h_r)`
/// solve `F(r, λ, h) = F(0, 0, 0)` for the mean constraints `φ` and the
/// conditional constraint `ψ`. First components of `Θ` and `u_k` must be
/// stage-1 measurable so that `ν_r` stays a grid measure.
pub fn feasible_family_general(
    mu: &GridMeasure,
    theta: &GradientField,
    phi: &[MeanConstraint],
    psi: Option<&CondConstraint>,
    u: &[GradientField],
    r_list: &[f64],
) -> Result<FeasibleFamily> {
    check_direction(mu, theta, "displacement")?;
    for d in u {
        check_direction(mu, d, "mean-constraint direction")?;
    }
    if u.len() != phi.len() {
        return Err(Error::DimensionMismatch { expected: phi.len(), found: u.len() });
    }
    let n1 = mu.n1();
    let n2 = mu.n2();
    let k = phi.len();
    let nh = if psi.is_some() { n1 } else { 0 };
    let dpsi: Vec<f64> = match psi {
        Some(c) => mu.field(|a, b| (c.d2)(a, b)),
        None => vec![0.0; mu.len()],
    };
    if psi.is_some() {
        for i in 0..n1 {
            let s: f64 = (0..n2).map(|j| mu.q()[i * n2 + j] * dpsi[i * n2 + j].powi(2)).sum();
            if !(s > 0.0) {
                return Err(Error::Assumption(format!("E1[(∂x2ψ)²] vanishes on row {i}")));
            }
        }
    }
    let positions = |r: f64, lam: &[f64], h: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut y1: Vec<f64> = (0..n1).map(|i| mu.x1()[i] + r * theta.g1[i * n2]).collect();
        let mut y2: Vec<f64> = (0..mu.len()).map(|a| mu.x2()[a] + r * theta.g2[a]).collect();
        for (l, d) in u.iter().enumerate() {
            for i in 0..n1 {
                y1[i] += lam[l] * d.g1[i * n2];
            }
            for a in 0..mu.len() {
                y2[a] += lam[l] * d.g2[a];
            }
        }
        if nh > 0 {
            for a in 0..mu.len() {
                y2[a] += dpsi[a] * h[a / n2];
            }
        }
        (y1, y2)
    };
    let target = constraint_values(mu, mu.x1(), mu.x2(), phi, psi);
    let tol = NEWTON_TOL * support_scale(mu);
    let mut family = FeasibleFamily { members: Vec::new(), warnings: Vec::new() };
    let nu = k + nh;
    for &r in r_list {
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {r}")));
        }
        let mut lam = vec![0.0; k];
        let mut h = vec![0.0; nh];
        let mut iterations = 0;
        let mut residual;
        loop {
            let (y1, y2) = positions(r, &lam, &h);
            let f = constraint_values(mu, &y1, &y2, phi, psi);
            let res: Vec<f64> = f.iter().zip(&target).map(|(a, b)| a - b).collect();
            residual = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if residual <= tol || iterations >= MAX_NEWTON || nu == 0 {
                break;
            }
            iterations += 1;
            let mut jac = DMatrix::<f64>::zeros(nu, nu);
            for a in 0..mu.len() {
                let i = a / n2;
                let (p1, p2) = (y1[i], y2[a]);
                let m = mu.mass(a);
                let q = mu.q()[a];
                for (row, c) in phi.iter().enumerate() {
                    let (g1, g2) = ((c.d1)(p1, p2), (c.d2)(p1, p2));
                    for (l, d) in u.iter().enumerate() {
                        jac[(row, l)] += m * (g1 * d.g1[a] + g2 * d.g2[a]);
                    }
                    if nh > 0 {
                        jac[(row, k + i)] += m * g2 * dpsi[a];
                    }
                }
                if let Some(c) = psi {
                    let (g1, g2) = ((c.d1)(p1, p2), (c.d2)(p1, p2));
                    for (l, d) in u.iter().enumerate() {
                        jac[(k + i, l)] += q * (g1 * d.g1[a] + g2 * d.g2[a]);
                    }
                    jac[(k + i, k + i)] += q * g2 * dpsi[a];
                }
            }
            let Some(step) = jac.lu().solve(&DVector::from_vec(res.iter().map(|v| -v).collect())) else {
                break;
            };
            for l in 0..k {
                lam[l] += step[l];
            }
            for i in 0..nh {
                h[i] += step[k + i];
            }
        }
        if residual > tol {
            family.warnings.push(format!(
                "Newton did not restore the constraints at r = {r:e} (residual {residual:.3e}); family truncated"
            ));
            break;
        }
        let (y1, y2) = positions(r, &lam, &h);
        let measure = match GridMeasure::from_unsorted_rows(y1, mu.w1().to_vec(), y2, mu.q().to_vec(), n2) {
            Ok(m) => m,
            Err(e) => {
                family.warnings.push(format!("displaced grid is invalid at r = {r:e}: {e}; family truncated"));
                break;
            }
        };
        let multiplier_norm = lam.iter().map(|v| v * v).sum::<f64>().sqrt() + l2_mu1(mu, &h);
        family.members.push(FamilyMember { r, lambda: lam, h, multiplier_norm, residual, iterations, measure });
    }
    Ok(family)
}

/// Prices of the calls struck at the bin edges under the relocation `y2`.
fn edge_calls(mu: &GridMeasure, y2: &[f64], edges: &[f64]) -> Vec<f64> {
    edges.iter().map(|e| (0..mu.len()).map(|k| mu.mass(k) * (y2[k] - e).max(0.0)).sum()).collect()
}

/// Family in the martingale set with both marginals fixed at bin level.
///
/// At bin level the second marginal is pinned by the forward and the calls
/// struck at the bin edges, the static claims whose derivative is constant
/// on bins. The relocation is `X2' = X2 + rΘ2 + δ_r` with the per-atom
/// correction `δ_r` of least Euclidean norm that restores the martingale
/// identity row by row and the edge-call prices, found by Gauss–Newton.
/// Atoms may cross edges; the call prices account for that. The recorded
/// `a_r` is `E1[δ_r]`. The first stage is not moved, so `μ1` is kept exactly.
pub fn feasible_family_mart_marginal(
    mu: &GridMeasure,
    theta2: &[f64],
    r_list: &[f64],
    bins: &BinPartition,
) -> Result<FeasibleFamily> {
    if !mu.is_martingale() {
        return Err(Error::NotMartingale(mu.martingale_residual()));
    }
    if theta2.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: theta2.len() });
    }
    if (0..mu.len()).any(|k| outer_atom(mu, k) && theta2[k] != 0.0) {
        return Err(Error::InvalidArgument("displacement must vanish on the outermost atom layer".into()));
    }
    bins.assign(mu)?;
    let edges = bins.edges();
    let mut family = FeasibleFamily { members: Vec::new(), warnings: Vec::new() };
    let norm = FredholmOperator::build(mu, bins)?.contraction_norm(NormKind::L2);
    if norm >= 1.0 {
        family.warnings.push(format!("E1∘E2 is not a contraction (norm {norm:.6}); a_r may not be unique"));
    }
    let n1 = mu.n1();
    let n = mu.len();
    let rows = n1 + edges.len();
    let drift = |y2: &[f64]| -> Result<Vec<f64>> {
        Ok(cond_exp_1(mu, y2)?.iter().zip(mu.x1()).map(|(a, b)| a - b).collect())
    };
    // keep whatever rounding-level drift the grid already has
    let base_drift = drift(mu.x2())?;
    let base_calls = edge_calls(mu, mu.x2(), edges);
    let equations = |y2: &[f64]| -> Result<Vec<f64>> {
        let mut f: Vec<f64> = drift(y2)?.iter().zip(&base_drift).map(|(v, b)| v - b).collect();
        f.extend(edge_calls(mu, y2, edges).iter().zip(&base_calls).map(|(v, b)| v - b));
        Ok(f)
    };
    let merit = |f: &[f64]| f.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let tol = NEWTON_TOL * support_scale(mu);
    for &r in r_list {
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {r}")));
        }
        let start: Vec<f64> = (0..n).map(|k| mu.x2()[k] + r * theta2[k]).collect();
        let mut y2 = start.clone();
        let mut f = equations(&y2)?;
        let mut iterations = 0;
        while merit(&f) > tol && iterations < MAX_NEWTON {
            iterations += 1;
            // rows scaled to unit length; the step is Jᵀ (J Jᵀ)⁺ (-F)
            let mut jac = DMatrix::<f64>::zeros(rows, n);
            for k in 0..n {
                jac[(mu.row_of(k), k)] = mu.q()[k];
                for (e, edge) in edges.iter().enumerate() {
                    if y2[k] > *edge {
                        jac[(n1 + e, k)] = mu.mass(k);
                    }
                }
            }
            let mut rhs = DVector::from_vec(f.iter().map(|v| -v).collect());
            for i in 0..rows {
                let s = jac.row(i).norm();
                if s > 0.0 {
                    jac.row_mut(i).scale_mut(1.0 / s);
                    rhs[i] /= s;
                }
            }
            let gram = &jac * jac.transpose();
            let svd = gram.svd(true, true);
            let cutoff = 1e-14 * svd.singular_values.max();
            let Ok(lambda) = svd.solve(&rhs, cutoff) else {
                break;
            };
            let step = jac.transpose() * lambda;
            let current = merit(&f);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-6 {
                let trial: Vec<f64> = y2.iter().zip(step.iter()).map(|(y, s)| y + t * s).collect();
                let ft = equations(&trial)?;
                if merit(&ft) < current {
                    y2 = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let mart_res = merit(&f[..n1]);
        let marg_res = merit(&f[n1..]);
        if mart_res > 1e-8 || marg_res > 1e-8 {
            family.warnings.push(format!(
                "constraints not restored at r = {r:e} (martingale {mart_res:.3e}, marginal {marg_res:.3e}); family truncated"
            ));
            break;
        }
        let delta: Vec<f64> = y2.iter().zip(&start).map(|(y, s)| y - s).collect();
        let a = cond_exp_1(mu, &delta)?;
        let multiplier_norm = l2_mu1(mu, &a);
        family.members.push(FamilyMember {
            r,
            lambda: Vec::new(),
            h: a,
            multiplier_norm,
            residual: mart_res.max(marg_res),
            iterations,
            measure: mu.with_second_stage(y2)?,
        });
    }
    Ok(family)
}
