//! Suprema of linear objectives over constrained classical Wasserstein
//! balls around a grid measure, as linear programs over couplings.

use std::f64::consts::PI;

use serde::Serialize;

use super::lp::LinearProgram;
use crate::error::{Error, Result};
use crate::measure::{marginal_2, GridMeasure};
use crate::sensitivity::ConstraintSet;

/// Directions of the shifted support copies.
pub const SHIFT_ANGLES: usize = 16;
const MATCH_TOL: f64 = 1e-12;

/// `sup { ∫ objective dμ' : W_p(μ, μ') ≤ r, constraints }` over measures
/// supported on `target_support`.
#[derive(Debug, Clone)]
pub struct DiscreteBallProblem {
    pub mu: GridMeasure,
    pub target_support: Vec<(f64, f64)>,
    /// Allowed `(source atom, target index)` pairs; every pair when `None`.
    pub pairs: Option<Vec<(usize, usize)>>,
    pub radius: f64,
    pub p: f64,
    pub constraints: ConstraintSet,
    /// Objective values on `target_support`.
    pub objective: Vec<f64>,
}

/// Optimal value and the transported measure.
#[derive(Debug, Clone, Serialize)]
pub struct BallSolution {
    pub value: f64,
    /// `Σ π |a - y|^p` of the optimal coupling.
    pub cost: f64,
    /// Mass of `μ'` on each target point.
    pub target_mass: Vec<f64>,
    pub variables: usize,
    pub pivots: usize,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= MATCH_TOL * a.abs().max(b.abs()).max(1.0)
}

impl DiscreteBallProblem {
    /// Default support: the atoms of `μ` plus, for every atom, copies shifted
    /// by `r` in [`SHIFT_ANGLES`] directions. A fixed second marginal only
    /// admits shifts of the first coordinate (and vice versa), so the support
    /// stays inside the fixed marginal's atoms. Each atom may move to any
    /// original atom or to its own shifted copies.
    pub fn with_shifted_support(
        mu: &GridMeasure,
        objective: &dyn Fn(f64, f64) -> f64,
        radius: f64,
        p: f64,
        constraints: &ConstraintSet,
    ) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be finite and nonnegative, got {radius}")));
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!("p must be at least 1, got {p}")));
        }
        let dirs: Vec<(f64, f64)> = match (constraints.marginal1, constraints.marginal2) {
            (true, true) => Vec::new(),
            (false, true) => vec![(1.0, 0.0), (-1.0, 0.0)],
            (true, false) => vec![(0.0, 1.0), (0.0, -1.0)],
            (false, false) => (0..SHIFT_ANGLES)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / SHIFT_ANGLES as f64;
                    (t.cos(), t.sin())
                })
                .collect(),
        };
        let n = mu.len();
        let mut support: Vec<(f64, f64)> = (0..n).map(|a| mu.point(a)).collect();
        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |t| (a, t))).collect();
        if radius > 0.0 {
            for a in 0..n {
                let (x, y) = mu.point(a);
                for &(c, s) in &dirs {
                    // exact zeros keep the unshifted coordinate bit-identical
                    let dx = if c.abs() < 1e-15 { 0.0 } else { radius * c };
                    let dy = if s.abs() < 1e-15 { 0.0 } else { radius * s };
                    pairs.push((a, support.len()));
                    support.push((x + dx, y + dy));
                }
            }
        }
        let objective = support.iter().map(|&(a, b)| objective(a, b)).collect();
        Ok(Self {
            mu: mu.clone(),
            target_support: support,
            pairs: Some(pairs),
            radius,
            p,
            constraints: constraints.clone(),
            objective,
        })
    }
}

/// Solves the ball problem; see [`dro_lp_detail`] for the optimal measure.
pub fn dro_lp(prob: &DiscreteBallProblem) -> Result<f64> {
    dro_lp_detail(prob).map(|s| s.value)
}

/// Groups target indices by equal coordinate (within rounding).
fn groups_by(support: &[(f64, f64)], key: impl Fn(&(f64, f64)) -> f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..support.len()).collect();
    idx.sort_by(|&a, &b| key(&support[a]).total_cmp(&key(&support[b])));
    let mut out: Vec<Vec<usize>> = Vec::new();
    for t in idx {
        match out.last_mut() {
            Some(g) if same(key(&support[g[0]]), key(&support[t])) => g.push(t),
            _ => out.push(vec![t]),
        }
    }
    out
}

pub fn dro_lp_detail(prob: &DiscreteBallProblem) -> Result<BallSolution> {
    let mu = &prob.mu;
    let support = &prob.target_support;
    let cs = &prob.constraints;
    cs.validate()?;
    if prob.objective.len() != support.len() {
        return Err(Error::DimensionMismatch { expected: support.len(), found: prob.objective.len() });
    }
    if !(prob.radius >= 0.0) || !(prob.p >= 1.0) {
        return Err(Error::InvalidArgument("radius must be nonnegative and p at least 1".into()));
    }
    let pairs: Vec<(usize, usize)> = match &prob.pairs {
        Some(p) => p.clone(),
        None => (0..mu.len()).flat_map(|a| (0..support.len()).map(move |t| (a, t))).collect(),
    };
    if let Some(&(a, t)) = pairs.iter().find(|(a, t)| *a >= mu.len() || *t >= support.len()) {
        return Err(Error::InvalidArgument(format!("pair ({a}, {t}) is out of range")));
    }
    let nv = pairs.len();
    let mut lp = LinearProgram::new(nv);
    let mut by_target: Vec<Vec<usize>> = vec![Vec::new(); support.len()];
    let mut by_source: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mu.len()];
    let mut cost_row = Vec::with_capacity(nv);
    for (v, &(a, t)) in pairs.iter().enumerate() {
        let (x, y) = mu.point(a);
        let (u, w) = support[t];
        lp.c[v] = prob.objective[t];
        by_target[t].push(v);
        by_source[a].push((v, 1.0));
        let d = (x - u).hypot(y - w).powf(prob.p);
        if d > 0.0 {
            cost_row.push((v, d));
        }
    }
    for (a, row) in by_source.into_iter().enumerate() {
        lp.add_eq(row, mu.mass(a));
    }
    lp.add_le(cost_row, prob.radius.powf(prob.p));
    let target_row = |ts: &[usize], coef: &dyn Fn(usize) -> f64| -> Vec<(usize, f64)> {
        ts.iter().flat_map(|&t| by_target[t].iter().map(move |&v| (v, coef(t)))).filter(|(_, c)| *c != 0.0).collect()
    };
    let by_y1 = groups_by(support, |s| s.0);
    if let Some(psi) = cs.effective_psi() {
        for g in &by_y1 {
            let row = target_row(g, &|t| {
                let (u, w) = support[t];
                (psi.psi)(u, w)
            });
            if !row.is_empty() {
                lp.add_eq(row, 0.0);
            }
        }
    }
    if cs.marginal1 {
        let w1 = mu.w1();
        for g in &by_y1 {
            let y1 = support[g[0]].0;
            let Some(i) = mu.x1().iter().position(|&x| same(x, y1)) else {
                return Err(Error::UnmatchedSupport(format!("target first coordinate {y1} is not a first-stage atom")));
            };
            lp.add_eq(target_row(g, &|_| 1.0), w1[i]);
        }
    }
    if cs.marginal2 {
        let mu2 = marginal_2(mu);
        for g in groups_by(support, |s| s.1) {
            let y2 = support[g[0]].1;
            let Some(&(_, m)) = mu2.iter().find(|(x, _)| same(*x, y2)) else {
                return Err(Error::UnmatchedSupport(format!("target second coordinate {y2} is not a second-marginal atom")));
            };
            lp.add_eq(target_row(&g, &|_| 1.0), m);
        }
    }
    for phi in &cs.mean_phi {
        let row = target_row(&(0..support.len()).collect::<Vec<_>>(), &|t| {
            let (u, w) = support[t];
            (phi.f)(u, w)
        });
        lp.add_eq(row, phi.level);
    }
    let sol = lp.solve()?;
    let mut target_mass = vec![0.0; support.len()];
    let mut cost = 0.0;
    for (v, &(a, t)) in pairs.iter().enumerate() {
        target_mass[t] += sol.x[v];
        let (x, y) = mu.point(a);
        let (u, w) = support[t];
        cost += sol.x[v] * (x - u).hypot(y - w).powf(prob.p);
    }
    Ok(BallSolution { value: sol.objective, cost, target_mass, variables: nv, pivots: sol.pivots })
}
