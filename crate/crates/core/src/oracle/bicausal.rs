//! Adapted (bicausal) and classical Wasserstein distances between grid
//! measures. Both use the separable cost `|Δx1|^p + |Δx2|^p`, so every
//! bicausal coupling is admissible for the classical problem.

use super::lp::LinearProgram;
use crate::error::{Error, Result};
use crate::measure::GridMeasure;

/// `W_p^p` between two discrete laws on the line, by the quantile coupling.
pub fn wp_1d_cost(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64], p: f64) -> f64 {
    let sorted = |x: &[f64], w: &[f64]| {
        let mut v: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(xa, wa);
    let b = sorted(xb, wb);
    let (ta, tb): (f64, f64) = (wa.iter().sum(), wb.iter().sum());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().map_or(0.0, |v| v.1 / ta), b.first().map_or(0.0, |v| v.1 / tb));
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        cost += m * (a[i].0 - b[j].0).abs().powf(p);
        ra -= m;
        rb -= m;
        // advance whichever atom is exhausted; ties advance both
        if ra <= 1e-15 {
            i += 1;
            ra = a.get(i).map_or(0.0, |v| v.1 / ta);
        }
        if rb <= 1e-15 {
            j += 1;
            rb = b.get(j).map_or(0.0, |v| v.1 / tb);
        }
    }
    cost
}

/// Optimal transport cost between weight vectors with the given cost matrix.
fn transport(wa: &[f64], wb: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let (na, nb) = (wa.len(), wb.len());
    let mut lp = LinearProgram::new(na * nb);
    for i in 0..na {
        for k in 0..nb {
            lp.c[i * nb + k] = -cost(i, k);
        }
    }
    for (i, w) in wa.iter().enumerate() {
        lp.add_eq((0..nb).map(|k| (i * nb + k, 1.0)).collect(), *w);
    }
    for (k, w) in wb.iter().enumerate() {
        lp.add_eq((0..na).map(|i| (i * nb + k, 1.0)).collect(), *w);
    }
    Ok(-lp.solve()?.objective)
}

fn row(m: &GridMeasure, i: usize, n2: usize) -> (&[f64], &[f64]) {
    (&m.x2()[i * n2..(i + 1) * n2], &m.q()[i * n2..(i + 1) * n2])
}

/// Adapted Wasserstein distance: optimal coupling of the first stages with
/// cost `|x1 - y1|^p + W_p^p(κ_x, κ_y)` between the conditional rows.
pub fn bicausal_distance(mu: &GridMeasure, nu: &GridMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be at least 1, got {p}")));
    }
    let (n2a, n2b) = (mu.n2(), nu.n2());
    let total = transport(mu.w1(), nu.w1(), |i, k| {
        let (xa, qa) = row(mu, i, n2a);
        let (xb, qb) = row(nu, k, n2b);
        (mu.x1()[i] - nu.x1()[k]).abs().powf(p) + wp_1d_cost(xa, qa, xb, qb, p)
    })?;
    Ok(total.max(0.0).powf(1.0 / p))
}

/// Classical Wasserstein distance on the flattened atoms with the same
/// separable cost.
pub fn wasserstein_distance(mu: &GridMeasure, nu: &GridMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be at least 1, got {p}")));
    }
    let total = transport(&mu.masses(), &nu.masses(), |a, b| {
        let (x, y) = mu.point(a);
        let (u, v) = nu.point(b);
        (x - u).abs().powf(p) + (y - v).abs().powf(p)
    })?;
    Ok(total.max(0.0).powf(1.0 / p))
}
