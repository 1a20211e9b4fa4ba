//! Dense two-phase simplex for small linear programs.
//!
//! Pivots use the largest reduced cost and switch to Bland's rule after a
//! run of degenerate pivots, which rules out cycling.

use crate::error::{Error, Result};

/// Variable cap; larger programs are rejected rather than solved slowly.
pub const MAX_VARIABLES: usize = 5_000;
const EPS: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;
const FEAS_TOL: f64 = 1e-8;

/// `maximize c·x` subject to `A_eq x = b_eq`, `A_le x ≤ b_le`, `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub eq: Vec<(Vec<(usize, f64)>, f64)>,
    pub le: Vec<(Vec<(usize, f64)>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self { c: vec![0.0; n], eq: Vec::new(), le: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    /// Adds `Σ coef·x = rhs`; coefficients are sparse `(index, value)` pairs.
    pub fn add_eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    pub fn add_le(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.le.push((row, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.n();
        if n > MAX_VARIABLES {
            return Err(Error::TooLarge(format!("{n} LP variables exceed the cap of {MAX_VARIABLES}")));
        }
        for (row, _) in self.eq.iter().chain(&self.le) {
            if let Some((j, _)) = row.iter().find(|(j, _)| *j >= n) {
                return Err(Error::DimensionMismatch { expected: n, found: j + 1 });
            }
        }
        let sol = Tableau::build(self).run(n)?;
        self.check_feasible(&sol.x)?;
        Ok(sol)
    }

    /// Rejects a basic solution that rounding has pushed off the constraints.
    fn check_feasible(&self, x: &[f64]) -> Result<()> {
        let lhs = |row: &[(usize, f64)]| -> (f64, f64) {
            row.iter().fold((0.0, 0.0), |(s, m), &(j, v)| (s + v * x[j], f64::max(m, (v * x[j]).abs())))
        };
        for (row, b) in &self.eq {
            let (s, m) = lhs(row);
            if (s - b).abs() > FEAS_TOL * (1.0 + m + b.abs()) {
                return Err(Error::Divergence(format!("simplex solution violates an equality by {:.3e}", s - b)));
            }
        }
        for (row, b) in &self.le {
            let (s, m) = lhs(row);
            if s - b > FEAS_TOL * (1.0 + m + b.abs()) {
                return Err(Error::Divergence(format!("simplex solution violates an inequality by {:.3e}", s - b)));
            }
        }
        Ok(())
    }
}

struct Tableau {
    m: usize,
    cols: usize,
    /// `(m + 1) × (cols + 1)`; last row is the objective, last column the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    n_struct: usize,
    n_art: usize,
    c: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n();
        let n_le = lp.le.len();
        let m = lp.eq.len() + n_le;
        // slacks for ≤ rows, then one artificial per row that has no usable slack
        let mut rows: Vec<(Vec<(usize, f64)>, f64, Option<usize>)> = Vec::with_capacity(m);
        for (k, (row, b)) in lp.le.iter().enumerate() {
            rows.push((row.clone(), *b, Some(n + k)));
        }
        for (row, b) in &lp.eq {
            rows.push((row.clone(), *b, None));
        }
        let needs_art: Vec<bool> = rows.iter().map(|(_, b, s)| s.is_none() || *b < 0.0).collect();
        let n_art = needs_art.iter().filter(|x| **x).count();
        let cols = n + n_le + n_art;
        let w = cols + 1;
        let mut t = vec![0.0; (m + 1) * w];
        let mut basis = vec![0; m];
        let mut art = n + n_le;
        for (r, (row, b, slack)) in rows.iter().enumerate() {
            let sign = if *b < 0.0 { -1.0 } else { 1.0 };
            for &(j, v) in row {
                t[r * w + j] += sign * v;
            }
            if let Some(s) = slack {
                t[r * w + s] = sign;
            }
            t[r * w + cols] = sign * b;
            if needs_art[r] {
                t[r * w + art] = 1.0;
                basis[r] = art;
                art += 1;
            } else {
                basis[r] = slack.expect("slack row");
            }
        }
        let mut c = vec![0.0; cols];
        c[..n].copy_from_slice(&lp.c);
        Self { m, cols, t, basis, n_struct: n + n_le, n_art, c, pivots: 0 }
    }

    fn w(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, j: usize) -> f64 {
        self.t[r * self.w() + j]
    }

    /// Objective row `z_j - c_j` for the given costs (maximization).
    fn price(&mut self, cost: &[f64]) {
        let w = self.w();
        let m = self.m;
        for j in 0..w {
            self.t[m * w + j] = if j < self.cols { -cost[j] } else { 0.0 };
        }
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..w {
                    self.t[m * w + j] += cb * self.t[r * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.w();
        let inv = 1.0 / self.t[pr * w + pc];
        for j in 0..w {
            self.t[pr * w + j] *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let prow: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[r * w..(r + 1) * w];
            for j in 0..w {
                row[j] -= f * prow[j];
            }
            row[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Simplex iterations over columns `< allowed`. Returns `false` when unbounded.
    fn iterate(&mut self, allowed: usize) -> Result<bool> {
        let max_pivots = 50 * (self.m + self.cols) + 1000;
        let mut degenerate = 0;
        let w = self.w();
        loop {
            if self.pivots > max_pivots {
                return Err(Error::Divergence(format!("simplex exceeded {max_pivots} pivots")));
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let obj = self.m * w;
            let mut pc = None;
            let mut best = -EPS;
            for j in 0..allowed {
                let d = self.t[obj + j];
                if d < best {
                    pc = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = pc else {
                return Ok(true);
            };
            // two passes: the smallest ratio, then among near-ties the
            // largest pivot (lowest basis index under Bland's rule)
            let mut ratio = f64::INFINITY;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > EPS {
                    ratio = ratio.min(self.at(r, self.cols).max(0.0) / a);
                }
            }
            if ratio == f64::INFINITY {
                return Ok(false);
            }
            let mut pr: Option<usize> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a <= EPS || self.at(r, self.cols).max(0.0) / a > ratio + EPS {
                    continue;
                }
                let better = match pr {
                    None => true,
                    Some(p) if bland => self.basis[r] < self.basis[p],
                    Some(p) => a > self.at(p, pc),
                };
                if better {
                    pr = Some(r);
                }
            }
            let pr = pr.expect("a row attains the minimum ratio");
            if ratio <= EPS {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc);
        }
    }

    fn run(mut self, n: usize) -> Result<LpSolution> {
        if self.n_art > 0 {
            let mut cost = vec![0.0; self.cols];
            for c in cost.iter_mut().skip(self.n_struct) {
                *c = -1.0;
            }
            self.price(&cost);
            self.iterate(self.cols)?;
            let infeas: f64 = (0..self.m).filter(|&r| self.basis[r] >= self.n_struct).map(|r| self.at(r, self.cols)).sum();
            let scale = 1.0 + (0..self.m).map(|r| self.at(r, self.cols).abs()).fold(0.0, f64::max);
            if infeas > 1e-9 * scale {
                return Err(Error::Infeasible(format!("phase one ends with artificial mass {infeas:.3e}")));
            }
            // drive zero-level artificials out of the basis; rows that cannot pivot are redundant
            for r in 0..self.m {
                if self.basis[r] >= self.n_struct {
                    if let Some(j) = (0..self.n_struct).find(|&j| self.at(r, j).abs() > 1e-9) {
                        self.pivot(r, j);
                    }
                }
            }
        }
        let cost = self.c.clone();
        self.price(&cost);
        if !self.iterate(self.n_struct)? {
            return Err(Error::Unbounded);
        }
        let mut x = vec![0.0; n];
        for r in 0..self.m {
            let b = self.basis[r];
            if b < n {
                x[b] = self.at(r, self.cols).max(0.0);
            }
        }
        let objective = x.iter().zip(&self.c).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: self.pivots })
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.c = vec![3.0, 5.0];
        lp.add_le(vec![(0, 1.0)], 4.0);
        lp.add_le(vec![(1, 2.0)], 12.0);
        lp.add_le(vec![(0, 3.0), (1, 2.0)], 18.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 36.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 6.0, epsilon = 1e-10);
    }

    #[test]
    fn equalities_and_negative_rhs() {
        // max -x - y, x + y = 2, x - y ≤ -1 -> any feasible point has objective -2
        let mut lp = LinearProgram::new(2);
        lp.c = vec![-1.0, -1.0];
        lp.add_eq(vec![(0, 1.0), (1, 1.0)], 2.0);
        lp.add_le(vec![(0, 1.0), (1, -1.0)], -1.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, -2.0, epsilon = 1e-10);
        assert!(s.x[0] - s.x[1] <= -1.0 + 1e-10);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_eq(vec![(0, 1.0)], -1.0);
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
        let mut lp = LinearProgram::new(2);
        lp.c = vec![1.0, 0.0];
        lp.add_le(vec![(1, 1.0)], 1.0);
        assert!(matches!(lp.solve(), Err(Error::Unbounded)));
    }

    #[test]
    fn redundant_equalities() {
        // transport with both marginal families: one equation is redundant
        let mut lp = LinearProgram::new(4);
        lp.c = vec![-1.0, -3.0, -2.0, -1.0];
        lp.add_eq(vec![(0, 1.0), (1, 1.0)], 0.5);
        lp.add_eq(vec![(2, 1.0), (3, 1.0)], 0.5);
        lp.add_eq(vec![(0, 1.0), (2, 1.0)], 0.5);
        lp.add_eq(vec![(1, 1.0), (3, 1.0)], 0.5);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_program_terminates() {
        // classic cycling example for the largest-coefficient rule
        let mut lp = LinearProgram::new(4);
        lp.c = vec![0.75, -150.0, 0.02, -6.0];
        lp.add_le(vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], 0.0);
        lp.add_le(vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], 0.0);
        lp.add_le(vec![(2, 1.0)], 1.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 0.05, epsilon = 1e-10);
    }

    #[test]
    fn rejects_oversized() {
        let lp = LinearProgram::new(MAX_VARIABLES + 1);
        assert!(matches!(lp.solve(), Err(Error::TooLarge(_))));
    }
}
