//! Two-period measures on finite disintegrated grids.
//!
//! A [`GridMeasure`] stores `n1` first-stage atoms `x1[i]` with weights
//! `w1[i]`, and for each of them a conditional row of `n2` second-stage atoms
//! `x2[i, j]` with conditional weights `q[i, j]`. Atom-indexed fields use the
//! row-major layout `i * n2 + j` throughout the crate.
//!
//! Conditioning on the first stage is exact. Conditioning on the second stage
//! goes through a [`BinPartition`] of the pooled second-stage support.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const WEIGHT_TOL: f64 = 1e-12;
const MARTINGALE_TOL: f64 = 1e-9;
/// Absolute tolerance under which pooled second-stage atoms are merged.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    x1: Vec<f64>,
    w1: Vec<f64>,
    x2: Vec<f64>,
    q: Vec<f64>,
    n2: usize,
    is_martingale: bool,
}

impl GridMeasure {
    /// Validates and builds a grid measure. `x2` and `q` are row-major `n1 x n2`.
    pub fn new(x1: Vec<f64>, w1: Vec<f64>, x2: Vec<f64>, q: Vec<f64>, n2: usize) -> Result<Self> {
        let n1 = x1.len();
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidMeasure("empty grid".into()));
        }
        if w1.len() != n1 {
            return Err(Error::DimensionMismatch { expected: n1, found: w1.len() });
        }
        if x2.len() != n1 * n2 {
            return Err(Error::DimensionMismatch { expected: n1 * n2, found: x2.len() });
        }
        if q.len() != n1 * n2 {
            return Err(Error::DimensionMismatch { expected: n1 * n2, found: q.len() });
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite support point".into()));
        }
        if !x1.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::InvalidMeasure("first-stage atoms must be strictly increasing".into()));
        }
        if w1.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidMeasure("first-stage weights must be positive".into()));
        }
        let total: f64 = w1.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMeasure(format!(
                "first-stage weights sum to {total:.15}, expected 1"
            )));
        }
        for i in 0..n1 {
            let row = &x2[i * n2..(i + 1) * n2];
            if !row.windows(2).all(|p| p[0] < p[1]) {
                return Err(Error::InvalidMeasure(format!(
                    "conditional row {i} must be strictly increasing"
                )));
            }
            let qr = &q[i * n2..(i + 1) * n2];
            if qr.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidMeasure(format!(
                    "conditional weights of row {i} must be positive"
                )));
            }
            let s: f64 = qr.iter().sum();
            if (s - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::InvalidMeasure(format!(
                    "conditional weights of row {i} sum to {s:.15}, expected 1"
                )));
            }
        }
        let mut mu = Self { x1, w1, x2, q, n2, is_martingale: false };
        let scale = mu.x1.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        mu.is_martingale = mu.martingale_residual() <= MARTINGALE_TOL * scale;
        Ok(mu)
    }

    /// Builds a measure from rows that may be unsorted; each row is sorted
    /// with its weights. Ties inside a row are rejected.
    pub fn from_unsorted_rows(x1: Vec<f64>, w1: Vec<f64>, x2: Vec<f64>, q: Vec<f64>, n2: usize) -> Result<Self> {
        let n1 = x1.len();
        if x2.len() != n1 * n2 || q.len() != n1 * n2 {
            return Err(Error::DimensionMismatch { expected: n1 * n2, found: x2.len().min(q.len()) });
        }
        let mut sx = Vec::with_capacity(n1 * n2);
        let mut sq = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            let mut idx: Vec<usize> = (0..n2).collect();
            idx.sort_by(|&a, &b| x2[i * n2 + a].total_cmp(&x2[i * n2 + b]));
            for j in idx {
                sx.push(x2[i * n2 + j]);
                sq.push(q[i * n2 + j]);
            }
        }
        Self::new(x1, w1, sx, sq, n2)
    }

    /// Product measure `mu1 ⊗ mu2`: every row carries the same conditional law.
    pub fn product(x1: Vec<f64>, w1: Vec<f64>, x2: &[f64], q: &[f64]) -> Result<Self> {
        let n1 = x1.len();
        let n2 = x2.len();
        if q.len() != n2 {
            return Err(Error::DimensionMismatch { expected: n2, found: q.len() });
        }
        let rows_x: Vec<f64> = (0..n1).flat_map(|_| x2.iter().copied()).collect();
        let rows_q: Vec<f64> = (0..n1).flat_map(|_| q.iter().copied()).collect();
        Self::new(x1, w1, rows_x, rows_q, n2)
    }

    /// `L(xi, xi + U)` with `xi` uniform on `{-1, 1}` and `U` the midpoint
    /// discretization of the uniform law on `[-1, 1]` with `n2` atoms.
    /// Here `sgn(X2) = X1`, so the second stage reveals the first.
    pub fn sign_copy(n2: usize) -> Result<Self> {
        if n2 < 2 {
            return Err(Error::InvalidSpec("sign-copy measure needs n2 >= 2".into()));
        }
        let u: Vec<f64> = (0..n2).map(|j| -1.0 + (2.0 * j as f64 + 1.0) / n2 as f64).collect();
        let x2: Vec<f64> = [-1.0, 1.0].iter().flat_map(|xi| u.iter().map(move |v| xi + v)).collect();
        let q = vec![1.0 / n2 as f64; 2 * n2];
        Self::new(vec![-1.0, 1.0], vec![0.5, 0.5], x2, q, n2)
    }

    pub fn n1(&self) -> usize {
        self.x1.len()
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.x2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x2.is_empty()
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn is_martingale(&self) -> bool {
        self.is_martingale
    }

    /// First-stage index of atom `k`.
    #[inline]
    pub fn row_of(&self, k: usize) -> usize {
        k / self.n2
    }

    /// Joint mass `w1[i] * q[i, j]` of atom `k = i * n2 + j`.
    #[inline]
    pub fn mass(&self, k: usize) -> f64 {
        self.w1[k / self.n2] * self.q[k]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.mass(k)).collect()
    }

    /// `(x1, x2)` location of atom `k`.
    #[inline]
    pub fn point(&self, k: usize) -> (f64, f64) {
        (self.x1[k / self.n2], self.x2[k])
    }

    /// Evaluates `f(x1, x2)` on every atom.
    pub fn field<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|k| {
            let (a, b) = self.point(k);
            f(a, b)
        }).collect()
    }

    /// Lifts a function of the first stage to an atom-indexed field.
    pub fn lift_first(&self, v: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| v[k / self.n2]).collect()
    }

    /// `E^mu[field]`.
    pub fn expect(&self, field: &[f64]) -> f64 {
        debug_assert_eq!(field.len(), self.len());
        let mut total = 0.0;
        for i in 0..self.n1() {
            let row: f64 = (0..self.n2).map(|j| self.q[i * self.n2 + j] * field[i * self.n2 + j]).sum();
            total += self.w1[i] * row;
        }
        total
    }

    /// `max_i |E[X2 | X1 = x1[i]] - x1[i]|`.
    pub fn martingale_residual(&self) -> f64 {
        let m = cond_exp_1_unchecked(self, &self.x2);
        m.iter().zip(&self.x1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Displaced measure `mu ∘ (X + r Θ)^{-1}` for an adapted displacement:
    /// `theta1` is indexed by first-stage atom, `theta2` by joint atom.
    pub fn displaced(&self, theta1: &[f64], theta2: &[f64], r: f64) -> Result<Self> {
        if theta1.len() != self.n1() {
            return Err(Error::DimensionMismatch { expected: self.n1(), found: theta1.len() });
        }
        if theta2.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: theta2.len() });
        }
        let x1 = self.x1.iter().zip(theta1).map(|(x, t)| x + r * t).collect();
        let x2 = self.x2.iter().zip(theta2).map(|(x, t)| x + r * t).collect();
        Self::from_unsorted_rows(x1, self.w1.clone(), x2, self.q.clone(), self.n2)
    }

    /// Same first stage, new second-stage locations (rows re-sorted).
    pub fn with_second_stage(&self, x2: Vec<f64>) -> Result<Self> {
        Self::from_unsorted_rows(self.x1.clone(), self.w1.clone(), x2, self.q.clone(), self.n2)
    }

    /// Writes the CSV schema `i,j,x1,w1,x2,q` (header mandatory).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "x1", "w1", "x2", "q"])?;
        for k in 0..self.len() {
            let i = k / self.n2;
            let j = k % self.n2;
            wtr.write_record([
                i.to_string(),
                j.to_string(),
                fmt_f64(self.x1[i]),
                fmt_f64(self.w1[i]),
                fmt_f64(self.x2[k]),
                fmt_f64(self.q[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let expected = ["i", "j", "x1", "w1", "x2", "q"];
        if headers.len() != 6 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::InvalidMeasure(format!(
                "expected header i,j,x1,w1,x2,q, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows: Vec<(usize, usize, f64, f64, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse_u = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::InvalidMeasure(format!("bad index {s:?}: {e}")))
            };
            let parse_f = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::InvalidMeasure(format!("bad number {s:?}: {e}")))
            };
            rows.push((
                parse_u(&rec[0])?,
                parse_u(&rec[1])?,
                parse_f(&rec[2])?,
                parse_f(&rec[3])?,
                parse_f(&rec[4])?,
                parse_f(&rec[5])?,
            ));
        }
        if rows.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let n1 = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let n2 = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        if rows.len() != n1 * n2 {
            return Err(Error::InvalidMeasure(format!(
                "expected {} rows for a {n1}x{n2} grid, found {}",
                n1 * n2,
                rows.len()
            )));
        }
        let mut x1 = vec![f64::NAN; n1];
        let mut w1 = vec![f64::NAN; n1];
        let mut x2 = vec![f64::NAN; n1 * n2];
        let mut q = vec![f64::NAN; n1 * n2];
        for (i, j, a, w, b, c) in rows {
            if !x1[i].is_nan() && (x1[i] != a || w1[i] != w) {
                return Err(Error::InvalidMeasure(format!("inconsistent first stage on row {i}")));
            }
            x1[i] = a;
            w1[i] = w;
            if !x2[i * n2 + j].is_nan() {
                return Err(Error::InvalidMeasure(format!("duplicate atom ({i}, {j})")));
            }
            x2[i * n2 + j] = b;
            q[i * n2 + j] = c;
        }
        Self::new(x1, w1, x2, q, n2)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest round-trip representation.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    Bachelier,
    BlackScholes,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    GaussHermite,
    EquallyWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub sigma: f64,
    pub n1: usize,
    pub n2: usize,
    pub quadrature: Quadrature,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, sigma: f64, n1: usize, n2: usize) -> Self {
        Self { family, sigma, n1, n2, quadrature: Quadrature::GaussHermite }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { sigma, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidSpec(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::InvalidSpec(format!(
                "grid sizes must be at least 2, got {}x{}",
                self.n1, self.n2
            )));
        }
        Ok(())
    }
}

/// Builds `L(X1, X2)` from independent standard normals `(Z1, Z2)`:
/// Bachelier `(σZ1, σ(Z1 + Z2))`, Black–Scholes
/// `(exp(-σ²/2 + σZ1), exp(-σ² + σ(Z1 + Z2)))`.
///
/// The lognormal factors are divided by their discrete mean so the grid is an
/// exact martingale under either quadrature.
pub fn build_model(spec: &ModelSpec) -> Result<GridMeasure> {
    spec.validate()?;
    let rule = |n| match spec.quadrature {
        Quadrature::GaussHermite => quadrature::gauss_hermite(n),
        Quadrature::EquallyWeighted => quadrature::equally_weighted(n),
    };
    let r1 = rule(spec.n1)?;
    let r2 = rule(spec.n2)?;
    let s = spec.sigma;
    let (x1, x2) = match spec.family {
        ModelFamily::Bachelier => {
            let x1: Vec<f64> = r1.nodes.iter().map(|z| s * z).collect();
            let x2 = x1.iter().flat_map(|a| r2.nodes.iter().map(move |z| a + s * z)).collect();
            (x1, x2)
        }
        ModelFamily::BlackScholes => {
            let growth = |rule: &quadrature::NormalRule| {
                let g: Vec<f64> = rule.nodes.iter().map(|z| (-0.5 * s * s + s * z).exp()).collect();
                let m: f64 = g.iter().zip(&rule.weights).map(|(a, w)| a * w).sum();
                g.into_iter().map(|a| a / m).collect::<Vec<_>>()
            };
            let x1 = growth(&r1);
            let g2 = growth(&r2);
            let x2 = x1.iter().flat_map(|a| g2.iter().map(move |g| a * g)).collect();
            (x1, x2)
        }
        ModelFamily::Custom => {
            return Err(Error::InvalidSpec("custom models are loaded from CSV, not built".into()))
        }
    };
    let q = (0..spec.n1).flat_map(|_| r2.weights.iter().copied()).collect();
    GridMeasure::new(x1, r1.weights, x2, q, spec.n2)
}

fn cond_exp_1_unchecked(mu: &GridMeasure, field: &[f64]) -> Vec<f64> {
    let n2 = mu.n2;
    (0..mu.n1())
        .map(|i| (0..n2).map(|j| mu.q[i * n2 + j] * field[i * n2 + j]).sum())
        .collect()
}

/// `E[field | X1]` on first-stage atoms. Exact.
pub fn cond_exp_1(mu: &GridMeasure, field: &[f64]) -> Result<Vec<f64>> {
    if field.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: field.len() });
    }
    Ok(cond_exp_1_unchecked(mu, field))
}

/// Piecewise-constant surrogate of `E[field | X2]`: the μ-average of `field`
/// over each bin of the partition.
pub fn cond_exp_2(mu: &GridMeasure, field: &[f64], bins: &BinPartition) -> Result<Vec<f64>> {
    if field.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: field.len() });
    }
    let assign = bins.assign(mu)?;
    Ok(assign.average(mu, field))
}

/// Second marginal as a sorted list of `(location, mass)`, merging atoms
/// closer than [`MERGE_TOL`].
pub fn marginal_2(mu: &GridMeasure) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = (0..mu.len()).map(|k| (mu.x2[k], mu.mass(k))).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, m) in atoms {
        match merged.last_mut() {
            Some(last) if (x - last.0).abs() <= MERGE_TOL => last.1 += m,
            _ => merged.push((x, m)),
        }
    }
    merged
}

/// Contraction norm of `E1 ∘ E2` on zero-mean functions of `X1`.
/// Values below one indicate the two stages do not share information
/// beyond constants at the resolution of the bins.
pub fn info_discrepancy_check(mu: &GridMeasure, bins: &BinPartition) -> Result<f64> {
    let op = crate::fredholm::FredholmOperator::build(mu, bins)?;
    Ok(op.contraction_norm(crate::fredholm::NormKind::L2))
}

/// Interior cut points partitioning the real line into `edges.len() + 1` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    edges: Vec<f64>,
}

/// Assignment of each atom of a particular measure to its bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAssignment {
    pub bin_of: Vec<usize>,
    pub mass: Vec<f64>,
}

impl BinAssignment {
    pub fn m(&self) -> usize {
        self.mass.len()
    }

    /// Bin-wise μ-average of an atom-indexed field.
    pub fn average(&self, mu: &GridMeasure, field: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.m()];
        for k in 0..mu.len() {
            acc[self.bin_of[k]] += mu.mass(k) * field[k];
        }
        acc.iter().zip(&self.mass).map(|(a, m)| a / m).collect()
    }

    /// Lifts a bin-indexed function to an atom-indexed field.
    pub fn lift(&self, v: &[f64]) -> Vec<f64> {
        self.bin_of.iter().map(|&b| v[b]).collect()
    }
}

impl BinPartition {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidBins("non-finite edge".into()));
        }
        if !edges.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::InvalidBins("edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    /// A single bin: conditioning on it is the global mean.
    pub fn single() -> Self {
        Self { edges: Vec::new() }
    }

    /// Quantile bins of roughly equal μ2-mass. Cuts sit halfway between
    /// consecutive distinct atoms of the pooled second marginal.
    pub fn quantile(mu: &GridMeasure, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidBins("need at least one bin".into()));
        }
        let atoms = marginal_2(mu);
        let n = atoms.len();
        if n < m {
            return Err(Error::InvalidBins(format!(
                "{m} bins requested but the second marginal has only {n} distinct atoms"
            )));
        }
        let mut cum = Vec::with_capacity(n);
        let mut c = 0.0;
        for a in &atoms {
            c += a.1;
            cum.push(c);
        }
        let total = c;
        let mut edges = Vec::with_capacity(m - 1);
        let mut prev: isize = -1;
        for k in 1..m {
            let target = total * k as f64 / m as f64;
            let lo = (prev + 1) as usize;
            let hi = n - 1 - (m - k); // leave one atom per remaining bin
            let mut best = lo;
            let mut best_err = f64::INFINITY;
            for (g, &cg) in cum.iter().enumerate().take(hi + 1).skip(lo) {
                let err = (cg - target).abs();
                if err < best_err {
                    best_err = err;
                    best = g;
                }
                if cg > target {
                    break;
                }
            }
            edges.push(0.5 * (atoms[best].0 + atoms[best + 1].0));
            prev = best as isize;
        }
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn m(&self) -> usize {
        self.edges.len() + 1
    }

    /// Bin index of a location: the number of edges at or below it.
    pub fn bin_index(&self, x: f64) -> usize {
        self.edges.partition_point(|e| *e <= x)
    }

    /// Assigns every atom of `mu` and rejects empty bins.
    pub fn assign(&self, mu: &GridMeasure) -> Result<BinAssignment> {
        let bin_of: Vec<usize> = mu.x2.iter().map(|&x| self.bin_index(x)).collect();
        let mut mass = vec![0.0; self.m()];
        for (k, &b) in bin_of.iter().enumerate() {
            mass[b] += mu.mass(k);
        }
        if let Some(b) = mass.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidBins(format!("bin {b} has zero mass")));
        }
        Ok(BinAssignment { bin_of, mass })
    }

    /// μ2-weighted mean location of each bin.
    pub fn centers(&self, mu: &GridMeasure) -> Result<Vec<f64>> {
        let a = self.assign(mu)?;
        Ok(a.average(mu, mu.x2()))
    }
}
