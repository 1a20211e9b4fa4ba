//! The convex program behind every sensitivity:
//! minimize `U(θ) = ‖∂^d g + A θ‖^{p'}_{L^{p'}(μ)}` over the hedging
//! multipliers `θ = (λ, h, f1, f2)`.

use nalgebra::{DMatrix, DVector};

use super::constraints::ConstraintSet;
use super::metric::{Ball, Metric};
use crate::criterion::GradientField;
use crate::error::{Error, Result};
use crate::measure::{BinAssignment, BinPartition, GridMeasure};

/// Offsets of each multiplier block inside the unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub k: usize,
    pub h: Option<usize>,
    pub f1: Option<usize>,
    pub f2: Option<usize>,
    pub n: usize,
}

pub(crate) struct HedgeProblem<'a> {
    pub mu: &'a GridMeasure,
    pub metric: Metric,
    pub g: GradientField,
    pub phis: Vec<GradientField>,
    pub psi: Option<GradientField>,
    pub martingale: bool,
    pub bins: Option<(BinPartition, BinAssignment)>,
    pub layout: Layout,
    pub masses: Vec<f64>,
}

/// Value, direction and certificate for a fixed multiplier vector.
pub(crate) struct Evaluation {
    pub value: f64,
    pub t: GradientField,
    pub residual: f64,
}

impl<'a> HedgeProblem<'a> {
    pub fn new(
        mu: &'a GridMeasure,
        g: &GradientField,
        metric: Metric,
        constraints: &ConstraintSet,
        bins: Option<&BinPartition>,
    ) -> Result<Self> {
        constraints.validate()?;
        if g.len() != mu.len() || g.g2.len() != mu.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), found: g.len() });
        }
        let gd = metric.project(mu, g)?;
        let phis = constraints
            .mean_phi
            .iter()
            .map(|phi| metric.project(mu, &phi.gradient(mu)))
            .collect::<Result<Vec<_>>>()?;
        let psi = match constraints.effective_psi() {
            Some(c) => Some(metric.project(mu, &c.gradient(mu))?),
            None => None,
        };
        let bins = if constraints.marginal2 {
            let partition = match bins {
                Some(b) => b.clone(),
                None => default_bins(mu)?,
            };
            let assign = partition.assign(mu)?;
            Some((partition, assign))
        } else {
            None
        };
        let n1 = mu.n1();
        let k = phis.len();
        let mut n = k;
        let h = psi.as_ref().map(|_| {
            let o = n;
            n += n1;
            o
        });
        let f1 = constraints.marginal1.then(|| {
            let o = n;
            n += n1;
            o
        });
        let f2 = bins.as_ref().map(|(_, a)| {
            let o = n;
            n += a.m();
            o
        });
        Ok(Self {
            mu,
            metric,
            g: gd,
            phis,
            psi,
            martingale: constraints.has_martingale(),
            bins,
            layout: Layout { k, h, f1, f2, n },
            masses: mu.masses(),
        })
    }

    pub fn n_unknowns(&self) -> usize {
        self.layout.n
    }

    pub fn bin_assignment(&self) -> Option<&BinAssignment> {
        self.bins.as_ref().map(|(_, a)| a)
    }

    /// Unknowns touching atom `a`, with their coefficient pairs.
    pub fn involved(&self, a: usize, out: &mut Vec<(usize, f64, f64)>) {
        out.clear();
        let i = self.mu.row_of(a);
        for (l, phi) in self.phis.iter().enumerate() {
            out.push((l, phi.g1[a], phi.g2[a]));
        }
        if let (Some(o), Some(psi)) = (self.layout.h, &self.psi) {
            out.push((o + i, psi.g1[a], psi.g2[a]));
        }
        if let Some(o) = self.layout.f1 {
            out.push((o + i, 1.0, 0.0));
        }
        if let (Some(o), Some((_, assign))) = (self.layout.f2, &self.bins) {
            out.push((o + assign.bin_of[a], 0.0, 1.0));
        }
    }

    /// `V = ∂^d g + A θ` on atoms.
    pub fn direction(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut v1 = self.g.g1.clone();
        let mut v2 = self.g.g2.clone();
        let mut inv = Vec::new();
        if theta.is_empty() {
            return (v1, v2);
        }
        for a in 0..self.mu.len() {
            self.involved(a, &mut inv);
            for &(u, c1, c2) in &inv {
                v1[a] += c1 * theta[u];
                v2[a] += c2 * theta[u];
            }
        }
        (v1, v2)
    }

    fn atom_phi(&self, v1: f64, v2: f64) -> f64 {
        let pc = self.metric.p_conj();
        match self.metric.ball {
            Ball::Wp => v1.hypot(v2).powf(pc),
            Ball::WpAdapted => v1.abs().powf(pc) + v2.abs().powf(pc),
        }
    }

    /// Gradient of `|v|^{p'} / p'` at one atom.
    pub fn atom_dual(&self, v1: f64, v2: f64) -> (f64, f64) {
        let p = self.metric.p;
        match self.metric.ball {
            Ball::Wp => super::metric::n_map_pair((v1, v2), p),
            Ball::WpAdapted => super::metric::n_map_adapted((v1, v2), p),
        }
    }

    /// Hessian of `|v|^{p'} / p'` at one atom; curvature is floored at radius `eps`.
    pub fn atom_hessian(&self, v1: f64, v2: f64, eps: f64) -> [[f64; 2]; 2] {
        let pc = self.metric.p_conj();
        match self.metric.ball {
            Ball::Wp => {
                let r = v1.hypot(v2);
                if r <= eps {
                    let s = eps.powf(pc - 2.0);
                    return [[s, 0.0], [0.0, s]];
                }
                let s = r.powf(pc - 2.0);
                let c = (pc - 2.0) / (r * r);
                [[s * (1.0 + c * v1 * v1), s * c * v1 * v2], [s * c * v1 * v2, s * (1.0 + c * v2 * v2)]]
            }
            Ball::WpAdapted => {
                let d = |v: f64| (pc - 1.0) * v.abs().max(eps).powf(pc - 2.0);
                [[d(v1), 0.0], [0.0, d(v2)]]
            }
        }
    }

    /// `U(θ) = E|V|^{p'}`.
    pub fn objective(&self, v1: &[f64], v2: &[f64]) -> f64 {
        (0..self.mu.len()).map(|a| self.masses[a] * self.atom_phi(v1[a], v2[a])).sum()
    }

    /// `∇_θ (U / p')` and the Gauss–Newton-exact Hessian.
    pub fn gradient_hessian(&self, v1: &[f64], v2: &[f64], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.layout.n;
        let mut grad = DVector::<f64>::zeros(n);
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut inv = Vec::new();
        for a in 0..self.mu.len() {
            let m = self.masses[a];
            let (d1, d2) = self.atom_dual(v1[a], v2[a]);
            let h = self.atom_hessian(v1[a], v2[a], eps);
            self.involved(a, &mut inv);
            for &(u, c1, c2) in &inv {
                grad[u] += m * (c1 * d1 + c2 * d2);
                let hu1 = h[0][0] * c1 + h[0][1] * c2;
                let hu2 = h[1][0] * c1 + h[1][1] * c2;
                for &(w, e1, e2) in &inv {
                    hess[(u, w)] += m * (hu1 * e1 + hu2 * e2);
                }
            }
        }
        (grad, hess)
    }

    /// Residuals of the first-order conditions in conditional form,
    /// evaluated on a direction field `t`. The maximum absolute entry is the
    /// FOC certificate.
    pub fn foc_residual(&self, t1: &[f64], t2: &[f64]) -> f64 {
        let mu = self.mu;
        let n2 = mu.n2();
        let mut worst: f64 = 0.0;
        for phi in &self.phis {
            let e: f64 = (0..mu.len()).map(|a| self.masses[a] * (phi.g1[a] * t1[a] + phi.g2[a] * t2[a])).sum();
            worst = worst.max(e.abs());
        }
        for i in 0..mu.n1() {
            let row = i * n2..(i + 1) * n2;
            if let Some(psi) = &self.psi {
                let e: f64 = row.clone().map(|a| mu.q()[a] * (psi.g1[a] * t1[a] + psi.g2[a] * t2[a])).sum();
                worst = worst.max(e.abs());
            }
            if self.layout.f1.is_some() {
                let e: f64 = row.clone().map(|a| mu.q()[a] * t1[a]).sum();
                worst = worst.max(e.abs());
            }
        }
        if let Some((_, assign)) = &self.bins {
            for e in assign.average(mu, t2) {
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    /// `T = N_d(V) / c` with `‖T‖_{L^p} = 1`, the value `U^{1/p'}`, and the
    /// FOC residual of `T`. Values below rounding resolution of `‖∂^d g‖`
    /// are reported as exactly zero with a zero direction.
    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let (v1, v2) = self.direction(theta);
        let pc = self.metric.p_conj();
        let u = self.objective(&v1, &v2);
        let value = u.powf(1.0 / pc);
        let scale = self.objective(&self.g.g1, &self.g.g2).powf(1.0 / pc);
        let len = self.mu.len();
        if !(value > ZERO_VALUE_TOL * scale) {
            return Evaluation { value: 0.0, t: GradientField::zeros(len), residual: 0.0 };
        }
        let c = u.powf(1.0 / self.metric.p);
        let mut t1 = vec![0.0; len];
        let mut t2 = vec![0.0; len];
        for a in 0..len {
            let (d1, d2) = self.atom_dual(v1[a], v2[a]);
            t1[a] = d1 / c;
            t2[a] = d2 / c;
        }
        let residual = self.foc_residual(&t1, &t2);
        Evaluation { value, t: GradientField { g1: t1, g2: t2 }, residual }
    }

    /// Shifts `(h, f1, f2)` along the null direction `(c, c, -c)` of the
    /// martingale-plus-marginals problem so that `h` has zero μ1-mean.
    pub fn normalize(&self, theta: &mut [f64]) {
        let (Some(oh), Some(o1), Some(o2)) = (self.layout.h, self.layout.f1, self.layout.f2) else {
            return;
        };
        if !self.martingale {
            return;
        }
        let n1 = self.mu.n1();
        let c: f64 = (0..n1).map(|i| self.mu.w1()[i] * theta[oh + i]).sum();
        for i in 0..n1 {
            theta[oh + i] -= c;
            theta[o1 + i] -= c;
        }
        let m = self.bin_assignment().map(|a| a.m()).unwrap_or(0);
        for b in 0..m {
            theta[o2 + b] += c;
        }
    }
}

/// Relative size below which a sensitivity is treated as exactly zero.
pub(crate) const ZERO_VALUE_TOL: f64 = 1e-12;

/// Quantile bins with `n2` cells, or fewer when the second marginal has
/// fewer distinct atoms.
pub fn default_bins(mu: &GridMeasure) -> Result<BinPartition> {
    let distinct = crate::measure::marginal_2(mu).len();
    BinPartition::quantile(mu, mu.n2().min(distinct))
}
