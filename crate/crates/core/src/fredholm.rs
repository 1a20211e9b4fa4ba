//! The operator `E1 ∘ E2` on functions of the first stage and the
//! second-kind equation `h - E1[E2[h]] = rhs` on zero-mean functions.
//!
//! All norms are taken in `L²(μ1)`. The kernel `K` is self-adjoint and
//! positive semi-definite in that inner product, since
//! `<K f, g> = <E2 f, E2 g>`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{fmt_f64, BinPartition, GridMeasure};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 200_000;
const NEUMANN_TOL: f64 = 1e-12;
const NEUMANN_MAX_TERMS: usize = 10_000;
/// Neumann series are only attempted below this contraction norm.
pub const NEUMANN_THRESHOLD: f64 = 0.999;
const MEAN_TOL: f64 = 1e-10;
const AGREEMENT_TOL: f64 = 1e-8;
const PINV_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    L2,
    /// Row-sum bound on the zero-mean-projected kernel; an upper bound only.
    Linf,
}

#[derive(Debug, Clone)]
pub struct FredholmOperator {
    k: DMatrix<f64>,
    w1: Vec<f64>,
    m: usize,
}

/// Outcome of [`FredholmOperator::solve`].
#[derive(Debug, Clone, Serialize)]
pub struct FredholmSolution {
    pub h: Vec<f64>,
    /// Contraction norm used to pick the solution path.
    pub norm: f64,
    pub neumann_terms: Option<usize>,
    /// Largest ratio of consecutive Neumann increments.
    pub neumann_ratio: Option<f64>,
    /// `max |h_neumann - h_direct|` when both paths ran.
    pub path_gap: Option<f64>,
    /// Weighted L² residual of `(I - K0) h - rhs`.
    pub residual: f64,
    /// Set when the regularized pseudo-inverse replaced the direct solve.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

fn wnorm(w: &[f64], a: &[f64]) -> f64 {
    wdot(w, a, a).sqrt()
}

fn wmean(w: &[f64], a: &[f64]) -> f64 {
    w.iter().zip(a).map(|(w, a)| w * a).sum()
}

fn center(w: &[f64], a: &mut [f64]) {
    let m = wmean(w, a);
    a.iter_mut().for_each(|v| *v -= m);
}

impl FredholmOperator {
    /// `K[i, i'] = Σ_b P(b | x1[i]) P(x1[i'] | b)`.
    pub fn build(mu: &GridMeasure, bins: &BinPartition) -> Result<Self> {
        let assign = bins.assign(mu)?;
        let n1 = mu.n1();
        let n2 = mu.n2();
        let m = assign.m();
        // P(b | i)
        let mut pb = DMatrix::<f64>::zeros(n1, m);
        for i in 0..n1 {
            for j in 0..n2 {
                let k = i * n2 + j;
                pb[(i, assign.bin_of[k])] += mu.q()[k];
            }
        }
        let w1 = mu.w1().to_vec();
        let mut k = DMatrix::<f64>::zeros(n1, n1);
        for i in 0..n1 {
            for b in 0..m {
                let a = pb[(i, b)];
                if a == 0.0 {
                    continue;
                }
                let scale = a / assign.mass[b];
                for ip in 0..n1 {
                    k[(i, ip)] += scale * w1[ip] * pb[(ip, b)];
                }
            }
        }
        Ok(Self { k, w1, m })
    }

    pub fn n1(&self) -> usize {
        self.w1.len()
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.w1
    }

    /// `K f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let v = &self.k * DVector::from_column_slice(f);
        v.as_slice().to_vec()
    }

    /// `K0 f = K f - E[f]`, the kernel restricted to zero-mean functions.
    pub fn apply_zero_mean(&self, f: &[f64]) -> Vec<f64> {
        let mut v = self.apply(f);
        center(&self.w1, &mut v);
        v
    }

    /// `K0 = K - 1 w1ᵀ`.
    pub fn projected_matrix(&self) -> DMatrix<f64> {
        let n = self.n1();
        DMatrix::from_fn(n, n, |i, j| self.k[(i, j)] - self.w1[j])
    }

    /// Symmetrized kernel `D^{1/2} K D^{-1/2}` with `D = diag(w1)`.
    fn symmetric(&self) -> DMatrix<f64> {
        let n = self.n1();
        let sq: Vec<f64> = self.w1.iter().map(|w| w.sqrt()).collect();
        let mut s = DMatrix::from_fn(n, n, |i, j| sq[i] * self.k[(i, j)] / sq[j]);
        // remove rounding asymmetry
        for i in 0..n {
            for j in 0..i {
                let a = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = a;
                s[(j, i)] = a;
            }
        }
        s
    }

    pub fn contraction_norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => self.l2_norm(),
            NormKind::Linf => {
                let k0 = self.projected_matrix();
                (0..self.n1())
                    .map(|i| k0.row(i).iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Power iteration on the zero-mean subspace with re-projection each step.
    fn l2_norm(&self) -> f64 {
        let n = self.n1();
        if n < 2 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..n).map(|i| (1.0 + 0.7 * i as f64).cos() + 0.1).collect();
        center(&self.w1, &mut v);
        let mut nv = wnorm(&self.w1, &v);
        if nv == 0.0 {
            v = (0..n).map(|i| i as f64).collect();
            center(&self.w1, &mut v);
            nv = wnorm(&self.w1, &v);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITER {
            let mut kv = self.apply_zero_mean(&v);
            let norm = wnorm(&self.w1, &kv);
            if norm <= f64::MIN_POSITIVE {
                return 0.0;
            }
            kv.iter_mut().for_each(|x| *x /= norm);
            let done = (norm - lambda).abs() <= POWER_TOL * norm.max(1e-300);
            lambda = norm;
            v = kv;
            if done {
                break;
            }
        }
        lambda
    }

    /// Eigenvalues of `K` on the zero-mean subspace, descending.
    pub fn zero_mean_spectrum(&self) -> Vec<f64> {
        let (vals, _) = self.zero_mean_eigen();
        let mut v: Vec<f64> = vals.into_iter().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    fn zero_mean_eigen(&self) -> (Vec<f64>, Vec<DVector<f64>>) {
        let s = self.symmetric();
        let sq = DVector::from_iterator(self.n1(), self.w1.iter().map(|w| w.sqrt()));
        let eig = SymmetricEigen::new(s);
        let mut vals = Vec::new();
        let mut vecs = Vec::new();
        // drop the eigenvector aligned with sqrt(w1), i.e. the constants
        let mut best = 0;
        let mut best_dot = -1.0;
        for c in 0..self.n1() {
            let d = eig.eigenvectors.column(c).dot(&sq).abs();
            if d > best_dot {
                best_dot = d;
                best = c;
            }
        }
        for c in 0..self.n1() {
            if c != best {
                vals.push(eig.eigenvalues[c]);
                vecs.push(eig.eigenvectors.column(c).into_owned());
            }
        }
        (vals, vecs)
    }

    /// Solves `(I - K0) h = rhs` for zero-mean `h`.
    ///
    /// Below [`NEUMANN_THRESHOLD`] both the Neumann series and a direct
    /// factorization run and must agree. Otherwise the direct solve is
    /// attempted; when `I - K0` is numerically singular a regularized
    /// pseudo-inverse is used and the result is flagged.
    pub fn solve(&self, rhs: &[f64]) -> Result<FredholmSolution> {
        let n = self.n1();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rhs.len() });
        }
        let mean = wmean(&self.w1, rhs);
        if mean.abs() > MEAN_TOL {
            return Err(Error::NonZeroMean(mean));
        }
        let mut rhs = rhs.to_vec();
        center(&self.w1, &mut rhs);
        let norm = self.l2_norm();
        let mut warnings = Vec::new();
        let mut out = FredholmSolution {
            h: vec![0.0; n],
            norm,
            neumann_terms: None,
            neumann_ratio: None,
            path_gap: None,
            residual: 0.0,
            fallback: false,
            warnings: Vec::new(),
        };
        if rhs.iter().all(|v| *v == 0.0) && norm < 1.0 - PINV_CUTOFF {
            out.neumann_terms = Some(0);
            return Ok(out);
        }

        let neumann = if norm < NEUMANN_THRESHOLD { Some(self.neumann(&rhs)) } else { None };
        let direct = if norm < 1.0 - PINV_CUTOFF { self.direct(&rhs) } else { None };

        let h = match (neumann, direct) {
            (Some((hn, terms, ratio)), Some(hd)) => {
                let gap = hn.iter().zip(&hd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                out.neumann_terms = Some(terms);
                out.neumann_ratio = Some(ratio);
                out.path_gap = Some(gap);
                let scale = hd.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                if gap > AGREEMENT_TOL * scale {
                    warnings.push(format!("Neumann and direct solves differ by {gap:.3e}"));
                }
                if terms >= NEUMANN_MAX_TERMS {
                    warnings.push(format!("Neumann series truncated at {terms} terms"));
                }
                hd
            }
            (Some((hn, terms, ratio)), None) => {
                out.neumann_terms = Some(terms);
                out.neumann_ratio = Some(ratio);
                warnings.push("direct factorization failed; using the Neumann series".into());
                hn
            }
            (None, Some(hd)) => {
                warnings.push(format!(
                    "contraction norm {norm:.6} >= {NEUMANN_THRESHOLD}; Neumann series skipped"
                ));
                hd
            }
            (None, None) => {
                out.fallback = true;
                warnings.push(format!(
                    "contraction norm {norm:.6} is not below 1 (informational discrepancy fails); \
                     using a regularized pseudo-inverse"
                ));
                self.pseudo_inverse(&rhs)
            }
        };
        let mut h = h;
        center(&self.w1, &mut h);
        let kh = self.apply_zero_mean(&h);
        let res: Vec<f64> = (0..n).map(|i| h[i] - kh[i] - rhs[i]).collect();
        out.residual = wnorm(&self.w1, &res);
        out.h = h;
        out.warnings = warnings;
        Ok(out)
    }

    fn neumann(&self, rhs: &[f64]) -> (Vec<f64>, usize, f64) {
        let scale = wnorm(&self.w1, rhs).max(f64::MIN_POSITIVE);
        let mut h = rhs.to_vec();
        let mut term = rhs.to_vec();
        let mut prev = wnorm(&self.w1, &term);
        let mut ratio: f64 = 0.0;
        let mut terms = 1;
        while terms < NEUMANN_MAX_TERMS {
            term = self.apply_zero_mean(&term);
            let tn = wnorm(&self.w1, &term);
            if prev > 0.0 && terms >= 1 && tn > NEUMANN_TOL * scale {
                ratio = ratio.max(tn / prev);
            }
            h.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
            terms += 1;
            prev = tn;
            if tn < NEUMANN_TOL * scale {
                break;
            }
        }
        (h, terms, ratio)
    }

    /// LU of `M = I - K + 1 w1ᵀ`, which equals `I - K0` on zero-mean vectors.
    fn direct(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n1();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - self.k[(i, j)] + self.w1[j]
        });
        let lu = m.lu();
        let h = lu.solve(&DVector::from_column_slice(rhs))?;
        if h.iter().all(|v| v.is_finite()) {
            Some(h.as_slice().to_vec())
        } else {
            None
        }
    }

    fn pseudo_inverse(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n1();
        let sq: Vec<f64> = self.w1.iter().map(|w| w.sqrt()).collect();
        let y: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| sq[i] * rhs[i]));
        let (vals, vecs) = self.zero_mean_eigen();
        let mut z = DVector::<f64>::zeros(n);
        for (lam, v) in vals.iter().zip(&vecs) {
            let gap = 1.0 - lam;
            if gap.abs() < PINV_CUTOFF {
                continue;
            }
            z += v * (v.dot(&y) / gap);
        }
        (0..n).map(|i| z[i] / sq[i]).collect()
    }

    /// Writes the kernel as CSV with header `i,k_0,...,k_{n1-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["i".to_string()];
        header.extend((0..self.n1()).map(|j| format!("k_{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n1() {
            let mut row = vec![i.to_string()];
            row.extend((0..self.n1()).map(|j| fmt_f64(self.k[(i, j)])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_model, ModelFamily, ModelSpec};
    use crate::quadrature::gauss_hermite;
    use approx::assert_abs_diff_eq;

    fn product() -> GridMeasure {
        let r = gauss_hermite(6).unwrap();
        GridMeasure::product(vec![-1.0, 0.0, 0.5, 2.0], vec![0.1, 0.4, 0.3, 0.2], &r.nodes, &r.weights).unwrap()
    }

    fn bach32() -> (GridMeasure, BinPartition) {
        let mu = build_model(&ModelSpec::new(ModelFamily::Bachelier, 1.0, 32, 32)).unwrap();
        let bins = BinPartition::quantile(&mu, 32).unwrap();
        (mu, bins)
    }

    #[test]
    fn product_kernel_is_rank_one() {
        let mu = product();
        let bins = BinPartition::quantile(&mu, 6).unwrap();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(op.matrix()[(i, j)], mu.w1()[j], epsilon = 1e-14);
            }
        }
        assert!(op.contraction_norm(NormKind::L2) < 1e-12);
        assert!(op.contraction_norm(NormKind::Linf) < 1e-12);
        let rhs = vec![1.0, -0.5, 0.5, -0.25];
        let mut rhs = rhs;
        center(mu.w1(), &mut rhs);
        let sol = op.solve(&rhs).unwrap();
        for (a, b) in sol.h.iter().zip(&rhs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_row_kernel() {
        let mu = GridMeasure::new(vec![0.0], vec![1.0], vec![-1.0, 1.0], vec![0.5, 0.5], 2).unwrap();
        let op = FredholmOperator::build(&mu, &BinPartition::quantile(&mu, 2).unwrap()).unwrap();
        assert_eq!(op.matrix()[(0, 0)], 1.0);
        assert_eq!(op.contraction_norm(NormKind::L2), 0.0);
    }

    #[test]
    fn bachelier_kernel_rows_and_mean() {
        let (mu, bins) = bach32();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        let k = op.matrix();
        for i in 0..32 {
            assert_abs_diff_eq!(k.row(i).sum(), 1.0, epsilon = 1e-12);
        }
        for j in 0..32 {
            let s: f64 = (0..32).map(|i| mu.w1()[i] * k[(i, j)]).sum();
            assert_abs_diff_eq!(s, mu.w1()[j], epsilon = 1e-12);
        }
        let norm = op.contraction_norm(NormKind::L2);
        assert!(norm > 0.0 && norm < 1.0, "norm {norm}");
        let spec = op.zero_mean_spectrum();
        assert_abs_diff_eq!(norm, spec[0], epsilon = 1e-7);
        assert!(op.contraction_norm(NormKind::Linf) >= norm - 1e-12);
    }

    #[test]
    fn coarser_bins_shrink_the_norm() {
        let (mu, _) = bach32();
        let mut last = f64::INFINITY;
        for m in [32, 8, 2] {
            let op = FredholmOperator::build(&mu, &BinPartition::quantile(&mu, m).unwrap()).unwrap();
            let n = op.contraction_norm(NormKind::L2);
            assert!(n <= last + 1e-12);
            last = n;
        }
        let op = FredholmOperator::build(&mu, &BinPartition::single()).unwrap();
        assert!(op.contraction_norm(NormKind::L2) < 1e-12);
    }

    #[test]
    fn sign_copy_norm_is_one() {
        let mu = GridMeasure::sign_copy(64).unwrap();
        let op = FredholmOperator::build(&mu, &BinPartition::quantile(&mu, 64).unwrap()).unwrap();
        assert!(op.contraction_norm(NormKind::L2) >= 0.99);
        let sol = op.solve(&[1.0, -1.0]).unwrap();
        assert!(sol.fallback);
    }

    #[test]
    fn solve_zero_and_nonzero_mean() {
        let (mu, bins) = bach32();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        let sol = op.solve(&vec![0.0; 32]).unwrap();
        assert!(sol.h.iter().all(|v| *v == 0.0));
        assert!(matches!(op.solve(&vec![1.0; 32]), Err(Error::NonZeroMean(_))));
    }

    #[test]
    fn neumann_and_direct_agree() {
        let (mu, bins) = bach32();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        let mut rhs: Vec<f64> = mu.x1().iter().map(|x| (x * 1.3).sin() + 0.2 * x * x).collect();
        center(mu.w1(), &mut rhs);
        let sol = op.solve(&rhs).unwrap();
        assert!(sol.path_gap.unwrap() <= 1e-8, "gap {:?}", sol.path_gap);
        assert!(sol.residual <= 1e-8);
        assert!(wmean(mu.w1(), &sol.h).abs() <= 1e-10);
        assert!(sol.neumann_ratio.unwrap() <= sol.norm + 1e-3);
        assert!(!sol.fallback);
    }

    #[test]
    fn norm_is_permutation_invariant() {
        let (mu, bins) = bach32();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        let n = 32;
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let k = op.matrix();
        let permuted = FredholmOperator {
            k: DMatrix::from_fn(n, n, |i, j| k[(perm[i], perm[j])]),
            w1: perm.iter().map(|&i| op.w1[i]).collect(),
            m: op.m,
        };
        assert_abs_diff_eq!(
            op.contraction_norm(NormKind::L2),
            permuted.contraction_norm(NormKind::L2),
            epsilon = 1e-8
        );
    }

    #[test]
    fn csv_export_has_header() {
        let (mu, bins) = bach32();
        let op = FredholmOperator::build(&mu, &bins).unwrap();
        let mut buf = Vec::new();
        op.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,k_0,k_1"));
        assert_eq!(text.lines().count(), 33);
    }
}
