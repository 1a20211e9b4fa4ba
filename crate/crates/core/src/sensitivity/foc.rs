//! General-`p` solver for the first-order conditions.
//!
//! `U` is strictly convex in the multipliers. The row-local multipliers
//! (`h` and `f1` on each `x1` atom) are eliminated by exact per-row solves,
//! and a damped Newton iteration runs on the remaining global ones (`λ`,
//! `f2`) with the Schur-complement Hessian. Per-row solves matter on
//! Gauss–Hermite grids, whose tail rows carry too little mass to move `U`
//! above rounding but count fully in the conditional certificate. Steps are
//! Jacobi-scaled and a small ridge absorbs the null direction of the
//! martingale-plus-marginals problem.

use nalgebra::{DMatrix, DVector};

use super::problem::HedgeProblem;

/// Target for the FOC certificate.
pub const FOC_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 10_000;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
/// Newton stops after this many iterations without a 10% drop in the certificate.
const STALE_NEWTON: usize = 50;
const ROW_CYCLES: usize = 200;
const STALE_SWEEPS: usize = 50;
const MAX_SWEEPS: usize = 2_000;

pub(crate) struct NewtonOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn solve_scaled(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d: Vec<f64> = (0..n)
        .map(|u| {
            let h = hess[(u, u)];
            if h > 0.0 && h.is_finite() {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |u, w| d[u] * hess[(u, w)] * d[w]);
    let rhs = DVector::from_iterator(n, (0..n).map(|u| -d[u] * grad[u]));
    let mut ridge = 1e-12;
    while ridge <= 1e-2 {
        let mut m = scaled.clone();
        for u in 0..n {
            m[(u, u)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_iterator(n, (0..n).map(|u| d[u] * y[u])));
            }
        }
        ridge *= 100.0;
    }
    None
}

fn scaled_gradient_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = grad.len();
    DVector::from_iterator(
        n,
        (0..n).map(|u| {
            let h = hess[(u, u)];
            let s = if h > 0.0 && h.is_finite() { 1.0 / h } else { 1.0 };
            -s * grad[u]
        }),
    )
}

type Column = Vec<(usize, f64, f64)>;

/// Coefficients `(atom, c1, c2)` of each unknown in `V = ∂^d g + A θ`.
fn atoms_by_unknown(prob: &HedgeProblem<'_>) -> Vec<Column> {
    let mut out = vec![Vec::new(); prob.n_unknowns()];
    let mut inv = Vec::new();
    for a in 0..prob.mu.len() {
        prob.involved(a, &mut inv);
        for &(u, c1, c2) in &inv {
            if c1 != 0.0 || c2 != 0.0 {
                out[u].push((a, c1, c2));
            }
        }
    }
    out
}

struct Split {
    cols: Vec<Column>,
    /// Row-local unknowns of each `x1` atom.
    rows: Vec<Vec<usize>>,
    global: Vec<usize>,
    eps: f64,
    /// Partial derivatives below this are treated as zero: rounding level
    /// relative to `‖∂^d g‖` and the mass the unknown touches.
    ftol: Vec<f64>,
}

impl Split {
    fn new(prob: &HedgeProblem<'_>, scale: f64) -> Self {
        let eps = 1e-10 * scale;
        let dual = scale.powf(prob.metric.p_conj() - 1.0);
        let lay = prob.layout;
        let n1 = prob.mu.n1();
        let rows = (0..n1)
            .map(|i| [lay.h, lay.f1].iter().flatten().map(|o| o + i).collect())
            .collect();
        let mut global: Vec<usize> = (0..lay.k).collect();
        if let Some(o) = lay.f2 {
            global.extend(o..lay.n);
        }
        let cols = atoms_by_unknown(prob);
        let ftol = cols
            .iter()
            .map(|col| 1e-15 * dual * col.iter().map(|&(a, c1, c2)| prob.masses[a] * c1.hypot(c2)).sum::<f64>())
            .collect();
        Self { cols, rows, global, eps, ftol }
    }
}

/// `∂(U/p')/∂θ_u` and its second derivative after moving `θ_u` by `s`.
fn partial(prob: &HedgeProblem<'_>, col: &[(usize, f64, f64)], v1: &[f64], v2: &[f64], s: f64, eps: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut c = 0.0;
    for &(a, c1, c2) in col {
        let (w1, w2) = (v1[a] + s * c1, v2[a] + s * c2);
        let (d1, d2) = prob.atom_dual(w1, w2);
        let h = prob.atom_hessian(w1, w2, eps);
        let m = prob.masses[a];
        g += m * (c1 * d1 + c2 * d2);
        c += m * (c1 * (h[0][0] * c1 + h[0][1] * c2) + c2 * (h[1][0] * c1 + h[1][1] * c2));
    }
    (g, c)
}

/// Root of the nondecreasing map `s -> ∂(U/p')/∂θ_u`, to float resolution.
/// Newton steps are taken when they land inside the bracket, Illinois
/// false-position steps otherwise.
fn coordinate_root(prob: &HedgeProblem<'_>, col: &[(usize, f64, f64)], v1: &[f64], v2: &[f64], eps: f64, at: f64, ftol: f64) -> f64 {
    let f = |s: f64| partial(prob, col, v1, v2, s, eps);
    let (f0, c0) = f(0.0);
    if f0.abs() <= ftol || !f0.is_finite() {
        return 0.0;
    }
    let sign = f0.signum();
    let dir = -sign;
    let mut step = if c0 > 0.0 { f0.abs() / c0 } else { 1e-8 }.max(1e-300);
    // lo keeps the sign of f0, hi has the opposite sign
    let (mut lo, mut flo) = (0.0, f0);
    let mut hi;
    let mut fhi;
    let mut tries = 0;
    let mut last = loop {
        hi = dir * step;
        let (fh, ch) = f(hi);
        if !fh.is_finite() {
            return 0.0;
        }
        if fh.abs() <= ftol {
            return hi;
        }
        if fh.signum() != sign {
            fhi = fh;
            break (hi, fh, ch);
        }
        lo = hi;
        flo = fh;
        step *= 4.0;
        tries += 1;
        if tries > 600 {
            return 0.0;
        }
    };
    let mut side = 0i8;
    for _ in 0..200 {
        let (s, fs, cs) = last;
        let newton = if cs > 0.0 { s - fs / cs } else { f64::NAN };
        let inside = |x: f64| x.is_finite() && (x - lo) * (x - hi) < 0.0;
        let next = if inside(newton) {
            newton
        } else {
            let fp = hi - fhi * (hi - lo) / (fhi - flo);
            if inside(fp) {
                fp
            } else {
                0.5 * (lo + hi)
            }
        };
        let (fn_, cn) = f(next);
        if fn_.abs() <= ftol {
            return next;
        }
        if fn_.signum() == sign {
            lo = next;
            flo = fn_;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = next;
            fhi = fn_;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        last = (next, fn_, cn);
        if (hi - lo).abs() <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(at.abs()) {
            break;
        }
    }
    if flo.abs() <= fhi.abs() {
        lo
    } else {
        hi
    }
}

fn shift(theta: &mut [f64], v1: &mut [f64], v2: &mut [f64], col: &[(usize, f64, f64)], u: usize, s: f64) {
    theta[u] += s;
    for &(a, c1, c2) in col {
        v1[a] += s * c1;
        v2[a] += s * c2;
    }
}

/// Cyclic exact minimization over the row-local unknowns of every row.
fn solve_rows(prob: &HedgeProblem<'_>, split: &Split, theta: &mut [f64], v1: &mut [f64], v2: &mut [f64]) {
    for row in &split.rows {
        for _ in 0..ROW_CYCLES {
            let mut moved = false;
            for &u in row {
                let col = &split.cols[u];
                let s = coordinate_root(prob, col, v1, v2, split.eps, theta[u], split.ftol[u]);
                if s != 0.0 && s.abs() > 1e-15 * theta[u].abs() {
                    moved = true;
                }
                if s != 0.0 {
                    shift(theta, v1, v2, col, u, s);
                }
            }
            if !moved || row.len() < 2 {
                break;
            }
        }
    }
}

/// Newton step on the global unknowns with the row-local ones eliminated,
/// extended to the row-local unknowns by the linearized response.
fn reduced_step(split: &Split, grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<(DVector<f64>, f64)> {
    let g = &split.global;
    let ng = g.len();
    let mut red = DMatrix::from_fn(ng, ng, |a, b| hess[(g[a], g[b])]);
    let mut rg = DVector::from_iterator(ng, g.iter().map(|&u| grad[u]));
    let mut blocks = Vec::with_capacity(split.rows.len());
    for row in &split.rows {
        let nl = row.len();
        if nl == 0 {
            blocks.push(None);
            continue;
        }
        let mut hll = DMatrix::from_fn(nl, nl, |a, b| hess[(row[a], row[b])]);
        let tr = (0..nl).map(|a| hll[(a, a)]).sum::<f64>().abs().max(f64::MIN_POSITIVE);
        for a in 0..nl {
            hll[(a, a)] += 1e-14 * tr;
        }
        let inv = hll.try_inverse()?;
        let hlg = DMatrix::from_fn(nl, ng, |a, b| hess[(row[a], g[b])]);
        let gl = DVector::from_iterator(nl, row.iter().map(|&u| grad[u]));
        red -= hlg.transpose() * &inv * &hlg;
        rg -= hlg.transpose() * &inv * &gl;
        blocks.push(Some((inv, hlg, gl)));
    }
    let dg = solve_scaled(&red, &rg).or_else(|| Some(scaled_gradient_step(&red, &rg)))?;
    let slope = rg.dot(&dg);
    if !(slope < 0.0) {
        return None;
    }
    let mut step = DVector::zeros(grad.len());
    for (a, &u) in g.iter().enumerate() {
        step[u] = dg[a];
    }
    for (row, block) in split.rows.iter().zip(&blocks) {
        if let Some((inv, hlg, gl)) = block {
            let dl = -(inv * (hlg * &dg + gl));
            for (a, &u) in row.iter().enumerate() {
                step[u] = dl[a];
            }
        }
    }
    Some((step, slope))
}

/// Gauss–Seidel sweeps of exact one-dimensional solves over every unknown;
/// returns the best iterate by certificate.
fn sweep(prob: &HedgeProblem<'_>, split: &Split, mut theta: Vec<f64>, residual: f64) -> (Vec<f64>, f64, usize) {
    let (mut v1, mut v2) = prob.direction(&theta);
    let mut best = (theta.clone(), residual);
    let mut stale = 0;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        solve_rows(prob, split, &mut theta, &mut v1, &mut v2);
        for &u in &split.global {
            let col = &split.cols[u];
            let s = coordinate_root(prob, col, &v1, &v2, split.eps, theta[u], split.ftol[u]);
            if s != 0.0 {
                shift(&mut theta, &mut v1, &mut v2, col, u, s);
            }
        }
        let e = prob.evaluate(&theta);
        if e.value == 0.0 || e.residual < 0.99 * best.1 {
            stale = 0;
            best = (theta.clone(), e.residual);
            if e.value == 0.0 || e.residual <= FOC_TOL {
                break;
            }
        } else {
            stale += 1;
            if stale >= STALE_SWEEPS {
                break;
            }
        }
    }
    (best.0, best.1, sweeps)
}

pub(crate) fn newton(prob: &HedgeProblem<'_>, theta0: Vec<f64>) -> NewtonOutcome {
    let mut theta = theta0;
    let mut warnings = Vec::new();
    let first = prob.evaluate(&theta);
    if prob.n_unknowns() == 0 || first.value == 0.0 || first.residual <= FOC_TOL {
        return NewtonOutcome { theta, iterations: 0, warnings };
    }
    let pc = prob.metric.p_conj();
    let scale = prob.objective(&prob.g.g1, &prob.g.g2).powf(1.0 / pc);
    let split = Split::new(prob, scale.max(f64::MIN_POSITIVE));
    let (mut v1, mut v2) = prob.direction(&theta);
    solve_rows(prob, &split, &mut theta, &mut v1, &mut v2);
    let mut eval = prob.evaluate(&theta);
    let mut residual = eval.residual;
    let mut iterations = 1;
    let mut best = residual;
    let mut stale = 0;
    while !split.global.is_empty() && eval.value != 0.0 && residual > FOC_TOL && iterations < MAX_ITER {
        iterations += 1;
        let u0 = prob.objective(&v1, &v2) / pc;
        let (grad, hess) = prob.gradient_hessian(&v1, &v2, split.eps);
        let Some((step, slope)) = reduced_step(&split, &grad, &hess) else {
            break;
        };
        let flat = 1e-14 * u0.abs();
        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_STEP {
            let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let (mut w1, mut w2) = prob.direction(&cand);
            solve_rows(prob, &split, &mut cand, &mut w1, &mut w2);
            let u = prob.objective(&w1, &w2) / pc;
            if u.is_finite() {
                let armijo = u <= u0 + ARMIJO * t * slope;
                let e = prob.evaluate(&cand);
                if armijo || (u <= u0 + flat && e.residual < residual) {
                    accepted = Some((cand, w1, w2, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, w1, w2, e)) = accepted else {
            break;
        };
        theta = cand;
        v1 = w1;
        v2 = w2;
        eval = e;
        residual = eval.residual;
        if residual < 0.9 * best {
            best = residual;
            stale = 0;
        } else {
            stale += 1;
            if stale >= STALE_NEWTON {
                break;
            }
        }
    }
    if eval.value != 0.0 && residual > FOC_TOL && !split.global.is_empty() {
        let (t, r, sweeps) = sweep(prob, &split, theta.clone(), residual);
        theta = t;
        residual = r;
        iterations += sweeps;
    }
    if iterations >= MAX_ITER {
        warnings.push(format!("no convergence after {MAX_ITER} iterations"));
    }
    if eval.value != 0.0 && residual > FOC_TOL {
        warnings.push(format!("FOC residual {residual:.3e} above tolerance {FOC_TOL:.0e}"));
    }
    NewtonOutcome { theta, iterations, warnings }
}
