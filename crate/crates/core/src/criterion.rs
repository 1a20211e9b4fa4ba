//! Criteria `g(μ)`: linear payoffs and two-period optimal stopping.
//!
//! Each criterion exposes its value on a grid measure and the spatial
//! gradient of its linear functional derivative on atoms, as a
//! [`GradientField`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{build_model, cond_exp_1, GridMeasure, ModelSpec};

/// Scalar function of one or two variables shared between threads.
pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;
const KINK_GUARD: f64 = 1e-3;
/// Default tolerance under which stopping and continuing are declared tied.
pub const TIE_TOL: f64 = 1e-12;
const TIE_MASS_WARN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Linear,
    StopBuyer,
    StopSeller,
}

/// Derivative used when an atom sits exactly on a declared kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum KinkRule {
    LeftDerivative,
    #[default]
    ZeroAtKink,
}

/// Atom-indexed gradient `(∂x1, ∂x2)` of the linear functional derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl GradientField {
    pub fn new(g1: Vec<f64>, g2: Vec<f64>) -> Result<Self> {
        if g1.len() != g2.len() {
            return Err(Error::DimensionMismatch { expected: g1.len(), found: g2.len() });
        }
        if g1.iter().chain(&g2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("gradient field has non-finite entries".into()));
        }
        Ok(Self { g1, g2 })
    }

    pub fn zeros(n: usize) -> Self {
        Self { g1: vec![0.0; n], g2: vec![0.0; n] }
    }

    /// Constant field `(a, b)` on every atom of `mu`.
    pub fn constant(mu: &GridMeasure, a: f64, b: f64) -> Self {
        Self { g1: vec![a; mu.len()], g2: vec![b; mu.len()] }
    }

    pub fn from_fns(mu: &GridMeasure, d1: impl Fn(f64, f64) -> f64, d2: impl Fn(f64, f64) -> f64) -> Self {
        Self { g1: mu.field(d1), g2: mu.field(d2) }
    }

    pub fn len(&self) -> usize {
        self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g1.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            g1: self.g1.iter().map(|v| v * s).collect(),
            g2: self.g2.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.g1.iter().chain(&self.g2).all(|v| *v == 0.0)
    }
}

/// A one-dimensional intrinsic value with its derivative and kinks.
#[derive(Clone)]
pub struct Intrinsic {
    pub value: Fn1,
    pub deriv: Fn1,
    pub kinks: Vec<f64>,
}

impl Intrinsic {
    pub fn new(value: Fn1, deriv: Fn1, kinks: Vec<f64>) -> Self {
        Self { value, deriv, kinks }
    }

    /// `(strike - x)^+` with derivative `-1` below the strike.
    pub fn put(strike: f64) -> Self {
        Self {
            value: Arc::new(move |x| (strike - x).max(0.0)),
            deriv: Arc::new(move |x| if x < strike { -1.0 } else { 0.0 }),
            kinks: vec![strike],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self { value: Arc::new(move |_| c), deriv: Arc::new(|_| 0.0), kinks: Vec::new() }
    }

    fn on_kink(&self, x: f64) -> Option<f64> {
        self.kinks.iter().copied().find(|k| (x - k).abs() <= 1e-14 * k.abs().max(1.0))
    }

    fn derivative(&self, x: f64, rule: KinkRule) -> f64 {
        match self.on_kink(x) {
            Some(k) => match rule {
                KinkRule::ZeroAtKink => 0.0,
                KinkRule::LeftDerivative => (self.deriv)(k - 1e-9 * k.abs().max(1.0)),
            },
            None => (self.deriv)(x),
        }
    }
}

#[derive(Clone)]
pub enum Payoff {
    Linear { f: Fn2, d1: Fn2, d2: Fn2, kinks1: Vec<f64>, kinks2: Vec<f64> },
    Stopping { l1: Intrinsic, l2: Intrinsic },
}

#[derive(Clone)]
pub struct Criterion {
    name: String,
    kind: Kind,
    payoff: Payoff,
    kink_rule: KinkRule,
    tie_tol: f64,
}

impl fmt::Debug for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Criterion")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("kink_rule", &self.kink_rule)
            .field("tie_tol", &self.tie_tol)
            .finish()
    }
}

/// Stage-1 exercise decision of a stopping criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingRule {
    pub stop_at_1: Vec<bool>,
    /// First-stage atoms where stopping and continuing agree within tolerance.
    pub tie_at: Vec<usize>,
    pub tie_mass: f64,
}

impl StoppingRule {
    /// μ1-mass of the stage-1 exercise region.
    pub fn exercise_mass(&self, mu: &GridMeasure) -> f64 {
        self.stop_at_1.iter().zip(mu.w1()).filter(|(s, _)| **s).map(|(_, w)| w).sum()
    }

    pub fn warning(&self) -> Option<String> {
        (self.tie_mass > TIE_MASS_WARN).then(|| {
            format!(
                "stopping rule has ties on {} atoms with mass {:.3e}; ties resolved to continue",
                self.tie_at.len(),
                self.tie_mass
            )
        })
    }
}

fn probe_points() -> Vec<f64> {
    (0..41).map(|k| -4.0 + 0.2 * k as f64 + 0.013).collect()
}

fn far_from(x: f64, kinks: &[f64]) -> bool {
    kinks.iter().all(|k| (x - k).abs() > KINK_GUARD)
}

fn check_derivative(name: &str, f: impl Fn(f64) -> f64, d: impl Fn(f64) -> f64, kinks: &[f64]) -> Result<()> {
    for x in probe_points() {
        if !far_from(x, kinks) || !far_from(x - FD_STEP, kinks) || !far_from(x + FD_STEP, kinks) {
            continue;
        }
        let fd = (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
        let an = d(x);
        if !fd.is_finite() || !an.is_finite() {
            continue;
        }
        if (fd - an).abs() > FD_TOL * an.abs().max(fd.abs()).max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "{name}: supplied derivative {an} differs from finite difference {fd} at {x}"
            )));
        }
    }
    Ok(())
}

impl Criterion {
    /// Linear criterion `∫ f dμ`. The supplied partials are checked against
    /// central differences on a probe grid away from the declared kinks.
    pub fn linear(name: impl Into<String>, f: Fn2, d1: Fn2, d2: Fn2) -> Result<Self> {
        Self::linear_with_kinks(name, f, d1, d2, Vec::new(), Vec::new())
    }

    pub fn linear_with_kinks(
        name: impl Into<String>,
        f: Fn2,
        d1: Fn2,
        d2: Fn2,
        kinks1: Vec<f64>,
        kinks2: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        for y in [-1.3, 0.0, 0.7, 2.1] {
            if !far_from(y, &kinks2) {
                continue;
            }
            check_derivative(&format!("{name} d/dx1"), |x| f(x, y), |x| d1(x, y), &kinks1)?;
        }
        for x in [-1.3, 0.0, 0.7, 2.1] {
            if !far_from(x, &kinks1) {
                continue;
            }
            check_derivative(&format!("{name} d/dx2"), |y| f(x, y), |y| d2(x, y), &kinks2)?;
        }
        Ok(Self {
            name,
            kind: Kind::Linear,
            payoff: Payoff::Linear { f, d1, d2, kinks1, kinks2 },
            kink_rule: KinkRule::default(),
            tie_tol: TIE_TOL,
        })
    }

    /// Optimal stopping criterion with intrinsic values `l1(x1)`, `l2(x2)`.
    /// `StopBuyer` takes the infimum over stopping times, `StopSeller` the supremum.
    pub fn stopping(name: impl Into<String>, kind: Kind, l1: Intrinsic, l2: Intrinsic) -> Result<Self> {
        let name = name.into();
        if kind == Kind::Linear {
            return Err(Error::InvalidSpec("stopping criterion needs a buyer or seller side".into()));
        }
        check_derivative(&format!("{name} l1"), |x| (l1.value)(x), |x| (l1.deriv)(x), &l1.kinks)?;
        check_derivative(&format!("{name} l2"), |x| (l2.value)(x), |x| (l2.deriv)(x), &l2.kinks)?;
        Ok(Self {
            name,
            kind,
            payoff: Payoff::Stopping { l1, l2 },
            kink_rule: KinkRule::default(),
            tie_tol: TIE_TOL,
        })
    }

    /// American put with intrinsic values `(e^{-ρt} K - x)^+`, `t = 1, 2`.
    pub fn american_put(strike: f64, rho: f64, kind: Kind) -> Result<Self> {
        if !(strike.is_finite() && rho.is_finite()) {
            return Err(Error::InvalidSpec("strike and rate must be finite".into()));
        }
        let side = match kind {
            Kind::StopBuyer => "buyer",
            Kind::StopSeller => "seller",
            Kind::Linear => return Err(Error::InvalidSpec("american put needs side buyer or seller".into())),
        };
        Self::stopping(
            format!("american_put:K={strike},rho={rho},side={side}"),
            kind,
            Intrinsic::put((-rho).exp() * strike),
            Intrinsic::put((-2.0 * rho).exp() * strike),
        )
    }

    /// `∫ x2 dμ`.
    pub fn linear_x2() -> Self {
        Self::linear("linear:x2", Arc::new(|_, y| y), Arc::new(|_, _| 0.0), Arc::new(|_, _| 1.0))
            .expect("affine payoff passes the derivative check")
    }

    /// `∫ (x1 + x2) dμ`.
    pub fn linear_sum() -> Self {
        Self::linear("linear:x1+x2", Arc::new(|x, y| x + y), Arc::new(|_, _| 1.0), Arc::new(|_, _| 1.0))
            .expect("affine payoff passes the derivative check")
    }

    /// `∫ x2² dμ`.
    pub fn linear_x2_squared() -> Self {
        Self::linear("linear:x2^2", Arc::new(|_, y| y * y), Arc::new(|_, _| 0.0), Arc::new(|_, y| 2.0 * y))
            .expect("quadratic payoff passes the derivative check")
    }

    /// Parses a preset: `linear:x2`, `linear:x1+x2`, `linear:x2^2`, or
    /// `american_put:K=1.3,rho=0.05,side=buyer|seller` (every key optional).
    pub fn preset(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match spec {
            "linear:x2" => return Ok(Self::linear_x2()),
            "linear:x1+x2" => return Ok(Self::linear_sum()),
            "linear:x2^2" => return Ok(Self::linear_x2_squared()),
            _ => {}
        }
        let rest = spec
            .strip_prefix("american_put")
            .ok_or_else(|| Error::InvalidSpec(format!("unknown criterion preset {spec:?}")))?;
        let rest = rest.strip_prefix(':').unwrap_or(rest);
        let mut strike = 1.3;
        let mut rho = 0.05;
        let mut kind = Kind::StopBuyer;
        for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got {part:?}")))?;
            let num = || {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidSpec(format!("bad value for {k}: {e}")))
            };
            match k.trim() {
                "K" => strike = num()?,
                "rho" => rho = num()?,
                "side" => {
                    kind = match v.trim() {
                        "buyer" => Kind::StopBuyer,
                        "seller" => Kind::StopSeller,
                        other => return Err(Error::InvalidSpec(format!("unknown side {other:?}"))),
                    }
                }
                other => return Err(Error::InvalidSpec(format!("unknown american_put key {other:?}"))),
            }
        }
        Self::american_put(strike, rho, kind)
    }

    pub fn with_kink_rule(mut self, rule: KinkRule) -> Self {
        self.kink_rule = rule;
        self
    }

    pub fn with_tie_tol(mut self, tol: f64) -> Self {
        self.tie_tol = tol;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn payoff(&self) -> &Payoff {
        &self.payoff
    }

    pub fn kink_rule(&self) -> KinkRule {
        self.kink_rule
    }

    fn intrinsics(&self) -> Option<(&Intrinsic, &Intrinsic)> {
        match &self.payoff {
            Payoff::Stopping { l1, l2 } => Some((l1, l2)),
            Payoff::Linear { .. } => None,
        }
    }

    /// `(ℓ1(x1[i]), E1[ℓ2][i])` per first-stage atom.
    fn stop_and_continue(&self, mu: &GridMeasure) -> Option<(Vec<f64>, Vec<f64>)> {
        let (l1, l2) = self.intrinsics()?;
        let now: Vec<f64> = mu.x1().iter().map(|&x| (l1.value)(x)).collect();
        let later_field: Vec<f64> = mu.x2().iter().map(|&x| (l2.value)(x)).collect();
        let later = cond_exp_1(mu, &later_field).expect("field built on the grid");
        Some((now, later))
    }

    pub fn value(&self, mu: &GridMeasure) -> f64 {
        match &self.payoff {
            Payoff::Linear { f, .. } => mu.expect(&mu.field(|a, b| f(a, b))),
            Payoff::Stopping { .. } => {
                let (now, later) = self.stop_and_continue(mu).expect("stopping payoff");
                let pick = |a: f64, b: f64| if self.kind == Kind::StopBuyer { a.min(b) } else { a.max(b) };
                mu.w1().iter().zip(now.iter().zip(&later)).map(|(w, (a, b))| w * pick(*a, *b)).sum()
            }
        }
    }

    /// Stage-1 exercise decision. Linear criteria never stop at stage 1.
    pub fn stopping_rule(&self, mu: &GridMeasure) -> StoppingRule {
        let Some((now, later)) = self.stop_and_continue(mu) else {
            return StoppingRule { stop_at_1: vec![false; mu.n1()], tie_at: Vec::new(), tie_mass: 0.0 };
        };
        let mut stop_at_1 = Vec::with_capacity(mu.n1());
        let mut tie_at = Vec::new();
        let mut tie_mass = 0.0;
        for i in 0..mu.n1() {
            let (a, b) = (now[i], later[i]);
            let scale = a.abs().max(b.abs()).max(1.0);
            if (a - b).abs() <= self.tie_tol * scale {
                tie_at.push(i);
                tie_mass += mu.w1()[i];
                stop_at_1.push(false);
                continue;
            }
            stop_at_1.push(match self.kind {
                Kind::StopBuyer => a < b,
                Kind::StopSeller => a > b,
                Kind::Linear => false,
            });
        }
        StoppingRule { stop_at_1, tie_at, tie_mass }
    }

    pub fn gradient_field(&self, mu: &GridMeasure) -> GradientField {
        match &self.payoff {
            Payoff::Linear { d1, d2, kinks1, kinks2, .. } => {
                let kinked = |x: f64, kinks: &[f64]| kinks.iter().any(|k| (x - k).abs() <= 1e-14 * k.abs().max(1.0));
                let rule = self.kink_rule;
                let eval = |d: &Fn2, a: f64, b: f64, on_kink: bool| match (on_kink, rule) {
                    (true, KinkRule::ZeroAtKink) => 0.0,
                    _ => d(a, b),
                };
                let g1 = mu.field(|a, b| eval(d1, a, b, kinked(a, kinks1)));
                let g2 = mu.field(|a, b| eval(d2, a, b, kinked(b, kinks2)));
                GradientField { g1, g2 }
            }
            Payoff::Stopping { l1, l2 } => {
                let rule = self.stopping_rule(mu);
                let n2 = mu.n2();
                let mut g1 = vec![0.0; mu.len()];
                let mut g2 = vec![0.0; mu.len()];
                for i in 0..mu.n1() {
                    let d1 = l1.derivative(mu.x1()[i], self.kink_rule);
                    for j in 0..n2 {
                        let k = i * n2 + j;
                        if rule.stop_at_1[i] {
                            g1[k] = d1;
                        } else {
                            g2[k] = l2.derivative(mu.x2()[k], self.kink_rule);
                        }
                    }
                }
                GradientField { g1, g2 }
            }
        }
    }

    /// Warnings attached to sensitivities of this criterion on `mu`.
    pub fn diagnostics(&self, mu: &GridMeasure) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(w) = self.stopping_rule(mu).warning() {
            out.push(w);
        }
        out
    }
}

/// Central-difference Vega `(g(μ^{σ+h}) - g(μ^{σ-h})) / 2h` on matched grids.
/// `h` defaults to `1e-4 σ`.
pub fn vega(spec: &ModelSpec, c: &Criterion, h: Option<f64>) -> Result<f64> {
    let h = h.unwrap_or(1e-4 * spec.sigma);
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("vega step must be positive, got {h}")));
    }
    if spec.sigma - h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "vega step {h} is not below sigma {}",
            spec.sigma
        )));
    }
    let up = build_model(&spec.with_sigma(spec.sigma + h))?;
    let down = build_model(&spec.with_sigma(spec.sigma - h))?;
    Ok((c.value(&up) - c.value(&down)) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{ModelFamily, ModelSpec};
    use approx::assert_abs_diff_eq;

    fn bs(sigma: f64, n: usize) -> GridMeasure {
        build_model(&ModelSpec::new(ModelFamily::BlackScholes, sigma, n, n)).unwrap()
    }

    #[test]
    fn linear_x2_value_on_martingale() {
        let mu = bs(0.4, 16);
        let ex1: f64 = mu.x1().iter().zip(mu.w1()).map(|(a, w)| a * w).sum();
        assert_abs_diff_eq!(Criterion::linear_x2().value(&mu), ex1, epsilon = 1e-12);
    }

    #[test]
    fn zero_intrinsics_give_zero() {
        let c = Criterion::stopping("zero", Kind::StopBuyer, Intrinsic::constant(0.0), Intrinsic::constant(0.0)).unwrap();
        assert_eq!(c.value(&bs(0.3, 8)), 0.0);
    }

    #[test]
    fn bad_derivative_rejected() {
        let r = Criterion::linear("bad", Arc::new(|_, y| y * y), Arc::new(|_, _| 0.0), Arc::new(|_, y| y));
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn huge_stage_one_payoff_never_stops() {
        let c = Criterion::stopping("big", Kind::StopBuyer, Intrinsic::constant(1e300), Intrinsic::put(1.0)).unwrap();
        let rule = c.stopping_rule(&bs(0.5, 16));
        assert!(rule.stop_at_1.iter().all(|s| !s));
    }

    #[test]
    fn low_vol_buyer_continues_in_the_money() {
        let mu = bs(0.1, 64);
        let c = Criterion::american_put(1.3, 0.05, Kind::StopBuyer).unwrap();
        let rule = c.stopping_rule(&mu);
        let k1 = 1.3 * (-0.05f64).exp();
        for (i, &x) in mu.x1().iter().enumerate() {
            if x < 1.1 {
                assert!(!rule.stop_at_1[i], "stopped in the money at {x}");
            }
            if x > k1 && !rule.tie_at.contains(&i) {
                // zero intrinsic against a positive continuation value
                assert!(rule.stop_at_1[i], "continued out of the money at {x}");
            }
        }
    }

    #[test]
    fn high_vol_put_exercises() {
        let mu = bs(1.0, 64);
        let c = Criterion::american_put(1.3, 0.05, Kind::StopBuyer).unwrap();
        assert!(c.stopping_rule(&mu).exercise_mass(&mu) > 0.0);
    }

    #[test]
    fn gradient_examples() {
        let mu = bs(0.2, 8);
        let g = Criterion::linear_sum().gradient_field(&mu);
        assert!(g.g1.iter().chain(&g.g2).all(|v| *v == 1.0));

        let mu = bs(1.0, 32);
        let c = Criterion::american_put(1.3, 0.05, Kind::StopBuyer).unwrap();
        let rule = c.stopping_rule(&mu);
        let g = c.gradient_field(&mu);
        let k2 = 1.3 * (-0.1f64).exp();
        for k in 0..mu.len() {
            let i = mu.row_of(k);
            let (a, b) = mu.point(k);
            if rule.stop_at_1[i] {
                assert_eq!(g.g2[k], 0.0);
            } else {
                assert_eq!(g.g1[k], 0.0);
                if b > k2 {
                    assert_eq!(g.g2[k], 0.0);
                }
            }
            if a > 1.3 && !rule.stop_at_1[i] && b > k2 {
                assert_eq!((g.g1[k], g.g2[k]), (0.0, 0.0));
            }
            // stage-1 measurable
            assert_eq!(g.g1[k], g.g1[i * mu.n2()]);
        }
    }

    #[test]
    fn buyer_below_seller() {
        for s in [0.1, 0.5, 1.0] {
            let mu = bs(s, 32);
            let b = Criterion::american_put(1.3, 0.05, Kind::StopBuyer).unwrap().value(&mu);
            let sel = Criterion::american_put(1.3, 0.05, Kind::StopSeller).unwrap().value(&mu);
            assert!(b <= sel);
        }
    }

    #[test]
    fn seller_monotone_in_intrinsic() {
        let mu = bs(0.5, 16);
        let lo = Criterion::american_put(1.2, 0.05, Kind::StopSeller).unwrap().value(&mu);
        let hi = Criterion::american_put(1.3, 0.05, Kind::StopSeller).unwrap().value(&mu);
        assert!(lo <= hi);
    }

    #[test]
    fn kink_rule_applies_on_exact_kink() {
        let mu = GridMeasure::new(vec![1.0], vec![1.0], vec![0.5, 1.0, 1.5], vec![0.25, 0.5, 0.25], 3).unwrap();
        let c = Criterion::stopping("put1", Kind::StopBuyer, Intrinsic::constant(10.0), Intrinsic::put(1.0)).unwrap();
        assert_eq!(c.gradient_field(&mu).g2, vec![-1.0, 0.0, 0.0]);
        let c = c.with_kink_rule(KinkRule::LeftDerivative);
        assert_eq!(c.gradient_field(&mu).g2, vec![-1.0, -1.0, 0.0]);
    }

    #[test]
    fn ties_continue_and_warn() {
        let mu = GridMeasure::new(vec![0.0], vec![1.0], vec![-1.0, 1.0], vec![0.5, 0.5], 2).unwrap();
        let c = Criterion::stopping("tie", Kind::StopBuyer, Intrinsic::constant(0.5), Intrinsic::put(0.0)).unwrap();
        let rule = c.stopping_rule(&mu);
        assert_eq!(rule.stop_at_1, vec![false]);
        assert_eq!(rule.tie_at, vec![0]);
        assert!(rule.warning().is_some());
    }

    #[test]
    fn presets_parse() {
        assert_eq!(Criterion::preset("linear:x2").unwrap().kind(), Kind::Linear);
        let c = Criterion::preset("american_put:K=1.3,rho=0.05,side=seller").unwrap();
        assert_eq!(c.kind(), Kind::StopSeller);
        assert_eq!(Criterion::preset("american_put").unwrap().kind(), Kind::StopBuyer);
        assert!(Criterion::preset("american_put:side=holder").is_err());
        assert!(Criterion::preset("digital").is_err());
    }

    #[test]
    fn vega_examples() {
        let spec = ModelSpec::new(ModelFamily::Bachelier, 1.0, 16, 16);
        assert_abs_diff_eq!(vega(&spec, &Criterion::linear_x2(), None).unwrap(), 0.0, epsilon = 1e-9);
        let v = vega(&spec, &Criterion::linear_x2_squared(), Some(1e-4)).unwrap();
        assert_abs_diff_eq!(v, 4.0, epsilon = 1e-6);
        assert!(vega(&spec, &Criterion::linear_x2(), Some(2.0)).is_err());
        assert!(vega(&spec, &Criterion::linear_x2(), Some(-1.0)).is_err());

        let bs = ModelSpec::new(ModelFamily::BlackScholes, 0.5, 64, 64);
        let put = Criterion::american_put(1.3, 0.05, Kind::StopBuyer).unwrap();
        assert!(vega(&bs, &put, None).unwrap() > 0.0);
    }
}
