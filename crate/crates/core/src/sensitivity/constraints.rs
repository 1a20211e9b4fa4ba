use std::fmt;
use std::sync::Arc;

use crate::criterion::{Fn2, GradientField};
use crate::error::{Error, Result};
use crate::measure::GridMeasure;

/// Mean constraint `φ(μ') = ∫ f dμ' - level = 0`.
#[derive(Clone)]
pub struct MeanConstraint {
    pub name: String,
    pub f: Fn2,
    pub d1: Fn2,
    pub d2: Fn2,
    pub level: f64,
}

impl MeanConstraint {
    pub fn new(name: impl Into<String>, f: Fn2, d1: Fn2, d2: Fn2, level: f64) -> Self {
        Self { name: name.into(), f, d1, d2, level }
    }

    /// Centers the constraint at `mu` so that `φ(mu) = 0`.
    pub fn centered_at(name: impl Into<String>, mu: &GridMeasure, f: Fn2, d1: Fn2, d2: Fn2) -> Self {
        let level = mu.expect(&mu.field(|a, b| f(a, b)));
        Self::new(name, f, d1, d2, level)
    }

    pub fn value(&self, mu: &GridMeasure) -> f64 {
        mu.expect(&mu.field(|a, b| (self.f)(a, b))) - self.level
    }

    pub fn gradient(&self, mu: &GridMeasure) -> GradientField {
        GradientField::from_fns(mu, |a, b| (self.d1)(a, b), |a, b| (self.d2)(a, b))
    }
}

impl fmt::Debug for MeanConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeanConstraint").field("name", &self.name).field("level", &self.level).finish()
    }
}

/// Conditional constraint `E^{μ'}[ψ(X1, X2) | X1] = 0`.
#[derive(Clone)]
pub struct CondConstraint {
    pub name: String,
    pub psi: Fn2,
    pub d1: Fn2,
    pub d2: Fn2,
    is_martingale: bool,
}

impl CondConstraint {
    pub fn new(name: impl Into<String>, psi: Fn2, d1: Fn2, d2: Fn2) -> Self {
        Self { name: name.into(), psi, d1, d2, is_martingale: false }
    }

    /// `ψ = x2 - x1`.
    pub fn martingale() -> Self {
        Self {
            name: "martingale".into(),
            psi: Arc::new(|a, b| b - a),
            d1: Arc::new(|_, _| -1.0),
            d2: Arc::new(|_, _| 1.0),
            is_martingale: true,
        }
    }

    pub fn is_martingale(&self) -> bool {
        self.is_martingale
    }

    pub fn gradient(&self, mu: &GridMeasure) -> GradientField {
        GradientField::from_fns(mu, |a, b| (self.d1)(a, b), |a, b| (self.d2)(a, b))
    }

    /// `max_i |E[ψ | X1 = x1[i]]|`.
    pub fn residual(&self, mu: &GridMeasure) -> f64 {
        let field = mu.field(|a, b| (self.psi)(a, b));
        let v = crate::measure::cond_exp_1(mu, &field).expect("field built on the grid");
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl fmt::Debug for CondConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CondConstraint")
            .field("name", &self.name)
            .field("is_martingale", &self.is_martingale)
            .finish()
    }
}

/// Active hedging instruments. `marginal1`/`marginal2` fix the marginals,
/// `martingale` imposes `E[X2 | X1] = X1`.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub martingale: bool,
    pub marginal1: bool,
    pub marginal2: bool,
    pub mean_phi: Vec<MeanConstraint>,
    pub cond_psi: Option<CondConstraint>,
}

impl ConstraintSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn martingale() -> Self {
        Self { martingale: true, ..Self::default() }
    }

    /// Both marginals fixed.
    pub fn marginals() -> Self {
        Self { marginal1: true, marginal2: true, ..Self::default() }
    }

    pub fn martingale_marginals() -> Self {
        Self { martingale: true, marginal1: true, marginal2: true, ..Self::default() }
    }

    pub fn with_mean(mut self, phi: MeanConstraint) -> Self {
        self.mean_phi.push(phi);
        self
    }

    pub fn with_psi(mut self, psi: CondConstraint) -> Self {
        self.cond_psi = Some(psi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(psi) = &self.cond_psi {
            if self.martingale && !psi.is_martingale() {
                return Err(Error::InvalidArgument(format!(
                    "conditional constraint {:?} cannot be combined with the martingale constraint",
                    psi.name
                )));
            }
        }
        Ok(())
    }

    /// The conditional constraint in force: explicit `ψ` or the martingale one.
    pub fn effective_psi(&self) -> Option<CondConstraint> {
        match (&self.cond_psi, self.martingale) {
            (Some(p), _) => Some(p.clone()),
            (None, true) => Some(CondConstraint::martingale()),
            (None, false) => None,
        }
    }

    pub fn has_martingale(&self) -> bool {
        self.martingale || self.cond_psi.as_ref().is_some_and(|p| p.is_martingale())
    }

    /// Short label used in file names and tables.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.has_martingale() {
            parts.push("M".to_string());
        } else if let Some(p) = &self.cond_psi {
            parts.push(format!("psi({})", p.name));
        }
        match (self.marginal1, self.marginal2) {
            (true, true) => parts.push("m".into()),
            (true, false) => parts.push("m1".into()),
            (false, true) => parts.push("m2".into()),
            _ => {}
        }
        for phi in &self.mean_phi {
            parts.push(format!("phi({})", phi.name));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}
