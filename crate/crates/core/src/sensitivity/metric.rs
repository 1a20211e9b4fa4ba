use serde::{Deserialize, Serialize};

use crate::criterion::GradientField;
use crate::error::{Error, Result};
use crate::measure::{cond_exp_1, GridMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ball {
    Wp,
    WpAdapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub ball: Ball,
    pub p: f64,
}

impl Metric {
    pub fn new(ball: Ball, p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("exponent p must be in (1, inf), got {p}")));
        }
        Ok(Self { ball, p })
    }

    pub fn w2() -> Self {
        Self { ball: Ball::Wp, p: 2.0 }
    }

    pub fn w2_adapted() -> Self {
        Self { ball: Ball::WpAdapted, p: 2.0 }
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn is_adapted(&self) -> bool {
        self.ball == Ball::WpAdapted
    }

    /// Applies `∂^d`: the adapted projection for the adapted ball, identity otherwise.
    pub fn project(&self, mu: &GridMeasure, g: &GradientField) -> Result<GradientField> {
        match self.ball {
            Ball::Wp => Ok(g.clone()),
            Ball::WpAdapted => adapted_gradient(mu, g),
        }
    }
}

/// `sgn(v) |v|^{p'-1}`.
pub fn n_map(v: f64, p: f64) -> f64 {
    let pc = p / (p - 1.0);
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(pc - 1.0)
    }
}

/// Euclidean duality map on pairs: `v |v|^{p'-2}`.
pub fn n_map_pair(v: (f64, f64), p: f64) -> (f64, f64) {
    let pc = p / (p - 1.0);
    let r = v.0.hypot(v.1);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let s = r.powf(pc - 2.0);
    (v.0 * s, v.1 * s)
}

/// Componentwise duality map used by the adapted ball.
pub fn n_map_adapted(v: (f64, f64), p: f64) -> (f64, f64) {
    (n_map(v.0, p), n_map(v.1, p))
}

/// `(E1[g1], g2)`: the first component is replaced by its conditional mean
/// given the first stage.
pub fn adapted_gradient(mu: &GridMeasure, g: &GradientField) -> Result<GradientField> {
    let m = cond_exp_1(mu, &g.g1)?;
    if g.g2.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: g.g2.len() });
    }
    Ok(GradientField { g1: mu.lift_first(&m), g2: g.g2.clone() })
}
