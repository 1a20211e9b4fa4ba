//! First-order model-risk sensitivities of two-period models.
//!
//! Measures are finite disintegrated grids ([`measure::GridMeasure`]).
//! Criteria expose their value and gradient field on atoms
//! ([`criterion`]). [`sensitivity`] turns a gradient field into the
//! derivative at radius zero of the worst-case value over a (adapted)
//! Wasserstein ball, together with the optimal hedging multipliers.
//! [`oracle`] checks those numbers against brute-force discrete problems.

pub mod criterion;
pub mod error;
pub mod fredholm;
pub mod measure;
pub mod oracle;
pub mod quadrature;
pub mod sensitivity;

pub use error::{Error, Result};
