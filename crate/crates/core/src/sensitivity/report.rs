use std::io::Write;

use serde::Serialize;

use super::problem::HedgeProblem;
use crate::criterion::GradientField;
use crate::error::Result;
use crate::measure::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    ClosedForm,
    Newton,
}

/// `G'(0)`, the optimal multipliers and direction, and the FOC certificate.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub value: f64,
    pub lambda_hat: Vec<f64>,
    /// Dynamic hedge (multiplier of the conditional constraint) on `x1` atoms.
    pub h_hat: Option<Vec<f64>>,
    pub f1: Option<Vec<f64>>,
    /// Static second-stage hedge on bins.
    pub f2: Option<Vec<f64>>,
    pub x1: Vec<f64>,
    pub bin_centers: Option<Vec<f64>>,
    /// Optimal direction with unit `L^p(μ)` norm, or zero when `value = 0`.
    pub t: GradientField,
    pub foc_residual: f64,
    pub iterations: usize,
    pub method: Method,
    pub p: f64,
    pub adapted: bool,
    pub constraints: String,
    pub contraction_norm: Option<f64>,
    /// Set when a regularized solve replaced an ill-posed one.
    pub fallback: bool,
    pub warnings: Vec<String>,
}

impl SensitivityReport {
    pub(crate) fn assemble(
        prob: &HedgeProblem<'_>,
        theta: &[f64],
        method: Method,
        iterations: usize,
        label: String,
    ) -> Result<Self> {
        let eval = prob.evaluate(theta);
        let lay = prob.layout;
        let n1 = prob.mu.n1();
        let slice = |o: Option<usize>, len: usize| o.map(|o| theta[o..o + len].to_vec());
        let m = prob.bin_assignment().map(|a| a.m()).unwrap_or(0);
        let bin_centers = match &prob.bins {
            Some((b, _)) => Some(b.centers(prob.mu)?),
            None => None,
        };
        Ok(Self {
            value: eval.value,
            lambda_hat: theta[..lay.k].to_vec(),
            h_hat: slice(lay.h, n1),
            f1: slice(lay.f1, n1),
            f2: slice(lay.f2, m),
            x1: prob.mu.x1().to_vec(),
            bin_centers,
            t: eval.t,
            foc_residual: eval.residual,
            iterations,
            method,
            p: prob.metric.p,
            adapted: prob.metric.is_adapted(),
            constraints: label,
            contraction_norm: None,
            fallback: false,
            warnings: Vec::new(),
        })
    }

    /// `‖T‖_{L^p(μ)}` under the norm of the ball the report was computed for.
    pub fn direction_norm(&self, masses: &[f64]) -> f64 {
        let p = self.p;
        let s: f64 = if self.adapted {
            (0..masses.len()).map(|a| masses[a] * (self.t.g1[a].abs().powf(p) + self.t.g2[a].abs().powf(p))).sum()
        } else {
            (0..masses.len()).map(|a| masses[a] * self.t.g1[a].hypot(self.t.g2[a]).powf(p)).sum()
        };
        s.powf(1.0 / p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table `(x1, h, f1)`; absent multipliers are left empty.
    pub fn write_stage1_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x1", "h", "f1"])?;
        for (i, x) in self.x1.iter().enumerate() {
            let h = self.h_hat.as_ref().map(|v| fmt_f64(v[i])).unwrap_or_default();
            let f1 = self.f1.as_ref().map(|v| fmt_f64(v[i])).unwrap_or_default();
            wtr.write_record([fmt_f64(*x), h, f1])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Table `(x2_bin_center, f2)`; empty body when no second marginal is fixed.
    pub fn write_stage2_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x2_bin_center", "f2"])?;
        if let (Some(c), Some(f)) = (&self.bin_centers, &self.f2) {
            for (x, v) in c.iter().zip(f) {
                wtr.write_record([fmt_f64(*x), fmt_f64(*v)])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
