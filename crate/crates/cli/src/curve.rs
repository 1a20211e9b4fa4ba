//! Sensitivity curves over σ: one row per σ with the price, the
//! sensitivity under each constraint set, Vega and relative sensitivities.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use modelrisk::criterion::{vega, Criterion};
use modelrisk::sensitivity::{sensitivity, solve_foc, Metric};

use crate::config::{RunConfig, SetName};
use crate::output::{ensure_dir, num, write_chart, write_csv, write_json};
use crate::CliError;

/// Prices at or below this count as zero and get no relative sensitivity.
pub const ZERO_PRICE: f64 = 1e-12;

/// Largest tolerated gap between closed forms and Newton under `oracle`.
pub const NEWTON_GAP_TOL: f64 = 1e-8;

const DEFAULT_SETS: [SetName; 4] = [SetName::Free, SetName::Mart, SetName::Marg, SetName::MartMarg];

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub sigma: f64,
    pub price: f64,
    /// One value per requested set; `NaN` where the computation failed.
    pub sensitivities: Vec<f64>,
    pub vega: f64,
    /// `|closed form - Newton|` per set when cross-checking at p = 2.
    pub newton_gap: Option<Vec<f64>>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub criterion: String,
    pub metric: String,
    pub columns: Vec<String>,
    pub points: Vec<CurvePoint>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl CurveSummary {
    pub fn failed_points(&self) -> usize {
        self.points.iter().filter(|p| !p.errors.is_empty()).count()
    }

    pub fn max_newton_gap(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.newton_gap.as_ref())
            .flatten()
            .copied()
            .reduce(|a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
    }
}

fn column_prefix(metric: &Metric) -> &'static str {
    if metric.is_adapted() {
        "G_ad"
    } else {
        "G_W"
    }
}

fn point(cfg: &RunConfig, c: &Criterion, metric: Metric, sets: &[SetName], sigma: f64) -> CurvePoint {
    let mut pt = CurvePoint {
        sigma,
        price: f64::NAN,
        sensitivities: vec![f64::NAN; sets.len()],
        vega: f64::NAN,
        newton_gap: (cfg.oracle && metric.p == 2.0).then(|| vec![f64::NAN; sets.len()]),
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    let spec = cfg.spec(sigma);
    match vega(&spec, c, None) {
        Ok(v) => pt.vega = v,
        Err(e) => pt.errors.push(format!("vega: {e}")),
    }
    let mu = match cfg.measure_at(sigma) {
        Ok(mu) => mu,
        Err(e) => {
            pt.errors.push(format!("model: {e}"));
            return pt;
        }
    };
    pt.price = c.value(&mu);
    pt.warnings.extend(c.diagnostics(&mu));
    let g = c.gradient_field(&mu);
    let bins = match cfg.bins(&mu) {
        Ok(b) => b,
        Err(e) => {
            pt.errors.push(format!("bins: {e}"));
            return pt;
        }
    };
    for (k, set) in sets.iter().enumerate() {
        let cs = set.constraints();
        match sensitivity(&mu, &g, metric, &cs, Some(&bins)) {
            Ok(r) => {
                pt.sensitivities[k] = r.value;
                pt.warnings.extend(r.warnings.iter().map(|w| format!("[{}] {w}", cs.label())));
                if let Some(gaps) = pt.newton_gap.as_mut() {
                    match solve_foc(&mu, &g, metric, &cs, Some(&bins)) {
                        Ok(n) => gaps[k] = (n.value - r.value).abs(),
                        Err(e) => pt.errors.push(format!("[{}] Newton: {e}", cs.label())),
                    }
                }
            }
            Err(e) => pt.errors.push(format!("[{}] {e}", cs.label())),
        }
    }
    pt
}

/// Computes every σ in parallel, then writes `curve.csv`, `curve_report.json`
/// and the chart `curve_plot.csv`/`curve_plot.svg`.
pub fn run(cfg: &RunConfig) -> Result<CurveSummary, CliError> {
    if cfg.measure.is_some() {
        return Err(CliError::Config("curve sweeps σ over a model family; model.measure is not allowed".into()));
    }
    let c = cfg.criterion()?;
    let metric = cfg.metric()?;
    let sets = cfg.sets_or(&DEFAULT_SETS);
    ensure_dir(&cfg.out_dir)?;

    let points: Vec<CurvePoint> = cfg.sigmas.par_iter().map(|&s| point(cfg, &c, metric, &sets, s)).collect();

    let prefix = column_prefix(&metric);
    let columns: Vec<String> = sets.iter().map(|s| format!("{prefix}{}", s.suffix())).collect();
    let mut header = vec!["sigma".to_string(), "price".to_string()];
    header.extend(columns.iter().cloned());
    header.push("vega".into());
    header.extend(columns.iter().map(|c| format!("relative_{c}")));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![num(p.sigma), num(p.price)];
            r.extend(p.sensitivities.iter().map(|v| num(*v)));
            r.push(num(p.vega));
            // quadrature rounding leaves centered prices at ~1e-17 rather than 0
            r.extend(p.sensitivities.iter().map(|v| if p.price > ZERO_PRICE { num(v / p.price) } else { String::new() }));
            r
        })
        .collect();
    let mut files = Vec::new();
    let table = cfg.out_dir.join("curve.csv");
    write_csv(&table, &header, &rows)?;
    files.push(table);

    let mut plot_header = vec!["sigma".to_string()];
    plot_header.extend(columns.iter().cloned());
    plot_header.push("vega".into());
    let plot_rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![num(p.sigma)];
            r.extend(p.sensitivities.iter().map(|v| num(*v)));
            r.push(num(p.vega));
            r
        })
        .collect();
    let title = format!("{} sensitivities vs sigma", c.name());
    files.extend(write_chart(&cfg.out_dir, "curve_plot", &title, &plot_header, &plot_rows, cfg.svg)?);

    let summary = CurveSummary {
        criterion: c.name().to_string(),
        metric: format!("{}{}", if metric.is_adapted() { "adapted W" } else { "W" }, metric.p),
        columns,
        points,
        files: Vec::new(),
    };
    let report = cfg.out_dir.join("curve_report.json");
    write_json(&report, &summary)?;
    files.push(report);
    Ok(CurveSummary { files, ..summary })
}
