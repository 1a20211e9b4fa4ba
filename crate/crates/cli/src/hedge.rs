//! Hedge tables at a single σ: the dynamic hedge `h` and static `f1` on
//! first-stage atoms, `f2` on second-stage bins, and the location of the
//! largest jump of `h` relative to the stage-1 exercise boundary.

use std::fs::File;
use std::path::PathBuf;

use serde::Serialize;

use modelrisk::criterion::Kind;
use modelrisk::measure::{marginal_2, GridMeasure};
use modelrisk::sensitivity::{sensitivity, SensitivityReport};

use crate::config::{RunConfig, SetName};
use crate::output::{ensure_dir, num, write_chart, write_json};
use crate::CliError;

/// Largest adjacent-atom difference of `h` against the median one.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Jump {
    pub largest: f64,
    pub median: f64,
    /// `largest / median`, absent when the median difference is zero.
    pub ratio: Option<f64>,
    /// The jump sits between atoms `at` and `at + 1`.
    pub at: usize,
    pub x1_left: f64,
    pub x1_right: f64,
}

pub fn jump(x1: &[f64], h: &[f64]) -> Option<Jump> {
    if h.len() < 2 {
        return None;
    }
    let d: Vec<f64> = h.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let (at, top) = d.iter().enumerate().fold((0, 0.0), |(i, m), (j, v)| if *v > m { (j, *v) } else { (i, m) });
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let ratio = (median > 0.0).then(|| top / median);
    Some(Jump { largest: top, median, ratio, at, x1_left: x1[at], x1_right: x1[at + 1] })
}

#[derive(Debug, Clone, Serialize)]
pub struct Stopping {
    pub exercise_mass: f64,
    /// Atoms `i` where the exercise decision differs between `i` and `i + 1`.
    pub boundary: Vec<usize>,
    /// The largest jump of `h` lies within one cell of the boundary.
    pub jump_near_boundary: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HedgeSummary {
    pub sigma: Option<f64>,
    pub criterion: String,
    pub constraints: String,
    pub price: f64,
    pub sensitivity: f64,
    pub jump: Option<Jump>,
    pub stopping: Option<Stopping>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub report: Option<SensitivityReport>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// `[lo, hi]` of a discrete law after dropping `tail` mass on each side.
fn central_range(mut atoms: Vec<(f64, f64)>, tail: f64) -> (f64, f64) {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let mut acc = 0.0;
    let mut lo = atoms.first().map_or(0.0, |a| a.0);
    let mut hi = atoms.last().map_or(0.0, |a| a.0);
    let mut lo_set = false;
    for (x, w) in &atoms {
        let before = acc;
        acc += w / total;
        if !lo_set && acc > tail {
            lo = *x;
            lo_set = true;
        }
        if before < 1.0 - tail {
            hi = *x;
        }
    }
    (lo, hi)
}

fn stage1_plot(mu: &GridMeasure, r: &SensitivityReport, tail: f64) -> (Vec<String>, Vec<Vec<String>>) {
    let (lo, hi) = central_range(mu.x1().iter().copied().zip(mu.w1().iter().copied()).collect(), tail);
    let mut header = vec!["x1".to_string()];
    let mut cols: Vec<&Vec<f64>> = Vec::new();
    if let Some(h) = &r.h_hat {
        header.push("h".into());
        cols.push(h);
    }
    if let Some(f1) = &r.f1 {
        header.push("f1".into());
        cols.push(f1);
    }
    let rows = (0..mu.n1())
        .filter(|&i| (lo..=hi).contains(&mu.x1()[i]))
        .map(|i| std::iter::once(num(mu.x1()[i])).chain(cols.iter().map(|c| num(c[i]))).collect())
        .collect();
    (header, rows)
}

fn stage2_plot(mu: &GridMeasure, r: &SensitivityReport, tail: f64) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let (centers, f2) = (r.bin_centers.as_ref()?, r.f2.as_ref()?);
    let (lo, hi) = central_range(marginal_2(mu), tail);
    let rows = centers
        .iter()
        .zip(f2)
        .filter(|(x, _)| (lo..=hi).contains(*x))
        .map(|(x, v)| vec![num(*x), num(*v)])
        .collect();
    Some((vec!["x2_bin_center".into(), "f2".into()], rows))
}

/// Writes `hedge_stage1.csv`, `hedge_stage2.csv`, `hedge_summary.json` and
/// the charts `hedge_h_plot` and `hedge_f2_plot` (central mass only).
pub fn run(cfg: &RunConfig) -> Result<HedgeSummary, CliError> {
    let sigma = match (&cfg.measure, cfg.sigmas.as_slice()) {
        (Some(_), _) => None,
        (None, [s]) => Some(*s),
        (None, _) => return Err(CliError::Config("hedge needs a single σ (set model.sigma or --sigma)".into())),
    };
    let set = match cfg.sets_or(&[SetName::MartMarg]).as_slice() {
        [s] => *s,
        _ => return Err(CliError::Config("hedge takes exactly one constraint set".into())),
    };
    let c = cfg.criterion()?;
    let metric = cfg.metric()?;
    let mu = cfg.measure_at(sigma.unwrap_or(f64::NAN))?;
    ensure_dir(&cfg.out_dir)?;
    let bins = cfg.bins(&mu)?;
    let g = c.gradient_field(&mu);
    let cs = set.constraints();
    let report = sensitivity(&mu, &g, metric, &cs, Some(&bins))?;

    let mut files = Vec::new();
    let p1 = cfg.out_dir.join("hedge_stage1.csv");
    report.write_stage1_csv(File::create(&p1)?)?;
    files.push(p1);
    let p2 = cfg.out_dir.join("hedge_stage2.csv");
    report.write_stage2_csv(File::create(&p2)?)?;
    files.push(p2);

    let (h1, r1) = stage1_plot(&mu, &report, cfg.plot_mass);
    if h1.len() > 1 {
        let title = format!("{} first-stage hedge [{}]", c.name(), cs.label());
        files.extend(write_chart(&cfg.out_dir, "hedge_h_plot", &title, &h1, &r1, cfg.svg)?);
    }
    if let Some((h2, r2)) = stage2_plot(&mu, &report, cfg.plot_mass) {
        let title = format!("{} static hedge f2 [{}]", c.name(), cs.label());
        files.extend(write_chart(&cfg.out_dir, "hedge_f2_plot", &title, &h2, &r2, cfg.svg)?);
    }

    let jump = report.h_hat.as_ref().and_then(|h| jump(mu.x1(), h));
    let stopping = matches!(c.kind(), Kind::StopBuyer | Kind::StopSeller).then(|| {
        let rule = c.stopping_rule(&mu);
        let s = &rule.stop_at_1;
        let boundary: Vec<usize> = (0..s.len().saturating_sub(1)).filter(|&i| s[i] != s[i + 1]).collect();
        let near = jump.map(|j| boundary.iter().any(|b| b.abs_diff(j.at) <= 1));
        Stopping { exercise_mass: rule.exercise_mass(&mu), boundary, jump_near_boundary: near }
    });
    let mut warnings = c.diagnostics(&mu);
    warnings.extend(report.warnings.iter().cloned());
    let summary = HedgeSummary {
        sigma,
        criterion: c.name().to_string(),
        constraints: cs.label(),
        price: c.value(&mu),
        sensitivity: report.value,
        jump,
        stopping,
        warnings,
        report: None,
        files: Vec::new(),
    };
    let p = cfg.out_dir.join("hedge_summary.json");
    write_json(&p, &summary)?;
    files.push(p);
    Ok(HedgeSummary { report: Some(report), files, ..summary })
}
