//! LP oracle runs: ball suprema at a few radii, their fitted slope, and the
//! closed-form sensitivity they should match.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use modelrisk::measure::GridMeasure;
use modelrisk::oracle::{ball_slope_check, canned_measure, Objective, OracleReport, MAX_VARIABLES, SHIFT_ANGLES};
use modelrisk::Error;

use crate::config::{RunConfig, SetName};
use crate::output::{ensure_dir, write_json};
use crate::CliError;

const DEFAULT_SETS: [SetName; 4] = [SetName::Free, SetName::Mart, SetName::Marg2, SetName::MartMarg2];

#[derive(Debug, Clone, Serialize)]
pub struct SetFailure {
    pub constraints: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub measure: String,
    pub reports: Vec<OracleReport>,
    pub failures: Vec<SetFailure>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(|r| r.pass)
    }
}

/// The linear presets as LP objectives.
fn objective(name: &str) -> Result<Objective, CliError> {
    let zero: modelrisk::criterion::Fn2 = Arc::new(|_, _| 0.0);
    let one: modelrisk::criterion::Fn2 = Arc::new(|_, _| 1.0);
    Ok(match name {
        "linear:x2" => Objective::x2(),
        "linear:x1+x2" => Objective { name: "x1+x2".into(), f: Arc::new(|a, b| a + b), d1: one.clone(), d2: one },
        "linear:x2^2" => Objective { name: "x2^2".into(), f: Arc::new(|_, b| b * b), d1: zero, d2: Arc::new(|_, b| 2.0 * b) },
        other => {
            return Err(CliError::Config(format!(
                "oracle objectives are linear:x2, linear:x1+x2 or linear:x2^2, got {other:?}"
            )))
        }
    })
}

fn instance(cfg: &RunConfig) -> Result<(GridMeasure, String), CliError> {
    if let Some(path) = &cfg.measure {
        return Ok((cfg.measure_at(f64::NAN)?, path.display().to_string()));
    }
    if !cfg.model_explicit {
        return Ok((canned_measure(), "canned Bachelier σ=1 5x5".into()));
    }
    let sigma = match cfg.sigmas.as_slice() {
        [s] => *s,
        _ => return Err(CliError::Config("oracle needs a single σ (set model.sigma or --sigma)".into())),
    };
    Ok((cfg.measure_at(sigma)?, format!("{:?} σ={sigma} {}x{}", cfg.family, cfg.n1, cfg.n2)))
}

/// Runs every requested set and writes `oracle.json`.
pub fn run(cfg: &RunConfig, objective_name: Option<&str>) -> Result<OracleSummary, CliError> {
    let obj = objective(objective_name.unwrap_or("linear:x2"))?;
    let (mu, label) = instance(cfg)?;
    let n = mu.len();
    // each atom pairs with every atom and with its own shifted copies
    let vars = n * (n + SHIFT_ANGLES);
    if vars > MAX_VARIABLES {
        return Err(CliError::Config(format!(
            "instance too large: {n} atoms need {vars} LP variables, the cap is {MAX_VARIABLES}"
        )));
    }
    ensure_dir(&cfg.out_dir)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for set in cfg.sets_or(&DEFAULT_SETS) {
        let cs = set.constraints();
        match ball_slope_check(&mu, &obj, &cs, cfg.p, &cfg.radii) {
            Ok(r) => reports.push(r),
            Err(Error::InvalidArgument(m)) => return Err(CliError::Config(m)),
            Err(e) => failures.push(SetFailure { constraints: cs.label(), error: e.to_string() }),
        }
    }
    let summary = OracleSummary { measure: label, reports, failures, files: Vec::new() };
    let path = cfg.out_dir.join("oracle.json");
    write_json(&path, &summary)?;
    Ok(OracleSummary { files: vec![path], ..summary })
}
