//! Run configuration: a flat `key = value` file with sections, overridden
//! by command-line settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use modelrisk::criterion::Criterion;
use modelrisk::measure::{build_model, BinPartition, GridMeasure, ModelFamily, ModelSpec, Quadrature};
use modelrisk::sensitivity::{default_bins, Ball, ConstraintSet, Metric};

use crate::CliError;

/// Every accepted key as `(section, key, default, description)`.
pub const KEYS: &[(&str, &str, &str, &str)] = &[
    ("model", "family", "black_scholes", "black_scholes | bachelier"),
    ("model", "measure", "", "CSV file i,j,x1,w1,x2,q; replaces family (no σ sweep, no vega)"),
    ("model", "sigma", "logspace:0.05:1.5:20", "σ list \"0.1,0.5\" or logspace:a:b:n; hedge needs one value"),
    ("model", "n1", "64", "first-stage grid size"),
    ("model", "n2", "64", "second-stage grid size"),
    ("model", "quadrature", "gauss_hermite", "gauss_hermite | equally_weighted"),
    ("model", "bins", "auto", "second-stage bins for the marginal constraint; auto = min(n2, distinct atoms)"),
    ("model", "seed", "7", "seed of randomized test measures (selfcheck)"),
    ("criterion", "name", "american_put:K=1.3,rho=0.05,side=buyer", "linear:x2 | linear:x1+x2 | linear:x2^2 | american_put:K=..,rho=..,side=buyer|seller"),
    ("metric", "p", "2", "order of the Wasserstein ball, p > 1"),
    ("metric", "adapted", "true", "true = adapted ball, false = classical ball"),
    ("constraints", "sets", "", "comma list of none, M, m, Mm, m2, Mm2 (default: none,M,m,Mm; oracle: none,M,m2,Mm2)"),
    ("constraints", "radii", "0.02,0.05,0.1,0.2", "oracle radii"),
    ("constraints", "oracle", "false", "curve: cross-check every σ against the Newton solver"),
    ("output", "dir", "out", "output directory"),
    ("output", "svg", "true", "write SVG charts next to their CSV data"),
    ("output", "plot_mass", "1e-4", "hedge charts drop first-stage atoms in the outer tails of this mass"),
];

/// Named constraint sets. `m` fixes both marginals, `m2` the second only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetName {
    Free,
    Mart,
    Marg,
    MartMarg,
    Marg2,
    MartMarg2,
}

impl SetName {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "none" => Self::Free,
            "M" => Self::Mart,
            "m" => Self::Marg,
            "Mm" => Self::MartMarg,
            "m2" => Self::Marg2,
            "Mm2" => Self::MartMarg2,
            other => return Err(CliError::Config(format!("unknown constraint set {other:?}"))),
        })
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Self::Free => "",
            Self::Mart => "_M",
            Self::Marg => "_m",
            Self::MartMarg => "_Mm",
            Self::Marg2 => "_m2",
            Self::MartMarg2 => "_Mm2",
        }
    }

    pub fn constraints(self) -> ConstraintSet {
        match self {
            Self::Free => ConstraintSet::none(),
            Self::Mart => ConstraintSet::martingale(),
            Self::Marg => ConstraintSet::marginals(),
            Self::MartMarg => ConstraintSet::martingale_marginals(),
            Self::Marg2 => ConstraintSet { marginal2: true, ..ConstraintSet::none() },
            Self::MartMarg2 => ConstraintSet { marginal2: true, ..ConstraintSet::martingale() },
        }
    }
}

/// Raw settings by `section.key`.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut settings = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {}: unterminated section header", n + 1)))?;
                section = name.trim().to_string();
                if !KEYS.iter().any(|k| k.0 == section) {
                    return Err(CliError::Config(format!("line {}: unknown section [{section}]", n + 1)));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            if section.is_empty() {
                return Err(CliError::Config(format!("line {}: key outside of a section", n + 1)));
            }
            settings.set(&format!("{section}.{}", k.trim()), v.trim())?;
        }
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets `section.key`, rejecting unknown keys.
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<(), CliError> {
        let (s, k) = dotted
            .split_once('.')
            .ok_or_else(|| CliError::Config(format!("expected section.key, got {dotted:?}")))?;
        if !KEYS.iter().any(|e| e.0 == s && e.1 == k) {
            return Err(CliError::Config(format!("unknown key {dotted}")));
        }
        self.values.insert(dotted.to_string(), value.to_string());
        Ok(())
    }

    /// Parses a `section.key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected section.key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn is_set(&self, dotted: &str) -> bool {
        self.values.contains_key(dotted)
    }

    fn get(&self, dotted: &str) -> &str {
        if let Some(v) = self.values.get(dotted) {
            return v;
        }
        let (s, k) = dotted.split_once('.').expect("internal keys are dotted");
        KEYS.iter().find(|e| e.0 == s && e.1 == k).map(|e| e.2).expect("internal keys are declared")
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.trim().parse().map_err(|_| CliError::Config(format!("{key}: not a number: {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.trim().parse().map_err(|_| CliError::Config(format!("{key}: not a count: {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_f64(key, s)).collect()
}

/// `a,b,c` or `logspace:a:b:n`.
pub fn parse_sigma_grid(v: &str) -> Result<Vec<f64>, CliError> {
    let key = "model.sigma";
    let grid = if let Some(rest) = v.trim().strip_prefix("logspace:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::Config(format!("{key}: expected logspace:a:b:n, got {v:?}")));
        }
        let (a, b) = (parse_f64(key, parts[0])?, parse_f64(key, parts[1])?);
        let n = parse_usize(key, parts[2])?;
        if !(a > 0.0 && b > a) || n == 0 {
            return Err(CliError::Config(format!("{key}: logspace needs 0 < a < b and n ≥ 1")));
        }
        if n == 1 {
            vec![a]
        } else {
            (0..n).map(|k| (a.ln() + (b / a).ln() * k as f64 / (n - 1) as f64).exp()).collect()
        }
    } else {
        parse_list(key, v)?
    };
    if grid.is_empty() {
        return Err(CliError::Config(format!("{key}: empty σ grid")));
    }
    if grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(CliError::Config(format!("{key}: σ values must be positive")));
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::Config(format!("{key}: σ grid must be strictly increasing")));
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub family: ModelFamily,
    pub measure: Option<PathBuf>,
    pub sigmas: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    pub quadrature: Quadrature,
    /// `None` selects the default partition.
    pub bins: Option<usize>,
    pub seed: u64,
    pub criterion: String,
    pub p: f64,
    pub adapted: bool,
    /// `None` selects the command's default.
    pub sets: Option<Vec<SetName>>,
    pub radii: Vec<f64>,
    pub oracle: bool,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub plot_mass: f64,
    /// Whether any grid key was given, as opposed to relying on defaults.
    pub model_explicit: bool,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let family = match s.get("model.family") {
            "black_scholes" => ModelFamily::BlackScholes,
            "bachelier" => ModelFamily::Bachelier,
            other => return Err(CliError::Config(format!("model.family: unknown family {other:?}"))),
        };
        let measure = Some(s.get("model.measure")).filter(|v| !v.is_empty()).map(PathBuf::from);
        let quadrature = match s.get("model.quadrature") {
            "gauss_hermite" => Quadrature::GaussHermite,
            "equally_weighted" => Quadrature::EquallyWeighted,
            other => return Err(CliError::Config(format!("model.quadrature: unknown rule {other:?}"))),
        };
        let bins = match s.get("model.bins") {
            "auto" => None,
            v => Some(parse_usize("model.bins", v)?).filter(|m| *m > 0),
        };
        let seed = s.get("model.seed").parse().map_err(|_| CliError::Config("model.seed: not an integer".into()))?;
        let sets = match s.get("constraints.sets") {
            "" => None,
            v => Some(
                v.split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(SetName::parse)
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        if sets.as_ref().is_some_and(Vec::is_empty) {
            return Err(CliError::Config("constraints.sets: empty list".into()));
        }
        let cfg = Self {
            family,
            measure,
            sigmas: parse_sigma_grid(s.get("model.sigma"))?,
            n1: parse_usize("model.n1", s.get("model.n1"))?,
            n2: parse_usize("model.n2", s.get("model.n2"))?,
            quadrature,
            bins,
            seed,
            criterion: s.get("criterion.name").to_string(),
            p: parse_f64("metric.p", s.get("metric.p"))?,
            adapted: parse_bool("metric.adapted", s.get("metric.adapted"))?,
            sets,
            radii: parse_list("constraints.radii", s.get("constraints.radii"))?,
            oracle: parse_bool("constraints.oracle", s.get("constraints.oracle"))?,
            out_dir: PathBuf::from(s.get("output.dir")),
            svg: parse_bool("output.svg", s.get("output.svg"))?,
            plot_mass: parse_f64("output.plot_mass", s.get("output.plot_mass"))?,
            model_explicit: ["family", "sigma", "n1", "n2", "quadrature"].iter().any(|k| s.is_set(&format!("model.{k}"))),
        };
        // surface bad values now rather than halfway through a sweep
        cfg.metric()?;
        cfg.criterion()?;
        if cfg.measure.is_none() {
            cfg.spec(cfg.sigmas[0]).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if !(0.0..0.5).contains(&cfg.plot_mass) {
            return Err(CliError::Config("output.plot_mass must lie in [0, 0.5)".into()));
        }
        Ok(cfg)
    }

    pub fn spec(&self, sigma: f64) -> ModelSpec {
        ModelSpec { quadrature: self.quadrature, ..ModelSpec::new(self.family, sigma, self.n1, self.n2) }
    }

    pub fn metric(&self) -> Result<Metric, CliError> {
        let ball = if self.adapted { Ball::WpAdapted } else { Ball::Wp };
        Metric::new(ball, self.p).map_err(|e| CliError::Config(format!("metric: {e}")))
    }

    pub fn criterion(&self) -> Result<Criterion, CliError> {
        Criterion::preset(&self.criterion).map_err(|e| CliError::Config(format!("criterion.name: {e}")))
    }

    /// The configured partition, or the default one.
    pub fn bins(&self, mu: &GridMeasure) -> modelrisk::Result<BinPartition> {
        match self.bins {
            Some(m) => BinPartition::quantile(mu, m),
            None => default_bins(mu),
        }
    }

    /// The measure file, or the model at `sigma`.
    pub fn measure_at(&self, sigma: f64) -> Result<GridMeasure, CliError> {
        match &self.measure {
            Some(path) => GridMeasure::load_csv(path)
                .map_err(|e| CliError::Config(format!("model.measure {}: {e}", path.display()))),
            None => Ok(build_model(&self.spec(sigma))?),
        }
    }

    pub fn sets_or(&self, default: &[SetName]) -> Vec<SetName> {
        self.sets.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// Key reference appended to `--help`.
pub fn help_text() -> String {
    let mut out = String::from("Config file keys (flags override file values):\n");
    let mut section = "";
    for (s, k, d, help) in KEYS {
        if *s != section {
            out.push_str(&format!("  [{s}]\n"));
            section = s;
        }
        let d = if d.is_empty() { "unset".to_string() } else { d.to_string() };
        out.push_str(&format!("    {k:<11} {help} (default {d})\n"));
    }
    out.push_str("\nExit codes: 0 success, 1 check failure, 2 bad config.\n");
    out
}
