use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use modelrisk_cli::config::{help_text, RunConfig, Settings};
use modelrisk_cli::{curve, hedge, oracle, selfcheck, CliError};

/// Model-risk sensitivities of two-period models under (adapted)
/// Wasserstein balls.
#[derive(Parser)]
#[command(name = "modelrisk", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Price, sensitivities per constraint set and Vega over a σ grid.
    Curve(Common),
    /// Hedge tables (h, f1 on x1; f2 on bins) at one σ.
    Hedge(Common),
    /// Invariant suite on canned instances; nonzero exit on any failure.
    Selfcheck(Common),
    /// LP ball suprema, fitted slope and closed form on a small instance.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (key = value with [sections]).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. --set model.n1=32 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// model.family
    #[arg(long)]
    family: Option<String>,
    /// model.measure
    #[arg(long)]
    measure: Option<PathBuf>,
    /// model.sigma
    #[arg(long)]
    sigma: Option<String>,
    /// Sets model.n1 and model.n2.
    #[arg(long)]
    n: Option<usize>,
    /// model.bins
    #[arg(long)]
    bins: Option<String>,
    /// criterion.name
    #[arg(long)]
    criterion: Option<String>,
    /// metric.p
    #[arg(long)]
    p: Option<f64>,
    /// Classical instead of adapted ball (metric.adapted = false).
    #[arg(long)]
    classical: bool,
    /// constraints.sets
    #[arg(long)]
    sets: Option<String>,
    /// constraints.radii
    #[arg(long)]
    radii: Option<String>,
    /// Cross-check closed forms against Newton (constraints.oracle).
    #[arg(long)]
    oracle: bool,
    /// output.dir
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Skip SVG charts (output.svg = false).
    #[arg(long)]
    no_svg: bool,
}

impl Common {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let n = self.n.map(|n| n.to_string());
        let p = self.p.map(|p| p.to_string());
        let measure = self.measure.as_ref().map(|m| m.display().to_string());
        let out = self.out.as_ref().map(|m| m.display().to_string());
        let flags: [(&str, Option<&str>); 10] = [
            ("model.family", self.family.as_deref()),
            ("model.measure", measure.as_deref()),
            ("model.sigma", self.sigma.as_deref()),
            ("model.n1", n.as_deref()),
            ("model.n2", n.as_deref()),
            ("model.bins", self.bins.as_deref()),
            ("criterion.name", self.criterion.as_deref()),
            ("metric.p", p.as_deref()),
            ("constraints.sets", self.sets.as_deref()),
            ("constraints.radii", self.radii.as_deref()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        if self.classical {
            s.set("metric.adapted", "false")?;
        }
        if self.oracle {
            s.set("constraints.oracle", "true")?;
        }
        if let Some(o) = &out {
            s.set("output.dir", o)?;
        }
        if self.no_svg {
            s.set("output.svg", "false")?;
        }
        // generic overrides win over the named flags
        for pair in &self.set {
            s.set_pair(pair)?;
        }
        Ok(s)
    }
}

fn curve_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let sum = curve::run(cfg)?;
    for p in &sum.files {
        println!("wrote {}", p.display());
    }
    let failed = sum.failed_points();
    if let Some(gap) = sum.max_newton_gap() {
        println!("max |closed form - Newton| = {gap:.3e}");
        if !(gap <= curve::NEWTON_GAP_TOL) {
            return Err(CliError::Check(format!("closed forms and Newton differ by {gap:.3e}")));
        }
    }
    if failed > 0 {
        for p in sum.points.iter().filter(|p| !p.errors.is_empty()) {
            eprintln!("σ = {}: {}", p.sigma, p.errors.join("; "));
        }
        return Err(CliError::Check(format!("{failed} σ points failed; NaN marks them in curve.csv")));
    }
    Ok(())
}

fn hedge_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let sum = hedge::run(cfg)?;
    for p in &sum.files {
        println!("wrote {}", p.display());
    }
    println!("price {:.6}, sensitivity [{}] {:.6}", sum.price, sum.constraints, sum.sensitivity);
    if let Some(j) = sum.jump.filter(|j| j.largest > 0.0) {
        let ratio = j.ratio.map_or("undefined".to_string(), |r| format!("{r:.3e}"));
        println!("largest h jump {:.4e} between x1 = {:.6} and {:.6} (ratio to median {ratio})", j.largest, j.x1_left, j.x1_right);
    }
    if let Some(s) = &sum.stopping {
        println!("stage-1 exercise mass {:.4e}, boundary after atoms {:?}", s.exercise_mass, s.boundary);
        if let Some(near) = s.jump_near_boundary {
            println!("jump within one cell of the boundary: {near}");
        }
    }
    for w in &sum.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn selfcheck_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let checks = selfcheck::run(cfg.seed, cfg.measure.as_deref());
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Check(format!("failed: {}", failed.join(", "))))
    }
}

fn oracle_cmd(cfg: &RunConfig, objective: Option<&str>) -> Result<(), CliError> {
    let sum = oracle::run(cfg, objective)?;
    println!("instance: {}", sum.measure);
    for r in &sum.reports {
        println!("{}", r.summary());
        for e in &r.errors {
            println!("  {e}");
        }
    }
    for f in &sum.failures {
        println!("[{}] error: {}", f.constraints, f.error);
    }
    for p in &sum.files {
        println!("wrote {}", p.display());
    }
    if sum.passed() {
        Ok(())
    } else {
        Err(CliError::Check("oracle slopes do not match the closed forms".into()))
    }
}

fn run(cmd: &Cmd) -> Result<(), CliError> {
    let common = match cmd {
        Cmd::Curve(c) | Cmd::Hedge(c) | Cmd::Selfcheck(c) | Cmd::Oracle(c) => c,
    };
    let settings = common.settings()?;
    let cfg = RunConfig::from_settings(&settings)?;
    match cmd {
        Cmd::Curve(_) => curve_cmd(&cfg),
        Cmd::Hedge(_) => hedge_cmd(&cfg),
        Cmd::Selfcheck(_) => selfcheck_cmd(&cfg),
        Cmd::Oracle(_) => {
            let objective = settings.is_set("criterion.name").then_some(cfg.criterion.as_str());
            oracle_cmd(&cfg, objective)
        }
    }
}

fn main() -> ExitCode {
    let help = help_text();
    let mut command = Cli::command().after_long_help(help.clone());
    for name in ["curve", "hedge", "selfcheck", "oracle"] {
        command = command.mut_subcommand(name, |c| c.after_long_help(help.clone()));
    }
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
