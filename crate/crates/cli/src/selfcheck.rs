//! Invariant suite on small canned instances, optionally extended by the
//! well-formedness checks of a measure file.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modelrisk::criterion::{Criterion, Kind};
use modelrisk::fredholm::{FredholmOperator, NormKind};
use modelrisk::measure::{build_model, cond_exp_1, BinPartition, GridMeasure, ModelFamily, ModelSpec};
use modelrisk::oracle::{ball_slope_check, bicausal_distance, canned_measure, sandwich_sets, wasserstein_distance, Objective, DEFAULT_RADII};
use modelrisk::sensitivity::{sensitivity, solve_foc, ConstraintSet, Metric};

type Outcome = Result<String, String>;

pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub outcome: Outcome,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn line(&self) -> String {
        let (tag, detail) = match &self.outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        format!("{:<12} {:<26} {tag}  {detail}", self.module, self.name)
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn model(family: ModelFamily, sigma: f64, n: usize) -> Result<GridMeasure, String> {
    build_model(&ModelSpec::new(family, sigma, n, n)).map_err(s)
}

fn put(kind: Kind) -> Result<Criterion, String> {
    Criterion::american_put(1.3, 0.05, kind).map_err(s)
}

fn four_sets() -> [ConstraintSet; 4] {
    [ConstraintSet::none(), ConstraintSet::martingale(), ConstraintSet::marginals(), ConstraintSet::martingale_marginals()]
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn martingale_grids() -> Outcome {
    let mut worst: f64 = 0.0;
    for mu in [canned_measure(), model(ModelFamily::BlackScholes, 0.5, 16)?, model(ModelFamily::Bachelier, 0.3, 16)?] {
        if !mu.is_martingale() {
            return Err(format!("residual {:.3e}", mu.martingale_residual()));
        }
        worst = worst.max(mu.martingale_residual());
    }
    Ok(format!("max residual {worst:.1e}"))
}

fn weights_normalized() -> Outcome {
    let mu = model(ModelFamily::BlackScholes, 0.5, 16)?;
    let total: f64 = mu.w1().iter().sum();
    let rows = (0..mu.n1()).map(|i| (mu.q()[i * mu.n2()..(i + 1) * mu.n2()].iter().sum::<f64>() - 1.0).abs());
    let worst = rows.fold((total - 1.0).abs(), f64::max);
    verdict(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn csv_roundtrip() -> Outcome {
    let mu = model(ModelFamily::Bachelier, 0.7, 6)?;
    let mut buf = Vec::new();
    mu.write_csv(&mut buf).map_err(s)?;
    let back = GridMeasure::read_csv(buf.as_slice()).map_err(s)?;
    let same = back.x1() == mu.x1() && back.x2() == mu.x2() && back.w1() == mu.w1() && back.q() == mu.q();
    verdict(same, format!("{} atoms", mu.len()))
}

fn buyer_below_seller() -> Outcome {
    let (b, sl) = (put(Kind::StopBuyer)?, put(Kind::StopSeller)?);
    let mut worst = f64::INFINITY;
    for family in [ModelFamily::BlackScholes, ModelFamily::Bachelier] {
        for sigma in [0.1, 0.5, 1.0] {
            let mu = model(family, sigma, 16)?;
            worst = worst.min(sl.value(&mu) - b.value(&mu));
        }
    }
    verdict(worst >= -1e-12, format!("min seller - buyer {worst:.3e}"))
}

fn stopping_stage1() -> Outcome {
    for kind in [Kind::StopBuyer, Kind::StopSeller] {
        let mu = model(ModelFamily::BlackScholes, 0.5, 16)?;
        let g = put(kind)?.gradient_field(&mu);
        let n2 = mu.n2();
        for i in 0..mu.n1() {
            let row = &g.g1[i * n2..(i + 1) * n2];
            if row.iter().any(|v| (v - row[0]).abs() > 1e-12 * row[0].abs().max(1.0)) {
                return Err(format!("{kind:?}: g1 varies along row {i}"));
            }
        }
    }
    Ok("g1 constant on every row".into())
}

fn closed_forms() -> Outcome {
    let want = [1.0, std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0];
    let mut worst: f64 = 0.0;
    for mu in [canned_measure(), model(ModelFamily::BlackScholes, 0.5, 12)?] {
        let g = Criterion::linear_x2().gradient_field(&mu);
        for metric in [Metric::w2(), Metric::w2_adapted()] {
            for (cs, w) in four_sets().iter().zip(want) {
                let v = sensitivity(&mu, &g, metric, cs, None).map_err(s)?.value;
                worst = worst.max((v - w).abs());
            }
        }
    }
    verdict(worst <= 1e-10, format!("max deviation {worst:.1e}"))
}

fn ordering() -> Outcome {
    let metric = Metric::w2_adapted();
    let mut gap = f64::INFINITY;
    for family in [ModelFamily::BlackScholes, ModelFamily::Bachelier] {
        let mu = model(family, 0.5, 16)?;
        for kind in [Kind::StopBuyer, Kind::StopSeller] {
            let g = put(kind)?.gradient_field(&mu);
            let v: Vec<f64> = four_sets()
                .iter()
                .map(|cs| sensitivity(&mu, &g, metric, cs, None).map(|r| r.value))
                .collect::<Result<_, _>>()
                .map_err(s)?;
            let (free, m, marg, mm) = (v[0], v[1], v[2], v[3]);
            if !(mm <= m.min(marg) + 1e-10 && m.min(marg) <= free + 1e-10) {
                return Err(format!("{family:?} {kind:?}: {v:?}"));
            }
            gap = gap.min(m - mm);
        }
    }
    verdict(gap > 0.0, format!("smallest G_M - G_Mm {gap:.3e}"))
}

fn dual_path() -> Outcome {
    let mut worst: f64 = 0.0;
    for family in [ModelFamily::BlackScholes, ModelFamily::Bachelier] {
        let mu = model(family, 0.5, 16)?;
        let g = put(Kind::StopBuyer)?.gradient_field(&mu);
        for metric in [Metric::w2(), Metric::w2_adapted()] {
            for cs in four_sets() {
                let a = sensitivity(&mu, &g, metric, &cs, None).map_err(s)?.value;
                let b = solve_foc(&mu, &g, metric, &cs, None).map_err(s)?.value;
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(worst <= 1e-8, format!("max |closed - Newton| {worst:.1e}"))
}

fn unit_direction() -> Outcome {
    let mu = model(ModelFamily::BlackScholes, 0.5, 16)?;
    let g = put(Kind::StopBuyer)?.gradient_field(&mu);
    let masses = mu.masses();
    let mut worst: f64 = 0.0;
    for metric in [Metric::w2(), Metric::w2_adapted(), Metric::new(modelrisk::sensitivity::Ball::WpAdapted, 3.0).map_err(s)?] {
        for cs in four_sets() {
            let r = sensitivity(&mu, &g, metric, &cs, None).map_err(s)?;
            if r.value > 0.0 {
                worst = worst.max((r.direction_norm(&masses) - 1.0).abs());
            }
        }
    }
    verdict(worst <= 1e-8, format!("max |‖T‖ - 1| {worst:.1e}"))
}

fn fredholm_certificate() -> Outcome {
    let mu = model(ModelFamily::BlackScholes, 0.5, 16)?;
    let bins = BinPartition::quantile(&mu, 16).map_err(s)?;
    let op = FredholmOperator::build(&mu, &bins).map_err(s)?;
    let norm = op.contraction_norm(NormKind::L2);
    let g = put(Kind::StopBuyer)?.gradient_field(&mu);
    let assign = bins.assign(&mu).map_err(s)?;
    let a = cond_exp_1(&mu, &assign.lift(&assign.average(&mu, &g.g2))).map_err(s)?;
    let b = cond_exp_1(&mu, &g.g2).map_err(s)?;
    let rhs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let sol = op.solve(&rhs).map_err(s)?;
    let gap = sol.path_gap.unwrap_or(f64::NAN);
    verdict(
        norm < 1.0 && gap <= 1e-8 && sol.residual <= 1e-8,
        format!("norm {norm:.4}, path gap {gap:.1e}, residual {:.1e}", sol.residual),
    )
}

fn oracle_sandwich() -> Outcome {
    let mu = canned_measure();
    let mut parts = Vec::new();
    let mut ok = true;
    for cs in sandwich_sets() {
        let r = ball_slope_check(&mu, &Objective::x2(), &cs, 2.0, &DEFAULT_RADII).map_err(s)?;
        ok &= r.pass;
        parts.push(format!("[{}] {:.4}/{:.4}", r.constraints, r.fit.map_or(f64::NAN, |f| f.slope), r.reference));
    }
    verdict(ok, parts.join(", "))
}

fn random_measure(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> Result<GridMeasure, String> {
    let mut x1: Vec<f64> = (0..n1).map(|i| i as f64 + rng.random_range(0.0..0.9)).collect();
    x1.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..n1).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let w1 = raw.iter().map(|w| w / total).collect();
    let mut x2 = Vec::new();
    let mut q = Vec::new();
    for _ in 0..n1 {
        let row: Vec<f64> = (0..n2).map(|j| 2.0 * j as f64 + rng.random_range(-0.9..0.9)).collect();
        let wr: Vec<f64> = (0..n2).map(|_| rng.random_range(0.1..1.0)).collect();
        let t: f64 = wr.iter().sum();
        x2.extend(row);
        q.extend(wr.iter().map(|w| w / t));
    }
    GridMeasure::from_unsorted_rows(x1, w1, x2, q, n2).map_err(s)
}

fn bicausal_dominance(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slack = f64::INFINITY;
    for _ in 0..5 {
        let a = random_measure(&mut rng, 3, 3)?;
        let b = random_measure(&mut rng, 3, 3)?;
        let ad = bicausal_distance(&a, &b, 2.0).map_err(s)?;
        let w = wasserstein_distance(&a, &b, 2.0).map_err(s)?;
        slack = slack.min(ad - w);
    }
    verdict(slack >= -1e-9, format!("min AW - W {slack:.3e} (seed {seed})"))
}

/// Names the invariant a measure file violates.
fn measure_file(path: &Path) -> Check {
    let outcome = GridMeasure::load_csv(path).map(|mu| {
        format!("{}x{} grid, martingale {}", mu.n1(), mu.n2(), mu.is_martingale())
    });
    let name = match &outcome {
        Ok(_) => "measure_file.well_formed",
        Err(e) => {
            let m = e.to_string();
            if m.contains("sum to") {
                "measure_file.weights_sum_to_one"
            } else if m.contains("positive") {
                "measure_file.weights_positive"
            } else if m.contains("increasing") {
                "measure_file.atoms_sorted"
            } else {
                "measure_file.well_formed"
            }
        }
    };
    Check { module: "measure", name: name.into(), outcome: outcome.map_err(s) }
}

/// Runs the suite; `measure` adds the checks of a measure file.
pub fn run(seed: u64, measure: Option<&Path>) -> Vec<Check> {
    let suite: Vec<(&'static str, &str, Box<dyn Fn() -> Outcome>)> = vec![
        ("measure", "martingale_grids", Box::new(martingale_grids)),
        ("measure", "weights_normalized", Box::new(weights_normalized)),
        ("measure", "csv_roundtrip", Box::new(csv_roundtrip)),
        ("criterion", "buyer_below_seller", Box::new(buyer_below_seller)),
        ("criterion", "stopping_stage1", Box::new(stopping_stage1)),
        ("sensitivity", "closed_forms", Box::new(closed_forms)),
        ("sensitivity", "constraint_ordering", Box::new(ordering)),
        ("sensitivity", "dual_path_p2", Box::new(dual_path)),
        ("sensitivity", "unit_direction", Box::new(unit_direction)),
        ("fredholm", "certificate", Box::new(fredholm_certificate)),
        ("oracle", "sandwich", Box::new(oracle_sandwich)),
        ("oracle", "bicausal_dominance", Box::new(move || bicausal_dominance(seed))),
    ];
    let mut checks: Vec<Check> =
        suite.into_iter().map(|(module, name, f)| Check { module, name: name.into(), outcome: f() }).collect();
    if let Some(p) = measure {
        checks.push(measure_file(p));
    }
    checks
}
