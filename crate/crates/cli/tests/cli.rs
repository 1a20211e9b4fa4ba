use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use modelrisk::measure::{build_model, ModelFamily, ModelSpec};
use modelrisk_cli::config::KEYS;
use modelrisk_cli::svg;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modelrisk")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut all = args.to_vec();
    all.extend(["--out", out]);
    run(&all)
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// Header and rows of a CSV file, cells as strings.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn f(cell: &str) -> f64 {
    cell.parse().unwrap()
}

#[test]
fn linear_x2_curve_on_bachelier() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["curve", "--family", "bachelier", "--criterion", "linear:x2", "--sigma", "0.1", "--n", "16"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let (h, rows) = table(&dir.path().join("curve.csv"));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert!((f(&r[col(&h, "G_ad")]) - 1.0).abs() < 1e-12);
    assert!((f(&r[col(&h, "G_ad_M")]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    // E[X1] does not move with σ
    assert!(f(&r[col(&h, "vega")]).abs() < 1e-10);
    // price is zero up to rounding, so no relative sensitivities
    assert!(f(&r[col(&h, "price")]).abs() < 1e-15);
    assert!(h.iter().enumerate().filter(|(_, n)| n.starts_with("relative_")).all(|(k, _)| r[k].is_empty()));
}

#[test]
fn put_curve_orders_sets_and_relative_columns() {
    let dir = tempfile::tempdir().unwrap();
    let sig = "0.1,0.2,0.4,0.7,1.0";
    let out = run_in(dir.path(), &["curve", "--sigma", sig, "--n", "24", "--oracle"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let (h, rows) = table(&dir.path().join("curve.csv"));
    let expect: Vec<&str> = vec![
        "sigma", "price", "G_ad", "G_ad_M", "G_ad_m", "G_ad_Mm", "vega",
        "relative_G_ad", "relative_G_ad_M", "relative_G_ad_m", "relative_G_ad_Mm",
    ];
    assert_eq!(h, expect);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let (m, mm) = (f(&r[3]), f(&r[5]));
        assert!(mm < m, "{r:?}");
        let price = f(&r[1]);
        assert!(price > 0.0);
        for k in 2..6 {
            let rel = f(&r[k + 5]);
            assert!((rel - f(&r[k]) / price).abs() <= 1e-12 * rel.abs().max(1.0));
        }
    }
    assert!(text(&out.stdout).contains("max |closed form - Newton|"));
}

#[test]
fn curve_outputs_are_bit_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["curve", "--sigma", "logspace:0.05:1.5:6", "--n", "16", "--family", "bachelier"];
    assert!(run_in(a.path(), &args).status.success());
    assert!(run_in(b.path(), &args).status.success());
    for name in ["curve.csv", "curve_plot.csv", "curve_plot.svg", "curve_report.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn every_svg_is_rendered_from_its_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["curve", "--sigma", "0.2,0.6", "--n", "12"]).status.success());
    assert!(run_in(dir.path(), &["hedge", "--sigma", "0.6", "--n", "12"]).status.success());
    let mut seen = 0;
    for entry in fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "svg") {
            let data = fs::read_to_string(p.with_extension("csv")).expect("sidecar exists");
            let doc = fs::read_to_string(&p).unwrap();
            let title = doc.split("font-size=\"14\">").nth(1).unwrap().split("</text>").next().unwrap();
            let title = title.replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"");
            assert_eq!(svg::render(&data, &title).unwrap(), doc, "{}", p.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
}

#[test]
fn martingale_hedge_of_linear_x2_is_minus_half() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["hedge", "--criterion", "linear:x2", "--sets", "M", "--sigma", "0.5", "--n", "16"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let (h, rows) = table(&dir.path().join("hedge_stage1.csv"));
    assert_eq!(h, ["x1", "h", "f1"]);
    assert_eq!(rows.len(), 16);
    for r in rows {
        assert!((f(&r[1]) + 0.5).abs() < 1e-12);
        assert!(r[2].is_empty());
    }
}

#[test]
fn put_hedge_jump_sits_at_the_exercise_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["hedge", "--sigma", "1.0"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("hedge_summary.json")).unwrap()).unwrap();
    assert!(v["jump"]["ratio"].as_f64().unwrap() > 10.0);
    assert_eq!(v["stopping"]["jump_near_boundary"], serde_json::Value::Bool(true));
    let (h, rows) = table(&dir.path().join("hedge_stage2.csv"));
    assert_eq!(h, ["x2_bin_center", "f2"]);
    assert_eq!(rows.len(), 64);
}

#[test]
fn hedge_needs_one_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["hedge", "--sigma", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("single σ"));
}

#[test]
fn selfcheck_passes_on_a_fresh_build() {
    let out = run(&["selfcheck"]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    let s = text(&out.stdout);
    assert!(s.contains("oracle       sandwich"));
    assert!(!s.contains("FAIL"));
}

#[test]
fn selfcheck_names_a_corrupted_measure_file() {
    let dir = tempfile::tempdir().unwrap();
    let mu = build_model(&ModelSpec::new(ModelFamily::Bachelier, 0.5, 3, 3)).unwrap();
    let mut buf = Vec::new();
    mu.write_csv(&mut buf).unwrap();
    let good = dir.path().join("good.csv");
    fs::write(&good, &buf).unwrap();
    assert!(run(&["selfcheck", "--measure", good.to_str().unwrap()]).status.success());

    // scale the first-stage weight of every row for atom i = 0
    let lines: Vec<String> = text(&buf)
        .lines()
        .map(|l| {
            let mut c: Vec<String> = l.split(',').map(String::from).collect();
            if c[0] == "0" {
                c[3] = format!("{:?}", 2.0 * f(&c[3]));
            }
            c.join(",")
        })
        .collect();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out = run(&["selfcheck", "--measure", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let s = text(&out.stdout);
    let line = s.lines().find(|l| l.contains("weights_sum_to_one")).expect("named invariant");
    assert!(line.contains("FAIL"));
}

#[test]
fn oracle_matches_closed_forms_on_the_canned_measure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["oracle"]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    let m = reports.iter().find(|r| r["constraints"] == "M").unwrap();
    let slope = m["fit"]["slope"].as_f64().unwrap();
    assert!((slope - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.05 * std::f64::consts::FRAC_1_SQRT_2);
    assert!(reports.iter().all(|r| r["pass"] == true));
}

#[test]
fn oracle_rejects_too_few_radii() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["oracle", "--radii", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("at least 3 radii"));
}

#[test]
fn oracle_rejects_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["oracle", "--sigma", "0.5", "--n", "64"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("instance too large"));
}

#[test]
fn oracle_reports_infeasible_sets_without_crashing() {
    let dir = tempfile::tempdir().unwrap();
    // a drifting measure: no martingale lies near it
    let path = dir.path().join("drift.csv");
    fs::write(&path, "i,j,x1,w1,x2,q\n0,0,0.0,0.5,1.0,0.5\n0,1,0.0,0.5,2.0,0.5\n1,0,1.0,0.5,2.0,0.5\n1,1,1.0,0.5,3.0,0.5\n").unwrap();
    let out = run_in(dir.path(), &["oracle", "--measure", path.to_str().unwrap(), "--sets", "none,M"]);
    assert_eq!(out.status.code(), Some(1));
    let s = text(&out.stdout);
    assert!(s.contains("[none]") && s.contains("pass"), "{s}");
    assert!(s.contains("[M] error"), "{s}");
    assert!(dir.path().join("oracle.json").exists());
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    for body in ["[model]\nsigma = 0.5, 0.1\n", "[model]\nvolatility = 0.2\n", "[metric]\np = 0.5\n"] {
        fs::write(&cfg, body).unwrap();
        let out = run_in(dir.path(), &["curve", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
    }
    assert_eq!(run(&["curve", "--set", "model.n1"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[model]\nfamily = bachelier\nsigma = 0.3\nn1 = 8\nn2 = 8\n[constraints]\nsets = none, M\n[output]\nsvg = false\n").unwrap();
    let out = run_in(dir.path(), &["curve", "--config", cfg.to_str().unwrap(), "--set", "model.n1=10"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let (h, rows) = table(&dir.path().join("curve.csv"));
    assert_eq!(h, ["sigma", "price", "G_ad", "G_ad_M", "vega", "relative_G_ad", "relative_G_ad_M"]);
    assert_eq!(rows[0][0], "0.3");
    assert!(!dir.path().join("curve_plot.svg").exists());
}

#[test]
fn help_documents_every_key() {
    let out = run(&["curve", "--help"]);
    assert!(out.status.success());
    let s = text(&out.stdout);
    for (section, key, _, _) in KEYS {
        assert!(s.contains(&format!("[{section}]")) && s.contains(key), "{section}.{key}");
    }
    assert!(s.contains("Exit codes"));
}
