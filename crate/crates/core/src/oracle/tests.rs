use std::sync::Arc;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::criterion::GradientField;
use crate::measure::BinPartition;
use crate::sensitivity::{sens_martingale, CondConstraint, MeanConstraint};

fn bachelier(n1: usize, n2: usize) -> GridMeasure {
    build_model(&ModelSpec::new(ModelFamily::Bachelier, 1.0, n1, n2)).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> GridMeasure {
    let mut x1: Vec<f64> = (0..n1).map(|_| rng.random_range(-1.0..1.0)).collect();
    x1.sort_by(f64::total_cmp);
    let w: Vec<f64> = (0..n1).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let w1 = w.iter().map(|v| v / s).collect();
    let mut x2 = Vec::new();
    let mut q = Vec::new();
    for _ in 0..n1 {
        let mut row: Vec<f64> = (0..n2).map(|_| rng.random_range(-2.0..2.0)).collect();
        row.sort_by(f64::total_cmp);
        x2.extend(row);
        let qs: Vec<f64> = (0..n2).map(|_| rng.random_range(0.1..1.0)).collect();
        let t: f64 = qs.iter().sum();
        q.extend(qs.iter().map(|v| v / t));
    }
    GridMeasure::new(x1, w1, x2, q, n2).unwrap()
}

fn ball_values(mu: &GridMeasure, cs: &ConstraintSet, p: f64, radii: &[f64]) -> Vec<f64> {
    radii
        .iter()
        .map(|&r| dro_lp(&DiscreteBallProblem::with_shifted_support(mu, &|_, b| b, r, p, cs).unwrap()).unwrap())
        .collect()
}

#[test]
fn zero_radius_returns_the_base_value() {
    let mu = bachelier(3, 3);
    let base = mu.expect(mu.x2());
    for cs in sandwich_sets() {
        let v = ball_values(&mu, &cs, 2.0, &[0.0]);
        assert_abs_diff_eq!(v[0], base, epsilon = 1e-12);
    }
}

#[test]
fn kantorovich_bound_at_p1() {
    let mu = bachelier(3, 3);
    let base = mu.expect(mu.x2());
    for r in [0.05, 0.1, 0.3] {
        let v = ball_values(&mu, &ConstraintSet::none(), 1.0, &[r])[0];
        assert!(v <= base + r + 1e-10, "r = {r}: {v} exceeds {}", base + r);
        assert!(v >= base - 1e-12);
    }
}

#[test]
fn values_grow_with_the_radius() {
    let mu = bachelier(3, 3);
    let radii = [0.0, 0.05, 0.1, 0.2, 0.4];
    for cs in sandwich_sets() {
        let v = ball_values(&mu, &cs, 2.0, &radii);
        for w in v.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{}: {v:?}", cs.label());
        }
    }
}

#[test]
fn martingale_slope_on_three_by_three() {
    let mu = bachelier(3, 3);
    let g = GradientField::constant(&mu, 0.0, 1.0);
    let closed = sens_martingale(&mu, &g, Metric::w2()).unwrap().value;
    let report = ball_slope_check(&mu, &Objective::x2(), &ConstraintSet::martingale(), 2.0, &[0.05, 0.1, 0.2]).unwrap();
    assert!(report.pass, "{}", report.to_json());
    assert!((report.fit.unwrap().slope - closed).abs() <= 0.05 * closed);
}

#[test]
fn too_few_radii_name_the_requirement() {
    let mu = bachelier(3, 3);
    let err = ball_slope_check(&mu, &Objective::x2(), &ConstraintSet::none(), 2.0, &[0.0]).unwrap_err();
    assert!(err.to_string().contains("at least 3 radii"), "{err}");
}

#[test]
fn mismatched_marginal_support_is_reported() {
    let mu = bachelier(3, 3);
    let mut prob =
        DiscreteBallProblem::with_shifted_support(&mu, &|_, b| b, 0.01, 2.0, &ConstraintSet::marginals()).unwrap();
    prob.target_support.push((mu.x1()[0], 123.0));
    prob.objective.push(123.0);
    prob.pairs = None;
    assert!(matches!(dro_lp(&prob), Err(Error::UnmatchedSupport(_))));
}

#[test]
fn bicausal_identity_and_translation() {
    let mu = bachelier(3, 4);
    assert_abs_diff_eq!(bicausal_distance(&mu, &mu, 2.0).unwrap(), 0.0, epsilon = 1e-12);
    let d = 0.3;
    let shifted = GridMeasure::new(
        mu.x1().iter().map(|x| x + d).collect(),
        mu.w1().to_vec(),
        mu.x2().iter().map(|x| x + d).collect(),
        mu.q().to_vec(),
        mu.n2(),
    )
    .unwrap();
    for p in [1.0, 2.0, 3.0] {
        let want = 2.0_f64.powf(1.0 / p) * d;
        assert_abs_diff_eq!(bicausal_distance(&mu, &shifted, p).unwrap(), want, epsilon = 1e-10);
    }
}

#[test]
fn bicausal_dominates_classical_and_obeys_the_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let a = random_measure(&mut rng, 3, 3);
        let b = random_measure(&mut rng, 3, 3);
        let c = random_measure(&mut rng, 2, 4);
        for p in [1.0, 2.0] {
            let ab = bicausal_distance(&a, &b, p).unwrap();
            let bc = bicausal_distance(&b, &c, p).unwrap();
            let ac = bicausal_distance(&a, &c, p).unwrap();
            assert!(ac <= ab + bc + 1e-9, "p = {p}: {ac} > {ab} + {bc}");
            assert!(ab >= wasserstein_distance(&a, &b, p).unwrap() - 1e-9);
        }
    }
}

#[test]
fn bicausal_distance_of_a_displacement_is_bounded_by_its_coupling_cost() {
    let mu = bachelier(4, 4);
    let theta1: Vec<f64> = mu.x1().iter().map(|x| (0.7 * x).sin()).collect();
    let theta2: Vec<f64> = mu.x2().iter().map(|x| 0.5 * (x * x * 0.3).cos()).collect();
    for r in [1e-2, 1e-3] {
        let nu = mu.displaced(&theta1, &theta2, r).unwrap();
        let coupling_cost: f64 = (0..mu.len())
            .map(|k| mu.mass(k) * ((r * theta1[mu.row_of(k)]).powi(2) + (r * theta2[k]).powi(2)))
            .sum::<f64>()
            .sqrt();
        let d = bicausal_distance(&mu, &nu, 2.0).unwrap();
        assert!(d <= coupling_cost + 1e-12, "r = {r}: {d} > {coupling_cost}");
    }
}

fn bump(mu: &GridMeasure) -> GradientField {
    let theta = GradientField::from_fns(mu, |_, _| 0.0, |a, b| (-(b - a) * (b - a)).exp());
    interior(mu, &theta)
}

#[test]
fn general_family_restores_a_mean_constraint() {
    let mu = bachelier(5, 5);
    let phi = MeanConstraint::centered_at(
        "x2^2",
        &mu,
        Arc::new(|_, b| b * b),
        Arc::new(|_, _| 0.0),
        Arc::new(|_, b| 2.0 * b),
    );
    let u = interior(&mu, &phi.gradient(&mu));
    let theta = bump(&mu);
    let fam = feasible_family_general(&mu, &theta, std::slice::from_ref(&phi), None, &[u], &[0.0, 1e-2, 1e-3]).unwrap();
    assert!(fam.warnings.is_empty(), "{:?}", fam.warnings);
    assert_eq!(fam.members.len(), 3);
    assert_eq!(fam.members[0].lambda, vec![0.0]);
    for m in &fam.members {
        assert!(phi.value(&m.measure).abs() <= 1e-10, "r = {}: {}", m.r, phi.value(&m.measure));
    }
}

#[test]
fn constraint_neutral_direction_needs_second_order_multipliers() {
    // Θ2 is conditionally centred on every row, so the martingale map is flat along it
    let mu = bachelier(5, 5);
    let n2 = mu.n2();
    let psi = CondConstraint::martingale();
    let mut t2 = vec![0.0; mu.len()];
    for i in 1..mu.n1() - 1 {
        t2[i * n2 + 1] = mu.q()[i * n2 + 3];
        t2[i * n2 + 3] = -mu.q()[i * n2 + 1];
    }
    let neutral = GradientField { g1: vec![0.0; mu.len()], g2: t2 };
    let radii = [1e-2, 1e-3];
    let fam = feasible_family_general(&mu, &neutral, &[], Some(&psi), &[], &radii).unwrap();
    assert!(fam.warnings.is_empty(), "{:?}", fam.warnings);
    for m in &fam.members {
        assert!(psi.residual(&m.measure) <= 1e-10);
        // exactly neutral for the linear constraint: h = 0
        assert!(m.multiplier_norm <= 1e-12, "r = {}: {}", m.r, m.multiplier_norm);
    }
    // a nonlinear constraint sees the neutral direction only at second order
    let quad = CondConstraint::new(
        "x2^2 - x1^2 - 1",
        Arc::new(|a, b| b * b - a * a - 1.0),
        Arc::new(|a, _| -2.0 * a),
        Arc::new(|_, b| 2.0 * b),
    );
    let mut t2 = vec![0.0; mu.len()];
    for i in 1..mu.n1() - 1 {
        let (k1, k3) = (i * n2 + 1, i * n2 + 3);
        // E1[∂ψ Θ2] = 0 on each row
        t2[k1] = mu.q()[k3] * mu.x2()[k3];
        t2[k3] = -mu.q()[k1] * mu.x2()[k1];
    }
    let neutral = GradientField { g1: vec![0.0; mu.len()], g2: t2 };
    let fam = feasible_family_general(&mu, &neutral, &[], Some(&quad), &[], &radii).unwrap();
    assert!(fam.warnings.is_empty(), "{:?}", fam.warnings);
    let (a, b) = (fam.members[0].multiplier_norm, fam.members[1].multiplier_norm);
    assert!(a > 0.0);
    // O(r²): a tenfold smaller radius gives a hundredfold smaller multiplier
    assert!(b / a < 0.02, "{a} -> {b}");
}

#[test]
fn mart_marginal_family_without_displacement_is_the_identity() {
    let mu = bachelier(6, 6);
    let bins = BinPartition::quantile(&mu, 6).unwrap();
    let fam = feasible_family_mart_marginal(&mu, &vec![0.0; mu.len()], &[1e-2, 1e-3], &bins).unwrap();
    for m in &fam.members {
        assert!(m.h.iter().all(|a| a.abs() <= 1e-14));
        assert_eq!(m.measure.x2(), mu.x2());
    }
}

#[test]
fn mart_marginal_family_residuals_and_multiplier_size() {
    let mu = bachelier(8, 8);
    let bins = BinPartition::quantile(&mu, 8).unwrap();
    let theta = bump(&mu).g2;
    let radii = [1e-2, 1e-3];
    let fam = feasible_family_mart_marginal(&mu, &theta, &radii, &bins).unwrap();
    assert!(fam.warnings.is_empty(), "{:?}", fam.warnings);
    assert_eq!(fam.members.len(), 2);
    for m in &fam.members {
        assert!(m.residual <= 1e-8, "r = {}: {}", m.r, m.residual);
        assert!(m.measure.martingale_residual() <= 1e-8);
        // the first marginal is untouched
        assert_eq!(m.measure.x1(), mu.x1());
        // bicausal distance to μ stays O(r)
        let d = bicausal_distance(&mu, &m.measure, 2.0).unwrap();
        assert!(d / m.r < 10.0, "r = {}: {}", m.r, d / m.r);
    }
    // a_r is linear in r
    let ratio = fam.members[0].multiplier_norm / fam.members[1].multiplier_norm;
    assert!((ratio - 10.0).abs() < 0.1, "{ratio}");
}

#[test]
fn directions_must_vanish_on_the_outer_layer() {
    let mu = bachelier(4, 4);
    let bins = BinPartition::quantile(&mu, 4).unwrap();
    let theta = vec![1.0; mu.len()];
    assert!(matches!(
        feasible_family_mart_marginal(&mu, &theta, &[1e-3], &bins),
        Err(Error::InvalidArgument(_))
    ));
    let g = GradientField::constant(&mu, 0.0, 1.0);
    assert!(feasible_family_general(&mu, &g, &[], None, &[], &[1e-3]).is_err());
}
