//! One-dimensional quadrature rules for the standard normal law.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Nodes and probability weights of a discrete approximation of N(0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Hermite rule mapped to N(0, 1): exact for polynomials of degree
/// up to `2n - 1`. Nodes are returned in increasing order and weights sum to one.
///
/// Physicists' nodes are found by Newton iteration on the orthonormal Hermite
/// recursion, then rescaled by `sqrt(2)`.
pub fn gauss_hermite(n: usize) -> Result<NormalRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let half = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0_f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Divergence(format!("Gauss-Hermite node {i} of {n}")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let scale = std::f64::consts::SQRT_2;
    let mut nodes: Vec<f64> = x.iter().map(|v| v * scale).collect();
    nodes.reverse();
    let mut weights = w;
    weights.reverse();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Ok(NormalRule { nodes, weights })
}

/// Equal weights on the normal quantiles at the cell midpoints `(k + 1/2) / n`.
pub fn equally_weighted(n: usize) -> Result<NormalRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
    }
    let normal = Normal::standard();
    let mut nodes: Vec<f64> = (0..n)
        .map(|k| normal.inverse_cdf((k as f64 + 0.5) / n as f64))
        .collect();
    // enforce exact symmetry so odd moments vanish
    for k in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -a;
        nodes[n - 1 - k] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(NormalRule { nodes, weights: vec![1.0 / n as f64; n] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn moment(rule: &NormalRule, k: i32) -> f64 {
        rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(k)).sum()
    }

    #[test]
    fn three_point_rule_is_analytic() {
        let rule = gauss_hermite(3).unwrap();
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(rule.nodes[0], -s3, epsilon = 1e-14);
        assert_eq!(rule.nodes[1], 0.0);
        assert_abs_diff_eq!(rule.nodes[2], s3, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights[0], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights[1], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_hermite_reproduces_normal_moments() {
        for n in [2usize, 5, 16, 32, 64, 96] {
            let rule = gauss_hermite(n).unwrap();
            assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
            assert_abs_diff_eq!(moment(&rule, 0), 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(moment(&rule, 1), 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(moment(&rule, 2), 1.0, epsilon = 1e-12);
            if n >= 3 {
                assert_abs_diff_eq!(moment(&rule, 4), 3.0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn lognormal_mean_is_one() {
        let rule = gauss_hermite(64).unwrap();
        for sigma in [0.1, 0.5, 1.0, 1.5] {
            let m: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(z, w)| w * (-0.5 * sigma * sigma + sigma * z).exp())
                .sum();
            assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn equally_weighted_is_symmetric() {
        let rule = equally_weighted(7).unwrap();
        assert_abs_diff_eq!(moment(&rule, 1), 0.0, epsilon = 1e-15);
        assert_eq!(rule.nodes[3], 0.0);
    }
}
