//! Double-Gauss quadrature: a Gauss–Legendre rule mapped onto `(0, 1)` and
//! mirrored onto `(-1, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Half-range nodes `μ_n ∈ (0, 1)` (increasing) and weights `α_n` summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫₀¹ f(μ) dμ` by the half-range rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on `(-1, 1)`, nodes increasing.
///
/// Newton iteration on `P_n` from the Tricomi initial guess; symmetric pairs
/// are mirrored so the rule is exactly symmetric.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // i-th largest root
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[n - 1 - i] = z;
        x[i] = -z;
        w[n - 1 - i] = wi;
        w[i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Half-range rule of size `n` for the discrete-ordinate system.
pub fn build_double_gauss_quadrature(n: usize) -> Result<Quadrature, ValidationError> {
    if n == 0 {
        return Err(ValidationError::new(
            "quadrature",
            "node count must be at least 1",
        ));
    }
    let (x, w) = gauss_legendre(n);
    Ok(Quadrature {
        nodes: x.iter().map(|xi| 0.5 * (xi + 1.0)).collect(),
        weights: w.iter().map(|wi| 0.5 * wi).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Roots of P₂ by bisection, independent of the Newton path.
    fn bisect_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(build_double_gauss_quadrature(0).is_err());
    }

    #[test]
    fn one_point_rule_is_midpoint() {
        let q = build_double_gauss_quadrature(1).unwrap();
        assert_eq!(q.nodes, vec![0.5]);
        assert!((q.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_rule_matches_root_finding() {
        let q = build_double_gauss_quadrature(2).unwrap();
        let p2 = |x: f64| 0.5 * (3.0 * x * x - 1.0);
        let r = bisect_root(p2, 0.0, 1.0);
        let expected = [0.5 - 0.5 * r, 0.5 + 0.5 * r];
        // 0.5 ∓ 1/(2√3)
        assert!((expected[0] - 0.211_324_865_405_187_1).abs() < 1e-15);
        for k in 0..2 {
            assert!((q.nodes[k] - expected[k]).abs() < 1e-15);
            assert!((q.weights[k] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_one_and_polynomials_integrate_exactly() {
        for n in 1..=16 {
            let q = build_double_gauss_quadrature(n).unwrap();
            let s: f64 = q.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "n={n} sum={s}");
            assert!(q.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(q.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
            for k in 0..2 * n {
                let exact = 1.0 / (k as f64 + 1.0);
                let got = q.integrate(|x| x.powi(k as i32));
                assert!((got - exact).abs() < 1e-12, "n={n} k={k} err={}", got - exact);
            }
        }
    }

    #[test]
    fn large_rules_stay_accurate() {
        for n in [40, 64, 100] {
            let q = build_double_gauss_quadrature(n).unwrap();
            let s: f64 = q.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
            let got = q.integrate(|x| (3.0 * x).cos());
            assert!((got - (3.0f64).sin() / 3.0).abs() < 1e-14);
        }
    }
}
