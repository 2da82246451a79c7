//! Fixed-order Gauss–Legendre quadrature.

use std::f64::consts::PI;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes an `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_and_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_and_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.on_interval(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrates a matrix-valued function over `[0, horizon]` with an `nodes`-point
/// Gauss–Legendre rule.
pub fn integrate_matrix<F>(f: F, horizon: f64, nodes: usize) -> Result<DenseMatrix>
where
    F: Fn(f64) -> DenseMatrix,
{
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if nodes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {nodes}")));
    }
    let rule = GaussLegendre::new(nodes)?;
    let mut acc: Option<DenseMatrix> = None;
    for (tau, w) in rule.on_interval(0.0, horizon) {
        let sample = f(tau);
        if !sample.is_finite() {
            return Err(Error::NonFinite(format!("integrand at tau = {tau}")));
        }
        match acc.as_mut() {
            Some(a) => a.add_scaled(w, &sample),
            None => acc = Some(sample.scaled(w)),
        }
    }
    Ok(acc.expect("at least two nodes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> DenseMatrix {
        DenseMatrix::diagonal(&[x])
    }

    #[test]
    fn weights_sum_to_two_and_nodes_are_roots() {
        for n in [1, 2, 3, 7, 64, 128, 1024] {
            let rule = GaussLegendre::new(n).unwrap();
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}: {s}");
            for &x in &rule.nodes {
                let (p, d) = legendre_and_derivative(n, x);
                assert!((p / d).abs() < 1e-14, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn constant_integrand() {
        let m = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        for n in [2, 5, 64] {
            let r = integrate_matrix(|_| m.clone(), 1.0, n).unwrap();
            assert!(r.rel_diff(&m) < 1e-14);
        }
    }

    #[test]
    fn exponential_integrand() {
        let r = integrate_matrix(|t| scalar(t.exp()), 1.0, 16).unwrap();
        assert!((r[(0, 0)] - (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_on_polynomials() {
        // 4 nodes integrate degree <= 7 exactly.
        let r = integrate_matrix(|t| scalar(t * t), 2.0, 4).unwrap();
        assert!((r[(0, 0)] - 8.0 / 3.0).abs() < 1e-14);
        let r = integrate_matrix(|t| scalar(t.powi(7)), 2.0, 4).unwrap();
        assert!((r[(0, 0)] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn node_doubling_is_stable_for_smooth_integrands() {
        let f = |t: f64| scalar((-(t - 1.0).powi(2)).exp() * (3.0 * t).cos());
        let a = integrate_matrix(f, 4.0, 64).unwrap();
        let b = integrate_matrix(f, 4.0, 128).unwrap();
        assert!(a.rel_diff(&b) < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(integrate_matrix(|_| scalar(1.0), 0.0, 8).is_err());
        assert!(integrate_matrix(|_| scalar(1.0), 1.0, 1).is_err());
        assert!(matches!(
            integrate_matrix(|_| scalar(f64::NAN), 1.0, 4),
            Err(Error::NonFinite(_))
        ));
    }
}
