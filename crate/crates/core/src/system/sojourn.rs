//! Sojourn-time distributions truncated to a common horizon `T`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::numlin::GaussLegendre;

/// Normalization must hold to this accuracy under the kernel quadrature rule.
const NORMALIZATION_TOL: f64 = 1e-10;
/// Uniform cuts of `[0, T]` into this many pieces are always panel edges.
const UNIFORM_PANELS: usize = 8;
/// Geometric panel edges in the Weibull variable `w = (τ/λ)^k`: `4^j` for these `j`.
const W_EDGE_POWERS: std::ops::RangeInclusive<i32> = -12..=4;
/// Panel nodes used by the construction-time normalization check.
const CHECK_PANEL_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SojournKind {
    /// Weibull with scale `λ` and shape `k`, truncated to `(0, T]`.
    TruncatedWeibull { scale: f64, shape: f64 },
    /// Exponential with the given rate, truncated to `(0, T]`.
    TruncatedExponential { rate: f64 },
    /// Uniform on `(0, T]`.
    Uniform,
    /// Deterministic sojourn of length `point`.
    Dirac { point: f64 },
}

/// A sojourn-time law on `(0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournDistribution {
    kind: SojournKind,
    horizon: f64,
    /// `1 / F(T)` for the untruncated CDF `F`; 1 for uniform and Dirac laws.
    normalizer: f64,
}

/// One quadrature node: `∫ φ(τ) f(τ) dτ ≈ Σ weight · φ(tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SojournNode {
    pub tau: f64,
    pub weight: f64,
}

impl SojournDistribution {
    pub fn new(kind: SojournKind, horizon: f64) -> Result<Self> {
        positive("horizon", horizon)?;
        let normalizer = match kind {
            SojournKind::TruncatedWeibull { scale, shape } => {
                positive("Weibull scale", scale)?;
                positive("Weibull shape", shape)?;
                let mass = -(-(horizon / scale).powf(shape)).exp_m1();
                if mass <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "Weibull(λ={scale}, k={shape}) puts no mass on (0, {horizon}]"
                    )));
                }
                1.0 / mass
            }
            SojournKind::TruncatedExponential { rate } => {
                positive("exponential rate", rate)?;
                let mass = -(-rate * horizon).exp_m1();
                if mass <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "exponential rate {rate} puts no mass on (0, {horizon}]"
                    )));
                }
                1.0 / mass
            }
            SojournKind::Uniform => 1.0,
            SojournKind::Dirac { point } => {
                positive("Dirac point", point)?;
                if point > horizon {
                    return Err(Error::InvalidArgument(format!(
                        "Dirac point {point} lies beyond the horizon {horizon}"
                    )));
                }
                1.0
            }
        };
        let dist = Self {
            kind,
            horizon,
            normalizer,
        };
        let mass: f64 = dist.nodes(CHECK_PANEL_NODES)?.iter().map(|n| n.weight).sum();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Quadrature(format!(
                "density of {kind:?} integrates to {mass} on (0, {horizon}]"
            )));
        }
        Ok(dist)
    }

    pub fn weibull(scale: f64, shape: f64, horizon: f64) -> Result<Self> {
        Self::new(SojournKind::TruncatedWeibull { scale, shape }, horizon)
    }

    pub fn exponential(rate: f64, horizon: f64) -> Result<Self> {
        Self::new(SojournKind::TruncatedExponential { rate }, horizon)
    }

    pub fn uniform(horizon: f64) -> Result<Self> {
        Self::new(SojournKind::Uniform, horizon)
    }

    pub fn dirac(point: f64, horizon: f64) -> Result<Self> {
        Self::new(SojournKind::Dirac { point }, horizon)
    }

    /// Truncated Weibull with the given shape whose truncated mean equals
    /// `mean`; the scale is found by bisection on `log λ`.
    pub fn weibull_with_mean(mean: f64, shape: f64, horizon: f64) -> Result<Self> {
        positive("mean", mean)?;
        positive("Weibull shape", shape)?;
        positive("horizon", horizon)?;
        // As λ → ∞ the truncated law tends to density ∝ τ^{k-1} on (0, T].
        let sup = shape * horizon / (shape + 1.0);
        if mean >= sup {
            return Err(Error::InvalidArgument(format!(
                "no Weibull scale gives mean {mean} with shape {shape} on (0, {horizon}] (supremum {sup})"
            )));
        }
        let truncated_mean = |scale: f64| weibull_truncated_mean(scale, shape, horizon);
        let (mut lo, mut hi) = ((mean * 1e-6).ln(), (mean * 2.0).ln());
        while truncated_mean(hi.exp()) < mean {
            hi += 1.0;
            if hi > 700.0 {
                return Err(Error::InvalidArgument("Weibull scale search diverged".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if truncated_mean(mid.exp()) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Self::weibull((0.5 * (lo + hi)).exp(), shape, horizon)
    }

    pub fn kind(&self) -> SojournKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.kind, SojournKind::Dirac { .. })
    }

    /// `(λ, k)` for the Weibull family; the exponential law is Weibull with
    /// `λ = 1/rate` and `k = 1`.
    fn weibull_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            SojournKind::TruncatedWeibull { scale, shape } => Some((scale, shape)),
            SojournKind::TruncatedExponential { rate } => Some((1.0 / rate, 1.0)),
            _ => None,
        }
    }

    /// Density at `tau`; zero outside `(0, T]`. A Dirac law has no density and
    /// returns zero everywhere; kernels evaluate it at its point instead.
    pub fn density(&self, tau: f64) -> f64 {
        if !(tau > 0.0 && tau <= self.horizon) {
            return 0.0;
        }
        match self.kind {
            SojournKind::TruncatedWeibull { .. } | SojournKind::TruncatedExponential { .. } => {
                let (scale, shape) = self.weibull_params().expect("Weibull family");
                let z = tau / scale;
                self.normalizer * shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
            SojournKind::Uniform => 1.0 / self.horizon,
            SojournKind::Dirac { .. } => 0.0,
        }
    }

    /// Truncated CDF.
    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        if tau >= self.horizon {
            return 1.0;
        }
        match self.kind {
            SojournKind::TruncatedWeibull { .. } | SojournKind::TruncatedExponential { .. } => {
                let (scale, shape) = self.weibull_params().expect("Weibull family");
                -(-(tau / scale).powf(shape)).exp_m1() * self.normalizer
            }
            SojournKind::Uniform => tau / self.horizon,
            SojournKind::Dirac { point } => {
                if tau >= point {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Inverse CDF on `p ∈ (0, 1]`, mapping into `(0, T]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(f64::MIN_POSITIVE, 1.0);
        match self.kind {
            SojournKind::TruncatedWeibull { .. } | SojournKind::TruncatedExponential { .. } => {
                let (scale, shape) = self.weibull_params().expect("Weibull family");
                let mass = 1.0 / self.normalizer;
                let tau = scale * (-(-p * mass).ln_1p()).powf(1.0 / shape);
                tau.clamp(f64::MIN_POSITIVE, self.horizon)
            }
            SojournKind::Uniform => p * self.horizon,
            SojournKind::Dirac { point } => point,
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            SojournKind::TruncatedWeibull { scale, shape } => weibull_truncated_mean(scale, shape, self.horizon),
            SojournKind::TruncatedExponential { rate } => weibull_truncated_mean(1.0 / rate, 1.0, self.horizon),
            SojournKind::Uniform => 0.5 * self.horizon,
            SojournKind::Dirac { point } => point,
        }
    }

    /// Quadrature nodes for `∫₀ᵀ φ(τ) f(τ) dτ` with `panel_nodes` Gauss–Legendre
    /// nodes on every panel.
    ///
    /// Weibull-family laws are integrated in `w = (τ/λ)^k`, where the density
    /// becomes `γ e^{-w}` and the endpoint singularity of `τ^{k-1}` disappears.
    /// Panel edges combine geometric points in `w` (resolving the bulk and the
    /// `w^{1/k}` behaviour near zero) with a uniform grid in `τ` (resolving
    /// growth of `φ` toward the horizon).
    pub fn nodes(&self, panel_nodes: usize) -> Result<Vec<SojournNode>> {
        if let SojournKind::Dirac { point } = self.kind {
            return Ok(vec![SojournNode {
                tau: point,
                weight: 1.0,
            }]);
        }
        let rule = GaussLegendre::new(panel_nodes)?;
        let edges = self.panel_edges();
        let mut out = Vec::with_capacity(edges.len() * panel_nodes);
        match self.weibull_params() {
            Some((scale, shape)) => {
                let inv_shape = 1.0 / shape;
                for pair in edges.windows(2) {
                    let (wa, wb) = ((pair[0] / scale).powf(shape), (pair[1] / scale).powf(shape));
                    for (w, weight) in rule.on_interval(wa, wb) {
                        out.push(SojournNode {
                            tau: scale * w.powf(inv_shape),
                            weight: self.normalizer * weight * (-w).exp(),
                        });
                    }
                }
            }
            None => {
                for pair in edges.windows(2) {
                    for (tau, weight) in rule.on_interval(pair[0], pair[1]) {
                        out.push(SojournNode {
                            tau,
                            weight: weight / self.horizon,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Sorted panel edges in `τ`, from 0 to `T`.
    fn panel_edges(&self) -> Vec<f64> {
        let t = self.horizon;
        let mut edges: Vec<f64> = (0..=UNIFORM_PANELS)
            .map(|i| t * i as f64 / UNIFORM_PANELS as f64)
            .collect();
        if let Some((scale, shape)) = self.weibull_params() {
            edges.extend(
                W_EDGE_POWERS
                    .map(|j| scale * 4f64.powi(j).powf(1.0 / shape))
                    .filter(|&tau| tau > 0.0 && tau < t),
            );
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t);
        edges
    }
}

fn positive(what: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} must be positive and finite, got {x}"
        )))
    }
}

/// Mean of Weibull(λ, k) truncated to `(0, T]`:
/// `λ Γ(1+1/k) P(1+1/k, W) / (1 - e^{-W})` with `W = (T/λ)^k`.
fn weibull_truncated_mean(scale: f64, shape: f64, horizon: f64) -> f64 {
    let w = (horizon / scale).powf(shape);
    let a = 1.0 + 1.0 / shape;
    let mass = -(-w).exp_m1();
    if w < 1e-8 {
        // Nearly flat density ∝ τ^{k-1} on (0, T].
        return shape * horizon / (shape + 1.0);
    }
    scale * gamma(a) * gamma_lr(a, w) / mass
}
