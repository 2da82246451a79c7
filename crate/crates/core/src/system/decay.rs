//! Spectral radius of the kernel, the decay rate and log-space gradients.

use serde::{Deserialize, Serialize};

use super::kernel::{KernelAssembler, KernelOptions, KernelPlan};
use super::model::ParametrizedSystem;
use crate::error::{Error, Result};
use crate::numlin::{perron, DenseMatrix, PerronResult};

/// Central-difference step in log-parameters.
const FD_STEP: f64 = 1e-5;
/// Perron vectors with a smaller overlap are not trusted for sensitivities.
const MIN_OVERLAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayOptions {
    /// Width of the final bisection bracket.
    pub tol: f64,
    /// Largest `|g|` the bracket search may reach.
    pub g_cap: f64,
    pub kernel: KernelOptions,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            g_cap: 1e3,
            kernel: KernelOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRateReport {
    /// Midpoint of the final bracket.
    pub gamma: f64,
    /// `ρ(𝒜(θ, 0)) < 1`.
    pub stable: bool,
    pub bisection_iterations: usize,
    /// `ρ < 1` at the lower end and `ρ >= 1` at the upper end.
    pub bracket: (f64, f64),
}

impl DecayRateReport {
    /// Lower end of the bracket: the largest rate certified by `ρ < 1`.
    pub fn certified(&self) -> f64 {
        self.bracket.0
    }
}

/// `log ρ` and its gradient in `(u, v)` at `θ = exp(u)`, `g = exp(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRhoGrad {
    pub value: f64,
    pub du: Vec<f64>,
    pub dv: f64,
}

/// Spectral radius of a plan's kernel; overflow at positive `g` counts as
/// an infinite radius.
fn radius_at(plan: &KernelPlan, g: f64) -> Result<f64> {
    match plan.kernel(g) {
        Ok(k) => Ok(perron(k.matrix())?.radius),
        Err(Error::NonFinite(_)) if g > 0.0 => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Decay rate `γ_θ = sup{g : ρ(𝒜(θ, g)) < 1}` by bisection.
///
/// `ρ(𝒜(θ, g))` is increasing in `g`. When `ρ(𝒜(θ, 0)) >= 1` the search
/// continues on negative `g`, where the kernel still makes sense as an
/// analytic extension; the system is then reported unstable.
pub fn decay_rate(system: &ParametrizedSystem, theta: &[f64], opts: DecayOptions) -> Result<DecayRateReport> {
    let plan = KernelAssembler::new(system, opts.kernel)?.plan(theta)?;
    decay_rate_from_plan(&plan, opts)
}

pub fn decay_rate_from_plan(plan: &KernelPlan, opts: DecayOptions) -> Result<DecayRateReport> {
    if !(opts.tol > 0.0 && opts.g_cap > 0.0) {
        return Err(Error::InvalidArgument(
            "decay tolerance and cap must be positive".into(),
        ));
    }
    let stable = radius_at(plan, 0.0)? < 1.0;
    let (mut lo, mut hi) = if stable { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut iterations = 0;
    if stable {
        while radius_at(plan, hi)? < 1.0 {
            lo = hi;
            hi *= 2.0;
            iterations += 1;
            if hi > opts.g_cap {
                return Err(Error::BracketOverflow {
                    cap: opts.g_cap,
                    detail: format!("ρ(𝒜(θ, g)) < 1 up to g = {lo}"),
                });
            }
        }
    } else {
        while radius_at(plan, lo)? >= 1.0 {
            hi = lo;
            lo *= 2.0;
            iterations += 1;
            if -lo > opts.g_cap {
                return Err(Error::BracketOverflow {
                    cap: opts.g_cap,
                    detail: format!("ρ(𝒜(θ, g)) >= 1 down to g = {hi}"),
                });
            }
        }
    }
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if radius_at(plan, mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(DecayRateReport {
        gamma: 0.5 * (lo + hi),
        stable,
        bisection_iterations: iterations,
        bracket: (lo, hi),
    })
}

/// Mean stability at rate `g > 0`: `ρ(𝒜(θ, g)) < 1`.
pub fn is_mean_stable(system: &ParametrizedSystem, theta: &[f64], g: f64, opts: KernelOptions) -> Result<bool> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {g}")));
    }
    let plan = KernelAssembler::new(system, opts)?.plan(theta)?;
    Ok(radius_at(&plan, g)? < 1.0)
}

/// `log ρ(𝒜(exp u, exp v))`.
pub fn log_rho(system: &ParametrizedSystem, u: &[f64], v: f64, opts: KernelOptions) -> Result<f64> {
    let assembler = KernelAssembler::new(system, opts)?;
    log_rho_with(&assembler, u, v)
}

fn theta_of(u: &[f64]) -> Result<Vec<f64>> {
    if let Some(x) = u.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("log-parameter {x}")));
    }
    Ok(u.iter().map(|x| x.exp()).collect())
}

pub fn log_rho_with(assembler: &KernelAssembler<'_>, u: &[f64], v: f64) -> Result<f64> {
    let plan = assembler.plan(&theta_of(u)?)?;
    Ok(perron(plan.kernel(v.exp())?.matrix())?.radius.ln())
}

/// Value and gradient of [`log_rho`].
///
/// Sensitivities use the Perron vectors, `∂ log ρ = yᵀ(∂𝒜)z / (ρ yᵀz)`, with
/// `∂𝒜` from central differences of the kernel. When the Perron vectors are
/// not usable (split root, tiny overlap) the whole of `log ρ` is differenced
/// instead.
pub fn log_rho_grad(system: &ParametrizedSystem, u: &[f64], v: f64, opts: KernelOptions) -> Result<LogRhoGrad> {
    let assembler = KernelAssembler::new(system, opts)?;
    log_rho_grad_with(&assembler, u, v)
}

pub fn log_rho_grad_with(assembler: &KernelAssembler<'_>, u: &[f64], v: f64) -> Result<LogRhoGrad> {
    let g = v.exp();
    let plan = assembler.plan(&theta_of(u)?)?;
    let (base, rules) = plan.kernel_and_rules(g)?;
    // shifted kernels reuse the base point's rules so refinement never
    // differs across a difference quotient
    let at = |u: &[f64], g: f64| -> Result<DenseMatrix> {
        Ok(assembler
            .plan(&theta_of(u)?)?
            .kernel_with_rules(g, &rules)?
            .into_matrix())
    };
    let pr = perron(base.matrix())?;
    let value = pr.radius.ln();
    if pr.converged && pr.radius > 0.0 && pr.overlap() > MIN_OVERLAP {
        let sens = |plus: &DenseMatrix, minus: &DenseMatrix| perron_sensitivity(&pr, plus, minus);
        let mut du = Vec::with_capacity(u.len());
        for k in 0..u.len() {
            let (plus, minus) = shifted(u, k);
            du.push(sens(&at(&plus, g)?, &at(&minus, g)?));
        }
        let kp = plan.kernel_with_rules((v + FD_STEP).exp(), &rules)?;
        let km = plan.kernel_with_rules((v - FD_STEP).exp(), &rules)?;
        let dv = sens(kp.matrix(), km.matrix());
        return Ok(LogRhoGrad { value, du, dv });
    }
    log::debug!("Perron vectors unusable (overlap {}), differencing log ρ", pr.overlap());
    let log_radius = |m: &DenseMatrix| -> Result<f64> { Ok(perron(m)?.radius.ln()) };
    let mut du = Vec::with_capacity(u.len());
    for k in 0..u.len() {
        let (plus, minus) = shifted(u, k);
        du.push((log_radius(&at(&plus, g)?)? - log_radius(&at(&minus, g)?)?) / (2.0 * FD_STEP));
    }
    let fp = log_radius(plan.kernel_with_rules((v + FD_STEP).exp(), &rules)?.matrix())?;
    let fm = log_radius(plan.kernel_with_rules((v - FD_STEP).exp(), &rules)?.matrix())?;
    Ok(LogRhoGrad {
        value,
        du,
        dv: (fp - fm) / (2.0 * FD_STEP),
    })
}

fn shifted(u: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut plus = u.to_vec();
    let mut minus = u.to_vec();
    plus[k] += FD_STEP;
    minus[k] -= FD_STEP;
    (plus, minus)
}

fn perron_sensitivity(pr: &PerronResult, plus: &DenseMatrix, minus: &DenseMatrix) -> f64 {
    let y = &pr.left_vector;
    let z = &pr.right_vector;
    let mut d = plus.clone();
    d.add_scaled(-1.0, minus);
    let dz = d.mul_vec(z);
    let num: f64 = y.iter().zip(&dz).map(|(a, b)| a * b).sum();
    num / (2.0 * FD_STEP * pr.radius * pr.overlap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::DenseMatrix;
    use crate::posy::{Monomial, PosyOrZero, Posynomial};
    use crate::system::{Constraint, Mode, SemiMarkovChain, SojournDistribution};
    use proptest::prelude::*;

    fn alternating(a: SojournDistribution, b: SojournDistribution) -> SemiMarkovChain {
        let p = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        SemiMarkovChain::per_mode(p, vec![a, b]).unwrap()
    }

    /// Scalar modes `a_k(θ) = -3 + 1/θ_k`.
    fn damped(dist: SojournDistribution) -> ParametrizedSystem {
        let p0: Posynomial = Monomial::single(1.0, 2, 0, -1.0).unwrap().into();
        let p1: Posynomial = Monomial::single(1.0, 2, 1, -1.0).unwrap().into();
        let shift = DenseMatrix::diagonal(&[-3.0]);
        let m0 = Mode::new(shift.clone(), vec![PosyOrZero::from(p0.clone())]).unwrap();
        let m1 = Mode::new(shift, vec![PosyOrZero::from(p1.clone())]).unwrap();
        let cost = p0.add(&p1).unwrap();
        ParametrizedSystem::new(vec![m0, m1], alternating(dist, dist), cost, Vec::<Constraint>::new()).unwrap()
    }

    #[test]
    fn scalar_dirac_decay_rate_closed_form() {
        // Two scalar modes with deterministic sojourn h: the kernel is
        // [[0, e^{(a1+g)h}], [e^{(a0+g)h}, 0]], so ρ = 1 at g = -(a0 + a1)/2.
        let d = SojournDistribution::dirac(0.8, 1.0).unwrap();
        let sys = ParametrizedSystem::fixed(
            vec![DenseMatrix::diagonal(&[-1.0]), DenseMatrix::diagonal(&[-3.0])],
            alternating(d, d),
        )
        .unwrap();
        let r = decay_rate(&sys, &[], DecayOptions::default()).unwrap();
        assert!(r.stable);
        assert!((r.gamma - 2.0).abs() < 1e-10);
        assert!(r.bracket.0 <= 2.0 && 2.0 <= r.bracket.1 + 1e-15);
    }

    #[test]
    fn unstable_system_reports_negative_rate() {
        let d = SojournDistribution::dirac(1.0, 1.0).unwrap();
        let sys = ParametrizedSystem::fixed(
            vec![DenseMatrix::diagonal(&[0.5]), DenseMatrix::diagonal(&[1.5])],
            alternating(d, d),
        )
        .unwrap();
        let r = decay_rate(&sys, &[], DecayOptions::default()).unwrap();
        assert!(!r.stable);
        assert!((r.gamma + 1.0).abs() < 1e-10);
    }

    #[test]
    fn bracket_overflow_is_reported() {
        let d = SojournDistribution::dirac(1.0, 1.0).unwrap();
        let sys = ParametrizedSystem::fixed(vec![DenseMatrix::diagonal(&[-5000.0]); 2], alternating(d, d)).unwrap();
        assert!(matches!(
            decay_rate(&sys, &[], DecayOptions::default()),
            Err(Error::BracketOverflow { .. })
        ));
    }

    #[test]
    fn mean_stability_matches_decay_rate() {
        let d = SojournDistribution::weibull(1.0, 2.0, 5.0).unwrap();
        let sys = damped(d);
        let theta = [0.5, 2.0];
        let r = decay_rate(&sys, &theta, DecayOptions::default()).unwrap();
        let opts = KernelOptions::default();
        assert!(is_mean_stable(&sys, &theta, 0.9 * r.gamma, opts).unwrap());
        assert!(!is_mean_stable(&sys, &theta, 1.1 * r.gamma, opts).unwrap());
        assert!(is_mean_stable(&sys, &theta, 0.0, opts).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = SojournDistribution::weibull(1.3, 1.6, 6.0).unwrap();
        let sys = damped(d);
        let u = [0.2, -0.4];
        let v = 0.3f64;
        let opts = KernelOptions::default();
        let grad = log_rho_grad(&sys, &u, v, opts).unwrap();
        let h = 1e-4;
        for k in 0..2 {
            let mut up = u;
            let mut dn = u;
            up[k] += h;
            dn[k] -= h;
            let fd = (log_rho(&sys, &up, v, opts).unwrap() - log_rho(&sys, &dn, v, opts).unwrap()) / (2.0 * h);
            assert!((grad.du[k] - fd).abs() < 1e-6, "k={k}: {} vs {fd}", grad.du[k]);
        }
        let fd = (log_rho(&sys, &u, v + h, opts).unwrap() - log_rho(&sys, &u, v - h, opts).unwrap()) / (2.0 * h);
        assert!((grad.dv - fd).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn radius_increases_in_g(g1 in 0.01f64..2.0, dg in 0.01f64..1.0, t0 in 0.2f64..4.0, t1 in 0.2f64..4.0) {
            let d = SojournDistribution::weibull(1.0, 1.5, 4.0).unwrap();
            let sys = damped(d);
            let plan = KernelAssembler::new(&sys, KernelOptions::default()).unwrap().plan(&[t0, t1]).unwrap();
            let r1 = radius_at(&plan, g1).unwrap();
            let r2 = radius_at(&plan, g1 + dg).unwrap();
            prop_assert!(r2 > r1);
        }

        #[test]
        fn decay_report_is_consistent(t0 in 0.2f64..4.0, t1 in 0.2f64..4.0) {
            let d = SojournDistribution::exponential(1.0, 8.0).unwrap();
            let sys = damped(d);
            let opts = DecayOptions::default();
            let r = decay_rate(&sys, &[t0, t1], opts).unwrap();
            prop_assert!(r.bracket.1 - r.bracket.0 <= opts.tol);
            let plan = KernelAssembler::new(&sys, opts.kernel).unwrap().plan(&[t0, t1]).unwrap();
            if r.stable {
                prop_assert!(r.gamma > 0.0);
                for frac in [0.1, 0.5, 0.9, 0.999] {
                    prop_assert!(radius_at(&plan, frac * r.bracket.0).unwrap() < 1.0);
                }
            }
            prop_assert!(radius_at(&plan, r.bracket.1).unwrap() >= 1.0);
        }
    }
}
