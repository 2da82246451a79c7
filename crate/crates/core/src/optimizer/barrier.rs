//! Log-barrier interior-point core for small smooth convex programs
//! `min f(x) s.t. h_i(x) <= 0`.

use super::SolverOptions;
use crate::error::Result;

/// Objective and constraint values at a point.
#[derive(Debug, Clone)]
pub(crate) struct Values {
    pub f: f64,
    pub h: Vec<f64>,
}

impl Values {
    pub fn max_h(&self) -> f64 {
        self.h.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub values: Values,
    pub df: Vec<f64>,
    pub dh: Vec<Vec<f64>>,
}

pub(crate) trait Program {
    fn dim(&self) -> usize;
    fn values(&self, x: &[f64]) -> Result<Values>;
    fn gradients(&self, x: &[f64]) -> Result<Gradients>;
}

/// `min s` over `(x, s)` subject to `h_i(x) - s <= 0`.
pub(crate) struct Epigraph<'p, P: Program>(pub &'p P);

impl<P: Program> Program for Epigraph<'_, P> {
    fn dim(&self) -> usize {
        self.0.dim() + 1
    }

    fn values(&self, x: &[f64]) -> Result<Values> {
        let (inner, s) = x.split_at(self.0.dim());
        let v = self.0.values(inner)?;
        Ok(Values {
            f: s[0],
            h: v.h.iter().map(|h| h - s[0]).collect(),
        })
    }

    fn gradients(&self, x: &[f64]) -> Result<Gradients> {
        let n = self.0.dim();
        let (inner, s) = x.split_at(n);
        let g = self.0.gradients(inner)?;
        let mut df = vec![0.0; n + 1];
        df[n] = 1.0;
        let dh =
            g.dh.into_iter()
                .map(|mut d| {
                    d.push(-1.0);
                    d
                })
                .collect();
        Ok(Gradients {
            values: Values {
                f: s[0],
                h: g.values.h.iter().map(|h| h - s[0]).collect(),
            },
            df,
            dh,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub x: Vec<f64>,
    /// `max(|∇L| / s, m μ)` at the last barrier parameter, with multipliers
    /// `λ_i = μ / -h_i` and `s = 1 + |∇f| + Σ λ_i |∇h_i|`, or the smaller
    /// residual of nonnegative least-squares multipliers.
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Iteration budget ran out before the schedule finished.
    pub exhausted: bool,
    /// The stop predicate fired.
    pub stopped_early: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;
/// A stage ends after `MAX_STALLS` steps in a row shorter than `STALL_STEP`
/// (relative), or `4 MAX_STALLS` steps without improving stationarity.
const STALL_STEP: f64 = 1e-15;
const MAX_STALLS: usize = 5;
const ROUNDING_SLACK: f64 = 4.0 * f64::EPSILON;
/// Relative step for differencing constraint gradients.
const HESSIAN_STEP: f64 = 1e-4;
/// Constraints with `-h` at most this large enter the least-squares
/// multiplier estimate.
const NEAR_ACTIVE: f64 = 1e-4;
/// Subsets of the near-active set are enumerated only up to this size.
const MAX_NEAR_ACTIVE: usize = 10;

fn barrier_value(v: &Values, mu: f64) -> f64 {
    let mut phi = v.f;
    for &h in &v.h {
        if !(h < 0.0) {
            return f64::INFINITY;
        }
        phi -= mu * (-h).ln();
    }
    if phi.is_nan() {
        f64::INFINITY
    } else {
        phi
    }
}

/// `∇φ_μ = ∇f + Σ μ/(-h_i) ∇h_i`.
fn barrier_gradient(g: &Gradients, mu: f64) -> Vec<f64> {
    let mut out = g.df.clone();
    for (h, dh) in g.values.h.iter().zip(&g.dh) {
        let w = mu / -h;
        for (o, d) in out.iter_mut().zip(dh) {
            *o += w * d;
        }
    }
    out
}

/// Steepest-descent fallback direction, with each constraint gradient
/// clipped to norm `clip` so a single steep constraint cannot dominate.
fn clipped_descent(g: &Gradients, mu: f64, clip: f64) -> Vec<f64> {
    let mut out = g.df.clone();
    for (h, dh) in g.values.h.iter().zip(&g.dh) {
        let nrm = norm(dh);
        let scale = if nrm > clip { clip / nrm } else { 1.0 };
        let w = mu / -h * scale;
        for (o, d) in out.iter_mut().zip(dh) {
            *o += w * d;
        }
    }
    let gn = norm(&out).max(1.0);
    out.iter().map(|a| -a / gn).collect()
}

/// Lagrangian gradient norm relative to the size of the terms it sums.
fn scaled_stationarity(grads: &Gradients, g: &[f64], mu: f64) -> f64 {
    let scale = 1.0
        + norm(&grads.df)
        + grads
            .values
            .h
            .iter()
            .zip(&grads.dh)
            .map(|(h, dh)| mu / -h * norm(dh))
            .sum::<f64>();
    norm(g) / scale
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Second derivatives of the objective and of every constraint by central
/// differences of their gradients, as one `n x n` row-major matrix each.
fn hessians<P: Program>(program: &P, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = x.len();
    let mut hf = vec![0.0; n * n];
    let mut hh: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let step = HESSIAN_STEP * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += step;
        xm[k] -= step;
        let gp = program.gradients(&xp)?;
        let gm = program.gradients(&xm)?;
        if hh.is_empty() {
            hh = vec![vec![0.0; n * n]; gp.dh.len()];
        }
        for i in 0..n {
            hf[i * n + k] = (gp.df[i] - gm.df[i]) / (2.0 * step);
            for (c, hc) in hh.iter_mut().enumerate() {
                hc[i * n + k] = (gp.dh[c][i] - gm.dh[c][i]) / (2.0 * step);
            }
        }
    }
    Ok((hf, hh))
}

/// KKT residual with nonnegative least-squares multipliers on the
/// near-active constraints, `max(|∇L| / s, max_i λ_i |h_i|)`.
///
/// At a degenerate vertex the barrier multipliers `μ / -h_i` settle slowly
/// even when the point itself is optimal; this estimate does not depend on
/// them. `None` when too many constraints are near-active to enumerate.
fn least_squares_kkt(grads: &Gradients) -> Option<f64> {
    let near: Vec<usize> = (0..grads.values.h.len())
        .filter(|&i| -grads.values.h[i] <= NEAR_ACTIVE)
        .collect();
    if near.len() > MAX_NEAR_ACTIVE {
        return None;
    }
    let n = grads.df.len();
    let df_norm = norm(&grads.df);
    let mut best = df_norm / (1.0 + df_norm);
    for mask in 1u32..(1 << near.len()) {
        let set: Vec<usize> = (0..near.len())
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| near[b])
            .collect();
        let j = nalgebra::DMatrix::from_fn(n, set.len(), |r, c| grads.dh[set[c]][r]);
        let rhs = nalgebra::DVector::from_iterator(n, grads.df.iter().map(|a| -a));
        let Ok(lam) = j.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if lam.iter().any(|l| !(*l >= 0.0)) {
            continue;
        }
        let resid = &j * &lam - &rhs;
        let scale = 1.0
            + df_norm
            + set
                .iter()
                .zip(lam.iter())
                .map(|(&i, l)| l * norm(&grads.dh[i]))
                .sum::<f64>();
        let comp = set
            .iter()
            .zip(lam.iter())
            .map(|(&i, l)| l * -grads.values.h[i])
            .fold(0.0, f64::max);
        best = best.min((resid.norm() / scale).max(comp));
    }
    Some(best)
}

/// Newton direction for `φ_μ`, or `None` when the model is unusable.
fn newton_direction<P: Program>(program: &P, x: &[f64], grads: &Gradients, g: &[f64], mu: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let (hf, hh) = hessians(program, x).ok()?;
    let mut h = nalgebra::DMatrix::<f64>::from_row_slice(n, n, &hf);
    for ((hv, dh), hc) in grads.values.h.iter().zip(&grads.dh).zip(&hh) {
        let lam = mu / -hv;
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] += lam * hc[i * n + j] + lam / -hv * dh[i] * dh[j];
            }
        }
    }
    let h = 0.5 * (&h + h.transpose());
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let rhs = nalgebra::DVector::from_iterator(n, g.iter().map(|a| -a));
    // Differenced curvature can be slightly indefinite; shift until it is not.
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..20 {
        let mut hs = h.clone();
        for i in 0..n {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = hs.cholesky() {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
    }
    None
}

/// Runs the barrier schedule from a strictly feasible `x0`.
///
/// Each stage minimizes `φ_μ = f - μ Σ log(-h_i)` by damped Newton steps with
/// Armijo backtracking, falling back to clipped steepest descent when the
/// Newton model fails. Second derivatives of `f` and `h_i` come from
/// differenced gradients; the barrier's own curvature is exact. `stop` is
/// consulted after every accepted step.
pub(crate) fn solve<P: Program>(
    program: &P,
    x0: Vec<f64>,
    opts: &SolverOptions,
    stop: &dyn Fn(&[f64], &Values) -> bool,
) -> Result<BarrierOutcome> {
    let mut x = x0;
    let mut grads = program.gradients(&x)?;
    let m = grads.values.h.len() as f64;
    let mut mu = opts.mu0;
    let mut inner_total = 0;
    let mut outer = 0;
    let mut kkt: f64;
    let mut exhausted = false;

    loop {
        outer += 1;
        let inner_tol = opts.kkt_tol.max(0.1 * mu);
        let mut phi = barrier_value(&grads.values, mu);
        let mut g = barrier_gradient(&grads, mu);
        // after a failed Newton search, try one steepest-descent step
        let mut plain = false;
        let mut stalls = 0;
        let mut best_stat = f64::INFINITY;
        let mut since_best = 0;
        loop {
            if scaled_stationarity(&grads, &g, mu) <= inner_tol {
                break;
            }
            if inner_total >= opts.max_inner {
                exhausted = true;
                break;
            }
            inner_total += 1;
            let newton = if plain {
                None
            } else {
                newton_direction(program, &x, &grads, &g, mu)
            };
            let used_newton = newton.is_some();
            let mut d = newton.unwrap_or_else(|| clipped_descent(&grads, mu, opts.grad_clip));
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                d = g.iter().map(|a| -a).collect();
                slope = -dot(&g, &g);
            }
            let mut t = 1.0;
            let mut accepted = None;
            while t >= MIN_STEP {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let phi_t = match program.values(&trial) {
                    Ok(v) => barrier_value(&v, mu),
                    Err(_) => f64::INFINITY,
                };
                // allow rounding-level increases so steps still move once φ
                // stops resolving the decrease
                if phi_t <= phi + ARMIJO_C1 * t * slope + ROUNDING_SLACK * phi.abs() {
                    accepted = Some((trial, phi_t));
                    break;
                }
                t *= 0.5;
            }
            let Some((x_new, phi_new)) = accepted else {
                if used_newton {
                    plain = true;
                    continue;
                }
                break;
            };
            plain = false;
            let moved = x_new
                .iter()
                .zip(&x)
                .any(|(a, b)| (a - b).abs() > STALL_STEP * (1.0 + b.abs()));
            stalls = if moved { 0 } else { stalls + 1 };
            grads = program.gradients(&x_new)?;
            g = barrier_gradient(&grads, mu);
            x = x_new;
            phi = phi_new;
            let stat = scaled_stationarity(&grads, &g, mu);
            if stat < 0.999 * best_stat {
                best_stat = stat;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if stalls >= MAX_STALLS || since_best >= MAX_STALLS * 4 {
                log::debug!("barrier stage μ = {mu:e} stalled at stationarity {stat:e}");
                break;
            }
            if stop(&x, &grads.values) {
                return Ok(BarrierOutcome {
                    kkt_residual: stat.max(m * mu),
                    x,
                    outer_iterations: outer,
                    inner_iterations: inner_total,
                    exhausted: false,
                    stopped_early: true,
                });
            }
        }
        kkt = scaled_stationarity(&grads, &g, mu).max(m * mu);
        if let Some(ls) = least_squares_kkt(&grads) {
            kkt = kkt.min(ls);
        }
        if exhausted || mu <= opts.mu_min * (1.0 + 1e-12) || outer >= opts.max_outer {
            if outer >= opts.max_outer && mu > opts.mu_min * (1.0 + 1e-12) {
                exhausted = true;
            }
            break;
        }
        mu = (mu * opts.mu_factor).max(opts.mu_min);
    }
    Ok(BarrierOutcome {
        x,
        kkt_residual: kkt,
        outer_iterations: outer,
        inner_iterations: inner_total,
        exhausted,
        stopped_early: false,
    })
}
