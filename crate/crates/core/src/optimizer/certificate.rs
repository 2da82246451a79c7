//! Sampling certificates: random feasible parameters must not beat a
//! reported optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_box, BudgetProblem, OptimizationResult, PerformanceProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::system::{decay_rate, Constraint, ParametrizedSystem};

/// Rejection sampling gives up after this many draws per requested sample.
const MAX_DRAWS_PER_SAMPLE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub samples: usize,
    /// Best sampled value: largest rate (budget) or smallest cost among
    /// points meeting the target (performance).
    pub best_sampled: f64,
    pub best_theta: Option<Vec<f64>>,
    /// Value reported by the solver.
    pub reported: f64,
    /// Amount by which the best sample beats the reported value.
    pub excess: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Draws `n` points uniformly from the parameter box (in `θ`), keeping those
/// that satisfy the system constraints and `extra`.
pub fn sample_feasible(
    system: &ParametrizedSystem,
    extra: &[Constraint],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut constraints = system.constraints().to_vec();
    constraints.extend(extra.iter().cloned());
    let bounds = log_box(&constraints, system.param_dim());
    if bounds
        .iter()
        .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi)
    {
        return Err(Error::InvalidArgument(
            "sampling needs finite box bounds on every parameter".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        draws += 1;
        if draws > MAX_DRAWS_PER_SAMPLE * n.max(1) {
            return Err(Error::InvalidArgument(format!(
                "only {} of {n} feasible samples after {draws} draws",
                out.len()
            )));
        }
        let theta: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let (a, b) = (lo.exp(), hi.exp());
                a + (b - a) * rng.random::<f64>()
            })
            .collect();
        if theta.iter().any(|&t| t <= 0.0) {
            continue;
        }
        let ok = constraints
            .iter()
            .map(|c| Ok(c.posy.eval(&theta)? <= c.bound))
            .collect::<Result<Vec<bool>>>()?;
        if ok.into_iter().all(|b| b) {
            out.push(theta);
        }
    }
    Ok(out)
}

/// No sampled feasible `θ` may exceed the reported rate by more than `tol`.
pub fn certify_budget(
    problem: &BudgetProblem,
    result: &OptimizationResult,
    samples: usize,
    seed: u64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<Certificate> {
    let budget = Constraint::new(problem.system.cost().clone(), problem.budget)?;
    let points = sample_feasible(&problem.system, &[budget], samples, seed)?;
    let rates = points
        .par_iter()
        .map(|t| Ok(decay_rate(&problem.system, t, opts.decay)?.gamma))
        .collect::<Result<Vec<f64>>>()?;
    let (best_idx, best) =
        rates.iter().copied().enumerate().fold(
            (None, f64::NEG_INFINITY),
            |acc, (i, r)| if r > acc.1 { (Some(i), r) } else { acc },
        );
    let excess = best - result.achieved_rate;
    Ok(Certificate {
        samples: points.len(),
        best_sampled: best,
        best_theta: best_idx.map(|i| points[i].clone()),
        reported: result.achieved_rate,
        excess,
        tolerance: tol,
        passed: excess <= tol,
    })
}

/// No sampled feasible `θ` meeting the target rate may cost less than the
/// reported cost minus `tol`.
pub fn certify_performance(
    problem: &PerformanceProblem,
    result: &OptimizationResult,
    samples: usize,
    seed: u64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<Certificate> {
    let points = sample_feasible(&problem.system, &[], samples, seed)?;
    let scored = points
        .par_iter()
        .map(|t| {
            let rate = decay_rate(&problem.system, t, opts.decay)?.gamma;
            Ok((rate, problem.system.cost_at(t)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut best = f64::INFINITY;
    let mut best_idx = None;
    for (i, &(rate, cost)) in scored.iter().enumerate() {
        if rate >= problem.target_rate && cost < best {
            best = cost;
            best_idx = Some(i);
        }
    }
    let excess = result.achieved_cost - best;
    Ok(Certificate {
        samples: points.len(),
        best_sampled: best,
        best_theta: best_idx.map(|i| points[i].clone()),
        reported: result.achieved_cost,
        excess,
        tolerance: tol,
        passed: !(excess > tol),
    })
}
