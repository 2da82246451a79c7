//! Decay-rate maximization under a budget and cost minimization under a rate
//! target, both as convex programs in `u = log θ` and `v = log g`.
//!
//! The stability requirement `ρ(𝒜(θ, g)) < 1` becomes the convex constraint
//! `log ρ(𝒜(exp u, exp v)) <= 0`; posynomial costs and constraints become
//! log-sum-exp constraints. Both programs are solved by a log-barrier method
//! started from a Phase-I interior point.

mod barrier;
mod certificate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posy::Posynomial;
use crate::system::{
    decay_rate, log_rho_grad_with, log_rho_with, Constraint, DecayOptions, KernelAssembler, ParametrizedSystem,
};
use barrier::{Epigraph, Gradients, Program, Values};

pub use certificate::{certify_budget, certify_performance, sample_feasible, Certificate};

/// Interior points must clear every constraint by this margin.
const STRICT_MARGIN: f64 = 1e-8;
/// Phase I stops once the deepest constraint is this far inside.
const PHASE_ONE_DEPTH: f64 = 0.1;
/// `log g` at which Phase I tests stability when the start is unstable.
const PHASE_ONE_LOG_RATE: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Bound on the scaled KKT residual for an `Optimal` status.
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub mu0: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    /// Constraint gradients longer than this are rescaled to this length in
    /// steepest-descent fallback steps.
    pub grad_clip: f64,
    pub decay: DecayOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            feas_tol: 1e-8,
            max_outer: 500,
            max_inner: 5000,
            mu0: 1.0,
            mu_factor: 0.1,
            mu_min: 1e-8,
            grad_clip: 1e3,
            decay: DecayOptions::default(),
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.kkt_tol > 0.0
            && self.feas_tol >= 0.0
            && self.max_outer > 0
            && self.mu0 > 0.0
            && self.mu_factor > 0.0
            && self.mu_factor < 1.0
            && self.mu_min > 0.0
            && self.mu_min <= self.mu0
            && self.grad_clip > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetProblem {
    pub system: ParametrizedSystem,
    pub budget: f64,
}

impl BudgetProblem {
    pub fn new(system: ParametrizedSystem, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
        }
        Ok(Self { system, budget })
    }

    /// System constraints together with `C(θ) <= budget`.
    fn constraints(&self) -> Result<Vec<Constraint>> {
        let mut all = vec![Constraint::new(self.system.cost().clone(), self.budget)?];
        all.extend(self.system.constraints().iter().cloned());
        Ok(all)
    }
}

/// Right-hand side used for the stability constraint at the pinned rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityBound {
    /// `log ρ(𝒜(θ, γ̄)) <= 0`, which certifies `γ_θ >= γ̄`.
    #[default]
    Certified,
    /// `log ρ(𝒜(θ, γ̄)) <= -log γ̄`. Stricter than needed when `γ̄ > 1` and
    /// not a certificate when `γ̄ < 1`.
    ReciprocalTarget,
}

#[derive(Debug, Clone)]
pub struct PerformanceProblem {
    pub system: ParametrizedSystem,
    pub target_rate: f64,
    pub bound: StabilityBound,
}

impl PerformanceProblem {
    pub fn new(system: ParametrizedSystem, target_rate: f64) -> Result<Self> {
        if !(target_rate > 0.0 && target_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "target rate must be positive, got {target_rate}"
            )));
        }
        Ok(Self {
            system,
            target_rate,
            bound: StabilityBound::Certified,
        })
    }

    pub fn with_bound(mut self, bound: StabilityBound) -> Self {
        self.bound = bound;
        self
    }

    fn rhs(&self) -> f64 {
        match self.bound {
            StabilityBound::Certified => 0.0,
            StabilityBound::ReciprocalTarget => -self.target_rate.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintActivity {
    pub label: String,
    /// `-h` in log space; zero means active.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub status: SolveStatus,
    pub u_star: Vec<f64>,
    pub v_star: f64,
    pub theta_star: Vec<f64>,
    /// Bisection midpoint of the decay rate at `theta_star`.
    pub achieved_rate: f64,
    /// Lower end of the bisection bracket at `theta_star`.
    pub certified_rate: f64,
    pub achieved_cost: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub kkt_residual: f64,
    pub constraint_activity: Vec<ConstraintActivity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOneResult {
    /// Best log-parameter point found.
    pub u: Vec<f64>,
    /// Largest constraint value `h_i(u)` at that point.
    pub max_violation: f64,
    pub feasible: bool,
    /// `max_violation < -1e-8`.
    pub strictly_feasible: bool,
}

/// Lower/upper bounds on each `u_k` implied by single-variable monomial
/// constraints.
pub fn log_box(constraints: &[Constraint], dim: usize) -> Vec<(f64, f64)> {
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); dim];
    for c in constraints {
        let [term] = c.posy.terms() else { continue };
        let mut nonzero = term.exponents().iter().enumerate().filter(|(_, a)| **a != 0.0);
        let (Some((k, &a)), None) = (nonzero.next(), nonzero.next()) else {
            continue;
        };
        let limit = (c.bound / term.coeff()).ln() / a;
        if a > 0.0 {
            bounds[k].1 = bounds[k].1.min(limit);
        } else {
            bounds[k].0 = bounds[k].0.max(limit);
        }
    }
    bounds
}

/// Depth Phase I aims for: [`PHASE_ONE_DEPTH`], capped at half the depth of
/// the log-box centre so a narrow box can still stop early.
fn phase_one_depth(bounds: &[(f64, f64)]) -> f64 {
    bounds
        .iter()
        .filter(|(lo, hi)| lo.is_finite() && hi.is_finite() && hi >= lo)
        .map(|(lo, hi)| 0.25 * (hi - lo))
        .fold(PHASE_ONE_DEPTH, f64::min)
}

/// Geometric centre of the log-box; one unit inside a one-sided bound; 0 when
/// unbounded.
pub fn box_center(bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct RhoConstraint {
    /// `Some(v)` pins the rate; `None` makes `v` the last decision variable.
    pinned_v: Option<f64>,
    rhs: f64,
}

enum Objective {
    NegV,
    LogPosy(Posynomial),
    Zero,
}

/// A program over `x = (u, [v])` built from a system.
struct GpProgram<'a> {
    assembler: Option<KernelAssembler<'a>>,
    rho: Option<RhoConstraint>,
    objective: Objective,
    constraints: Vec<Constraint>,
    n_u: usize,
}

impl GpProgram<'_> {
    fn has_free_v(&self) -> bool {
        matches!(self.rho, Some(RhoConstraint { pinned_v: None, .. }))
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], Option<f64>) {
        let (u, rest) = x.split_at(self.n_u);
        (u, rest.first().copied())
    }

    fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rho.is_some() {
            out.push("stability".to_string());
        }
        out.extend((0..self.constraints.len()).map(|i| format!("constraint[{i}]")));
        out
    }
}

impl Program for GpProgram<'_> {
    fn dim(&self) -> usize {
        self.n_u + usize::from(self.has_free_v())
    }

    fn values(&self, x: &[f64]) -> Result<Values> {
        let (u, v) = self.split(x);
        let mut h = Vec::with_capacity(self.constraints.len() + 1);
        if let (Some(rc), Some(asm)) = (self.rho, &self.assembler) {
            let v = rc.pinned_v.or(v).expect("free rate variable");
            h.push(log_rho_with(asm, u, v)? - rc.rhs);
        }
        for c in &self.constraints {
            h.push(c.log_slack(u)?);
        }
        let f = match &self.objective {
            Objective::NegV => -v.expect("free rate variable"),
            Objective::LogPosy(p) => p.log_eval(u)?,
            Objective::Zero => 0.0,
        };
        Ok(Values { f, h })
    }

    fn gradients(&self, x: &[f64]) -> Result<Gradients> {
        let (u, v) = self.split(x);
        let n = self.dim();
        let free_v = self.has_free_v();
        let mut h = Vec::new();
        let mut dh = Vec::new();
        if let (Some(rc), Some(asm)) = (self.rho, &self.assembler) {
            let vv = rc.pinned_v.or(v).expect("free rate variable");
            let g = log_rho_grad_with(asm, u, vv)?;
            h.push(g.value - rc.rhs);
            let mut d = g.du;
            if free_v {
                d.push(g.dv);
            }
            dh.push(d);
        }
        for c in &self.constraints {
            h.push(c.log_slack(u)?);
            let mut d = c.posy.log_eval_grad(u)?;
            d.resize(n, 0.0);
            dh.push(d);
        }
        let (f, df) = match &self.objective {
            Objective::NegV => {
                let mut df = vec![0.0; n];
                df[n - 1] = -1.0;
                (-v.expect("free rate variable"), df)
            }
            Objective::LogPosy(p) => {
                let mut df = p.log_eval_grad(u)?;
                df.resize(n, 0.0);
                (p.log_eval(u)?, df)
            }
            Objective::Zero => (0.0, vec![0.0; n]),
        };
        Ok(Gradients {
            values: Values { f, h },
            df,
            dh,
        })
    }
}

/// Phase I on a program: drives `max h_i` below zero from `x0` by a barrier
/// method on the epigraph form `min s s.t. h_i(x) <= s`.
fn phase_one_program<P: Program>(
    program: &P,
    x0: Vec<f64>,
    depth: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64)> {
    let v0 = program.values(&x0)?;
    let m0 = v0.max_h();
    if m0 < -depth || v0.h.is_empty() {
        return Ok((x0, m0));
    }
    let mut start = x0.clone();
    start.push(m0 + 1.0);
    let epi = Epigraph(program);
    let best = std::cell::RefCell::new((x0, m0));
    let stop = |x: &[f64], v: &Values| {
        let s = x[x.len() - 1];
        let mh = v.max_h() + s;
        let mut b = best.borrow_mut();
        if mh < b.1 {
            *b = (x[..x.len() - 1].to_vec(), mh);
        }
        mh < -depth
    };
    let out = barrier::solve(&epi, start, opts, &stop)?;
    log::debug!(
        "phase one: {} inner steps, early stop {}",
        out.inner_iterations,
        out.stopped_early
    );
    let n = out.x.len() - 1;
    let last = program.values(&out.x[..n])?.max_h();
    let mut b = best.into_inner();
    if last < b.1 {
        b = (out.x[..n].to_vec(), last);
    }
    Ok(b)
}

fn phase_one_verdict(u: Vec<f64>, max_violation: f64, feas_tol: f64) -> PhaseOneResult {
    PhaseOneResult {
        feasible: max_violation <= feas_tol,
        strictly_feasible: max_violation < -STRICT_MARGIN,
        u,
        max_violation,
    }
}

/// Finds a point of `log Θ` satisfying the system constraints and `extra`,
/// starting from the centre of the log-box.
pub fn phase_one(system: &ParametrizedSystem, extra: &[Constraint], opts: &SolverOptions) -> Result<PhaseOneResult> {
    opts.validate()?;
    let mut constraints = system.constraints().to_vec();
    constraints.extend(extra.iter().cloned());
    let l = system.param_dim();
    let bounds = log_box(&constraints, l);
    let x0 = box_center(&bounds);
    if bounds.iter().any(|(lo, hi)| lo > hi) {
        let m = GpProgram {
            assembler: None,
            rho: None,
            objective: Objective::Zero,
            constraints,
            n_u: l,
        }
        .values(&x0)?
        .max_h();
        return Ok(phase_one_verdict(
            x0,
            m.max(STRICT_MARGIN.max(opts.feas_tol) * 2.0),
            opts.feas_tol,
        ));
    }
    let program = GpProgram {
        assembler: None,
        rho: None,
        objective: Objective::Zero,
        constraints,
        n_u: l,
    };
    let (u, m) = phase_one_program(&program, x0, phase_one_depth(&bounds), opts)?;
    Ok(phase_one_verdict(u, m, opts.feas_tol))
}

fn infeasible_result(u: Vec<f64>, v: f64, max_violation: f64, labels: Vec<String>) -> OptimizationResult {
    OptimizationResult {
        status: SolveStatus::Infeasible,
        theta_star: u.iter().map(|x| x.exp()).collect(),
        u_star: u,
        v_star: v,
        achieved_rate: f64::NAN,
        certified_rate: f64::NAN,
        achieved_cost: f64::NAN,
        iterations: 0,
        outer_iterations: 0,
        kkt_residual: f64::NAN,
        constraint_activity: labels
            .into_iter()
            .map(|label| ConstraintActivity {
                label,
                slack: -max_violation,
            })
            .collect(),
    }
}

fn finish(
    system: &ParametrizedSystem,
    program: &GpProgram<'_>,
    x: Vec<f64>,
    outcome: Option<&barrier::BarrierOutcome>,
    opts: &SolverOptions,
) -> Result<OptimizationResult> {
    let (u, v) = program.split(&x);
    let u = u.to_vec();
    let v = v.or(program.rho.and_then(|r| r.pinned_v)).unwrap_or(f64::NAN);
    let theta: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let report = decay_rate(system, &theta, opts.decay)?;
    let values = program.values(&x)?;
    let activity = program
        .labels()
        .into_iter()
        .zip(&values.h)
        .map(|(label, h)| ConstraintActivity { label, slack: -h })
        .collect();
    let (kkt, inner, outer, exhausted) = match outcome {
        Some(o) => (o.kkt_residual, o.inner_iterations, o.outer_iterations, o.exhausted),
        None => (0.0, 0, 0, false),
    };
    let status = if kkt < opts.kkt_tol {
        SolveStatus::Optimal
    } else if exhausted {
        SolveStatus::MaxIter
    } else {
        // schedule finished without meeting the KKT tolerance
        SolveStatus::MaxIter
    };
    Ok(OptimizationResult {
        status,
        achieved_cost: system.cost_at(&theta)?,
        theta_star: theta,
        u_star: u,
        v_star: v,
        achieved_rate: report.gamma,
        certified_rate: report.certified(),
        iterations: inner,
        outer_iterations: outer,
        kkt_residual: kkt,
        constraint_activity: activity,
    })
}

/// Maximizes the decay rate subject to `C(θ) <= budget` and the system
/// constraints.
pub fn solve_budget(problem: &BudgetProblem, opts: &SolverOptions) -> Result<OptimizationResult> {
    opts.validate()?;
    let system = &problem.system;
    let constraints = problem.constraints()?;
    let l = system.param_dim();
    let assembler = KernelAssembler::new(system, opts.decay.kernel)?;

    let start = phase_one(system, &constraints[..1], opts)?;
    let labels = {
        let mut v = vec!["stability".to_string()];
        v.extend((0..constraints.len()).map(|i| format!("constraint[{i}]")));
        v
    };
    if !start.feasible {
        return Ok(infeasible_result(start.u, f64::NAN, start.max_violation, labels));
    }

    let program = GpProgram {
        assembler: Some(assembler),
        rho: Some(RhoConstraint {
            pinned_v: None,
            rhs: 0.0,
        }),
        objective: Objective::NegV,
        constraints,
        n_u: l,
    };

    if !start.strictly_feasible {
        // The feasible set has no usable interior: report the boundary point.
        log::warn!(
            "budget problem feasible set is degenerate (max violation {})",
            start.max_violation
        );
        let theta: Vec<f64> = start.u.iter().map(|x| x.exp()).collect();
        let r = decay_rate(system, &theta, opts.decay)?;
        // An unstable boundary point is still the only candidate; its
        // stability row is then evaluated at g = e^v ≈ 0.
        let v = if r.certified() > 0.0 {
            r.certified().ln()
        } else {
            f64::MIN_POSITIVE.ln()
        };
        let mut x = start.u.clone();
        x.push(v);
        return finish(system, &program, x, None, opts);
    }

    let theta0: Vec<f64> = start.u.iter().map(|x| x.exp()).collect();
    let r0 = decay_rate(system, &theta0, opts.decay)?;
    let mut x0 = start.u.clone();
    if r0.certified() > 0.0 {
        x0.push(r0.certified().ln() - 0.1);
    } else {
        // Unstable at the box centre. Phase I looks for a stable point with
        // the rate pinned near zero, where `log ρ` is far better conditioned
        // than at the rates the optimum will reach.
        let stable = GpProgram {
            assembler: Some(KernelAssembler::new(system, opts.decay.kernel)?),
            rho: Some(RhoConstraint {
                pinned_v: Some(PHASE_ONE_LOG_RATE),
                rhs: 0.0,
            }),
            objective: Objective::Zero,
            constraints: program.constraints.clone(),
            n_u: l,
        };
        let (u, m) = phase_one_program(&stable, x0, phase_one_depth(&log_box(&stable.constraints, l)), opts)?;
        let theta: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        let r = decay_rate(system, &theta, opts.decay)?;
        if !(m < -STRICT_MARGIN) || r.certified() <= 0.0 {
            return Ok(infeasible_result(u, f64::NAN, m, program.labels()));
        }
        x0 = u;
        x0.push(r.certified().ln() - 0.1);
    }

    let outcome = barrier::solve(&program, x0, opts, &|_, _| false)?;
    finish(system, &program, outcome.x.clone(), Some(&outcome), opts)
}

/// Minimizes `C(θ)` subject to `γ_θ >= target_rate` and the system
/// constraints. The rate variable is pinned at `log target_rate`.
pub fn solve_performance(problem: &PerformanceProblem, opts: &SolverOptions) -> Result<OptimizationResult> {
    opts.validate()?;
    let system = &problem.system;
    let l = system.param_dim();
    let v = problem.target_rate.ln();
    let program = GpProgram {
        assembler: Some(KernelAssembler::new(system, opts.decay.kernel)?),
        rho: Some(RhoConstraint {
            pinned_v: Some(v),
            rhs: problem.rhs(),
        }),
        objective: Objective::LogPosy(system.cost().clone()),
        constraints: system.constraints().to_vec(),
        n_u: l,
    };
    let box_start = phase_one(system, &[], opts)?;
    if !box_start.feasible {
        return Ok(infeasible_result(
            box_start.u,
            v,
            box_start.max_violation,
            program.labels(),
        ));
    }
    let depth = phase_one_depth(&log_box(system.constraints(), l));
    let (u0, m) = phase_one_program(&program, box_start.u, depth, opts)?;
    if m > opts.feas_tol {
        return Ok(infeasible_result(u0, v, m, program.labels()));
    }
    if !(m < -STRICT_MARGIN) {
        log::warn!("performance problem feasible set is degenerate (max violation {m})");
        return finish(system, &program, u0, None, opts);
    }
    let outcome = barrier::solve(&program, u0, opts, &|_, _| false)?;
    finish(system, &program, outcome.x.clone(), Some(&outcome), opts)
}
