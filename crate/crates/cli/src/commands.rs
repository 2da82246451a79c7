//! The four subcommands. Each returns an [`Outcome`] holding printable
//! lines and JSON results; main turns it into stdout, files and a report.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use smjls::bethedging::{sweep_fig4, sweep_fig5, ScaleConvention, SweepResult};
use smjls::montecarlo::{estimate_decay, simulate_seeded, EstimateOptions, TrajectorySample};
use smjls::optimizer::{
    certify_budget, certify_performance, phase_one, solve_budget, solve_performance, BudgetProblem, OptimizationResult,
    PerformanceProblem, SolveStatus, StabilityBound,
};
use smjls::system::{decay_rate, Constraint, ParametrizedSystem};

use crate::config::LoadedConfig;
use crate::error::CliError;

/// Tolerance of optimality certificates, on the rate or on the cost.
const CERTIFICATE_TOL: f64 = 1e-4;
/// Slack below which a constraint is reported as active.
const ACTIVE_SLACK: f64 = 1e-6;
/// Smallest ensemble for which a rate is estimated.
const MIN_ESTIMATE_SAMPLES: usize = 100;

#[derive(Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub results: Value,
    pub diagnostics: Value,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    /// Set when the command produced results but must still exit nonzero.
    pub failure: Option<CliError>,
    /// CSV text destined for stdout instead of a file.
    pub stdout_csv: Option<String>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn resolve_theta(cfg: &LoadedConfig, system: &ParametrizedSystem, flag: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    let theta = match (flag, &cfg.file.theta) {
        (Some(t), _) => t.to_vec(),
        (None, Some(t)) => t.get_ref().clone(),
        (None, None) if system.param_dim() == 0 => Vec::new(),
        (None, None) => {
            return Err(CliError::Config(format!(
                "{}: no parameter point; pass --theta or set `theta` in the config",
                cfg.path.display()
            )))
        }
    };
    system
        .check_params(&theta)
        .map_err(|e| CliError::Config(format!("--theta: {e}")))?;
    Ok(theta)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecayArgs {
    /// Config file (TOML).
    pub config: PathBuf,
    /// Parameter point, comma separated; overrides `theta` in the config.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Width of the final bisection bracket.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn decay_rate_cmd(cfg: &LoadedConfig, args: &DecayArgs) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let theta = resolve_theta(cfg, &system, args.theta.as_deref())?;
    let mut opts = cfg.solver().decay;
    if let Some(tol) = args.tol {
        if !(tol > 0.0) {
            return Err(CliError::Config(format!("--tol must be positive, got {tol}")));
        }
        opts.tol = tol;
    }
    let report = decay_rate(&system, &theta, opts)?;
    let mut lines = vec![format!("gamma={:.6}", report.gamma)];
    if report.stable {
        lines.push("verdict=stable".into());
    } else {
        lines.push("verdict=unstable".into());
        lines.push(format!(
            "note: gamma={:.6} is the analytic extension of the decay rate; E|x(t)| grows like exp({:.6} t)",
            report.gamma, -report.gamma
        ));
    }
    lines.push(format!("certified_gamma={:.10}", report.certified()));
    Ok(Outcome {
        lines,
        results: json!({
            "theta": theta,
            "gamma": report.gamma,
            "certified_gamma": report.certified(),
            "stable": report.stable,
            "verdict": if report.stable { "stable" } else { "unstable" },
            "analytic_extension": !report.stable,
        }),
        diagnostics: json!({
            "bracket": [report.bracket.0, report.bracket.1],
            "bisection_iterations": report.bisection_iterations,
            "decay_options": opts,
        }),
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    /// Maximize the decay rate under a cost budget.
    Budget,
    /// Minimize the cost subject to a decay-rate target.
    Performance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundArg {
    /// `log ρ(𝒜(θ, γ̄)) <= 0`.
    Certified,
    /// `log ρ(𝒜(θ, γ̄)) <= -log γ̄`.
    ReciprocalTarget,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimizeArgs {
    /// Config file (TOML).
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "budget")]
    pub mode: OptimizeMode,
    /// Cost bound. For a bet-hedging config this is the dose budget.
    #[arg(long, allow_hyphen_values = true)]
    pub budget: Option<f64>,
    /// Decay-rate target for `--mode performance`.
    #[arg(long)]
    pub target_rate: Option<f64>,
    /// Right-hand side of the stability constraint in performance mode.
    #[arg(long, value_enum, default_value = "certified")]
    pub stability_bound: BoundArg,
    /// Check the optimum against this many random feasible points.
    #[arg(long, default_value_t = 0)]
    pub certify: usize,
    /// Seed of the certificate sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIter => "max_iter",
    }
}

pub fn optimize_cmd(cfg: &LoadedConfig, args: &OptimizeArgs) -> Result<Outcome, CliError> {
    let opts = cfg.solver();
    let bh = cfg.bet_hedging();
    let mut out = Outcome {
        seed: (args.certify > 0).then_some(args.seed),
        ..Outcome::default()
    };
    let mut extra = json!({});

    let (result, system, certificate) = match args.mode {
        OptimizeMode::Budget => {
            let problem = match bh {
                Some(p) => {
                    let p = p.with_budget(args.budget.unwrap_or(p.budget));
                    if p.budget < 0.0 {
                        return infeasible_budget(out, p.budget, "dose budgets must be nonnegative");
                    }
                    extra["dose_budget"] = json!(p.budget);
                    extra["transformed_budget"] = json!(p.transformed_budget());
                    p.budget_problem()
                        .map_err(|e| CliError::Config(format!("--budget: {e}")))?
                }
                None => {
                    let b = args.budget.or(cfg.file.budget).ok_or_else(|| {
                        CliError::Config("budget mode needs --budget or `budget` in the config".into())
                    })?;
                    if !(b > 0.0) {
                        return infeasible_budget(out, b, "the cost posynomial is positive everywhere");
                    }
                    BudgetProblem::new(cfg.system()?, b).map_err(|e| CliError::Config(format!("--budget: {e}")))?
                }
            };
            extra["budget"] = json!(problem.budget);
            let result = solve_budget(&problem, &opts)?;
            if result.status == SolveStatus::Infeasible {
                let budget = Constraint::new(problem.system.cost().clone(), problem.budget)?;
                let p1 = phase_one(&problem.system, &[budget], &opts)?;
                out.diagnostics = json!({ "phase_one": p1 });
            }
            let cert = (args.certify > 0 && result.status == SolveStatus::Optimal)
                .then(|| certify_budget(&problem, &result, args.certify, args.seed, CERTIFICATE_TOL, &opts))
                .transpose()?;
            (result, problem.system, cert)
        }
        OptimizeMode::Performance => {
            let target = args.target_rate.or(cfg.file.target_rate).ok_or_else(|| {
                CliError::Config("performance mode needs --target-rate or `target_rate` in the config".into())
            })?;
            let bound = match args.stability_bound {
                BoundArg::Certified => StabilityBound::Certified,
                BoundArg::ReciprocalTarget => StabilityBound::ReciprocalTarget,
            };
            let problem = PerformanceProblem::new(cfg.system()?, target)
                .map_err(|e| CliError::Config(format!("--target-rate: {e}")))?
                .with_bound(bound);
            extra["target_rate"] = json!(target);
            let result = solve_performance(&problem, &opts)?;
            if result.status == SolveStatus::Infeasible {
                let p1 = phase_one(&problem.system, &[], &opts)?;
                out.diagnostics = json!({ "phase_one": p1 });
            }
            let cert = (args.certify > 0 && result.status == SolveStatus::Optimal)
                .then(|| certify_performance(&problem, &result, args.certify, args.seed, CERTIFICATE_TOL, &opts))
                .transpose()?;
            (result, problem.system, cert)
        }
    };

    let lines = &mut out.lines;
    lines.push(format!("status={}", status_name(result.status)));
    if result.status == SolveStatus::Infeasible {
        lines.push(format!("least_violating_theta={}", fmt_vec(&result.theta_star)));
    } else {
        lines.push(format!("theta_star={}", fmt_vec(&result.theta_star)));
        if let Some(p) = bh {
            let doses: Vec<f64> = result
                .theta_star
                .iter()
                .zip(p.theta_min())
                .map(|(t, lo)| t - lo)
                .collect();
            let offset_cost: f64 = p.antibiotics.iter().map(|a| a.unit_cost * a.offset).sum();
            lines.push(format!("doses={}", fmt_vec(&doses)));
            lines.push(format!("dose_cost={:.6}", result.achieved_cost - offset_cost));
            extra["doses"] = json!(doses);
            extra["dose_cost"] = json!(result.achieved_cost - offset_cost);
        }
        lines.push(format!("gamma_star={:.6}", result.achieved_rate));
        lines.push(format!("certified_gamma={:.10}", result.certified_rate));
        lines.push(format!("cost={:.6}", result.achieved_cost));
        if result.achieved_rate <= 0.0 {
            lines.push(
                "note: no feasible parameter point stabilizes the system; gamma_star is the best analytic extension"
                    .into(),
            );
        }
    }
    for c in &result.constraint_activity {
        let state = if c.slack < -ACTIVE_SLACK {
            "violated"
        } else if c.slack <= ACTIVE_SLACK {
            "active"
        } else {
            "inactive"
        };
        lines.push(format!("constraint {}: {state} (slack {:.3e})", c.label, c.slack));
    }
    if let Some(cert) = &certificate {
        lines.push(format!(
            "certificate: {} ({} samples, best sampled {:.6}, excess {:.3e}, tolerance {:.0e})",
            if cert.passed { "passed" } else { "FAILED" },
            cert.samples,
            cert.best_sampled,
            cert.excess,
            cert.tolerance
        ));
    }

    out.failure = match result.status {
        SolveStatus::Optimal => certificate.as_ref().filter(|c| !c.passed).map(|c| {
            CliError::Numerical(format!(
                "certificate failed: a sampled point beats the reported optimum by {:.3e}",
                c.excess
            ))
        }),
        SolveStatus::Infeasible => Some(CliError::Infeasible(
            "no strictly feasible parameter point; see phase_one diagnostics".into(),
        )),
        SolveStatus::MaxIter => Some(CliError::Numerical(format!(
            "iteration limit reached with KKT residual {:.3e}",
            result.kkt_residual
        ))),
    };
    if out.diagnostics.is_null() {
        out.diagnostics = json!({});
    }
    out.diagnostics["kkt_residual"] = json!(result.kkt_residual);
    out.diagnostics["iterations"] = json!(result.iterations);
    out.diagnostics["outer_iterations"] = json!(result.outer_iterations);
    out.diagnostics["solver_options"] = json!(opts);
    out.diagnostics["param_dim"] = json!(system.param_dim());
    out.results = json!({
        "mode": args.mode,
        "status": status_name(result.status),
        "optimization": result_json(&result),
        "certificate": certificate,
        "problem": extra,
    });
    Ok(out)
}

fn result_json(r: &OptimizationResult) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

fn infeasible_budget(mut out: Outcome, budget: f64, why: &str) -> Result<Outcome, CliError> {
    out.lines.push("status=infeasible".into());
    out.lines
        .push(format!("budget {budget} admits no parameter point: {why}"));
    out.results = json!({ "mode": "budget", "status": "infeasible", "budget": budget });
    out.diagnostics = json!({ "reason": why });
    out.failure = Some(CliError::Infeasible(format!("budget {budget}: {why}")));
    Ok(out)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Config file (TOML).
    pub config: PathBuf,
    /// Parameter point, comma separated; overrides `theta` in the config.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Ensemble size; below 100 only trajectory files are written.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Simulation horizon [default: config `simulate.horizon`, else 50].
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `mean_norm.csv` and `trajectory_NNNN.csv`.
    #[arg(long, default_value = "simulation")]
    pub out: PathBuf,
    /// Points of the uniform time grid [default: config, else 101].
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Number of ensemble members written as switch logs.
    #[arg(long, default_value_t = 10)]
    pub trajectory_files: usize,
    /// Initial state [default: config `simulate.x0`, else all ones].
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Initial mode (0-based) [default: config, else uniform].
    #[arg(long)]
    pub sigma0: Option<usize>,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

pub fn simulate_cmd(cfg: &LoadedConfig, args: &SimulateArgs) -> Result<Outcome, CliError> {
    let system = cfg.system()?;
    let theta = resolve_theta(cfg, &system, args.theta.as_deref())?;
    let sim = &cfg.file.simulate;
    let defaults = EstimateOptions::default();
    let x0 = args
        .x0
        .clone()
        .or_else(|| sim.x0.clone())
        .unwrap_or_else(|| vec![1.0; system.state_dim()]);
    let opts = EstimateOptions {
        samples: args.samples,
        horizon: args.horizon.or(sim.horizon).unwrap_or(defaults.horizon),
        grid_points: args.grid_points.or(sim.grid_points).unwrap_or(defaults.grid_points),
        seed: args.seed,
        sigma0: args.sigma0.or(sim.sigma0),
        norm: defaults.norm,
    };
    if x0.len() != system.state_dim() || x0.iter().any(|&v| !(v >= 0.0)) {
        return Err(CliError::Config(format!(
            "--x0 must hold {} nonnegative values, got {x0:?}",
            system.state_dim()
        )));
    }
    if !(opts.horizon > 0.0) {
        return Err(CliError::Config(format!(
            "--horizon must be positive, got {}",
            opts.horizon
        )));
    }
    if opts.sigma0.is_some_and(|m| m >= system.num_modes()) {
        return Err(CliError::Config(format!(
            "--sigma0 must be below {}",
            system.num_modes()
        )));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out.display())))?;

    let mut out = Outcome {
        seed: Some(args.seed),
        ..Outcome::default()
    };
    // switch logs of the first ensemble members, drawn from the same streams
    for i in 0..args.trajectory_files.min(args.samples) {
        let path = args.out.join(format!("trajectory_{i:04}.csv"));
        let path_s = path.display().to_string();
        let s = simulate_seeded(&system, &theta, &x0, opts.sigma0, opts.horizon, args.seed, i as u64)?;
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(TrajectorySample::log_header(system.state_dim()))
            .map_err(|e| CliError::Io(format!("{path_s}: {e}")))?;
        s.write_log(i, &mut w)?;
        w.flush().map_err(|e| CliError::Io(format!("{path_s}: {e}")))?;
        out.outputs.push(path_s);
    }
    out.lines.push(format!(
        "wrote {} trajectory files to {}",
        out.outputs.len(),
        args.out.display()
    ));

    let mut results = json!({
        "theta": theta,
        "x0": x0,
        "estimate_options": opts,
        "trajectory_files": out.outputs.len(),
    });
    if args.samples < MIN_ESTIMATE_SAMPLES {
        out.lines.push(format!(
            "{} samples: rate estimate skipped (needs at least {MIN_ESTIMATE_SAMPLES})",
            args.samples
        ));
    } else {
        let est = estimate_decay(&system, &theta, &x0, &opts)?;
        let path = args.out.join("mean_norm.csv");
        est.write_csv(create(&path)?)?;
        out.outputs.push(path.display().to_string());
        let report = decay_rate(&system, &theta, cfg.solver().decay)?;
        let rel = (est.gamma_hat - report.gamma).abs() / report.gamma.abs();
        out.lines
            .push(format!("gamma_hat={:.6} (stderr {:.2e})", est.gamma_hat, est.stderr));
        out.lines.push(format!("gamma={:.6}", report.gamma));
        out.lines.push(format!("relative_difference={rel:.4}"));
        results["gamma_hat"] = json!(est.gamma_hat);
        results["gamma_hat_stderr"] = json!(est.stderr);
        results["gamma"] = json!(report.gamma);
        results["relative_difference"] = json!(rel);
        results["log_mean_norms"] = json!(est.log_mean_norms);
    }
    out.results = results;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Optimized rate over environment-1 scale and environment-2 shape.
    Fig4,
    /// Optimized rate over antibiotic shape and budget.
    Fig5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionArg {
    HoldMean,
    FreeMean,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Config with a `[bet_hedging]` table.
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Environment-1 Weibull scales.
    #[arg(long, value_delimiter = ',', default_value = "6.2,6.35,6.5,6.6,6.7")]
    pub lambda12: Vec<f64>,
    /// Environment-2 shapes; each column is compared with `k21 = 1`.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1,2,5")]
    pub k21: Vec<f64>,
    /// How the environment-1 shape follows its scale.
    #[arg(long, value_enum, default_value = "hold-mean")]
    pub convention: ConventionArg,
    /// Antibiotic shapes, shared by every antibiotic.
    #[arg(long, value_delimiter = ',', default_value = "1,10,50,100")]
    pub q: Vec<f64>,
    /// Dose budgets.
    #[arg(long, value_delimiter = ',', default_value = "1,1.2,1.4,1.6,1.8,2")]
    pub budgets: Vec<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn sweep_cmd(cfg: &LoadedConfig, args: &SweepArgs) -> Result<Outcome, CliError> {
    let base = cfg
        .bet_hedging()
        .ok_or_else(|| CliError::Config(format!("{}: sweeps need a [bet_hedging] config", cfg.path.display())))?;
    let opts = cfg.solver();
    let result: SweepResult = match args.experiment {
        Experiment::Fig4 => {
            let convention = match args.convention {
                ConventionArg::HoldMean => ScaleConvention::HoldMean,
                ConventionArg::FreeMean => ScaleConvention::FreeMean,
            };
            sweep_fig4(base, &args.lambda12, &args.k21, convention, &opts)
        }
        Experiment::Fig5 => sweep_fig5(base, &args.q, &args.budgets, &opts),
    }
    .map_err(|e| CliError::Config(format!("sweep grid: {e}")))?;

    let mut out = Outcome::default();
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &buf).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            out.outputs.push(path.display().to_string());
            out.lines
                .push(format!("wrote {} rows to {}", result.points.len(), path.display()));
        }
        None => out.stdout_csv = Some(String::from_utf8_lossy(&buf).into_owned()),
    }
    let failed = result.failures();
    if let Some(b) = result.markov_baseline {
        out.lines.push(format!("markov_baseline={b:.6}"));
    }
    out.lines
        .push(format!("{} points, {failed} failed", result.points.len()));
    if failed == result.points.len() {
        out.failure = Some(CliError::Numerical("every sweep point failed".into()));
    }
    out.diagnostics = json!({ "failed_points": failed, "solver_options": opts });
    out.results = serde_json::to_value(&result).unwrap_or(Value::Null);
    Ok(out)
}
