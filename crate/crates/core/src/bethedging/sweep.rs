//! Parameter sweeps of the optimized decay rate.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{BetHedgingParams, REFERENCE_HORIZON, REFERENCE_MEAN_SOJOURN};
use crate::error::{Error, Result};
use crate::optimizer::{solve_budget, SolveStatus, SolverOptions};
use crate::system::{SemiMarkovChain, SojournDistribution};

/// How the shape of the environment-1 holding time follows its scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    /// The shape is solved from the scale so the mean stays at the target
    /// (see [`shape_for_scale`]).
    HoldMean,
    /// Exponential holding time (shape 1) with the given scale; the mean
    /// follows the scale.
    FreeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Values of the swept coordinates, in the order of `SweepResult::coordinates`.
    pub coords: Vec<f64>,
    pub gamma_star: f64,
    pub theta_star: Vec<f64>,
    pub status: Option<SolveStatus>,
    /// Rate this point is compared against (NaN when not applicable).
    pub reference: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment: String,
    pub coordinates: Vec<String>,
    pub points: Vec<SweepPoint>,
    /// Optimized rate with exponential holding times of the target mean.
    pub markov_baseline: Option<f64>,
}

impl SweepResult {
    /// Points whose solve failed outright.
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let l = self.points.iter().map(|p| p.theta_star.len()).max().unwrap_or(0);
        let mut header: Vec<String> = self.coordinates.clone();
        header.push("gamma_star".into());
        header.extend((1..=l).map(|i| format!("theta_{i}")));
        header.extend(["status", "reference", "markov_baseline", "error"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut row: Vec<String> = p.coords.iter().map(|c| c.to_string()).collect();
            row.push(p.gamma_star.to_string());
            row.extend((0..l).map(|i| p.theta_star.get(i).map_or(String::new(), |t| t.to_string())));
            row.push(p.status.map_or("error".into(), status_label));
            row.push(p.reference.to_string());
            row.push(self.markov_baseline.map_or(String::new(), |b| b.to_string()));
            row.push(p.error.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

fn status_label(s: SolveStatus) -> String {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIter => "max_iter",
    }
    .into()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("writing CSV: {e}"))
}

/// Weibull shape whose truncated mean equals `mean` at the given scale.
///
/// On `(0, T]` the truncated mean is not monotone in the shape: it rises to a
/// peak near `k = 1`, dips to a minimum near `k ≈ 2.2` and then climbs
/// towards the scale. The root is taken on the last, increasing branch,
/// which is the branch holding the peaked reference laws.
pub fn shape_for_scale(mean: f64, scale: f64, horizon: f64) -> Result<f64> {
    let m = |k: f64| SojournDistribution::weibull(scale, k, horizon).map(|d| d.mean());
    let (mut a, mut b) = (1.5f64, 10.0f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if m(c)? < m(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let (mut lo, mut hi) = (0.5 * (a + b), MAX_SHAPE);
    if !(m(lo)? <= mean && m(hi)? >= mean) {
        return Err(Error::InvalidArgument(format!(
            "no Weibull shape in [{lo:.3}, {MAX_SHAPE}] gives mean {mean} at scale {scale} on (0, {horizon}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m(mid)? < mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

const MAX_SHAPE: f64 = 200.0;

fn alternating(f12: SojournDistribution, f21: SojournDistribution) -> Result<SemiMarkovChain> {
    let swap = crate::numlin::DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])?;
    SemiMarkovChain::new(swap, vec![f12, f12, f21, f21])
}

fn solve_point(params: &BetHedgingParams, coords: Vec<f64>, opts: &SolverOptions) -> SweepPoint {
    let run = || -> Result<_> {
        let problem = params.budget_problem()?;
        solve_budget(&problem, opts)
    };
    match run() {
        Ok(r) => SweepPoint {
            coords,
            gamma_star: r.achieved_rate,
            theta_star: r.theta_star,
            status: Some(r.status),
            reference: f64::NAN,
            error: None,
        },
        Err(e) => SweepPoint {
            coords,
            gamma_star: f64::NAN,
            theta_star: Vec::new(),
            status: None,
            reference: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Optimized rate over a grid of environment-1 scales and environment-2
/// shapes. Environment-2 holding times always keep the target mean; the
/// environment-1 shape follows `convention`. Each point's `reference` is the
/// rate at `k21 = 1` with the same environment-1 law.
pub fn sweep_fig4(
    base: &BetHedgingParams,
    lambda12_grid: &[f64],
    k21_grid: &[f64],
    convention: ScaleConvention,
    opts: &SolverOptions,
) -> Result<SweepResult> {
    if lambda12_grid.is_empty() || k21_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grids must be nonempty".into()));
    }
    let (mean, horizon) = (REFERENCE_MEAN_SOJOURN, REFERENCE_HORIZON);
    let f12_for = |lambda: f64| -> Result<(f64, SojournDistribution)> {
        let k = match convention {
            ScaleConvention::HoldMean => shape_for_scale(mean, lambda, horizon)?,
            ScaleConvention::FreeMean => 1.0,
        };
        Ok((k, SojournDistribution::weibull(lambda, k, horizon)?))
    };
    let f21_for = |k: f64| SojournDistribution::weibull_with_mean(mean, k, horizon);

    let markov = {
        let d = f21_for(1.0)?;
        let p = base.with_chain(alternating(d, d)?);
        solve_point(&p, vec![], opts)
    };
    // the k21 = 1 reference doubles as a grid point when the grid has one
    let mut columns = k21_grid.to_vec();
    let reference_col = match k21_grid.iter().position(|&k| k == 1.0) {
        Some(i) => i,
        None => {
            columns.push(1.0);
            k21_grid.len()
        }
    };
    let mut jobs = Vec::new();
    for &lambda in lambda12_grid {
        for &k21 in &columns {
            jobs.push((lambda, k21));
        }
    }
    let solved: Vec<(f64, f64, SweepPoint)> = jobs
        .par_iter()
        .map(|&(lambda, k21)| {
            let point = (|| -> Result<SweepPoint> {
                let (k12, f12) = f12_for(lambda)?;
                let p = base.with_chain(alternating(f12, f21_for(k21)?)?);
                Ok(solve_point(&p, vec![lambda, k12, k21], opts))
            })()
            .unwrap_or_else(|e| SweepPoint {
                coords: vec![lambda, f64::NAN, k21],
                gamma_star: f64::NAN,
                theta_star: Vec::new(),
                status: None,
                reference: f64::NAN,
                error: Some(e.to_string()),
            });
            (lambda, k21, point)
        })
        .collect();
    let mut points = Vec::with_capacity(lambda12_grid.len() * k21_grid.len());
    for chunk in solved.chunks(columns.len()) {
        let reference = chunk[reference_col].2.gamma_star;
        for (_, _, p) in &chunk[..k21_grid.len()] {
            let mut p = p.clone();
            p.reference = reference;
            points.push(p);
        }
    }
    Ok(SweepResult {
        experiment: match convention {
            ScaleConvention::HoldMean => "fig4_hold_mean",
            ScaleConvention::FreeMean => "fig4_free_mean",
        }
        .into(),
        coordinates: vec!["lambda12".into(), "k12".into(), "k21".into()],
        points,
        markov_baseline: markov.error.is_none().then_some(markov.gamma_star),
    })
}

/// Optimized rate over antibiotic shapes `q` (shared by all antibiotics)
/// and dose budgets.
pub fn sweep_fig5(
    base: &BetHedgingParams,
    q_grid: &[f64],
    budget_grid: &[f64],
    opts: &SolverOptions,
) -> Result<SweepResult> {
    if q_grid.is_empty() || budget_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grids must be nonempty".into()));
    }
    let jobs: Vec<(f64, f64)> = q_grid
        .iter()
        .flat_map(|&q| budget_grid.iter().map(move |&c| (q, c)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(q, c)| solve_point(&base.with_shape(q).with_budget(c), vec![q, c], opts))
        .collect();
    Ok(SweepResult {
        experiment: "fig5".into(),
        coordinates: vec!["q".into(), "budget".into()],
        points,
        markov_baseline: None,
    })
}
