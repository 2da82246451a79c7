use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate::{check_initial_state, initial_mode, next_switch, trajectory_rng};
use crate::error::{Error, Result};
use crate::numlin::{matrix_exp, DenseMatrix};
use crate::posy::log_sum_exp;
use crate::system::ParametrizedSystem;

const MIN_SAMPLES: usize = 100;
/// Independent batches behind the reported standard error.
const BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateNorm {
    /// Sum of entries; the population total for positive systems.
    #[default]
    L1,
    L2,
    Max,
}

impl StateNorm {
    fn apply(self, x: &[f64]) -> f64 {
        match self {
            StateNorm::L1 => x.iter().map(|v| v.abs()).sum(),
            StateNorm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            StateNorm::Max => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub samples: usize,
    pub horizon: f64,
    /// Points of the uniform time grid on `[0, horizon]`, endpoints included.
    pub grid_points: usize,
    pub seed: u64,
    /// Initial mode; drawn uniformly per trajectory when absent.
    pub sigma0: Option<usize>,
    pub norm: StateNorm,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            horizon: 50.0,
            grid_points: 101,
            seed: 0,
            sigma0: None,
            norm: StateNorm::L1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    /// Negated least-squares slope of `log mean_norms` over the last half
    /// of the grid.
    pub gamma_hat: f64,
    /// Spread of the same fit over independent batches of trajectories.
    pub stderr: f64,
    pub sample_count: usize,
    pub time_grid: Vec<f64>,
    /// Ensemble mean of `‖x(t)‖`; may underflow for long horizons, in which
    /// case `log_mean_norms` still carries the value.
    pub mean_norms: Vec<f64>,
    pub log_mean_norms: Vec<f64>,
}

impl DecayEstimate {
    /// CSV with columns `t,mean_norm,log_mean_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidArgument(format!("writing CSV: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean_norm", "log_mean_norm"]).map_err(err)?;
        for ((t, m), l) in self.time_grid.iter().zip(&self.mean_norms).zip(&self.log_mean_norms) {
            w.write_record([t.to_string(), m.to_string(), l.to_string()])
                .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("writing CSV: {e}")))?;
        Ok(())
    }
}

/// `log ‖x(t)‖` of one trajectory on the grid.
///
/// The state is kept at unit 1-norm with its scale carried in log form, so
/// long horizons neither underflow nor overflow.
fn log_norms_on_grid<R: Rng + ?Sized>(
    system: &ParametrizedSystem,
    mats: &[DenseMatrix],
    x0: &[f64],
    grid: &[f64],
    opts: &EstimateOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let chain = system.chain();
    let horizon = opts.horizon;
    let mut mode = initial_mode(chain.modes(), opts.sigma0, rng)?;
    let s0: f64 = x0.iter().sum();
    let mut x: Vec<f64> = x0.iter().map(|v| v / s0).collect();
    let mut log_scale = s0.ln();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    while k < grid.len() {
        let (next, h) = next_switch(chain, mode, rng);
        let end = t + h;
        while k < grid.len() && (grid[k] < end || (end >= horizon && grid[k] <= horizon)) {
            let y = if grid[k] == t {
                x.clone()
            } else {
                matrix_exp(&mats[mode], grid[k] - t)?.mul_vec(&x)
            };
            out.push(log_scale + opts.norm.apply(&y).ln());
            k += 1;
        }
        if k == grid.len() {
            break;
        }
        x = matrix_exp(&mats[mode], h)?.mul_vec(&x);
        let s: f64 = x.iter().map(|v| v.max(0.0)).sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory state norm {s} at t = {end}")));
        }
        for v in &mut x {
            *v = v.max(0.0) / s;
        }
        log_scale += s.ln();
        t = end;
        mode = next;
    }
    Ok(out)
}

/// Least-squares slope of `y` against `t`.
fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    sxy / sxx
}

/// `log` of the ensemble mean at every grid point, by log-sum-exp.
fn log_means(rows: &[Vec<f64>], grid_len: usize) -> Result<Vec<f64>> {
    let ln_n = (rows.len() as f64).ln();
    (0..grid_len)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let v = log_sum_exp(&col) - ln_n;
            if v == f64::NEG_INFINITY || v.is_nan() {
                Err(Error::NonFinite(format!(
                    "ensemble mean norm vanished at grid point {k}"
                )))
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Empirical decay rate of `E‖x(t)‖` from `opts.samples` independent
/// trajectories started at `x0`.
///
/// Trajectory `i` uses the generator [`trajectory_rng`]`(seed, i)`, so the
/// result does not depend on scheduling.
pub fn estimate_decay(
    system: &ParametrizedSystem,
    theta: &[f64],
    x0: &[f64],
    opts: &EstimateOptions,
) -> Result<DecayEstimate> {
    if opts.samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_SAMPLES} samples are needed, got {}",
            opts.samples
        )));
    }
    if opts.grid_points < 4 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 4 points, got {}",
            opts.grid_points
        )));
    }
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {}",
            opts.horizon
        )));
    }
    check_initial_state(system, x0)?;
    if x0.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("initial state is zero".into()));
    }
    let mats = system.mode_matrices(theta)?;
    let g = opts.grid_points;
    let time_grid: Vec<f64> = (0..g).map(|k| opts.horizon * k as f64 / (g - 1) as f64).collect();

    let rows = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(opts.seed, i as u64);
            log_norms_on_grid(system, &mats, x0, &time_grid, opts, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let tail = g / 2;
    let fit = |lm: &[f64]| -slope(&time_grid[tail..], &lm[tail..]);
    let log_mean_norms = log_means(&rows, g)?;
    let gamma_hat = fit(&log_mean_norms);

    let batch = opts.samples / BATCHES;
    let batch_rates = rows
        .chunks(batch)
        .take(BATCHES)
        .map(|c| Ok(fit(&log_means(c, g)?)))
        .collect::<Result<Vec<f64>>>()?;
    let bm = batch_rates.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_rates.iter().map(|r| (r - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;

    Ok(DecayEstimate {
        gamma_hat,
        stderr: (var / BATCHES as f64).sqrt(),
        sample_count: opts.samples,
        mean_norms: log_mean_norms.iter().map(|v| v.exp()).collect(),
        log_mean_norms,
        time_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{decay_rate, DecayOptions, SemiMarkovChain, SojournDistribution};

    fn alternating(a: SojournDistribution, b: SojournDistribution) -> SemiMarkovChain {
        let p = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        SemiMarkovChain::per_mode(p, vec![a, b]).unwrap()
    }

    fn opts(samples: usize, horizon: f64) -> EstimateOptions {
        EstimateOptions {
            samples,
            horizon,
            grid_points: 41,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_scalar_rate() {
        let d = SojournDistribution::uniform(1.0).unwrap();
        let a = DenseMatrix::diagonal(&[-2.0]);
        let sys = ParametrizedSystem::fixed(vec![a.clone(), a], alternating(d, d)).unwrap();
        let est = estimate_decay(&sys, &[], &[1.0], &opts(100, 10.0)).unwrap();
        assert!((est.gamma_hat - 2.0).abs() < 0.01, "{}", est.gamma_hat);
        assert!(est.stderr < 1e-9);
        for (t, l) in est.time_grid.iter().zip(&est.log_mean_norms) {
            assert!((l + 2.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn long_horizon_does_not_underflow() {
        let d = SojournDistribution::uniform(1.0).unwrap();
        let a = DenseMatrix::diagonal(&[-50.0]);
        let sys = ParametrizedSystem::fixed(vec![a.clone(), a], alternating(d, d)).unwrap();
        let est = estimate_decay(&sys, &[], &[1.0], &opts(100, 40.0)).unwrap();
        assert_eq!(*est.mean_norms.last().unwrap(), 0.0);
        assert!((est.log_mean_norms.last().unwrap() + 2000.0).abs() < 1e-8);
        assert!((est.gamma_hat - 50.0).abs() < 1e-8);
    }

    #[test]
    fn unstable_system_gives_negative_rate() {
        let d = SojournDistribution::weibull(1.0, 2.0, 3.0).unwrap();
        let a0 = DenseMatrix::from_rows(&[[0.2, 0.1], [0.3, -0.5]]).unwrap();
        let a1 = DenseMatrix::from_rows(&[[-0.4, 0.2], [0.1, 0.1]]).unwrap();
        let sys = ParametrizedSystem::fixed(vec![a0, a1], alternating(d, d)).unwrap();
        let gamma = decay_rate(&sys, &[], DecayOptions::default()).unwrap();
        assert!(gamma.gamma < 0.0);
        let est = estimate_decay(&sys, &[], &[1.0, 1.0], &opts(400, 20.0)).unwrap();
        assert!(est.gamma_hat < 0.0, "{est:?}");
    }

    #[test]
    fn agrees_with_computed_rate() {
        let d0 = SojournDistribution::weibull(1.2, 3.0, 2.5).unwrap();
        let d1 = SojournDistribution::uniform(2.5).unwrap();
        let a0 = DenseMatrix::from_rows(&[[-1.0, 0.4], [0.3, -0.6]]).unwrap();
        let a1 = DenseMatrix::from_rows(&[[-0.5, 0.2], [0.6, -1.2]]).unwrap();
        let sys = ParametrizedSystem::fixed(vec![a0, a1], alternating(d0, d1)).unwrap();
        let gamma = decay_rate(&sys, &[], DecayOptions::default()).unwrap().gamma;
        let est = estimate_decay(&sys, &[], &[1.0, 1.0], &opts(2000, 30.0)).unwrap();
        assert!(
            ((est.gamma_hat - gamma) / gamma).abs() < 0.05,
            "{} vs {gamma}",
            est.gamma_hat
        );
    }

    #[test]
    fn seeded_estimates_repeat() {
        let d = SojournDistribution::weibull(1.0, 2.0, 3.0).unwrap();
        let a = DenseMatrix::from_rows(&[[-1.0, 0.5], [0.2, -0.8]]).unwrap();
        let sys = ParametrizedSystem::fixed(vec![a.clone(), a], alternating(d, d)).unwrap();
        let e1 = estimate_decay(&sys, &[], &[1.0, 0.0], &opts(100, 5.0)).unwrap();
        let e2 = estimate_decay(&sys, &[], &[1.0, 0.0], &opts(100, 5.0)).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn rejects_small_ensembles() {
        let d = SojournDistribution::uniform(1.0).unwrap();
        let a = DenseMatrix::diagonal(&[-1.0]);
        let sys = ParametrizedSystem::fixed(vec![a.clone(), a], alternating(d, d)).unwrap();
        assert!(estimate_decay(&sys, &[], &[1.0], &opts(99, 1.0)).is_err());
        assert!(estimate_decay(&sys, &[], &[0.0], &opts(100, 1.0)).is_err());
    }

    #[test]
    fn csv_columns() {
        let est = DecayEstimate {
            gamma_hat: 1.0,
            stderr: 0.0,
            sample_count: 100,
            time_grid: vec![0.0, 1.0],
            mean_norms: vec![1.0, 0.5],
            log_mean_norms: vec![0.0, 0.5f64.ln()],
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,mean_norm,log_mean_norm\n0,1,0\n1,0.5,"));
    }
}
