use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::sample_sojourn;
use crate::error::{Error, Result};
use crate::numlin::{matrix_exp, DenseMatrix};
use crate::system::{ParametrizedSystem, SemiMarkovChain};

/// A sampled path, recorded at every switch and at the horizon.
///
/// `modes[k]` is the mode active from `switch_times[k]` on; the last entry
/// is the state at `horizon` and the mode running there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub switch_times: Vec<f64>,
    pub modes: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl TrajectorySample {
    /// Appends this path to a switch log with columns
    /// `trajectory,time,mode,x_1..x_n`.
    pub fn write_log<W: Write>(&self, index: usize, w: &mut csv::Writer<W>) -> Result<()> {
        for ((t, m), x) in self.switch_times.iter().zip(&self.modes).zip(&self.states) {
            let mut row = vec![index.to_string(), t.to_string(), m.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)
                .map_err(|e| Error::InvalidArgument(format!("writing switch log: {e}")))?;
        }
        Ok(())
    }

    pub fn log_header(state_dim: usize) -> Vec<String> {
        let mut h = vec!["trajectory".to_string(), "time".into(), "mode".into()];
        h.extend((1..=state_dim).map(|i| format!("x_{i}")));
        h
    }
}

/// Generator for trajectory `index` of an ensemble with master seed `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn check_initial_state(system: &ParametrizedSystem, x0: &[f64]) -> Result<()> {
    if x0.len() != system.state_dim() {
        return Err(Error::Shape(format!(
            "initial state has length {}, system state dimension is {}",
            x0.len(),
            system.state_dim()
        )));
    }
    if x0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "initial state must be finite and nonnegative, got {x0:?}"
        )));
    }
    Ok(())
}

/// Mode `j`'s successor and how long `j` is held before switching to it.
pub(crate) fn next_switch<R: Rng + ?Sized>(chain: &SemiMarkovChain, j: usize, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let n = chain.modes();
    let mut acc = 0.0;
    let mut next = n - 1;
    for i in 0..n {
        acc += chain.probability(j, i);
        if u < acc {
            next = i;
            break;
        }
    }
    // guard against rounding in the row sum landing on a zero-probability mode
    while chain.probability(j, next) == 0.0 {
        next -= 1;
    }
    (next, sample_sojourn(chain.sojourn(j, next), rng))
}

pub(crate) fn initial_mode<R: Rng + ?Sized>(modes: usize, sigma0: Option<usize>, rng: &mut R) -> Result<usize> {
    match sigma0 {
        Some(m) if m < modes => Ok(m),
        Some(m) => Err(Error::InvalidArgument(format!(
            "initial mode {m} out of range for {modes} modes"
        ))),
        None => Ok(rng.random_range(0..modes)),
    }
}

/// Samples one switching path on `[0, horizon]` and propagates `x0` exactly
/// through it, `x ← exp(A_j(θ) h) x` per sojourn.
///
/// `sigma0 = None` draws the initial mode uniformly.
pub fn simulate<R: Rng + ?Sized>(
    system: &ParametrizedSystem,
    theta: &[f64],
    x0: &[f64],
    sigma0: Option<usize>,
    horizon: f64,
    rng: &mut R,
) -> Result<TrajectorySample> {
    let mats = system.mode_matrices(theta)?;
    simulate_with(system, &mats, x0, sigma0, horizon, rng)
}

/// [`simulate`] with the generator of trajectory `index` under `seed`.
pub fn simulate_seeded(
    system: &ParametrizedSystem,
    theta: &[f64],
    x0: &[f64],
    sigma0: Option<usize>,
    horizon: f64,
    seed: u64,
    index: u64,
) -> Result<TrajectorySample> {
    simulate(system, theta, x0, sigma0, horizon, &mut trajectory_rng(seed, index))
}

fn simulate_with<R: Rng + ?Sized>(
    system: &ParametrizedSystem,
    mats: &[DenseMatrix],
    x0: &[f64],
    sigma0: Option<usize>,
    horizon: f64,
    rng: &mut R,
) -> Result<TrajectorySample> {
    check_initial_state(system, x0)?;
    let chain = system.chain();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut mode = initial_mode(chain.modes(), sigma0, rng)?;
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut out = TrajectorySample {
        switch_times: vec![0.0],
        modes: vec![mode],
        states: vec![x.clone()],
        horizon,
    };
    while t < horizon {
        let (next, h) = next_switch(chain, mode, rng);
        let end = (t + h).min(horizon);
        x = matrix_exp(&mats[mode], end - t)?.mul_vec(&x);
        // exp of a Metzler matrix is nonnegative; clear rounding residue
        for v in &mut x {
            *v = v.max(0.0);
        }
        if end == t + h {
            mode = next;
        }
        t = end;
        out.switch_times.push(t);
        out.modes.push(mode);
        out.states.push(x.clone());
    }
    Ok(out)
}
