use serde::{Deserialize, Serialize};

use super::sojourn::SojournDistribution;
use crate::error::{Error, Result};
use crate::numlin::DenseMatrix;

const ROW_SUM_TOL: f64 = 1e-12;

/// Semi-Markov environment: embedded jump chain plus sojourn laws.
///
/// `sojourn(j, i)` is the law of the time spent in mode `j` when the next mode
/// is `i`. Trajectories therefore pick the successor from row `j` of the jump
/// matrix on arrival and then draw the holding time from the matching law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiMarkovChain {
    transition: DenseMatrix,
    sojourns: Vec<SojournDistribution>,
    horizon: f64,
}

impl SemiMarkovChain {
    /// `sojourns` is row-major over `(from, to)` pairs.
    pub fn new(transition: DenseMatrix, sojourns: Vec<SojournDistribution>) -> Result<Self> {
        let n = transition.rows();
        if !transition.is_square() {
            return Err(Error::Shape(format!(
                "jump matrix must be square, got {}x{}",
                n,
                transition.cols()
            )));
        }
        if sojourns.len() != n * n {
            return Err(Error::Shape(format!(
                "{n} modes need {} sojourn laws, got {}",
                n * n,
                sojourns.len()
            )));
        }
        if !transition.is_nonnegative() {
            return Err(Error::NegativeEntry("jump matrix has a negative entry".into()));
        }
        for i in 0..n {
            let s: f64 = transition.row(i).iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "row {i} of the jump matrix sums to {s}"
                )));
            }
            if transition[(i, i)] > 0.0 {
                log::warn!(
                    "jump matrix has p[{i}][{i}] = {}; self-jumps restart the sojourn clock",
                    transition[(i, i)]
                );
            }
        }
        let horizon = sojourns[0].horizon();
        if let Some(d) = sojourns
            .iter()
            .find(|d| (d.horizon() - horizon).abs() > 1e-12 * horizon)
        {
            return Err(Error::InvalidArgument(format!(
                "sojourn laws must share a horizon: {} vs {horizon}",
                d.horizon()
            )));
        }
        Ok(Self {
            transition,
            sojourns,
            horizon,
        })
    }

    /// Holding-time law depends only on the current mode.
    pub fn per_mode(transition: DenseMatrix, laws: Vec<SojournDistribution>) -> Result<Self> {
        let n = transition.rows();
        if laws.len() != n {
            return Err(Error::Shape(format!(
                "{n} modes need {n} sojourn laws, got {}",
                laws.len()
            )));
        }
        let sojourns = (0..n * n).map(|k| laws[k / n]).collect();
        Self::new(transition, sojourns)
    }

    pub fn modes(&self) -> usize {
        self.transition.rows()
    }

    pub fn transition(&self) -> &DenseMatrix {
        &self.transition
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        self.transition[(from, to)]
    }

    pub fn sojourn(&self, from: usize, to: usize) -> &SojournDistribution {
        &self.sojourns[from * self.modes() + to]
    }

    pub fn sojourns(&self) -> &[SojournDistribution] {
        &self.sojourns
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}
