use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::DenseMatrix;
use crate::optimizer::BudgetProblem;
use crate::posy::{Monomial, PosyOrZero, Posynomial};
use crate::system::{Constraint, Mode, ParametrizedSystem, SemiMarkovChain, SojournDistribution};

/// Mean sojourn used throughout the reference configuration.
pub const REFERENCE_MEAN_SOJOURN: f64 = 6.0;
/// Truncation horizon of the reference configuration: five mean sojourns.
pub const REFERENCE_HORIZON: f64 = 30.0;

/// One antibiotic: dose `α ∈ [0, max_dose]`, administered through the shifted
/// variable `θ = offset + α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Antibiotic {
    pub max_dose: f64,
    pub offset: f64,
    pub shape: f64,
    /// Full-dose growth suppression for each phenotype.
    pub potency: Vec<f64>,
    pub unit_cost: f64,
}

impl Antibiotic {
    pub fn upper(&self) -> f64 {
        self.offset + self.max_dose
    }

    /// `offset^{-q} - upper^{-q}`, the normalizer of the suppression curve.
    fn span(&self) -> Result<f64> {
        let lo = self.offset.powf(-self.shape);
        let d = lo - self.upper().powf(-self.shape);
        if !(d > 0.0 && d.is_finite() && lo.is_finite()) {
            return Err(Error::Model(format!(
                "dose-response normalizer {}^-{q} - {}^-{q} is not a positive finite number; \
                 shape {q} is too large for this offset",
                self.offset,
                self.upper(),
                q = self.shape
            )));
        }
        Ok(d)
    }

    /// Growth suppression of phenotype `i` at dose `alpha`:
    /// `s (θ̲^{-q} - (α + θ̲)^{-q}) / (θ̲^{-q} - θ̄^{-q})`.
    pub fn suppression(&self, phenotype: usize, alpha: f64) -> f64 {
        let q = self.shape;
        let lo = self.offset.powf(-q);
        self.potency[phenotype] * (lo - (alpha + self.offset).powf(-q)) / (lo - self.upper().powf(-q))
    }
}

/// Population of `n` phenotypes in `N` environments treated with `L` antibiotics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetHedgingParams {
    /// `growth[k][i]`: growth rate of phenotype `i` in environment `k`.
    pub growth: Vec<Vec<f64>>,
    /// `switching[k][(i, j)]` for `i != j`: phenotype switching rate in
    /// environment `k`. Diagonals are ignored and recomputed as minus the
    /// off-diagonal row sums.
    pub switching: Vec<DenseMatrix>,
    pub antibiotics: Vec<Antibiotic>,
    /// Spending limit on doses, `Σ r_ℓ α_ℓ <= budget`.
    pub budget: f64,
    pub chain: SemiMarkovChain,
}

impl BetHedgingParams {
    /// Two phenotypes, two alternating environments, two identical
    /// antibiotics, Weibull sojourns of shape 5 and mean 6 truncated at 30.
    pub fn reference() -> Result<Self> {
        let d = SojournDistribution::weibull_with_mean(REFERENCE_MEAN_SOJOURN, 5.0, REFERENCE_HORIZON)?;
        Self::reference_with_sojourns(d, d)
    }

    /// Reference parameters with holding-time laws `f12` (environment 1,
    /// then 2) and `f21` (environment 2, then 1).
    pub fn reference_with_sojourns(f12: SojournDistribution, f21: SojournDistribution) -> Result<Self> {
        let swap = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])?;
        let sojourns = vec![f12, f12, f21, f21];
        let chain = SemiMarkovChain::new(swap, sojourns)?;
        let antibiotic = Antibiotic {
            max_dose: 1.0,
            offset: 10.0,
            shape: 0.01,
            potency: vec![1.0, 1.0],
            unit_cost: 1.0,
        };
        Ok(Self {
            growth: vec![vec![1.0, -0.5], vec![-1.0, 0.5]],
            switching: vec![
                DenseMatrix::from_rows(&[[0.0, 0.1], [0.1, 0.0]])?,
                DenseMatrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]])?,
            ],
            antibiotics: vec![antibiotic.clone(), antibiotic],
            budget: 2.0,
            chain,
        })
    }

    pub fn phenotypes(&self) -> usize {
        self.growth.first().map_or(0, Vec::len)
    }

    pub fn environments(&self) -> usize {
        self.growth.len()
    }

    /// Same parameters with every antibiotic shape set to `q`.
    pub fn with_shape(&self, q: f64) -> Self {
        let mut p = self.clone();
        for ab in &mut p.antibiotics {
            ab.shape = q;
        }
        p
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self { budget, ..self.clone() }
    }

    pub fn with_chain(&self, chain: SemiMarkovChain) -> Self {
        Self { chain, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let n = self.phenotypes();
        let envs = self.environments();
        if n == 0 || envs == 0 {
            return Err(Error::Model("need at least one phenotype and one environment".into()));
        }
        if self.growth.iter().any(|row| row.len() != n) {
            return Err(Error::Model("growth table is ragged".into()));
        }
        if self.switching.len() != envs {
            return Err(Error::Model(format!(
                "{envs} environments but {} switching matrices",
                self.switching.len()
            )));
        }
        for (k, w) in self.switching.iter().enumerate() {
            if w.rows() != n || w.cols() != n {
                return Err(Error::Model(format!("switching matrix {k} must be {n}x{n}")));
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && w[(i, j)] < 0.0 {
                        return Err(Error::Model(format!("negative switching rate in environment {k}")));
                    }
                }
            }
        }
        if self.chain.modes() != envs {
            return Err(Error::Model(format!(
                "{envs} environments but the chain has {} modes",
                self.chain.modes()
            )));
        }
        if self.antibiotics.is_empty() {
            return Err(Error::Model("need at least one antibiotic".into()));
        }
        for (l, ab) in self.antibiotics.iter().enumerate() {
            let positive = |x: f64| x > 0.0 && x.is_finite();
            if !(positive(ab.max_dose) && positive(ab.offset) && positive(ab.shape) && positive(ab.unit_cost)) {
                return Err(Error::Model(format!(
                    "antibiotic {l}: dose bound, offset, shape and unit cost must be positive"
                )));
            }
            if ab.potency.len() != n || ab.potency.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::Model(format!("antibiotic {l}: need {n} nonnegative potencies")));
            }
            ab.span()?;
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Model(format!("budget must be nonnegative, got {}", self.budget)));
        }
        Ok(())
    }

    /// Diagonal constant `g̃_k^i = g_k^i - ω_k^{ii} - Σ_ℓ s_ℓ^i θ̲_ℓ^{-q_ℓ} / (θ̲_ℓ^{-q_ℓ} - θ̄_ℓ^{-q_ℓ})`
    /// with `ω_k^{ii} = -Σ_{j≠i} ω_k^{ij}`.
    pub fn diagonal_offset(&self, env: usize, phenotype: usize) -> Result<f64> {
        let w = &self.switching[env];
        let omega_ii: f64 = -(0..self.phenotypes())
            .filter(|&j| j != phenotype)
            .map(|j| w[(phenotype, j)])
            .sum::<f64>();
        let mut g = self.growth[env][phenotype] - omega_ii;
        for ab in &self.antibiotics {
            g -= ab.potency[phenotype] * ab.offset.powf(-ab.shape) / ab.span()?;
        }
        Ok(g)
    }

    /// The parametrized positive system in `θ_ℓ = θ̲_ℓ + α_ℓ`.
    pub fn build_system(&self) -> Result<ParametrizedSystem> {
        self.validate()?;
        let n = self.phenotypes();
        let l = self.antibiotics.len();
        let mut modes = Vec::with_capacity(self.environments());
        for k in 0..self.environments() {
            let mut offset = self.switching[k].clone();
            let mut parametric = vec![PosyOrZero::Zero; n * n];
            for i in 0..n {
                offset[(i, i)] = self.diagonal_offset(k, i)?;
                let terms = self
                    .antibiotics
                    .iter()
                    .enumerate()
                    .filter(|(_, ab)| ab.potency[i] > 0.0)
                    .map(|(idx, ab)| Monomial::single(ab.potency[i] / ab.span()?, l, idx, -ab.shape))
                    .collect::<Result<Vec<_>>>()?;
                if !terms.is_empty() {
                    parametric[i * n + i] = Posynomial::new(terms)?.into();
                }
            }
            modes.push(Mode::new(offset, parametric)?);
        }
        let cost = Posynomial::new(
            self.antibiotics
                .iter()
                .enumerate()
                .map(|(idx, ab)| Monomial::single(ab.unit_cost, l, idx, 1.0))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let mut constraints = Vec::with_capacity(2 * l);
        for (idx, ab) in self.antibiotics.iter().enumerate() {
            constraints.push(Constraint::new(
                Monomial::single(1.0 / ab.upper(), l, idx, 1.0)?.into(),
                1.0,
            )?);
            constraints.push(Constraint::new(Monomial::single(ab.offset, l, idx, -1.0)?.into(), 1.0)?);
        }
        ParametrizedSystem::new(modes, self.chain.clone(), cost, constraints)
    }

    /// Budget on `Σ r_ℓ θ_ℓ` equivalent to the dose budget.
    pub fn transformed_budget(&self) -> f64 {
        self.budget + self.antibiotics.iter().map(|ab| ab.unit_cost * ab.offset).sum::<f64>()
    }

    pub fn budget_problem(&self) -> Result<BudgetProblem> {
        BudgetProblem::new(self.build_system()?, self.transformed_budget())
    }

    /// `θ` at zero dose.
    pub fn theta_min(&self) -> Vec<f64> {
        self.antibiotics.iter().map(|ab| ab.offset).collect()
    }

    /// `θ` at full dose.
    pub fn theta_max(&self) -> Vec<f64> {
        self.antibiotics.iter().map(Antibiotic::upper).collect()
    }
}
