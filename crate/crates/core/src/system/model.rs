use serde::{Deserialize, Serialize};

use super::chain::SemiMarkovChain;
use crate::error::{Error, Result};
use crate::numlin::DenseMatrix;
use crate::posy::{Monomial, PosyOrZero, Posynomial};

/// Mode matrix `A_k(θ) = M_k + Ā_k(θ)`: a Metzler offset plus a nonnegative
/// entrywise-posynomial part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    offset: DenseMatrix,
    parametric: Vec<PosyOrZero>,
}

impl Mode {
    /// `parametric` is row-major and must have one entry per matrix entry.
    pub fn new(offset: DenseMatrix, parametric: Vec<PosyOrZero>) -> Result<Self> {
        if !offset.is_square() {
            return Err(Error::Shape(format!(
                "mode offset must be square, got {}x{}",
                offset.rows(),
                offset.cols()
            )));
        }
        if !offset.is_metzler() {
            return Err(Error::NegativeEntry(
                "mode offset has a negative off-diagonal entry".into(),
            ));
        }
        let n = offset.rows();
        if parametric.len() != n * n {
            return Err(Error::Shape(format!(
                "{n}x{n} mode needs {} parametric entries, got {}",
                n * n,
                parametric.len()
            )));
        }
        Ok(Self { offset, parametric })
    }

    /// Mode with no parametric part.
    pub fn fixed(offset: DenseMatrix) -> Result<Self> {
        let n = offset.rows() * offset.cols();
        Self::new(offset, vec![PosyOrZero::Zero; n])
    }

    pub fn dim(&self) -> usize {
        self.offset.rows()
    }

    pub fn offset(&self) -> &DenseMatrix {
        &self.offset
    }

    pub fn parametric(&self, row: usize, col: usize) -> &PosyOrZero {
        &self.parametric[row * self.dim() + col]
    }

    fn param_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.parametric.iter().filter_map(|p| match p {
            PosyOrZero::Zero => None,
            PosyOrZero::Posy(p) => Some(p.dim()),
        })
    }

    pub fn matrix(&self, theta: &[f64]) -> Result<DenseMatrix> {
        let mut m = self.offset.clone();
        for (dst, p) in m.as_mut_slice().iter_mut().zip(&self.parametric) {
            *dst += p.eval(theta)?;
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("mode matrix at the given parameters".into()));
        }
        Ok(m)
    }
}

/// Posynomial inequality `posy(θ) <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub posy: Posynomial,
    pub bound: f64,
}

impl Constraint {
    pub fn new(posy: Posynomial, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "constraint bound must be positive, got {bound}"
            )));
        }
        Ok(Self { posy, bound })
    }

    /// `log posy(exp u) - log bound`; nonpositive exactly on the feasible set.
    pub fn log_slack(&self, u: &[f64]) -> Result<f64> {
        Ok(self.posy.log_eval(u)? - self.bound.ln())
    }
}

/// Positive linear system switched by a semi-Markov environment, with
/// posynomially parametrized mode matrices, a posynomial cost and posynomial
/// constraints on the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametrizedSystem {
    modes: Vec<Mode>,
    chain: SemiMarkovChain,
    cost: Posynomial,
    constraints: Vec<Constraint>,
}

impl ParametrizedSystem {
    pub fn new(
        modes: Vec<Mode>,
        chain: SemiMarkovChain,
        cost: Posynomial,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Shape("system needs at least one mode".into()));
        }
        if modes.len() != chain.modes() {
            return Err(Error::Shape(format!(
                "{} mode matrices but the chain has {} modes",
                modes.len(),
                chain.modes()
            )));
        }
        let n = modes[0].dim();
        if let Some(m) = modes.iter().find(|m| m.dim() != n) {
            return Err(Error::Shape(format!(
                "mode matrices differ in size: {n} vs {}",
                m.dim()
            )));
        }
        let l = cost.dim();
        let dims = modes
            .iter()
            .flat_map(Mode::param_dims)
            .chain(constraints.iter().map(|c| c.posy.dim()));
        for d in dims {
            if d != l {
                return Err(Error::Shape(format!(
                    "posynomial in {d} variables, but the cost has {l}"
                )));
            }
        }
        Ok(Self {
            modes,
            chain,
            cost,
            constraints,
        })
    }

    /// System without parameters, with unit cost.
    pub fn fixed(matrices: Vec<DenseMatrix>, chain: SemiMarkovChain) -> Result<Self> {
        let modes = matrices.into_iter().map(Mode::fixed).collect::<Result<_>>()?;
        let cost = Monomial::constant(1.0, 0)?.into();
        Self::new(modes, chain, cost, Vec::new())
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].dim()
    }

    pub fn param_dim(&self) -> usize {
        self.cost.dim()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn chain(&self) -> &SemiMarkovChain {
        &self.chain
    }

    pub fn cost(&self) -> &Posynomial {
        &self.cost
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Replaces the constraint list, keeping everything else.
    pub fn with_constraints(&self, constraints: Vec<Constraint>) -> Result<Self> {
        Self::new(self.modes.clone(), self.chain.clone(), self.cost.clone(), constraints)
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_dim(),
                theta.len()
            )));
        }
        if let Some(x) = theta.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!("parameters must be positive, got {x}")));
        }
        Ok(())
    }

    pub fn mode_matrix(&self, k: usize, theta: &[f64]) -> Result<DenseMatrix> {
        self.check_params(theta)?;
        self.modes
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("mode {k} out of range")))?
            .matrix(theta)
    }

    pub fn mode_matrices(&self, theta: &[f64]) -> Result<Vec<DenseMatrix>> {
        self.check_params(theta)?;
        self.modes.iter().map(|m| m.matrix(theta)).collect()
    }

    pub fn cost_at(&self, theta: &[f64]) -> Result<f64> {
        self.check_params(theta)?;
        self.cost.eval(theta)
    }

    /// Largest `posy(θ)/bound - 1` over the constraints (`-1` when there are none).
    pub fn max_violation(&self, theta: &[f64]) -> Result<f64> {
        self.check_params(theta)?;
        let mut worst = -1.0f64;
        for c in &self.constraints {
            worst = worst.max(c.posy.eval(theta)? / c.bound - 1.0);
        }
        Ok(worst)
    }

    pub fn is_feasible(&self, theta: &[f64], tol: f64) -> Result<bool> {
        Ok(self.max_violation(theta)? <= tol)
    }
}
