//! Monomials and posynomials over positive parameters, with log-space
//! evaluation.
//!
//! Under the substitution `θ = exp[u]` a posynomial becomes a log-sum-exp of
//! affine functions of `u`, hence convex after taking the logarithm. All
//! log-space routines evaluate it in that form with a max shift, so large
//! exponents (for example `θ^-100`) do not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coeff * Π θ_i^{exponents_i}` with `coeff > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    coeff: f64,
    exponents: Vec<f64>,
}

impl Monomial {
    pub fn new(coeff: f64, exponents: Vec<f64>) -> Result<Self> {
        if !(coeff > 0.0 && coeff.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "monomial coefficient must be positive and finite, got {coeff}"
            )));
        }
        if exponents.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("monomial exponent".into()));
        }
        Ok(Self { coeff, exponents })
    }

    /// Positive constant in `dim` variables.
    pub fn constant(coeff: f64, dim: usize) -> Result<Self> {
        Self::new(coeff, vec![0.0; dim])
    }

    /// `coeff * θ_index^power`.
    pub fn single(coeff: f64, dim: usize, index: usize, power: f64) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!("variable {index} out of range {dim}")));
        }
        let mut exponents = vec![0.0; dim];
        exponents[index] = power;
        Self::new(coeff, exponents)
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// `log c + aᵀu`
    pub fn log_eval(&self, u: &[f64]) -> f64 {
        self.coeff.ln() + self.exponents.iter().zip(u).map(|(a, x)| a * x).sum::<f64>()
    }

    fn mul(&self, other: &Self) -> Self {
        Self {
            coeff: self.coeff * other.coeff,
            exponents: self
                .exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Nonempty sum of monomials sharing one variable dimension.
///
/// Terms with identical exponent vectors are kept separate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posynomial {
    terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::InvalidArgument("posynomial needs at least one term".into()));
        };
        let dim = first.dim();
        if let Some(bad) = terms.iter().find(|t| t.dim() != dim) {
            return Err(Error::Shape(format!(
                "posynomial terms disagree on dimension: {dim} vs {}",
                bad.dim()
            )));
        }
        Ok(Self { terms })
    }

    pub fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!(
                "posynomial in {} variables evaluated at a {len}-vector",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Value at a strictly positive point.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta.len())?;
        if let Some(bad) = theta.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "posynomial argument must be positive, got {bad}"
            )));
        }
        Ok(self
            .terms
            .iter()
            .map(|t| {
                t.exponents
                    .iter()
                    .zip(theta)
                    .fold(t.coeff, |acc, (a, x)| acc * x.powf(*a))
            })
            .sum())
    }

    /// `log p(exp[u])`, computed by shifted log-sum-exp.
    pub fn log_eval(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u.len())?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("posynomial log-space argument".into()));
        }
        let logs: Vec<f64> = self.terms.iter().map(|t| t.log_eval(u)).collect();
        Ok(log_sum_exp(&logs))
    }

    /// Gradient of [`Posynomial::log_eval`]: the softmax-weighted average of the
    /// term exponent vectors.
    pub fn log_eval_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u.len())?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("posynomial log-space argument".into()));
        }
        let logs: Vec<f64> = self.terms.iter().map(|t| t.log_eval(u)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut grad = vec![0.0; self.dim()];
        for (t, w) in self.terms.iter().zip(&weights) {
            for (g, a) in grad.iter_mut().zip(t.exponents()) {
                *g += w / total * a;
            }
        }
        Ok(grad)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self { terms })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        let terms = self
            .terms
            .iter()
            .flat_map(|a| other.terms.iter().map(move |b| a.mul(b)))
            .collect();
        Ok(Self { terms })
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "posynomial scale factor must be positive, got {c}"
            )));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| Monomial::new(t.coeff * c, t.exponents.clone()))
            .collect::<Result<_>>()?;
        Ok(Self { terms })
    }
}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Self { terms: vec![m] }
    }
}

/// A posynomial or the identically zero function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PosyOrZero {
    Zero,
    Posy(Posynomial),
}

impl PosyOrZero {
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Posy(p) => p.eval(theta),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(match (self, other) {
            (Self::Zero, x) | (x, Self::Zero) => x.clone(),
            (Self::Posy(p), Self::Posy(q)) => Self::Posy(p.add(q)?),
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Ok(match (self, other) {
            (Self::Zero, _) | (_, Self::Zero) => Self::Zero,
            (Self::Posy(p), Self::Posy(q)) => Self::Posy(p.mul(q)?),
        })
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        match self {
            Self::Zero if c > 0.0 && c.is_finite() => Ok(Self::Zero),
            Self::Zero => Err(Error::InvalidArgument(format!(
                "posynomial scale factor must be positive, got {c}"
            ))),
            Self::Posy(p) => Ok(Self::Posy(p.scale(c)?)),
        }
    }
}

impl From<Posynomial> for PosyOrZero {
    fn from(p: Posynomial) -> Self {
        Self::Posy(p)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono(c: f64, a: &[f64]) -> Monomial {
        Monomial::new(c, a.to_vec()).unwrap()
    }

    fn posy(terms: &[(f64, &[f64])]) -> Posynomial {
        Posynomial::new(terms.iter().map(|(c, a)| mono(*c, a)).collect()).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(posy(&[(3.0, &[1.0, 2.0])]).eval(&[1.0, 1.0]).unwrap(), 3.0);
        let p = posy(&[(1.0, &[1.0]), (1.0, &[-1.0])]);
        assert!((p.eval(&[2.0]).unwrap() - 2.5).abs() < 1e-15);
        let p = posy(&[(2.0, &[0.5, -1.0])]);
        assert!((p.eval(&[4.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_nonpositive_theta() {
        let p = posy(&[(1.0, &[1.0])]);
        assert!(p.eval(&[0.0]).is_err());
        assert!(p.eval(&[-1.0]).is_err());
        assert!(p.eval(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_eval_examples() {
        assert_eq!(posy(&[(1.0, &[1.0])]).log_eval(&[0.0]).unwrap(), 0.0);
        let p = posy(&[(1.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        assert!((p.log_eval(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = posy(&[(2.0, &[0.5, -1.0])]);
        assert!((p.log_eval(&[4f64.ln(), 2f64.ln()]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_eval_survives_huge_exponents() {
        let p = posy(&[(1e100, &[-100.0]), (1.0, &[1.0])]);
        let v = p.log_eval(&[-10.0]).unwrap();
        assert!(v.is_finite());
        assert!((v - (100f64 * 10f64.ln() + 1000.0)).abs() < 1e-9);
    }

    #[test]
    fn gradient_examples() {
        let m = posy(&[(7.0, &[1.5, -2.0])]);
        assert_eq!(m.log_eval_grad(&[0.3, -1.1]).unwrap(), vec![1.5, -2.0]);
        let p = posy(&[(1.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        assert_eq!(p.log_eval_grad(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn algebra_examples() {
        let p: PosyOrZero = posy(&[(1.0, &[1.0]), (2.0, &[-0.5])]).into();
        assert_eq!(PosyOrZero::Zero.add(&p).unwrap(), p);
        assert!(PosyOrZero::Zero.mul(&p).unwrap().is_zero());

        let x = posy(&[(1.0, &[1.0])]);
        let inv = posy(&[(1.0, &[-1.0])]);
        let one = x.mul(&inv).unwrap();
        assert_eq!(one.terms().len(), 1);
        assert_eq!(one.terms()[0].exponents(), &[0.0]);
        assert_eq!(one.eval(&[3.7]).unwrap(), 1.0);

        let s = posy(&[(1.0, &[1.0, 0.0]), (1.0, &[0.0, 1.0])]);
        assert_eq!(s.mul(&s).unwrap().eval(&[1.0, 1.0]).unwrap(), 4.0);

        assert!(p.scale(0.0).is_err());
        assert!(PosyOrZero::Zero.scale(-1.0).is_err());
    }

    pub(crate) fn arb_posynomial(dim: usize) -> impl Strategy<Value = Posynomial> {
        prop::collection::vec((0.01f64..10.0, prop::collection::vec(-3.0f64..3.0, dim)), 1..6).prop_map(|terms| {
            Posynomial::new(terms.into_iter().map(|(c, a)| Monomial::new(c, a).unwrap()).collect()).unwrap()
        })
    }

    fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, dim)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn log_eval_is_midpoint_convex(p in arb_posynomial(3), u in point(3), w in point(3)) {
            let mid: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = p.log_eval(&mid).unwrap();
            let rhs = 0.5 * (p.log_eval(&u).unwrap() + p.log_eval(&w).unwrap());
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn log_eval_matches_eval(p in arb_posynomial(3), u in point(3)) {
            let theta: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            let direct = p.eval(&theta).unwrap();
            let via_log = p.log_eval(&u).unwrap().exp();
            prop_assert!((direct - via_log).abs() <= 1e-12 * direct);
        }

        #[test]
        fn products_and_sums_commute_with_eval(
            p in arb_posynomial(2), q in arb_posynomial(2), u in point(2)
        ) {
            let theta: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            let (pv, qv) = (p.eval(&theta).unwrap(), q.eval(&theta).unwrap());
            let prod = p.mul(&q).unwrap().eval(&theta).unwrap();
            prop_assert!((prod - pv * qv).abs() <= 1e-12 * pv * qv);
            let sum = p.add(&q).unwrap().eval(&theta).unwrap();
            prop_assert!((sum - (pv + qv)).abs() <= 1e-12 * (pv + qv));
        }

        #[test]
        fn gradient_matches_central_differences(p in arb_posynomial(3), u in point(3)) {
            let g = p.log_eval_grad(&u).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (p.log_eval(&up).unwrap() - p.log_eval(&dn).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()));
            }
        }
    }
}
