//! Matrix exponential by scaling and squaring around a fixed-order Taylor core.
//!
//! The argument is scaled by `2^-s` until its 1-norm is at most 1/2. At that
//! norm the order-13 Taylor remainder is bounded by `0.5^14 / 14! < 1e-15`.

use super::DenseMatrix;
use crate::error::{Error, Result};

const SCALED_NORM: f64 = 0.5;
const TAYLOR_ORDER: usize = 13;
const CLAMP_REL: f64 = 1e-13;

/// Computes `exp(a * t)`.
///
/// For Metzler `a` the exact result is entrywise nonnegative; negative entries
/// produced by rounding (at most `1e-13 * max|entry|` in magnitude) are set to
/// zero.
pub fn matrix_exp(a: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "matrix_exp needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("matrix_exp time {t}")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix_exp argument".into()));
    }
    let mut out = expm_unchecked(a, t);
    if !out.is_finite() {
        return Err(Error::NonFinite(format!(
            "matrix_exp overflowed (|A|_1 = {}, t = {t})",
            a.norm_1()
        )));
    }
    if a.is_metzler() {
        clamp_rounding_negatives(&mut out);
    }
    Ok(out)
}

/// Core routine without validation; callers guarantee a square finite input.
pub(crate) fn expm_unchecked(a: &DenseMatrix, t: f64) -> DenseMatrix {
    let n = a.rows();
    if n == 1 {
        return DenseMatrix::diagonal(&[(a[(0, 0)] * t).exp()]);
    }
    let mut x = a.scaled(t);
    let norm = x.norm_1();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    x.scale_mut(0.5f64.powi(squarings));

    // Horner: I + X(I + X/2(I + X/3(... (I + X/m))))
    let mut acc = DenseMatrix::identity(n);
    for k in (1..=TAYLOR_ORDER).rev() {
        let mut next = x.matmul(&acc);
        next.scale_mut(1.0 / k as f64);
        next.add_identity(1.0);
        acc = next;
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc);
    }
    acc
}

fn clamp_rounding_negatives(m: &mut DenseMatrix) {
    let scale = m.max_abs();
    for x in m.as_mut_slice() {
        if *x < 0.0 && -*x <= CLAMP_REL * scale {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain Taylor series with many terms, used as an oracle for small norms.
    fn taylor_oracle(a: &DenseMatrix, terms: usize) -> DenseMatrix {
        let n = a.rows();
        let mut term = DenseMatrix::identity(n);
        let mut sum = DenseMatrix::identity(n);
        for k in 1..terms {
            term = term.matmul(a);
            term.scale_mut(1.0 / k as f64);
            sum.add_scaled(1.0, &term);
        }
        sum
    }

    #[test]
    fn diagonal_matrix() {
        let a = DenseMatrix::diagonal(&[0.3, -1.7]);
        let e = matrix_exp(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - 0.3f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-1.7f64).exp()).abs() < 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DenseMatrix::zeros(2, 2);
        for t in [0.0, 1.0, 123.0] {
            assert_eq!(matrix_exp(&z, t).unwrap(), DenseMatrix::identity(2));
        }
    }

    #[test]
    fn nilpotent_matches_taylor_oracle() {
        let a = DenseMatrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let e = matrix_exp(&a, 1.0).unwrap();
        let oracle = taylor_oracle(&a, 20);
        assert!(e.rel_diff(&oracle) < 1e-15);
        assert!(e.rel_diff(&DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn moderate_norm_matches_long_taylor() {
        let a = DenseMatrix::from_rows(&[[-1.2, 0.4, 0.1], [0.3, -0.5, 0.2], [0.0, 0.7, -2.0]]).unwrap();
        // norm around 3, 60 terms of the raw series converge to machine precision
        let e = matrix_exp(&a, 1.0).unwrap();
        assert!(e.rel_diff(&taylor_oracle(&a, 60)) < 1e-13);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matrix_exp(&a, 1.0), Err(Error::Shape(_))));
        let b = DenseMatrix::identity(2);
        assert!(matches!(matrix_exp(&b, f64::INFINITY), Err(Error::NonFinite(_))));
    }

    fn metzler_4x4() -> impl Strategy<Value = DenseMatrix> {
        prop::collection::vec(0.0f64..1.0, 16).prop_map(|v| {
            let mut m = DenseMatrix::new(4, 4, v).unwrap();
            for i in 0..4 {
                m[(i, i)] *= -3.0;
            }
            // keep |A|_1 <= 5
            let norm = m.norm_1();
            if norm > 5.0 {
                m.scale_mut(5.0 / norm);
            }
            m
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn semigroup_property(a in metzler_4x4(), s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let lhs = matrix_exp(&a, s + t).unwrap();
            let rhs = matrix_exp(&a, s).unwrap().matmul(&matrix_exp(&a, t).unwrap());
            prop_assert!(lhs.rel_diff(&rhs) < 1e-10);
        }

        #[test]
        fn metzler_exponential_is_nonnegative(a in metzler_4x4(), t in 0.0f64..10.0) {
            prop_assert!(matrix_exp(&a, t).unwrap().is_nonnegative());
        }
    }
}
