//! Mean log-cosh loss.
//!
//! `log(cosh(x))` is evaluated as `|x| + ln(1 + e^{-2|x|}) - ln 2`, which
//! behaves like `x²/2` near zero and like `|x| - ln 2` in the tails without
//! overflowing `cosh`.

use std::f64::consts::LN_2;

use crate::error::Result;
use crate::tensor::Tensor;

pub fn logcosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Mean log-cosh of `pred - target` and its gradient `tanh(pred - target) / N`.
pub fn logcosh_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred.zip_map(target, |p, t| (p - t).tanh() / n)?;
    for (p, t) in pred.data().iter().zip(target.data()) {
        total += logcosh(p - t);
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_error_has_zero_loss_and_gradient() {
        let p = Tensor::from_vec(&[3], vec![0.1, 0.5, 0.9]).unwrap();
        let (l, g) = logcosh_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tail_and_quadratic_regimes() {
        let (l, _) = logcosh_loss(&scalar(100.0), &scalar(0.0)).unwrap();
        assert!((l - (100.0 - LN_2)).abs() < 1e-8);
        assert!((l - 99.30685).abs() < 1e-5);
        let (l, _) = logcosh_loss(&scalar(0.01), &scalar(0.0)).unwrap();
        assert!((l - 0.01f64.powi(2) / 2.0).abs() < 1e-8);
    }

    #[test]
    fn matches_direct_formula_in_safe_range() {
        for x in [-3.0, -0.7, 0.2, 1.0, 5.0] {
            assert!((logcosh(x) - f64::cosh(x).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = Tensor::from_vec(&[4], vec![0.3, -2.0, 7.5, 0.0]).unwrap();
        let b = Tensor::from_vec(&[4], vec![1.3, 2.0, -0.5, 0.25]).unwrap();
        assert_eq!(
            logcosh_loss(&a, &b).unwrap().0,
            logcosh_loss(&b, &a).unwrap().0
        );
    }

    #[test]
    fn shape_mismatch() {
        assert!(logcosh_loss(&scalar(0.0), &Tensor::zeros(&[2]).unwrap()).is_err());
    }
}
