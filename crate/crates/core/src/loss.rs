//! Soft-IoU training loss: a differentiable relaxation of `1 - IoU` over the
//! whole batch, with additive smoothing so the all-empty case stays defined.

use crate::error::{Result, SanetError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Smoothing constant; cancels exactly when the prediction equals a binary
/// target.
pub const SOFT_IOU_EPS: f64 = 1.0;

/// `L = 1 - (sum(p*y) + eps) / (sum(p) + sum(y) - sum(p*y) + eps)`, summed
/// over the entire batch. `pred` must lie in (0,1); `target` must be binary.
pub fn soft_iou_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(SanetError::ShapeMismatch(format!(
            "soft_iou_loss shapes differ: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    for (i, &v) in target.data().iter().enumerate() {
        if v != T::zero() && v != T::one() {
            return Err(SanetError::InvalidArg(format!(
                "soft_iou_loss target must be binary, found {} at index {}",
                v, i
            )));
        }
    }
    let eps_t = T::from_f64(eps);
    let prod = tape.mul(pred, target)?;
    let inter = tape.sum_all(&prod);
    let sum_p = tape.sum_all(pred);
    let sum_y = tape.sum_all(target);
    let union = {
        let s = tape.add(&sum_p, &sum_y)?;
        tape.sub(&s, &inter)?
    };
    let num = tape.affine(&inter, T::one(), eps_t);
    let den = tape.affine(&union, T::one(), eps_t);
    let ratio = tape.div(&num, &den)?;
    Ok(tape.affine(&ratio, -T::one(), T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck_default, gradcheck, DEFAULT_EPS};

    #[test]
    fn perfect_binary_prediction_gives_exactly_zero() {
        let y = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = y.detached();
        let mut tape = Tape::new();
        let l = soft_iou_loss(&mut tape, &p, &y, SOFT_IOU_EPS).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    #[test]
    fn constant_half_prediction_matches_arithmetic() {
        // n = 16 pixels, m = 4 positives, p = 0.5:
        // L = 1 - (0.5*4 + 1)/(0.5*16 + 4 - 0.5*4 + 1) = 1 - 3/11.
        let mut target = vec![0.0f64; 16];
        target[..4].iter_mut().for_each(|v| *v = 1.0);
        let y = Tensor::<f64>::new(&[1, 1, 4, 4], target).unwrap();
        let p = Tensor::full(&[1, 1, 4, 4], 0.5);
        let mut tape = Tape::new();
        let l = soft_iou_loss(&mut tape, &p, &y, SOFT_IOU_EPS).unwrap();
        assert!((l.item() - (1.0 - 3.0 / 11.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_is_strictly_positive_unless_exact() {
        let y = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0.99, 0.01, 0.98, 0.02]).unwrap();
        let mut tape = Tape::new();
        let l = soft_iou_loss(&mut tape, &p, &y, SOFT_IOU_EPS).unwrap();
        assert!(l.item() > 0.0 && l.item() < 1.0);
    }

    #[test]
    fn non_binary_target_is_rejected() {
        let y = Tensor::<f64>::new(&[1, 1, 1, 2], vec![0.5, 1.0]).unwrap();
        let p = Tensor::full(&[1, 1, 1, 2], 0.5);
        let mut tape = Tape::new();
        assert!(soft_iou_loss(&mut tape, &p, &y, SOFT_IOU_EPS).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = Tensor::<f64>::new(
            &[1, 1, 3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let p = Tensor::<f64>::new(
            &[1, 1, 3, 3],
            vec![0.8, 0.1, 0.2, 0.3, 0.7, 0.4, 0.25, 0.15, 0.9],
        )
        .unwrap()
        .requires_grad();
        let report = gradcheck_default(
            |tape| soft_iou_loss(tape, &p, &y, SOFT_IOU_EPS),
            &[&p],
        )
        .unwrap();
        assert!(report.passed, "{report}");
        let _ = gradcheck(|t| soft_iou_loss(t, &p, &y, SOFT_IOU_EPS), &[&p], DEFAULT_EPS, 1e-4);
    }
}
