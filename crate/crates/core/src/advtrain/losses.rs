use ndarray::{ArrayBase, Data, Dimension};

use crate::error::Result;
use crate::forecaster::mse_loss;

/// Squared distance between the student's adversarial predictions and the
/// teacher's clean predictions.
pub fn kd_loss<S1, S2, D>(student: &ArrayBase<S1, D>, teacher: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    mse_loss(student, teacher)
}

/// `MSE + alpha * kd`, or plain MSE in the first epoch.
pub fn at_loss<S1, S2, D>(pred_adv: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>, kd_term: f64, alpha: f64, is_first_epoch: bool) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let mse = mse_loss(pred_adv, y)?;
    Ok(if is_first_epoch { mse } else { mse + alpha * kd_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    #[test]
    fn kd_is_mean_square_gap() {
        let a = arr1(&[1.0, 2.0, 3.0]);
        assert_eq!(kd_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(kd_loss(&(&a + 2.0), &a).unwrap(), 4.0);
        assert!(kd_loss(&a, &arr1(&[1.0])).is_err());
    }

    #[test]
    fn at_loss_cases() {
        let p = arr1(&[1.0, -1.0]);
        let y: Array1<f64> = Array1::zeros(2);
        assert_eq!(at_loss(&p, &y, 0.7, 0.0, false).unwrap(), 1.0);
        assert_eq!(at_loss(&p, &y, 0.7, 0.4, true).unwrap(), 1.0);
        assert!((at_loss(&p, &y, 0.5, 0.4, false).unwrap() - 1.2).abs() < 1e-15);
    }
}
