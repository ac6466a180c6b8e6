//! Error metrics. All three average over every element; the caller decides
//! whether inputs are normalised or already in data units.

use ndarray::{ArrayBase, Data, Dimension};

use crate::error::{Error, Result};

fn residuals<'a, S1, S2, D>(pred: &'a ArrayBase<S1, D>, target: &'a ArrayBase<S2, D>) -> Result<impl Iterator<Item = f64> + 'a>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if pred.shape() != target.shape() {
        return Err(Error::Contract(format!("shape mismatch {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::Contract("metric over an empty array".into()));
    }
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| a - b))
}

pub fn mse_loss<S1, S2, D>(pred: &ArrayBase<S1, D>, target: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let n = pred.len() as f64;
    Ok(residuals(pred, target)?.map(|r| r * r).sum::<f64>() / n)
}

pub fn mae_metric<S1, S2, D>(pred: &ArrayBase<S1, D>, target: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let n = pred.len() as f64;
    Ok(residuals(pred, target)?.map(f64::abs).sum::<f64>() / n)
}

pub fn rmse_metric<S1, S2, D>(pred: &ArrayBase<S1, D>, target: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    Ok(mse_loss(pred, target)?.sqrt())
}
