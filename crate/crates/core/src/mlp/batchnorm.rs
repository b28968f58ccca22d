use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Values saved by a train-mode pass for the backward pass and the running
/// statistics update.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn forward_train(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, BnCache)> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch normalization in train mode needs at least 2 rows, got {n}"
            )));
        }
        self.check_dim(x)?;
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("n >= 2");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let xhat = &centered * &inv_std;
        let out = self.scale_shift(&xhat);
        Ok((out, BnCache { xhat, inv_std, mean, var }))
    }

    pub(crate) fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        let mean = Array1::from(self.running_mean.clone());
        let inv_std = Array1::from_iter(self.running_var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()));
        let xhat = (&x - &mean) * &inv_std;
        Ok(self.scale_shift(&xhat))
    }

    fn scale_shift(&self, xhat: &Array2<f64>) -> Array2<f64> {
        let gamma = ArrayView2::from_shape((1, self.dim()), &self.gamma).expect("gamma length");
        let beta = ArrayView2::from_shape((1, self.dim()), &self.beta).expect("beta length");
        xhat * &gamma + &beta
    }

    fn check_dim(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch normalization expects {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Folds batch statistics into the running estimates. The running
    /// variance uses the unbiased batch variance.
    pub(crate) fn update_running(&mut self, cache: &BnCache, n: usize) {
        let correction = n as f64 / (n as f64 - 1.0);
        for j in 0..self.dim() {
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * cache.mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * cache.var[j] * correction;
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub(crate) fn backward(&self, cache: &BnCache, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let gamma = Array1::from(self.gamma.clone());
        let dxhat = dy * &gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / n);
        (dx, dgamma, dbeta)
    }
}

/// Normalizes a batch. Train mode uses batch statistics and updates the
/// running estimates; eval mode uses the running estimates.
pub fn batchnorm_forward(batch: ArrayView2<'_, f64>, bn: &mut BatchNorm, mode: Mode) -> Result<Array2<f64>> {
    match mode {
        Mode::Train => {
            let (out, cache) = bn.forward_train(batch)?;
            bn.update_running(&cache, batch.nrows());
            Ok(out)
        }
        Mode::Eval => bn.forward_eval(batch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn train_mode_standardizes_columns() {
        let x = array![[1.0, -3.0], [2.0, 0.5], [4.0, 8.0], [7.0, 1.0]];
        let mut bn = BatchNorm::new(2);
        let y = batchnorm_forward(x.view(), &mut bn, Mode::Train).unwrap();
        for col in y.axis_iter(Axis(1)) {
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m) * (c - m)).mean().unwrap();
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
        // running stats moved 10% towards the batch
        assert!((bn.running_mean[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn eval_matches_train_when_stats_agree() {
        let x = array![[1.0, 2.0], [3.0, 5.0], [2.0, -1.0]];
        let mut bn = BatchNorm::new(2);
        let (train, cache) = bn.forward_train(x.view()).unwrap();
        bn.running_mean = cache.mean.to_vec();
        bn.running_var = cache.var.to_vec();
        let eval = bn.forward_eval(x.view()).unwrap();
        for (a, b) in train.iter().zip(eval.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let x = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let mut bn = BatchNorm::new(2);
        let y = batchnorm_forward(x.view(), &mut bn, Mode::Train).unwrap();
        assert!(y.column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_row_rejected_in_train_mode() {
        let x = array![[1.0, 2.0]];
        let mut bn = BatchNorm::new(2);
        assert!(batchnorm_forward(x.view(), &mut bn, Mode::Train).is_err());
        assert!(batchnorm_forward(x.view(), &mut bn, Mode::Eval).is_ok());
        assert!(batchnorm_forward(array![[1.0]].view(), &mut bn, Mode::Eval).is_err());
    }
}
