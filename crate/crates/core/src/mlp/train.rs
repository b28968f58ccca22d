use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MlpConfig, MlpModel};
use crate::error::{Error, Result};
use crate::labels::SoftLabel;

/// Feature rows paired with soft-label targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<SoftLabel>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<SoftLabel>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", x.nrows(), y.len())));
        }
        if y.is_empty() {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<SoftLabel>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape(format!("feature rows of length {d} and {}", r.len())));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(x, y)
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[SoftLabel] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Splits a shuffled index list into batches; a trailing batch of one row is
/// merged into its predecessor because batch statistics need two rows.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Mini-batch gradient descent with momentum on mean KL loss. Stops once
/// validation loss has not improved for `patience` consecutive epochs and
/// returns the weights from the best validation epoch.
pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &MlpConfig) -> Result<(MlpModel, TrainingLog)> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Empty("training needs at least 2 rows".into()));
    }
    if train_set.dim() != val_set.dim() {
        return Err(Error::Shape(format!(
            "train features have {} columns, validation {}",
            train_set.dim(),
            val_set.dim()
        )));
    }
    let mut model = MlpModel::new(train_set.dim(), cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut velocity = vec![0.0; model.num_parameters()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(MlpModel, usize, f64)> = None;
    let mut wait = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let x = train_set.x.select(Axis(0), batch);
            let y: Vec<SoftLabel> = batch.iter().map(|&i| train_set.y[i]).collect();
            let cache = model.forward_train(x.view(), Some(&mut rng))?;
            let loss = super::mean_kl_of_logits(&cache.logits, &y);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let grads = model.backward(&cache, &y).0;
            model.update_running_stats(&cache, batch.len());
            for (v, g) in velocity.iter_mut().zip(&grads) {
                *v = cfg.momentum * *v + g;
            }
            let delta: Vec<f64> = velocity.iter().map(|v| -cfg.lr * v).collect();
            model.apply_update(&delta);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = model.mean_kl(val_set.x(), val_set.y())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(_, _, b)| val_loss < *b) {
            best = Some((model.clone(), epoch, val_loss));
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                stopped_early = true;
                log::info!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    let (model, best_epoch, best_val_loss) = best.expect("at least one epoch runs");
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            best_val_loss,
            stopped_early,
        },
    ))
}
