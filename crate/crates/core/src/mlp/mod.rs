//! Fully connected classifier head: `[Linear -> BatchNorm -> ReLU -> Dropout]*`
//! followed by `Linear -> softmax`, trained against soft labels with KL loss.

mod batchnorm;
mod checkpoint;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::{EmotionDistribution, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::labels::{kl_unchecked, softmax, SoftLabel};

pub use batchnorm::{batchnorm_forward, BatchNorm, Mode, BN_EPSILON, BN_MOMENTUM};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{train, Dataset, EpochLog, TrainingLog};

use batchnorm::BnCache;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![1024, 512]
}
fn default_dropout() -> f64 {
    0.3
}
fn default_output_dim() -> usize {
    NUM_EMOTIONS
}
fn default_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    80
}
fn default_batch_size() -> usize {
    64
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            dropout: default_dropout(),
            output_dim: default_output_dim(),
            lr: default_lr(),
            momentum: default_momentum(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            batch_size: default_batch_size(),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad(format!("hidden_dims must be non-empty and positive, got {:?}", self.hidden_dims));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.output_dim != NUM_EMOTIONS {
            return bad(format!("output_dim must be {NUM_EMOTIONS}, got {}", self.output_dim));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "need 0 < max_epochs and patience <= max_epochs, got {} and {}",
                self.max_epochs, self.patience
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        Ok(())
    }
}

/// Affine layer `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    input_dim: usize,
    hidden: Vec<(Linear, BatchNorm)>,
    output: Linear,
    mode: Mode,
}

struct HiddenCache {
    input: Array2<f64>,
    bn: BnCache,
    active: Array2<bool>,
    keep: Option<Array2<f64>>,
}

struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
    logits: Array2<f64>,
}

/// Gradients laid out like [`MlpModel::parameters`].
pub(crate) struct Gradients(Vec<f64>);

impl MlpModel {
    pub fn new(input_dim: usize, config: MlpConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut fan_in = input_dim;
        let mut hidden = Vec::with_capacity(config.hidden_dims.len());
        for &h in &config.hidden_dims {
            hidden.push((Linear::glorot(fan_in, h, &mut rng), BatchNorm::new(h)));
            fan_in = h;
        }
        let output = Linear::glorot(fan_in, config.output_dim, &mut rng);
        Ok(Self {
            config,
            input_dim,
            hidden,
            output,
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn hidden_layers(&self) -> &[(Linear, BatchNorm)] {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear {
        &mut self.output
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix contains a non-finite value".into()));
        }
        Ok(())
    }

    /// Inference on one feature vector: running batch-norm statistics, no
    /// dropout. Fails when the model is in train mode.
    pub fn forward(&self, x: &[f64]) -> Result<EmotionDistribution> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.predict(view)?.remove(0))
    }

    /// Inference on a batch of rows.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<EmotionDistribution>> {
        if self.mode == Mode::Train {
            return Err(Error::InvalidArgument(
                "inference requires eval mode; call set_mode(Mode::Eval)".into(),
            ));
        }
        let logits = self.eval_logits(x)?;
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                let p = softmax(row.as_slice().expect("standard layout"));
                EmotionDistribution::new(p.try_into().expect("six logits"))
            })
            .collect()
    }

    fn eval_logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for (lin, bn) in &self.hidden {
            let z = lin.forward(h.view());
            h = bn.forward_eval(z.view())?.mapv(|v| v.max(0.0));
        }
        let logits = self.output.forward(h.view());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward pass produced a non-finite logit".into()));
        }
        Ok(logits)
    }

    /// Mean KL loss of the rows under eval-mode inference.
    pub fn mean_kl(&self, x: ArrayView2<'_, f64>, y: &[SoftLabel]) -> Result<f64> {
        let logits = self.eval_logits(x)?;
        Ok(mean_kl_of_logits(&logits, y))
    }

    fn forward_train(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let rate = self.config.dropout;
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut h = x.to_owned();
        for (lin, bn) in &self.hidden {
            let z = lin.forward(h.view());
            let (normed, bn_cache) = bn.forward_train(z.view())?;
            let active = normed.mapv(|v| v > 0.0);
            let mut a = normed.mapv(|v| v.max(0.0));
            let keep = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let scale = 1.0 / (1.0 - rate);
                    let mask = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if r.random::<f64>() < rate {
                            0.0
                        } else {
                            scale
                        }
                    });
                    a *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            caches.push(HiddenCache {
                input: std::mem::replace(&mut h, a),
                bn: bn_cache,
                active,
                keep,
            });
        }
        let logits = self.output.forward(h.view());
        Ok(ForwardCache {
            hidden: caches,
            last_input: h,
            logits,
        })
    }

    fn backward(&self, cache: &ForwardCache, y: &[SoftLabel]) -> Gradients {
        let n = cache.logits.nrows() as f64;
        let mut d = cache.logits.clone();
        for (mut row, yi) in d.axis_iter_mut(Axis(0)).zip(y) {
            let p = softmax(row.as_slice().expect("standard layout"));
            for (k, v) in row.iter_mut().enumerate() {
                *v = (p[k] - yi.values()[k]) / n;
            }
        }
        let mut layer_grads: Vec<Vec<f64>> = Vec::with_capacity(4 * self.hidden.len() + 2);
        layer_grads.push(d.sum_axis(Axis(0)).to_vec());
        layer_grads.push(flatten(cache.last_input.t().dot(&d)));
        let mut dh = d.dot(&self.output.weight.t());
        for ((lin, bn), hc) in self.hidden.iter().zip(&cache.hidden).rev() {
            if let Some(keep) = &hc.keep {
                dh *= keep;
            }
            ndarray::Zip::from(&mut dh).and(&hc.active).for_each(|g, &on| {
                if !on {
                    *g = 0.0;
                }
            });
            let (dz, dgamma, dbeta) = bn.backward(&hc.bn, &dh);
            layer_grads.push(dbeta.to_vec());
            layer_grads.push(dgamma.to_vec());
            layer_grads.push(dz.sum_axis(Axis(0)).to_vec());
            layer_grads.push(flatten(hc.input.t().dot(&dz)));
            dh = dz.dot(&lin.weight.t());
        }
        layer_grads.reverse();
        Gradients(layer_grads.concat())
    }

    /// Mean KL loss and its gradient with respect to [`Self::parameters`] for
    /// a train-mode pass (batch statistics). Dropout is applied only when an
    /// RNG is supplied. Running statistics are not touched.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[SoftLabel],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        let cache = self.forward_train(x, rng)?;
        let loss = mean_kl_of_logits(&cache.logits, y);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        Ok((loss, self.backward(&cache, y).0))
    }

    /// Train-mode mean KL without dropout, as used for finite differences.
    pub fn train_mode_loss(&self, x: ArrayView2<'_, f64>, y: &[SoftLabel]) -> Result<f64> {
        let cache = self.forward_train(x, None)?;
        Ok(mean_kl_of_logits(&cache.logits, y))
    }

    /// Pre-activations entering each ReLU during a train-mode pass, for
    /// callers that need to avoid the kink at zero.
    pub fn relu_inputs(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.hidden.len());
        let mut h = x.to_owned();
        for (lin, bn) in &self.hidden {
            let z = lin.forward(h.view());
            let (normed, _) = bn.forward_train(z.view())?;
            h = normed.mapv(|v| v.max(0.0));
            out.push(normed);
        }
        Ok(out)
    }

    /// All trainable parameters: for each hidden layer its weights (row
    /// major), bias, batch-norm scale and shift, then the output weights and
    /// bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (lin, bn) in &self.hidden {
            out.extend(lin.weight.iter());
            out.extend(lin.bias.iter());
            out.extend(&bn.gamma);
            out.extend(&bn.beta);
        }
        out.extend(self.output.weight.iter());
        out.extend(self.output.bias.iter());
        out
    }

    pub fn num_parameters(&self) -> usize {
        let hidden: usize = self
            .hidden
            .iter()
            .map(|(l, bn)| l.weight.len() + l.bias.len() + 2 * bn.dim())
            .sum();
        hidden + self.output.weight.len() + self.output.bias.len()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for (lin, bn) in &mut self.hidden {
            lin.weight.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            lin.bias.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            bn.gamma.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            bn.beta.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        self.output.weight.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        self.output.bias.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        Ok(())
    }

    fn apply_update(&mut self, delta: &[f64]) {
        let mut it = delta.iter();
        let mut step = |v: &mut f64| *v += it.next().expect("gradient length matches parameters");
        for (lin, bn) in &mut self.hidden {
            lin.weight.iter_mut().for_each(&mut step);
            lin.bias.iter_mut().for_each(&mut step);
            bn.gamma.iter_mut().for_each(&mut step);
            bn.beta.iter_mut().for_each(&mut step);
        }
        self.output.weight.iter_mut().for_each(&mut step);
        self.output.bias.iter_mut().for_each(&mut step);
    }

    fn update_running_stats(&mut self, cache: &ForwardCache, n: usize) {
        for ((_, bn), hc) in self.hidden.iter_mut().zip(&cache.hidden) {
            bn.update_running(&hc.bn, n);
        }
    }
}

fn flatten(a: Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn mean_kl_of_logits(logits: &Array2<f64>, y: &[SoftLabel]) -> f64 {
    let total: f64 = logits
        .axis_iter(Axis(0))
        .zip(y)
        .map(|(row, yi)| kl_unchecked(yi.values(), &softmax(row.as_slice().expect("standard layout"))))
        .sum();
    total / y.len() as f64
}
