use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Linear, MlpConfig, MlpModel, Mode};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "blendfuse-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearState {
    weight: Matrix,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HiddenState {
    linear: LinearState,
    batchnorm: BatchNorm,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: MlpConfig,
    input_dim: usize,
    hidden: Vec<HiddenState>,
    output: LinearState,
}

impl From<&Linear> for LinearState {
    fn from(l: &Linear) -> Self {
        Self {
            weight: Matrix {
                rows: l.weight.nrows(),
                cols: l.weight.ncols(),
                data: l.weight.iter().copied().collect(),
            },
            bias: l.bias.to_vec(),
        }
    }
}

impl LinearState {
    fn into_linear(self, rows: usize, cols: usize) -> Result<Linear> {
        let m = self.weight;
        if (m.rows, m.cols) != (rows, cols) || self.bias.len() != cols {
            return Err(Error::Shape(format!(
                "checkpoint layer is {}x{} with {} biases, expected {rows}x{cols}",
                m.rows,
                m.cols,
                self.bias.len()
            )));
        }
        let weight = Array2::from_shape_vec((rows, cols), m.data).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Linear {
            weight,
            bias: Array1::from(self.bias),
        })
    }
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            input_dim: self.input_dim,
            hidden: self
                .hidden
                .iter()
                .map(|(l, bn)| HiddenState {
                    linear: l.into(),
                    batchnorm: bn.clone(),
                })
                .collect(),
            output: (&self.output).into(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        if ck.hidden.len() != ck.config.hidden_dims.len() {
            return Err(Error::Shape("checkpoint layer count disagrees with its config".into()));
        }
        let mut fan_in = ck.input_dim;
        let mut hidden = Vec::with_capacity(ck.hidden.len());
        for (state, &h) in ck.hidden.into_iter().zip(&ck.config.hidden_dims) {
            let lin = state.linear.into_linear(fan_in, h)?;
            let bn = state.batchnorm;
            if [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()] != [h; 4] {
                return Err(Error::Shape(format!("batch-norm state does not have {h} entries")));
            }
            if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidArgument("running variances must be positive".into()));
            }
            hidden.push((lin, bn));
            fan_in = h;
        }
        let output = ck.output.into_linear(fan_in, ck.config.output_dim)?;
        Ok(Self {
            config: ck.config,
            input_dim: ck.input_dim,
            hidden,
            output,
            mode: Mode::Eval,
        })
    }
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MlpModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = MlpConfig {
            hidden_dims: vec![5, 3],
            seed: 17,
            ..MlpConfig::default()
        };
        let mut model = MlpModel::new(4, cfg).unwrap();
        model.hidden[0].1.running_var[2] = 0.1 + 0.2;
        model.hidden[1].1.running_mean[0] = std::f64::consts::PI / 7.0;
        let back = MlpModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let x = [0.3, -0.2, 1.1, 7.0];
        assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let model = MlpModel::new(2, MlpConfig { hidden_dims: vec![3], ..MlpConfig::default() }).unwrap();
        let text = model.to_json().unwrap();
        assert!(MlpModel::from_json(&text.replace("\"version\": 1", "\"version\": 2")).is_err());
        assert!(MlpModel::from_json(&text.replace("\"input_dim\": 2", "\"input_dim\": 3")).is_err());
    }
}
