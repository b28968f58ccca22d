use std::path::{Path, PathBuf};

use blendfuse::eval::PipelineConfig;
use blendfuse::features::AggregationConfig;
use blendfuse::mlp::MlpConfig;
use blendfuse::synth::{FeatureSynthConfig, SynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Input locations. Relative paths in a config file are taken relative to
/// that file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Labels file or feature manifest listing `video_id,actor_id`.
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    /// Directory of per-encoder prediction files.
    pub predictions_dir: Option<PathBuf>,
    /// Feature manifest (`video_id,actor_id,path`) for raw frame features.
    pub features_manifest: Option<PathBuf>,
    /// Aggregated feature table (`video_id,actor_id,f0,...`).
    pub features: Option<PathBuf>,
    /// Fixed fusion weights (`encoder,weight`).
    pub weights: Option<PathBuf>,
    /// Results file checked by `verify-identities`.
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    5
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { k: default_k() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Name of the encoder whose held-out predictions are written.
    #[serde(default = "default_encoder")]
    pub encoder_name: String,
}

fn default_encoder() -> String {
    "mlp".into()
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            encoder_name: default_encoder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOutput {
    /// Number of gap-sorted folds written alongside the data.
    #[serde(default = "default_k")]
    pub folds: usize,
    /// Also write an encoder that outputs each video's soft label.
    #[serde(default)]
    pub oracle: bool,
    /// Extra encoders with independent random rows.
    #[serde(default)]
    pub random_encoders: usize,
    /// Also write frame features that linearly encode the labels.
    #[serde(default)]
    pub features: Option<FeatureSynthConfig>,
}

impl Default for SynthOutput {
    fn default() -> Self {
        Self {
            folds: default_k(),
            oracle: false,
            random_encoders: 0,
            features: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. When set it replaces the model and synthesis seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub aggregate: AggregationConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub synth_output: SynthOutput,
}

impl Paths {
    fn slots(&self) -> [(&'static str, &Option<PathBuf>); 8] {
        [
            ("manifest", &self.manifest),
            ("labels", &self.labels),
            ("folds", &self.folds),
            ("predictions_dir", &self.predictions_dir),
            ("features_manifest", &self.features_manifest),
            ("features", &self.features),
            ("weights", &self.weights),
            ("results", &self.results),
        ]
    }

    fn slots_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 8] {
        [
            ("manifest", &mut self.manifest),
            ("labels", &mut self.labels),
            ("folds", &mut self.folds),
            ("predictions_dir", &mut self.predictions_dir),
            ("features_manifest", &mut self.features_manifest),
            ("features", &mut self.features),
            ("weights", &mut self.weights),
            ("results", &mut self.results),
        ]
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for slot in cfg.paths.slots_mut() {
            rebase(base, slot.1);
        }
        Ok(cfg)
    }

    /// Every referenced input must exist.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let missing: Vec<String> = self
            .paths
            .slots()
            .into_iter()
            .filter_map(|(key, p)| p.as_ref().filter(|p| !p.exists()).map(|p| format!("paths.{key} = {}", p.display())))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!("missing input path(s): {}", missing.join("; "))))
        }
    }

    /// Pushes the master seed into the sections that carry their own.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.mlp.seed = seed;
        self.synth.seed = seed;
        if let Some(f) = &mut self.synth_output.features {
            f.seed = seed;
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Returns the configured path, failing with a config error when it is unset.
pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::config(format!("paths.{key} is not set (config file or flag)")))
}
