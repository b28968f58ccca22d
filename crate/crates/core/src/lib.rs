//! Multi-encoder emotion blend recognition: soft labels, temporal feature
//! aggregation, a KL-trained classifier head, weighted late fusion and
//! threshold-based blend discretization.

pub mod emotion;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod identities;
pub mod io;
pub mod labels;
pub mod mlp;
pub mod postprocess;
pub mod records;
pub mod synth;

pub use emotion::{BlendAnnotation, DiscretePrediction, Emotion, EmotionDistribution, Salience, NUM_EMOTIONS};
pub use error::{Error, ErrorKind, Result};
