//! Seeded synthetic actors, labels and encoder outputs.
//!
//! Every actor gets a gap `g` drawn from `actor_gap_range`. A 70/30 clip's
//! top-two gap is exactly `g` before noise, a 50/50 clip's gap is drawn from
//! `[0, blend_imbalance * g]`, and a single-emotion clip puts 0.9 on its
//! emotion.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emotion::{BlendAnnotation, Emotion, EmotionDistribution, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::eval::FoldAssignment;
use crate::features::FrameFeatureSequence;
use crate::labels::{encode_soft_label, softmax};
use crate::records::{EncoderPredictionSet, SampleRecord};

/// Proportions of single, 50/50 and 70/30 labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMix {
    pub single: f64,
    pub even: f64,
    pub dominant: f64,
}

impl Default for LabelMix {
    fn default() -> Self {
        Self {
            single: 0.46,
            even: 0.18,
            dominant: 0.36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_actors: usize,
    pub clips_per_actor: usize,
    #[serde(default)]
    pub label_mix: LabelMix,
    pub actor_gap_range: (f64, f64),
    #[serde(default)]
    pub noise_sigma: f64,
    /// Upper bound of a 50/50 clip's gap as a fraction of its actor's gap.
    #[serde(default = "default_imbalance")]
    pub blend_imbalance: f64,
    #[serde(default = "default_encoder")]
    pub encoder_name: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_imbalance() -> f64 {
    0.5
}

fn default_encoder() -> String {
    "synth".into()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_actors: 43,
            clips_per_actor: 50,
            label_mix: LabelMix::default(),
            actor_gap_range: (0.05, 0.45),
            noise_sigma: 0.0,
            blend_imbalance: default_imbalance(),
            encoder_name: default_encoder(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_actors == 0 || self.clips_per_actor == 0 {
            return bad("n_actors and clips_per_actor must be positive".into());
        }
        let m = self.label_mix;
        let parts = [m.single, m.even, m.dominant];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("label_mix must be non-negative and sum to 1, got {parts:?}"));
        }
        let (lo, hi) = self.actor_gap_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("actor_gap_range must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.blend_imbalance) {
            return bad(format!("blend_imbalance must be in [0, 1], got {}", self.blend_imbalance));
        }
        if self.encoder_name.is_empty() {
            return bad("encoder_name must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: Vec<SampleRecord>,
    pub predictions: EncoderPredictionSet,
    pub actor_gaps: BTreeMap<String, f64>,
}

pub fn actor_id(i: usize) -> String {
    format!("actor{i:03}")
}

pub fn video_id(actor: usize, clip: usize) -> String {
    format!("actor{actor:03}_clip{clip:03}")
}

/// The 15 unordered emotion pairs in lexicographic index order.
pub fn emotion_pairs() -> Vec<(Emotion, Emotion)> {
    let mut out = Vec::with_capacity(15);
    for a in 0..NUM_EMOTIONS {
        for b in a + 1..NUM_EMOTIONS {
            out.push((Emotion::ALL[a], Emotion::ALL[b]));
        }
    }
    out
}

/// Probability row for a 70/30 clip: `hi - lo = gap`, the other four share
/// the rest equally and stay below `lo`.
fn dominant_row(dom: Emotion, sec: Emotion, gap: f64) -> [f64; NUM_EMOTIONS] {
    let other = (0.025f64).min((1.0 - gap) / 10.0);
    let lo = (1.0 - 4.0 * other - gap) / 2.0;
    let mut row = [other; NUM_EMOTIONS];
    row[dom.index()] = lo + gap;
    row[sec.index()] = lo;
    row
}

fn single_row(e: Emotion) -> [f64; NUM_EMOTIONS] {
    let mut row = [0.02; NUM_EMOTIONS];
    row[e.index()] = 0.9;
    row
}

/// Logit-space Gaussian noise, each draw rejected outside two standard
/// deviations, followed by softmax.
fn perturb(row: [f64; NUM_EMOTIONS], sigma: f64, rng: &mut ChaCha8Rng) -> [f64; NUM_EMOTIONS] {
    if sigma == 0.0 {
        return row;
    }
    let logits: Vec<f64> = row
        .iter()
        .map(|p| {
            let eps = loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break z;
                }
            };
            p.ln() + sigma * eps
        })
        .collect();
    softmax(&logits).try_into().expect("six entries")
}

struct ActorOutput {
    gap: f64,
    clips: Vec<(String, BlendAnnotation, EmotionDistribution)>,
}

fn generate_actor(cfg: &SynthConfig, actor: usize) -> Result<ActorOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(actor as u64 + 1);
    let (lo, hi) = cfg.actor_gap_range;
    let gap = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let pairs = emotion_pairs();
    let mix = cfg.label_mix;
    let mut clips = Vec::with_capacity(cfg.clips_per_actor);
    for clip in 0..cfg.clips_per_actor {
        let u: f64 = rng.random();
        let (a, b) = pairs[rng.random_range(0..pairs.len())];
        let (a, b) = if rng.random::<bool>() { (a, b) } else { (b, a) };
        let (annotation, row) = if u < mix.single {
            (BlendAnnotation::single(a), single_row(a))
        } else if u < mix.single + mix.even {
            let d = rng.random::<f64>() * cfg.blend_imbalance * gap;
            let mut row = [0.025; NUM_EMOTIONS];
            row[a.index()] = (0.9 + d) / 2.0;
            row[b.index()] = (0.9 - d) / 2.0;
            (BlendAnnotation::even(a, b)?, row)
        } else {
            (BlendAnnotation::dominant(a, b)?, dominant_row(a, b, gap))
        };
        let (p, _) = EmotionDistribution::new_lenient(perturb(row, cfg.noise_sigma, &mut rng))?;
        clips.push((video_id(actor, clip), annotation, p));
    }
    Ok(ActorOutput { gap, clips })
}

/// Deterministic in `cfg`; actors are generated in parallel from
/// independent per-actor streams.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let actors: Vec<ActorOutput> = (0..cfg.n_actors)
        .into_par_iter()
        .map(|a| generate_actor(cfg, a))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(cfg.n_actors * cfg.clips_per_actor);
    let mut predictions = EncoderPredictionSet::new(cfg.encoder_name.clone());
    let mut actor_gaps = BTreeMap::new();
    for (i, out) in actors.into_iter().enumerate() {
        let actor = actor_id(i);
        actor_gaps.insert(actor.clone(), out.gap);
        for (video, annotation, p) in out.clips {
            predictions.push(video.clone(), actor.clone(), p)?;
            records.push(SampleRecord {
                video_id: video,
                actor_id: actor.clone(),
                annotation: Some(annotation),
            });
        }
    }
    Ok(SynthData {
        records,
        predictions,
        actor_gaps,
    })
}

impl SynthData {
    /// Actors sorted by gap (ties by id) and cut into `k` contiguous groups
    /// whose sizes differ by at most one.
    pub fn folds_by_gap(&self, k: usize) -> Result<FoldAssignment> {
        let n = self.actor_gaps.len();
        if k < 2 || k > n {
            return Err(Error::InvalidArgument(format!("cannot cut {n} actors into {k} folds")));
        }
        let mut actors: Vec<(&String, f64)> = self.actor_gaps.iter().map(|(a, g)| (a, *g)).collect();
        actors.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(y.0)));
        FoldAssignment::from_pairs(actors.into_iter().enumerate().map(|(i, (a, _))| (a.clone(), i * k / n)))
    }
}

/// An encoder whose output is each labeled video's soft label.
pub fn oracle_encoder(records: &[SampleRecord], name: &str) -> Result<EncoderPredictionSet> {
    let mut set = EncoderPredictionSet::new(name);
    for r in records {
        if let Some(a) = &r.annotation {
            set.push(r.video_id.clone(), r.actor_id.clone(), encode_soft_label(a).as_distribution())?;
        }
    }
    Ok(set)
}

/// An encoder whose rows are independent draws from the uniform
/// distribution on the simplex.
pub fn random_encoder(records: &[SampleRecord], name: &str, seed: u64) -> Result<EncoderPredictionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = EncoderPredictionSet::new(name);
    for r in records {
        let e: [f64; NUM_EMOTIONS] = std::array::from_fn(|_| Exp1.sample(&mut rng));
        let total: f64 = e.iter().sum();
        let (p, _) = EmotionDistribution::new_lenient(e.map(|v| v / total))?;
        set.push(r.video_id.clone(), r.actor_id.clone(), p)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSynthConfig {
    pub layers: usize,
    pub frames: usize,
    pub dims: usize,
    /// Standard deviation of per-entry Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            frames: 12,
            dims: 32,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Frame features that linearly encode each labeled video's soft label:
/// every frame of every layer is `M y + noise` for one fixed random `M`.
pub fn feature_sequences(records: &[SampleRecord], cfg: &FeatureSynthConfig) -> Result<Vec<FrameFeatureSequence>> {
    if cfg.layers == 0 || cfg.frames == 0 || cfg.dims == 0 || !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid feature synthesis settings {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mixing: Vec<[f64; NUM_EMOTIONS]> = (0..cfg.dims)
        .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
        .collect();
    records
        .iter()
        .filter_map(|r| r.annotation.map(|a| (r, a)))
        .enumerate()
        .map(|(i, (r, a))| {
            let y = encode_soft_label(&a);
            let base: Vec<f64> = mixing
                .iter()
                .map(|m| m.iter().zip(y.values()).map(|(w, v)| w * v).sum())
                .collect();
            let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed);
            vrng.set_stream(i as u64 + 1);
            let data = Array3::from_shape_fn((cfg.layers, cfg.frames, cfg.dims), |(_, _, d)| {
                let z: f64 = StandardNormal.sample(&mut vrng);
                base[d] + cfg.noise * z
            });
            FrameFeatureSequence::new(r.video_id.clone(), data)
        })
        .collect()
}
