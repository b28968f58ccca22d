//! Emotion vocabulary, probability vectors and blend annotations.
//!
//! The six basic emotions are ordered alphabetically; that order is the
//! column order of every probability vector and file in this crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of emotion classes in every distribution.
pub const NUM_EMOTIONS: usize = 6;

/// Absolute tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Rows whose sum is off by at most this much are renormalized with a warning.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happiness,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("emotion index {index} out of range 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happiness => "happiness",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == needle)
            .ok_or_else(|| Error::UnknownEmotion(s.to_string()))
    }
}

/// A probability vector over the six emotions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionDistribution([f64; NUM_EMOTIONS]);

impl EmotionDistribution {
    /// Validates `values`: every entry finite and in `[0, 1]`, sum within
    /// [`SUM_TOLERANCE`] of one.
    pub fn new(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1 within {SUM_TOLERANCE}"
            )));
        }
        Ok(Self(values))
    }

    /// Like [`EmotionDistribution::new`] but rescales rows whose sum is within
    /// [`RENORMALIZE_TOLERANCE`] of one. The flag reports whether rescaling
    /// happened.
    pub fn new_lenient(values: [f64; NUM_EMOTIONS]) -> Result<(Self, bool)> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        let off = (sum - 1.0).abs();
        if off <= SUM_TOLERANCE {
            return Ok((Self(values), false));
        }
        if off > RENORMALIZE_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, beyond renormalization tolerance {RENORMALIZE_TOLERANCE}"
            )));
        }
        let mut scaled = values;
        scaled.iter_mut().for_each(|v| *v /= sum);
        Ok((Self(scaled), true))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_EMOTIONS as f64; NUM_EMOTIONS])
    }

    pub fn one_hot(emotion: Emotion) -> Self {
        let mut values = [0.0; NUM_EMOTIONS];
        values[emotion.index()] = 1.0;
        Self(values)
    }

    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    pub fn get(&self, emotion: Emotion) -> f64 {
        self.0[emotion.index()]
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> Emotion {
        let mut best = 0;
        for i in 1..NUM_EMOTIONS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Emotion::ALL[best]
    }
}

fn check_entries(values: &[f64; NUM_EMOTIONS]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("probability entry {i} is {v}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Elementwise mean of per-clip distributions.
pub fn average_clips(rows: &[EmotionDistribution]) -> Result<EmotionDistribution> {
    if rows.is_empty() {
        return Err(Error::Empty("no clip distributions to average".into()));
    }
    if rows.len() == 1 {
        return Ok(rows[0]);
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; NUM_EMOTIONS];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    EmotionDistribution::new(mean)
}

/// Salience split of an annotation, expressed from the primary emotion's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Salience {
    /// A single emotion (100).
    Single,
    /// Primary at 70, secondary at 30.
    Dominant,
    /// Both at 50.
    Even,
}

impl Salience {
    pub fn primary_percent(self) -> u8 {
        match self {
            Salience::Single => 100,
            Salience::Dominant => 70,
            Salience::Even => 50,
        }
    }
}

/// Ground-truth (or predicted) emotion set with its salience split.
///
/// Always stored canonically: a 30/70 split is flipped so the 70 side is
/// primary, and a 50/50 pair keeps the lower-index emotion as primary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlendAnnotation {
    primary: Emotion,
    secondary: Option<Emotion>,
    salience: Salience,
}

/// Output of the discretization pipeline; same shape and invariants as an
/// annotation.
pub type DiscretePrediction = BlendAnnotation;

impl BlendAnnotation {
    pub fn single(emotion: Emotion) -> Self {
        Self {
            primary: emotion,
            secondary: None,
            salience: Salience::Single,
        }
    }

    /// A 70/30 blend with `dominant` at 70.
    pub fn dominant(dominant: Emotion, other: Emotion) -> Result<Self> {
        if dominant == other {
            return Err(Error::InvalidAnnotation(format!(
                "blend needs two distinct emotions, got {dominant} twice"
            )));
        }
        Ok(Self {
            primary: dominant,
            secondary: Some(other),
            salience: Salience::Dominant,
        })
    }

    /// A 50/50 blend, ordered by emotion index.
    pub fn even(a: Emotion, b: Emotion) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidAnnotation(format!(
                "blend needs two distinct emotions, got {a} twice"
            )));
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Ok(Self {
            primary: lo,
            secondary: Some(hi),
            salience: Salience::Even,
        })
    }

    /// Builds the canonical annotation from raw file fields; `salience_primary`
    /// is the percentage attributed to `primary` (100, 70, 50 or 30).
    pub fn canonicalize(
        primary: Emotion,
        secondary: Option<Emotion>,
        salience_primary: u8,
    ) -> Result<Self> {
        match (salience_primary, secondary) {
            (100, None) => Ok(Self::single(primary)),
            (100, Some(s)) => Err(Error::InvalidAnnotation(format!(
                "salience 100 with a secondary emotion ({s})"
            ))),
            (70 | 50 | 30, None) => Err(Error::InvalidAnnotation(format!(
                "salience {salience_primary} without a secondary emotion"
            ))),
            (70, Some(s)) => Self::dominant(primary, s),
            (30, Some(s)) => Self::dominant(s, primary),
            (50, Some(s)) => Self::even(primary, s),
            (other, _) => Err(Error::InvalidAnnotation(format!(
                "salience {other} not one of 100, 70, 50, 30"
            ))),
        }
    }

    pub fn primary(&self) -> Emotion {
        self.primary
    }

    pub fn secondary(&self) -> Option<Emotion> {
        self.secondary
    }

    pub fn salience(&self) -> Salience {
        self.salience
    }

    pub fn is_blend(&self) -> bool {
        self.secondary.is_some()
    }

    /// Bit mask of the emotions present (bit `i` for emotion index `i`).
    pub fn presence_mask(&self) -> u8 {
        let mut mask = 1u8 << self.primary.index();
        if let Some(s) = self.secondary {
            mask |= 1 << s.index();
        }
        mask
    }
}

impl fmt::Display for BlendAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.secondary, self.salience) {
            (Some(s), Salience::Dominant) => write!(f, "{{{}: 70, {}: 30}}", self.primary, s),
            (Some(s), _) => write!(f, "{{{}: 50, {}: 50}}", self.primary, s),
            (None, _) => write!(f, "{{{}: 100}}", self.primary),
        }
    }
}
