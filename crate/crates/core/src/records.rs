//! Per-video records and per-encoder prediction sets.

use std::collections::{BTreeMap, BTreeSet};

use crate::emotion::{average_clips, BlendAnnotation, EmotionDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub video_id: String,
    pub actor_id: String,
    pub annotation: Option<BlendAnnotation>,
}

/// Checks that video ids are unique within a manifest.
pub fn check_manifest(records: &[SampleRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.video_id.as_str()) {
            return Err(Error::Duplicate(format!(
                "video_id '{}' in manifest",
                r.video_id
            )));
        }
    }
    Ok(())
}

/// Labeled subset of a manifest as a `video_id -> annotation` map.
pub fn label_map(records: &[SampleRecord]) -> BTreeMap<String, BlendAnnotation> {
    records
        .iter()
        .filter_map(|r| r.annotation.map(|a| (r.video_id.clone(), a)))
        .collect()
}

/// `video_id -> actor_id` for a manifest.
pub fn actor_map(records: &[SampleRecord]) -> BTreeMap<String, String> {
    records
        .iter()
        .map(|r| (r.video_id.clone(), r.actor_id.clone()))
        .collect()
}

/// Probability outputs of one encoder. A video may carry several rows, one
/// per evaluated clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderPredictionSet {
    pub encoder_name: String,
    rows: BTreeMap<String, Vec<EmotionDistribution>>,
    actors: BTreeMap<String, String>,
}

impl EncoderPredictionSet {
    pub fn new(encoder_name: impl Into<String>) -> Self {
        Self {
            encoder_name: encoder_name.into(),
            ..Default::default()
        }
    }

    /// Appends one clip row. A video keeps the actor it was first seen with.
    pub fn push(
        &mut self,
        video_id: impl Into<String>,
        actor_id: impl Into<String>,
        row: EmotionDistribution,
    ) -> Result<()> {
        let video_id = video_id.into();
        let actor_id = actor_id.into();
        match self.actors.get(&video_id) {
            Some(existing) if *existing != actor_id => {
                return Err(Error::InvalidAnnotation(format!(
                    "video '{video_id}' listed under actors '{existing}' and '{actor_id}'"
                )))
            }
            Some(_) => {}
            None => {
                self.actors.insert(video_id.clone(), actor_id);
            }
        }
        self.rows.entry(video_id).or_default().push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn actor(&self, video_id: &str) -> Option<&str> {
        self.actors.get(video_id).map(String::as_str)
    }

    pub fn clips(&self, video_id: &str) -> Option<&[EmotionDistribution]> {
        self.rows.get(video_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[EmotionDistribution])> {
        self.rows
            .iter()
            .map(|(v, rows)| (v.as_str(), self.actors[v].as_str(), rows.as_slice()))
    }

    /// Multi-clip averaged distribution for a video.
    pub fn averaged(&self, video_id: &str) -> Result<EmotionDistribution> {
        let rows = self.clips(video_id).ok_or_else(|| {
            Error::Missing(format!(
                "encoder '{}' has no prediction for video '{video_id}'",
                self.encoder_name
            ))
        })?;
        average_clips(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;

    #[test]
    fn clips_accumulate_and_average() {
        let mut set = EncoderPredictionSet::new("face");
        set.push("v1", "a1", EmotionDistribution::one_hot(Emotion::Anger))
            .unwrap();
        set.push("v1", "a1", EmotionDistribution::one_hot(Emotion::Fear))
            .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.clips("v1").unwrap().len(), 2);
        let avg = set.averaged("v1").unwrap();
        assert_eq!(avg.values(), &[0.5, 0.0, 0.5, 0.0, 0.0, 0.0]);
        assert!(set.averaged("v2").is_err());
    }

    #[test]
    fn conflicting_actor_is_rejected() {
        let mut set = EncoderPredictionSet::new("face");
        let u = EmotionDistribution::uniform();
        set.push("v1", "a1", u).unwrap();
        assert!(set.push("v1", "a2", u).is_err());
    }

    #[test]
    fn duplicate_video_ids_rejected() {
        let rec = |v: &str| SampleRecord {
            video_id: v.into(),
            actor_id: "a".into(),
            annotation: None,
        };
        assert!(check_manifest(&[rec("x"), rec("y")]).is_ok());
        assert!(check_manifest(&[rec("x"), rec("x")]).is_err());
    }
}
