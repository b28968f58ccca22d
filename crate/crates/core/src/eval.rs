//! Presence/salience accuracy, actor-disjoint folds and cross-validation.
//!
//! Presence is correct when the predicted emotion set equals the true set.
//! Salience is correct when the whole canonical annotation matches, so it
//! implies presence and a 70/30 prediction only counts when the dominant side
//! matches.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::emotion::{BlendAnnotation, DiscretePrediction, EmotionDistribution};
use crate::error::{Error, Result};
use crate::fusion::{fuse, optimize_weights, FusionProblem, FusionStrategy, WeightSearch, WeightVector};
use crate::postprocess::{
    discretize, search_thresholds, select_thresholds, Grid, Neutral, PostprocessConfig, SelectionStrategy,
    ThresholdPair, ThresholdSurface,
};
use crate::records::{EncoderPredictionSet, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub acc_p: f64,
    pub acc_s: f64,
    pub score: f64,
    pub n: usize,
}

impl EvalResult {
    /// Score is always `0.5 * (acc_p + acc_s)`.
    pub fn new(acc_p: f64, acc_s: f64, n: usize) -> Self {
        Self {
            acc_p,
            acc_s,
            score: 0.5 * (acc_p + acc_s),
            n,
        }
    }
}

/// Running counts of presence and salience hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    presence: usize,
    salience: usize,
    n: usize,
}

impl Tally {
    pub fn add(&mut self, pred: &DiscretePrediction, truth: &BlendAnnotation) {
        self.n += 1;
        if pred.presence_mask() == truth.presence_mask() {
            self.presence += 1;
            if pred == truth {
                self.salience += 1;
            }
        }
    }

    pub fn result(&self) -> EvalResult {
        if self.n == 0 {
            return EvalResult::new(0.0, 0.0, 0);
        }
        let n = self.n as f64;
        EvalResult::new(self.presence as f64 / n, self.salience as f64 / n, self.n)
    }
}

/// Scores predictions against every labeled video.
pub fn evaluate(
    preds: &BTreeMap<String, DiscretePrediction>,
    labels: &BTreeMap<String, BlendAnnotation>,
) -> Result<EvalResult> {
    if labels.is_empty() {
        return Err(Error::Empty("no labeled videos to evaluate".into()));
    }
    let mut tally = Tally::default();
    for (video, truth) in labels {
        let pred = preds
            .get(video)
            .ok_or_else(|| Error::Missing(format!("no prediction for labeled video '{video}'")))?;
        tally.add(pred, truth);
    }
    Ok(tally.result())
}

/// Actor to fold mapping; an actor belongs to exactly one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Builds an assignment where folds are numbered `0..k` and each is used.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let mut folds = BTreeMap::new();
        for (actor, fold) in pairs {
            if let Some(prev) = folds.insert(actor.clone(), fold) {
                return Err(Error::Duplicate(format!(
                    "actor '{actor}' assigned to folds {prev} and {fold}"
                )));
            }
        }
        let used: BTreeSet<usize> = folds.values().copied().collect();
        let k = used.iter().next_back().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, found {k}")));
        }
        if used.len() != k {
            return Err(Error::Empty(format!("fold numbers must cover 0..{k} without gaps")));
        }
        Ok(Self { k, folds })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, actor: &str) -> Option<usize> {
        self.folds.get(actor).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.folds.iter().map(|(a, f)| (a.as_str(), *f))
    }

    pub fn actors_in(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.folds
            .iter()
            .filter(move |(_, f)| **f == fold)
            .map(|(a, _)| a.as_str())
    }
}

/// Greedy balanced split: actors by descending clip count (ties by id), each
/// to the currently lightest fold (ties by fold index).
pub fn split_actors(records: &[SampleRecord], k: usize) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.actor_id.as_str()).or_default() += 1;
    }
    if k > counts.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of actors ({})",
            counts.len()
        )));
    }
    let mut actors: Vec<(&str, usize)> = counts.into_iter().collect();
    actors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut load = vec![0usize; k];
    let mut pairs = Vec::with_capacity(actors.len());
    for (actor, n) in actors {
        let lightest = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[lightest] += n;
        pairs.push((actor.to_string(), lightest));
    }
    FoldAssignment::from_pairs(pairs)
}

/// Everything fitted on training folds: fusion weights and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub fusion: FusionStrategy,
    /// Re-optimize thresholds for every weight candidate.
    #[serde(default)]
    pub joint_thresholds: bool,
    /// Thresholds held fixed during the weight search.
    #[serde(default = "default_initial_thresholds")]
    pub initial_thresholds: ThresholdPair,
    #[serde(default = "default_selection")]
    pub threshold_strategy: SelectionStrategy,
    #[serde(default)]
    pub alpha_grid: Grid,
    #[serde(default)]
    pub beta_grid: Grid,
    #[serde(default)]
    pub neutral: Neutral,
    #[serde(default)]
    pub renormalize_survivors: bool,
}

fn default_initial_thresholds() -> ThresholdPair {
    ThresholdPair { alpha: 0.1, beta: 0.1 }
}

fn default_selection() -> SelectionStrategy {
    SelectionStrategy::PerFoldAverage
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionStrategy::default(),
            joint_thresholds: false,
            initial_thresholds: default_initial_thresholds(),
            threshold_strategy: default_selection(),
            alpha_grid: Grid::default(),
            beta_grid: Grid::default(),
            neutral: Neutral::Absent,
            renormalize_survivors: false,
        }
    }
}

impl PipelineConfig {
    pub fn postprocess(&self, thresholds: ThresholdPair) -> PostprocessConfig {
        PostprocessConfig {
            neutral: self.neutral,
            thresholds,
            renormalize_survivors: self.renormalize_survivors,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub search: WeightSearch,
    pub thresholds: ThresholdPair,
    /// One surface per training fold, in fold order, at the final weights.
    pub surfaces: Vec<ThresholdSurface>,
    pub folds: Vec<usize>,
}

impl FittedPipeline {
    pub fn weights(&self) -> &WeightVector {
        &self.search.weights
    }
}

/// Fused distributions for every video covered by all encoders in `w`.
pub fn fuse_all(
    preds: &[EncoderPredictionSet],
    w: &WeightVector,
    videos: impl IntoIterator<Item = impl AsRef<str>>,
) -> Result<BTreeMap<String, EmotionDistribution>> {
    videos
        .into_iter()
        .map(|v| {
            let v = v.as_ref();
            fuse(preds, w, v).map(|d| (v.to_string(), d))
        })
        .collect()
}

fn labels_in_fold(records: &[SampleRecord], assignment: &FoldAssignment, fold: usize) -> BTreeMap<String, BlendAnnotation> {
    records
        .iter()
        .filter(|r| assignment.fold_of(&r.actor_id) == Some(fold))
        .filter_map(|r| r.annotation.map(|a| (r.video_id.clone(), a)))
        .collect()
}

/// Fits fusion weights with thresholds held at their initial values (or
/// jointly, when configured), then re-selects thresholds once on the final
/// weights from per-fold surfaces.
pub fn fit_pipeline(
    preds: &[EncoderPredictionSet],
    records: &[SampleRecord],
    assignment: &FoldAssignment,
    folds: &[usize],
    cfg: &PipelineConfig,
) -> Result<FittedPipeline> {
    let mut problem = FusionProblem::new(
        preds,
        records,
        assignment,
        folds,
        cfg.postprocess(cfg.initial_thresholds),
    )?;
    if cfg.joint_thresholds {
        problem = problem.with_joint_thresholds(cfg.alpha_grid.clone(), cfg.beta_grid.clone());
    }
    let search = optimize_weights(&problem, &cfg.fusion)?;
    let mut folds: Vec<usize> = folds.to_vec();
    folds.sort_unstable();
    folds.dedup();
    let surfaces = folds
        .iter()
        .map(|&f| {
            let labels = labels_in_fold(records, assignment, f);
            let fused = fuse_all(preds, &search.weights, labels.keys())?;
            search_thresholds(
                &fused,
                &labels,
                &cfg.alpha_grid,
                &cfg.beta_grid,
                cfg.neutral,
                cfg.renormalize_survivors,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = select_thresholds(&surfaces, cfg.threshold_strategy)?;
    Ok(FittedPipeline {
        search,
        thresholds,
        surfaces,
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub result: EvalResult,
    pub thresholds: ThresholdPair,
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub acc_p: MeanStd,
    pub acc_s: MeanStd,
    pub score: MeanStd,
    /// All held-out predictions scored together.
    pub pooled: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    pub summary: CvSummary,
}

impl CvReport {
    /// `fold,acc_p,acc_s,score,n` rows plus a `summary` mean row and a
    /// `summary_std` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,acc_p,acc_s,score,n\n");
        for f in &self.folds {
            let r = f.result;
            out.push_str(&format!("{},{},{},{},{}\n", f.fold, r.acc_p, r.acc_s, r.score, r.n));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "summary,{},{},{},{}\n",
            s.acc_p.mean, s.acc_s.mean, s.score.mean, s.pooled.n
        ));
        out.push_str(&format!(
            "summary_std,{},{},{},{}\n",
            s.acc_p.std, s.acc_s.std, s.score.std, s.pooled.n
        ));
        out
    }
}

/// For each fold, fits weights and thresholds on the remaining folds and
/// scores the held-out fold.
pub fn cross_validate(
    preds: &[EncoderPredictionSet],
    records: &[SampleRecord],
    assignment: &FoldAssignment,
    cfg: &PipelineConfig,
) -> Result<CvReport> {
    let k = assignment.k();
    let mut outcomes = Vec::with_capacity(k);
    let mut pooled_preds = BTreeMap::new();
    let mut pooled_labels = BTreeMap::new();
    for fold in 0..k {
        let labels = labels_in_fold(records, assignment, fold);
        if labels.is_empty() {
            return Err(Error::Empty(format!("fold {fold} has no labeled videos")));
        }
        let train: Vec<usize> = (0..k).filter(|&f| f != fold).collect();
        let fitted = fit_pipeline(preds, records, assignment, &train, cfg)?;
        let post = cfg.postprocess(fitted.thresholds);
        let fused = fuse_all(preds, fitted.weights(), labels.keys())?;
        let held_out: BTreeMap<String, DiscretePrediction> =
            fused.iter().map(|(v, p)| (v.clone(), discretize(p, &post))).collect();
        let result = evaluate(&held_out, &labels)?;
        pooled_preds.extend(held_out);
        pooled_labels.extend(labels);
        outcomes.push(FoldOutcome {
            fold,
            result,
            thresholds: fitted.thresholds,
            weights: fitted.weights().iter().map(|(n, w)| (n.to_string(), w)).collect(),
        });
    }
    let column = |f: fn(&EvalResult) -> f64| -> Vec<f64> { outcomes.iter().map(|o| f(&o.result)).collect() };
    let summary = CvSummary {
        acc_p: MeanStd::of(&column(|r| r.acc_p)),
        acc_s: MeanStd::of(&column(|r| r.acc_s)),
        score: MeanStd::of(&column(|r| r.score)),
        pooled: evaluate(&pooled_preds, &pooled_labels)?,
    };
    Ok(CvReport {
        folds: outcomes,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion::*;
    use proptest::prelude::*;

    fn map(entries: &[(&str, BlendAnnotation)]) -> BTreeMap<String, BlendAnnotation> {
        entries.iter().map(|(v, a)| (v.to_string(), *a)).collect()
    }

    #[test]
    fn presence_without_salience() {
        let pred = map(&[("v", BlendAnnotation::dominant(Anger, Fear).unwrap())]);
        let truth = map(&[("v", BlendAnnotation::even(Anger, Fear).unwrap())]);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!((r.acc_p, r.acc_s, r.score), (1.0, 0.0, 0.5));
    }

    #[test]
    fn dominant_direction_matters() {
        let pred = map(&[("v", BlendAnnotation::dominant(Fear, Anger).unwrap())]);
        let truth = map(&[("v", BlendAnnotation::dominant(Anger, Fear).unwrap())]);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!((r.acc_p, r.acc_s), (1.0, 0.0));
    }

    #[test]
    fn identical_maps_score_one() {
        let truth = map(&[
            ("a", BlendAnnotation::single(Happiness)),
            ("b", BlendAnnotation::even(Sadness, Surprise).unwrap()),
            ("c", BlendAnnotation::dominant(Disgust, Anger).unwrap()),
        ]);
        let r = evaluate(&truth, &truth).unwrap();
        assert_eq!((r.acc_p, r.acc_s, r.score, r.n), (1.0, 1.0, 1.0, 3));
        assert!(evaluate(&BTreeMap::new(), &truth).is_err());
    }

    #[test]
    fn published_score_arithmetic() {
        assert!((EvalResult::new(0.340, 0.140, 1).score - 0.240).abs() < 5e-4);
        let r = EvalResult::new(0.391, 0.168, 1);
        assert!((r.score - 0.2795).abs() < 1e-12);
        assert!((r.score - 0.279).abs() <= 5e-4 + 1e-12);
    }

    fn records(actor_clips: &[(&str, usize)]) -> Vec<SampleRecord> {
        actor_clips
            .iter()
            .flat_map(|(a, n)| {
                (0..*n).map(move |i| SampleRecord {
                    video_id: format!("{a}_{i}"),
                    actor_id: a.to_string(),
                    annotation: Some(BlendAnnotation::single(Anger)),
                })
            })
            .collect()
    }

    #[test]
    fn greedy_split_balances_and_is_deterministic() {
        let recs = records(&[("a", 5), ("b", 4), ("c", 3), ("d", 3), ("e", 1)]);
        let folds = split_actors(&recs, 2).unwrap();
        // a -> 0, b -> 1, c -> 1 (4 < 5), d -> 0, e -> 1
        let got: Vec<_> = folds.iter().map(|(a, f)| (a.to_string(), f)).collect();
        assert_eq!(
            got,
            vec![("a".into(), 0), ("b".into(), 1), ("c".into(), 1), ("d".into(), 0), ("e".into(), 1)]
        );
        assert_eq!(split_actors(&recs, 2).unwrap(), folds);

        let per_actor = split_actors(&recs, 5).unwrap();
        let used: BTreeSet<_> = per_actor.iter().map(|(_, f)| f).collect();
        assert_eq!(used.len(), 5);
        assert!(split_actors(&recs, 6).is_err());
        assert!(split_actors(&recs, 1).is_err());
    }

    #[test]
    fn fold_assignment_validation() {
        assert!(FoldAssignment::from_pairs([("a".into(), 0), ("b".into(), 2)]).is_err());
        assert!(FoldAssignment::from_pairs([("a".into(), 0), ("a".into(), 1)]).is_err());
        assert!(FoldAssignment::from_pairs([("a".into(), 0)]).is_err());
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[0.2, 0.4]);
        assert!((m.mean - 0.3).abs() < 1e-15);
        assert!((m.std - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn split_never_shares_actors(clips in prop::collection::vec(1usize..30, 2..40), k in 2usize..8) {
            prop_assume!(k <= clips.len());
            let names: Vec<String> = (0..clips.len()).map(|i| format!("actor{i:02}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(clips.iter().copied()).collect();
            let recs = records(&spec);
            let folds = split_actors(&recs, k).unwrap();
            prop_assert_eq!(folds.k(), k);
            let mut sizes = vec![0usize; k];
            for r in &recs {
                sizes[folds.fold_of(&r.actor_id).unwrap()] += 1;
            }
            let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
            prop_assert!(spread <= *clips.iter().max().unwrap());
        }

        #[test]
        fn acc_s_never_exceeds_acc_p(pairs in prop::collection::vec((0usize..6, 0usize..6, 0u8..3, 0usize..6, 0usize..6, 0u8..3), 1..50)) {
            let mk = |a: usize, b: usize, kind: u8| {
                let (ea, eb) = (crate::emotion::Emotion::ALL[a], crate::emotion::Emotion::ALL[b]);
                match kind {
                    0 => BlendAnnotation::single(ea),
                    1 => BlendAnnotation::dominant(ea, eb).unwrap_or(BlendAnnotation::single(ea)),
                    _ => BlendAnnotation::even(ea, eb).unwrap_or(BlendAnnotation::single(ea)),
                }
            };
            let mut preds = BTreeMap::new();
            let mut truth = BTreeMap::new();
            for (i, (a, b, k, c, d, l)) in pairs.into_iter().enumerate() {
                preds.insert(i.to_string(), mk(a, b, k));
                truth.insert(i.to_string(), mk(c, d, l));
            }
            let r = evaluate(&preds, &truth).unwrap();
            prop_assert!(r.acc_s <= r.acc_p);
            prop_assert_eq!(r.score, 0.5 * (r.acc_p + r.acc_s));
        }
    }
}
