//! Weighted late fusion and simplex-constrained weight search.
//!
//! Fusion sums encoder contributions in encoder-name order, so the result is
//! bit-identical however the encoder list is ordered.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emotion::{BlendAnnotation, EmotionDistribution, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::eval::{FoldAssignment, Tally};
use crate::postprocess::{surface_from_tops, Grid, PostprocessConfig, TopTwo};
use crate::records::{EncoderPredictionSet, SampleRecord};

/// Tolerance on the weight sum for weights produced by this crate.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Convex combination weights keyed by encoder name.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(BTreeMap<String, f64>);

/// Checks non-negativity and that the weights sum to one within `tol`.
pub fn validate_simplex(weights: &[f64], tol: f64) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Empty("weight vector has no encoders".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::NonFinite(format!("weight {w}")));
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0) {
        return Err(Error::InvalidArgument(format!("negative weight {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {sum}, expected 1 within {tol}"
        )));
    }
    Ok(())
}

impl WeightVector {
    pub fn new(weights: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        Self::with_tolerance(weights, SIMPLEX_TOLERANCE)
    }

    /// Accepts weights summing to one within `tol` (e.g. values rounded for
    /// publication) and rescales them onto the simplex.
    pub fn with_tolerance(weights: impl IntoIterator<Item = (String, f64)>, tol: f64) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, w) in weights {
            if map.insert(name.clone(), w).is_some() {
                return Err(Error::Duplicate(format!("encoder '{name}' in weight vector")));
            }
        }
        let values: Vec<f64> = map.values().copied().collect();
        validate_simplex(&values, tol)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            map.values_mut().for_each(|w| *w /= sum);
        }
        Ok(Self(map))
    }

    pub fn uniform<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let w = 1.0 / names.len() as f64;
        Self::new(names.iter().map(|n| (n.as_ref().to_string(), w)))
    }

    pub fn get(&self, encoder: &str) -> Option<f64> {
        self.0.get(encoder).copied()
    }

    /// Entries in encoder-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Writes `encoder,weight` rows; values round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("encoder,weight\n");
        for (name, w) in self.iter() {
            out.push_str(&format!("{name},{w}\n"));
        }
        out
    }

    /// Parses the `encoder,weight` format, accepting rounding up to `tol`.
    pub fn from_csv(text: &str, tol: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some("encoder,weight") => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "expected header 'encoder,weight', found '{}'",
                    other.unwrap_or("")
                )))
            }
        }
        let mut entries = Vec::new();
        for line in lines {
            let (name, w) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed weight row '{line}'")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("'{w}' is not a weight")))?;
            entries.push((name.to_string(), w));
        }
        Self::with_tolerance(entries, tol)
    }
}

fn accumulate(acc: &mut [f64; NUM_EMOTIONS], w: f64, p: &[f64; NUM_EMOTIONS]) {
    for (a, v) in acc.iter_mut().zip(p) {
        *a += w * v;
    }
}

fn finish_fused(acc: [f64; NUM_EMOTIONS]) -> Result<EmotionDistribution> {
    // a convex combination can overshoot 1 by rounding only
    EmotionDistribution::new(acc.map(|v| v.min(1.0)))
}

/// `sum_m w_m * p_m` for one video, after averaging each encoder's clips.
pub fn fuse(preds: &[EncoderPredictionSet], w: &WeightVector, video_id: &str) -> Result<EmotionDistribution> {
    let by_name: BTreeMap<&str, &EncoderPredictionSet> =
        preds.iter().map(|p| (p.encoder_name.as_str(), p)).collect();
    let mut acc = [0.0; NUM_EMOTIONS];
    for (name, weight) in w.iter() {
        let set = by_name
            .get(name)
            .ok_or_else(|| Error::Missing(format!("no prediction set for encoder '{name}'")))?;
        accumulate(&mut acc, weight, set.averaged(video_id)?.values());
    }
    finish_fused(acc)
}

/// Clip-averaged predictions for a fixed list of videos and encoders.
#[derive(Debug, Clone)]
pub struct FusionTable {
    encoders: Vec<String>,
    videos: Vec<String>,
    probs: Vec<[f64; NUM_EMOTIONS]>,
}

impl FusionTable {
    /// Errors list every missing `(encoder, video)` combination.
    pub fn build<'a>(preds: &[EncoderPredictionSet], videos: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Empty("no encoder prediction sets".into()));
        }
        let mut sorted: Vec<&EncoderPredictionSet> = preds.iter().collect();
        sorted.sort_by(|a, b| a.encoder_name.cmp(&b.encoder_name));
        if let Some(w) = sorted.windows(2).find(|w| w[0].encoder_name == w[1].encoder_name) {
            return Err(Error::Duplicate(format!("encoder '{}'", w[0].encoder_name)));
        }
        let videos: Vec<String> = videos.into_iter().map(str::to_string).collect();
        let mut probs = Vec::with_capacity(videos.len() * sorted.len());
        let mut missing = Vec::new();
        for v in &videos {
            for set in &sorted {
                match set.clips(v) {
                    Some(_) => probs.push(*set.averaged(v)?.values()),
                    None => {
                        missing.push(format!("{}/{v}", set.encoder_name));
                        probs.push([0.0; NUM_EMOTIONS]);
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Missing(format!(
                "{} missing encoder prediction(s): {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        Ok(Self {
            encoders: sorted.iter().map(|s| s.encoder_name.clone()).collect(),
            videos,
            probs,
        })
    }

    pub fn encoders(&self) -> &[String] {
        &self.encoders
    }

    pub fn videos(&self) -> &[String] {
        &self.videos
    }

    /// Fused distribution of video `vi`; `weights` aligned with
    /// [`FusionTable::encoders`].
    pub fn fused(&self, vi: usize, weights: &[f64]) -> EmotionDistribution {
        let m = self.encoders.len();
        let mut acc = [0.0; NUM_EMOTIONS];
        for (k, &w) in weights.iter().enumerate() {
            accumulate(&mut acc, w, &self.probs[vi * m + k]);
        }
        finish_fused(acc).expect("convex combination of valid rows is valid")
    }

    pub fn weight_vector(&self, weights: &[f64]) -> Result<WeightVector> {
        WeightVector::new(self.encoders.iter().cloned().zip(weights.iter().copied()))
    }

    /// Aligns a weight vector with this table's encoders.
    pub fn align_weights(&self, w: &WeightVector) -> Result<Vec<f64>> {
        self.encoders
            .iter()
            .map(|e| {
                w.get(e)
                    .ok_or_else(|| Error::Missing(format!("no weight for encoder '{e}'")))
            })
            .collect()
    }
}

/// Weight-search objective: mean per-fold Score over the selected folds.
pub struct FusionProblem {
    table: FusionTable,
    truths: Vec<BlendAnnotation>,
    fold_of: Vec<usize>,
    n_folds: usize,
    post: PostprocessConfig,
    joint_grids: Option<(Grid, Grid)>,
}

impl FusionProblem {
    /// Uses the labeled records whose actors fall in `folds`; every listed
    /// fold must contribute at least one labeled video.
    pub fn new(
        preds: &[EncoderPredictionSet],
        records: &[SampleRecord],
        assignment: &FoldAssignment,
        folds: &[usize],
        post: PostprocessConfig,
    ) -> Result<Self> {
        post.validate()?;
        let wanted: BTreeSet<usize> = folds.iter().copied().collect();
        if wanted.is_empty() {
            return Err(Error::Empty("no folds selected".into()));
        }
        let local: BTreeMap<usize, usize> = wanted.iter().enumerate().map(|(i, f)| (*f, i)).collect();
        let mut videos = Vec::new();
        let mut truths = Vec::new();
        let mut fold_of = Vec::new();
        for r in records {
            let Some(a) = r.annotation else { continue };
            let fold = assignment.fold_of(&r.actor_id).ok_or_else(|| {
                Error::Missing(format!("actor '{}' has no fold assignment", r.actor_id))
            })?;
            if let Some(&lf) = local.get(&fold) {
                videos.push(r.video_id.as_str());
                truths.push(a);
                fold_of.push(lf);
            }
        }
        for (f, lf) in &local {
            if !fold_of.contains(lf) {
                return Err(Error::Empty(format!("fold {f} has no labeled videos")));
            }
        }
        Ok(Self {
            table: FusionTable::build(preds, videos)?,
            truths,
            fold_of,
            n_folds: wanted.len(),
            post,
            joint_grids: None,
        })
    }

    /// Re-optimizes shared thresholds for every candidate instead of holding
    /// them fixed.
    pub fn with_joint_thresholds(mut self, alpha: Grid, beta: Grid) -> Self {
        self.joint_grids = Some((alpha, beta));
        self
    }

    pub fn table(&self) -> &FusionTable {
        &self.table
    }

    pub fn objective(&self, weights: &[f64]) -> f64 {
        match &self.joint_grids {
            None => {
                let mut tallies = vec![Tally::default(); self.n_folds];
                for (vi, truth) in self.truths.iter().enumerate() {
                    let fused = self.table.fused(vi, weights);
                    let pred = TopTwo::of(&fused).decide(
                        self.post.neutral,
                        self.post.thresholds,
                        self.post.renormalize_survivors,
                    );
                    tallies[self.fold_of[vi]].add(&pred, truth);
                }
                tallies.iter().map(|t| t.result().score).sum::<f64>() / self.n_folds as f64
            }
            Some((ga, gb)) => {
                let mut per_fold: Vec<Vec<(TopTwo, BlendAnnotation)>> = vec![Vec::new(); self.n_folds];
                for (vi, truth) in self.truths.iter().enumerate() {
                    per_fold[self.fold_of[vi]].push((TopTwo::of(&self.table.fused(vi, weights)), *truth));
                }
                let surfaces: Vec<_> = per_fold
                    .iter()
                    .map(|tops| surface_from_tops(tops, ga, gb, self.post.neutral, self.post.renormalize_survivors))
                    .collect();
                let mut best = f64::NEG_INFINITY;
                for ai in 0..ga.len() {
                    for bi in 0..gb.len() {
                        let mean = surfaces.iter().map(|s| s.cell(ai, bi).score).sum::<f64>()
                            / self.n_folds as f64;
                        best = best.max(mean);
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FusionStrategy {
    /// Pairwise mass moves from uniform weights, annealing the step size.
    CoordinateAscent { deltas: Vec<f64> },
    /// Every simplex point on a regular grid plus the uniform point; at most
    /// three encoders.
    Exhaustive { step: f64 },
}

impl Default for FusionStrategy {
    fn default() -> Self {
        FusionStrategy::CoordinateAscent {
            deltas: vec![0.10, 0.05, 0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogEntry {
    pub step: usize,
    pub candidate_id: usize,
    pub weights: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSearch {
    pub weights: WeightVector,
    pub objective: f64,
    pub log: Vec<SearchLogEntry>,
}

impl WeightSearch {
    /// `step,candidate_id,objective` rows.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,candidate_id,objective\n");
        for e in &self.log {
            out.push_str(&format!("{},{},{}\n", e.step, e.candidate_id, e.objective));
        }
        out
    }
}

fn l1_to_uniform(w: &[f64]) -> f64 {
    let u = 1.0 / w.len() as f64;
    w.iter().map(|x| (x - u).abs()).sum()
}

/// True if `a` beats `b`: higher objective, then closer to uniform.
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    a.0 > b.0 || (a.0 == b.0 && l1_to_uniform(a.1) < l1_to_uniform(b.1))
}

struct Logger {
    entries: Vec<SearchLogEntry>,
}

impl Logger {
    fn record(&mut self, step: usize, weights: &[f64], objective: f64) -> Result<()> {
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("objective {objective} at weights {weights:?}")));
        }
        let candidate_id = self.entries.len();
        self.entries.push(SearchLogEntry {
            step,
            candidate_id,
            weights: weights.to_vec(),
            objective,
        });
        Ok(())
    }
}

pub fn optimize_weights(problem: &FusionProblem, strategy: &FusionStrategy) -> Result<WeightSearch> {
    let m = problem.table.encoders.len();
    let uniform = vec![1.0 / m as f64; m];
    let mut log = Logger { entries: Vec::new() };
    let start = problem.objective(&uniform);
    log.record(0, &uniform, start)?;
    if m == 1 {
        return Ok(WeightSearch {
            weights: problem.table.weight_vector(&[1.0])?,
            objective: start,
            log: log.entries,
        });
    }
    let (weights, objective) = match strategy {
        FusionStrategy::CoordinateAscent { deltas } => coordinate_ascent(problem, deltas, uniform, start, &mut log)?,
        FusionStrategy::Exhaustive { step } => exhaustive(problem, *step, uniform, start, &mut log)?,
    };
    Ok(WeightSearch {
        weights: problem.table.weight_vector(&weights)?,
        objective,
        log: log.entries,
    })
}

const MASS_EPS: f64 = 1e-12;

fn coordinate_ascent(
    problem: &FusionProblem,
    deltas: &[f64],
    mut current: Vec<f64>,
    mut value: f64,
    log: &mut Logger,
) -> Result<(Vec<f64>, f64)> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::InvalidArgument(format!("step sizes {deltas:?} must lie in (0, 1)")));
    }
    let m = current.len();
    let mut step = 0;
    for &delta in deltas {
        loop {
            step += 1;
            let mut candidates = Vec::new();
            for to in 0..m {
                for from in 0..m {
                    if to == from || current[from] < delta - MASS_EPS {
                        continue;
                    }
                    let mut c = current.clone();
                    c[to] += delta;
                    c[from] -= delta;
                    if c[from] < MASS_EPS {
                        c[from] = 0.0;
                    }
                    candidates.push(c);
                }
            }
            let values: Vec<f64> = candidates.par_iter().map(|c| problem.objective(c)).collect();
            let mut best: Option<usize> = None;
            for (k, (c, &v)) in candidates.iter().zip(&values).enumerate() {
                log.record(step, c, v)?;
                if best.is_none_or(|b| better((v, c), (values[b], &candidates[b]))) {
                    best = Some(k);
                }
            }
            match best {
                Some(b) if values[b] > value => {
                    current = candidates.swap_remove(b);
                    value = values[b];
                }
                _ => break,
            }
        }
    }
    Ok((current, value))
}

/// Integer compositions of `total` into `parts` non-negative parts, in
/// lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn exhaustive(
    problem: &FusionProblem,
    step: f64,
    uniform: Vec<f64>,
    uniform_value: f64,
    log: &mut Logger,
) -> Result<(Vec<f64>, f64)> {
    let m = uniform.len();
    if m > 3 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search supports at most 3 encoders, got {m}"
        )));
    }
    let n = (1.0 / step).round() as usize;
    if !(step > 0.0) || n == 0 || (n as f64 * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} must divide 1")));
    }
    let candidates: Vec<Vec<f64>> = compositions(n, m)
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / n as f64).collect())
        .collect();
    let values: Vec<f64> = candidates.par_iter().map(|c| problem.objective(c)).collect();
    let mut best = (uniform, uniform_value);
    for (c, v) in candidates.into_iter().zip(values) {
        log.record(1, &c, v)?;
        if better((v, &c), (best.1, &best.0)) {
            best = (c, v);
        }
    }
    Ok(best)
}
