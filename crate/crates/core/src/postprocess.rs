//! Discretization of fused probabilities and (alpha, beta) threshold search.
//!
//! A distribution becomes a prediction in four steps: keep the two largest
//! entries, drop kept entries below the presence threshold `alpha`, resolve a
//! surviving neutral class, and split the survivors 50/50 when their gap is at
//! most the salience threshold `beta` (70/30 otherwise).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emotion::{BlendAnnotation, DiscretePrediction, Emotion, EmotionDistribution, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::eval::{EvalResult, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub alpha: f64,
    pub beta: f64,
}

impl ThresholdPair {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} = {v}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { alpha, beta })
    }
}

/// How a neutral class participates in step 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neutral {
    /// No neutral class; step 3 is a no-op.
    #[default]
    Absent,
    /// One of the six probability columns is neutral.
    Index(usize),
    /// Neutral lives outside the six columns. Six-dimensional inputs carry no
    /// neutral mass, so step 3 never fires.
    SeventhClass,
}

impl Neutral {
    fn index(self) -> Option<usize> {
        match self {
            Neutral::Index(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub neutral: Neutral,
    pub thresholds: ThresholdPair,
    /// Compare the survivors' gap after rescaling them to sum to one.
    pub renormalize_survivors: bool,
}

impl PostprocessConfig {
    pub fn new(thresholds: ThresholdPair) -> Self {
        Self {
            neutral: Neutral::Absent,
            thresholds,
            renormalize_survivors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Neutral::Index(i) = self.neutral {
            if i >= NUM_EMOTIONS {
                return Err(Error::InvalidArgument(format!("neutral index {i} out of range 0..6")));
            }
        }
        ThresholdPair::new(self.thresholds.alpha, self.thresholds.beta).map(|_| ())
    }
}

/// The two largest entries as `(index, probability)`, largest first; ties go
/// to the lower index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopTwo {
    /// `(index, probability)` of the largest entry.
    pub first: (usize, f64),
    pub second: (usize, f64),
}

impl TopTwo {
    pub fn of(p: &EmotionDistribution) -> Self {
        let v = p.values();
        let mut first = 0;
        for i in 1..NUM_EMOTIONS {
            if v[i] > v[first] {
                first = i;
            }
        }
        let mut second = usize::from(first == 0);
        for i in 0..NUM_EMOTIONS {
            if i != first && v[i] > v[second] {
                second = i;
            }
        }
        Self {
            first: (first, v[first]),
            second: (second, v[second]),
        }
    }

    /// Steps 2 to 4 applied to the masked pair. An entry survives when it is
    /// at least `alpha` and strictly positive, so `alpha = 0` never promotes a
    /// zero-probability class into a blend.
    pub fn decide(&self, neutral: Neutral, t: ThresholdPair, renormalize: bool) -> DiscretePrediction {
        let mut survivors = [self.first, self.second]
            .into_iter()
            .filter(|&(_, p)| p > 0.0 && p >= t.alpha);
        let a = survivors.next();
        let b = survivors.next();
        let single = |i: usize| BlendAnnotation::single(Emotion::ALL[i]);
        match (a, b) {
            (None, _) => single(self.first.0),
            (Some((i, _)), None) => single(i),
            (Some((i, pi)), Some((j, pj))) => {
                if let Some(n) = neutral.index() {
                    if i == n {
                        return single(j);
                    }
                    if j == n {
                        return single(i);
                    }
                }
                let gap = if renormalize {
                    (pi - pj).abs() / (pi + pj)
                } else {
                    (pi - pj).abs()
                };
                let (ei, ej) = (Emotion::ALL[i], Emotion::ALL[j]);
                if gap <= t.beta {
                    BlendAnnotation::even(ei, ej).expect("top-two indices are distinct")
                } else {
                    BlendAnnotation::dominant(ei, ej).expect("top-two indices are distinct")
                }
            }
        }
    }
}

pub fn discretize(p: &EmotionDistribution, cfg: &PostprocessConfig) -> DiscretePrediction {
    TopTwo::of(p).decide(cfg.neutral, cfg.thresholds, cfg.renormalize_survivors)
}

/// A sorted, de-duplicated list of threshold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("threshold grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("grid value {v} outside [0, 1]")));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self(values))
    }

    /// `start, start + step, ...` up to and including `stop`, with values
    /// rounded to 1e-9 so that decimal steps land on their decimal values.
    pub fn range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || stop < start {
            return Err(Error::InvalidArgument(format!(
                "invalid grid range {start}..={stop} step {step}"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Self::new(
            (0..=n)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Grid {
    /// `0.00, 0.01, ..., 0.50`.
    fn default() -> Self {
        Self::range(0.0, 0.5, 0.01).expect("default grid is valid")
    }
}

/// Score, ACC_P and ACC_S at every grid point, rows indexed by alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSurface {
    pub alpha_grid: Grid,
    pub beta_grid: Grid,
    pub n: usize,
    cells: Vec<EvalResult>,
}

impl ThresholdSurface {
    pub fn cell(&self, ai: usize, bi: usize) -> &EvalResult {
        &self.cells[ai * self.beta_grid.len() + bi]
    }

    pub fn pair(&self, ai: usize, bi: usize) -> ThresholdPair {
        ThresholdPair {
            alpha: self.alpha_grid.values()[ai],
            beta: self.beta_grid.values()[bi],
        }
    }

    /// Grid indices of the best Score; ties go to the smaller alpha, then the
    /// smaller beta.
    pub fn argmax_index(&self) -> (usize, usize) {
        let nb = self.beta_grid.len();
        let mut best = 0;
        for (k, cell) in self.cells.iter().enumerate() {
            if cell.score > self.cells[best].score {
                best = k;
            }
        }
        (best / nb, best % nb)
    }

    pub fn argmax(&self) -> (ThresholdPair, EvalResult) {
        let (a, b) = self.argmax_index();
        (self.pair(a, b), *self.cell(a, b))
    }

    pub fn best_score(&self) -> f64 {
        self.argmax().1.score
    }

    fn same_grids(&self, other: &Self) -> bool {
        self.alpha_grid == other.alpha_grid && self.beta_grid == other.beta_grid
    }
}

/// Pairs each labeled video with its fused distribution.
pub(crate) fn align<'a>(
    fused: &'a BTreeMap<String, EmotionDistribution>,
    labels: &'a BTreeMap<String, BlendAnnotation>,
) -> Result<Vec<(&'a EmotionDistribution, &'a BlendAnnotation)>> {
    if labels.is_empty() {
        return Err(Error::Empty("no labeled videos".into()));
    }
    let missing: Vec<&str> = labels
        .keys()
        .filter(|v| !fused.contains_key(*v))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!(
            "no prediction for {} labeled video(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(labels.iter().map(|(v, a)| (&fused[v], a)).collect())
}

/// Evaluates Score at every `(alpha, beta)` grid point.
pub fn search_thresholds(
    fused: &BTreeMap<String, EmotionDistribution>,
    labels: &BTreeMap<String, BlendAnnotation>,
    alpha_grid: &Grid,
    beta_grid: &Grid,
    neutral: Neutral,
    renormalize: bool,
) -> Result<ThresholdSurface> {
    let pairs = align(fused, labels)?;
    let tops: Vec<(TopTwo, BlendAnnotation)> =
        pairs.iter().map(|(p, a)| (TopTwo::of(p), **a)).collect();
    Ok(surface_from_tops(&tops, alpha_grid, beta_grid, neutral, renormalize))
}

pub(crate) fn surface_from_tops(
    tops: &[(TopTwo, BlendAnnotation)],
    alpha_grid: &Grid,
    beta_grid: &Grid,
    neutral: Neutral,
    renormalize: bool,
) -> ThresholdSurface {
    let cells: Vec<EvalResult> = alpha_grid
        .values()
        .par_iter()
        .flat_map_iter(|&alpha| {
            beta_grid.values().iter().map(move |&beta| {
                let t = ThresholdPair { alpha, beta };
                let mut tally = Tally::default();
                for (top, truth) in tops {
                    tally.add(&top.decide(neutral, t, renormalize), truth);
                }
                tally.result()
            })
        })
        .collect();
    ThresholdSurface {
        alpha_grid: alpha_grid.clone(),
        beta_grid: beta_grid.clone(),
        n: tops.len(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Mean of the per-fold argmax pairs.
    PerFoldAverage,
    /// Alpha by mean presence accuracy, then beta by mean salience accuracy
    /// at that alpha.
    Decoupled,
    /// Argmax pair of the fold with the best Score.
    BestFold,
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionStrategy::PerFoldAverage => "per_fold_average",
            SelectionStrategy::Decoupled => "decoupled",
            SelectionStrategy::BestFold => "best_fold",
        })
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_fold_average" => Ok(Self::PerFoldAverage),
            "decoupled" => Ok(Self::Decoupled),
            "best_fold" => Ok(Self::BestFold),
            other => Err(Error::InvalidArgument(format!(
                "unknown threshold strategy '{other}' (per_fold_average, decoupled, best_fold)"
            ))),
        }
    }
}

/// Combines per-fold surfaces into one operating point.
pub fn select_thresholds(surfaces: &[ThresholdSurface], strategy: SelectionStrategy) -> Result<ThresholdPair> {
    let first = surfaces
        .first()
        .ok_or_else(|| Error::Empty("no fold surfaces to select thresholds from".into()))?;
    match strategy {
        SelectionStrategy::PerFoldAverage => {
            let k = surfaces.len() as f64;
            let (sa, sb) = surfaces.iter().fold((0.0, 0.0), |(sa, sb), s| {
                let (t, _) = s.argmax();
                (sa + t.alpha, sb + t.beta)
            });
            Ok(ThresholdPair {
                alpha: sa / k,
                beta: sb / k,
            })
        }
        SelectionStrategy::BestFold => {
            let mut best = first;
            for s in &surfaces[1..] {
                if s.best_score() > best.best_score() {
                    best = s;
                }
            }
            Ok(best.argmax().0)
        }
        SelectionStrategy::Decoupled => {
            if let Some(bad) = surfaces.iter().find(|s| !s.same_grids(first)) {
                return Err(Error::Shape(format!(
                    "fold surfaces use different grids ({}x{} vs {}x{})",
                    first.alpha_grid.len(),
                    first.beta_grid.len(),
                    bad.alpha_grid.len(),
                    bad.beta_grid.len()
                )));
            }
            let (na, nb) = (first.alpha_grid.len(), first.beta_grid.len());
            let k = surfaces.len() as f64;
            let mut best_a = 0;
            let mut best_p = f64::NEG_INFINITY;
            for ai in 0..na {
                let mean_p = surfaces
                    .iter()
                    .map(|s| (0..nb).map(|bi| s.cell(ai, bi).acc_p).fold(f64::NEG_INFINITY, f64::max))
                    .sum::<f64>()
                    / k;
                if mean_p > best_p {
                    best_p = mean_p;
                    best_a = ai;
                }
            }
            let mut best_b = 0;
            let mut best_s = f64::NEG_INFINITY;
            for bi in 0..nb {
                let mean_s = surfaces.iter().map(|s| s.cell(best_a, bi).acc_s).sum::<f64>() / k;
                if mean_s > best_s {
                    best_s = mean_s;
                    best_b = bi;
                }
            }
            Ok(first.pair(best_a, best_b))
        }
    }
}

/// Spread of per-fold optimal beta values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpread {
    pub min: f64,
    pub max: f64,
    /// `max / min`; `None` when `min` is zero.
    pub ratio: Option<f64>,
}

impl BetaSpread {
    pub fn of(pairs: &[ThresholdPair]) -> Option<Self> {
        let min = pairs.iter().map(|t| t.beta).reduce(f64::min)?;
        let max = pairs.iter().map(|t| t.beta).reduce(f64::max)?;
        Some(Self {
            min,
            max,
            ratio: (min > 0.0).then(|| max / min),
        })
    }
}

/// Everything needed to audit a threshold choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub alpha: f64,
    pub beta: f64,
    pub strategy: SelectionStrategy,
    pub per_fold: Vec<FoldOptimum>,
    pub beta_spread: Option<BetaSpread>,
    pub alpha_spread: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldOptimum {
    pub fold: usize,
    pub alpha: f64,
    pub beta: f64,
    pub score: f64,
    pub acc_p: f64,
    pub acc_s: f64,
}

impl ThresholdReport {
    pub fn build(surfaces: &[ThresholdSurface], strategy: SelectionStrategy) -> Result<Self> {
        let chosen = select_thresholds(surfaces, strategy)?;
        let per_fold: Vec<FoldOptimum> = surfaces
            .iter()
            .enumerate()
            .map(|(fold, s)| {
                let (t, r) = s.argmax();
                FoldOptimum {
                    fold,
                    alpha: t.alpha,
                    beta: t.beta,
                    score: r.score,
                    acc_p: r.acc_p,
                    acc_s: r.acc_s,
                }
            })
            .collect();
        let pairs: Vec<ThresholdPair> = per_fold
            .iter()
            .map(|f| ThresholdPair {
                alpha: f.alpha,
                beta: f.beta,
            })
            .collect();
        let alpha_spread = pairs
            .iter()
            .map(|t| t.alpha)
            .reduce(f64::min)
            .zip(pairs.iter().map(|t| t.alpha).reduce(f64::max));
        Ok(Self {
            alpha: chosen.alpha,
            beta: chosen.beta,
            strategy,
            beta_spread: BetaSpread::of(&pairs),
            alpha_spread,
            per_fold,
        })
    }
}
