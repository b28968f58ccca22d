//! Published accuracy triples and fusion weights, checked against the score
//! formula and the weight simplex at their printed rounding.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::EvalResult;
use crate::fusion::validate_simplex;

/// Half a unit in the third decimal.
pub const SCORE_TOLERANCE: f64 = 5e-4;
/// Sum tolerance for weight columns printed to three decimals.
pub const WEIGHT_TOLERANCE: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedTriple {
    pub group: &'static str,
    pub row: &'static str,
    pub acc_p: f64,
    pub acc_s: f64,
    pub score: f64,
}

const fn triple(group: &'static str, row: &'static str, acc_p: f64, acc_s: f64, score: f64) -> PublishedTriple {
    PublishedTriple {
        group,
        row,
        acc_p,
        acc_s,
        score,
    }
}

const SINGLE: &str = "single-encoder cv";
const TEST: &str = "ensemble test";
const VAL: &str = "ensemble cv";

/// Every triple from the single-encoder and ensemble result tables.
pub const PUBLISHED_TRIPLES: [PublishedTriple; 21] = [
    triple(SINGLE, "S4D-ViTMoE (face)", 0.340, 0.140, 0.240),
    triple(SINGLE, "Gemini Embed. 2.0 (2s)", 0.320, 0.137, 0.223),
    triple(SINGLE, "VideoMAE body (ft)", 0.291, 0.144, 0.218),
    triple(SINGLE, "Wav2Vec2 frozen+MLP-1024", 0.294, 0.120, 0.207),
    triple(SINGLE, "TimeSformer body (ft)", 0.259, 0.131, 0.195),
    triple(SINGLE, "Wav2Vec2 frozen+MLP-512", 0.264, 0.104, 0.184),
    triple(SINGLE, "Wav2Vec2 finetuned E2E", 0.234, 0.088, 0.161),
    triple(SINGLE, "HiCMAE", 0.298, 0.180, 0.239),
    triple(SINGLE, "ImageBind", 0.290, 0.130, 0.210),
    triple(SINGLE, "WavLM", 0.265, 0.121, 0.193),
    triple(SINGLE, "VideoMAEv2", 0.273, 0.106, 0.190),
    triple(TEST, "VideoMAEv2 + HuBERT", 0.332, 0.114, 0.223),
    triple(TEST, "ImageBind + WavLM", 0.327, 0.114, 0.221),
    triple(TEST, "HiCMAE", 0.268, 0.180, 0.224),
    triple(TEST, "S4D + Wav2Vec2", 0.327, 0.159, 0.243),
    triple(TEST, "9-encoder ensemble", 0.357, 0.168, 0.262),
    triple(TEST, "12-enc + Gemini", 0.391, 0.168, 0.279),
    triple(VAL, "S4D face only", 0.340, 0.140, 0.240),
    triple(VAL, "S4D + Wav2Vec2", 0.357, 0.175, 0.266),
    triple(VAL, "9-encoder", 0.414, 0.205, 0.309),
    triple(VAL, "12-encoder + Gemini", 0.418, 0.204, 0.311),
];

pub const WEIGHTS_9_ENC: [(&str, f64); 9] = [
    ("S4D-ViTMoE", 0.094),
    ("Wav2Vec2", 0.170),
    ("HiCMAE", 0.261),
    ("WavLM", 0.156),
    ("ImageBind", 0.050),
    ("CLIP", 0.071),
    ("DINOv2", 0.041),
    ("DINOv3", 0.092),
    ("VideoSwin", 0.064),
];

pub const WEIGHTS_12_ENC: [(&str, f64); 10] = [
    ("S4D-ViTMoE", 0.117),
    ("Wav2Vec2", 0.111),
    ("Gemini", 0.192),
    ("TimeSformer", 0.090),
    ("VideoMAE", 0.110),
    ("HiCMAE", 0.103),
    ("WavLM", 0.124),
    ("ImageBind", 0.079),
    ("DINOv3", 0.042),
    ("VideoSwin", 0.032),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreCheck {
    pub group: String,
    pub row: String,
    pub acc_p: f64,
    pub acc_s: f64,
    pub published: f64,
    pub computed: f64,
    pub abs_diff: f64,
    pub ok: bool,
}

pub fn check_score(group: &str, row: &str, acc_p: f64, acc_s: f64, published: f64, tol: f64) -> ScoreCheck {
    let computed = EvalResult::new(acc_p, acc_s, 0).score;
    let abs_diff = (computed - published).abs();
    ScoreCheck {
        group: group.into(),
        row: row.into(),
        acc_p,
        acc_s,
        published,
        computed,
        abs_diff,
        // a hair of slack so that exact half-unit differences are not lost to binary rounding
        ok: abs_diff <= tol + 1e-12,
    }
}

pub fn check_published_scores() -> Vec<ScoreCheck> {
    PUBLISHED_TRIPLES
        .iter()
        .map(|t| check_score(t.group, t.row, t.acc_p, t.acc_s, t.score, SCORE_TOLERANCE))
        .collect()
}

/// Checks every per-fold row and the `summary` mean row of a results file
/// (`fold,acc_p,acc_s,score,n`). The `summary_std` row is skipped: standard
/// deviations do not combine linearly.
pub fn check_results_file(path: &Path, tol: f64) -> Result<Vec<ScoreCheck>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["fold", "acc_p", "acc_s", "score", "n"] {
        return Err(Error::parse(path, 1, "expected header 'fold,acc_p,acc_s,score,n'"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if &rec[0] == "summary_std" {
            continue;
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("'{}' is not a number", &rec[j])))
        };
        out.push(check_score("results", &rec[0], num(1)?, num(2)?, num(3)?, tol));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{} has no result rows", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCheck {
    pub column: String,
    pub sum: f64,
    pub ok: bool,
    pub message: Option<String>,
}

pub fn check_weights(column: &str, weights: &[(&str, f64)], tol: f64) -> WeightCheck {
    let values: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    let result: Result<()> = validate_simplex(&values, tol);
    WeightCheck {
        column: column.into(),
        sum: values.iter().sum(),
        ok: result.is_ok(),
        message: result.err().map(|e| e.to_string()),
    }
}

pub fn check_published_weights() -> Vec<WeightCheck> {
    vec![
        check_weights("9-enc", &WEIGHTS_9_ENC, WEIGHT_TOLERANCE),
        check_weights("12-enc", &WEIGHTS_12_ENC, WEIGHT_TOLERANCE),
    ]
}
