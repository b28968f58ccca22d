//! Fixed-length vectors from per-frame encoder hidden states.
//!
//! A sequence holds `layers x frames x dims` values. A contiguous layer range
//! is averaged, the frames are split into contiguous segments, and per-segment
//! and whole-sequence statistics are concatenated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    /// Indexed `[layer, frame, dim]`.
    pub data: Array3<f64>,
}

impl FrameFeatureSequence {
    pub fn new(video_id: impl Into<String>, data: Array3<f64>) -> Result<Self> {
        let (l, t, d) = data.dim();
        if l == 0 || t == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "feature sequence needs non-empty dimensions, got {l}x{t}x{d}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence contains non-finite values".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn dims(&self) -> usize {
        self.data.dim().2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    SegmentMean,
    SegmentStd,
    GlobalMean,
    GlobalMedian,
}

impl Statistic {
    pub fn is_segment(self) -> bool {
        matches!(self, Statistic::SegmentMean | Statistic::SegmentStd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub layer_lo: usize,
    pub layer_hi: usize,
    pub segments: usize,
    pub stats: Vec<Statistic>,
}

impl Default for AggregationConfig {
    /// Layers 6 through 12, three segments with mean and std each, plus a
    /// global mean: seven blocks of `dims`.
    fn default() -> Self {
        Self {
            layer_lo: 6,
            layer_hi: 12,
            segments: 3,
            stats: vec![
                Statistic::SegmentMean,
                Statistic::SegmentStd,
                Statistic::GlobalMean,
            ],
        }
    }
}

impl AggregationConfig {
    pub fn output_dim(&self, dims: usize) -> usize {
        let seg = self.stats.iter().filter(|s| s.is_segment()).count();
        let global = self.stats.len() - seg;
        (self.segments * seg + global) * dims
    }

    fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::InvalidArgument("segments must be at least 1".into()));
        }
        if self.stats.is_empty() {
            return Err(Error::InvalidArgument("at least one statistic is required".into()));
        }
        if self.layer_lo > self.layer_hi {
            return Err(Error::InvalidArgument(format!(
                "layer range {}..={} is empty",
                self.layer_lo, self.layer_hi
            )));
        }
        Ok(())
    }
}

/// Elementwise mean over the inclusive layer range `lo..=hi`.
pub fn average_layers(seq: &FrameFeatureSequence, lo: usize, hi: usize) -> Result<Array2<f64>> {
    if lo > hi || hi >= seq.layers() {
        return Err(Error::InvalidArgument(format!(
            "layer range {lo}..={hi} invalid for {} layers",
            seq.layers()
        )));
    }
    let slab = seq.data.slice(s![lo..=hi, .., ..]);
    if lo == hi {
        return Ok(slab.index_axis(Axis(0), 0).to_owned());
    }
    let n = (hi - lo + 1) as f64;
    let mut sum = Array2::<f64>::zeros((seq.frames(), seq.dims()));
    for layer in slab.axis_iter(Axis(0)) {
        sum += &layer;
    }
    Ok(sum / n)
}

/// Segment boundaries: sizes differ by at most one, earlier segments take
/// the remainder.
pub fn segment_bounds(frames: usize, segments: usize) -> Vec<(usize, usize)> {
    let base = frames / segments;
    let extra = frames % segments;
    let mut start = 0;
    (0..segments)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let bounds = (start, start + len);
            start += len;
            bounds
        })
        .collect()
}

/// Column means, accumulated relative to the column minimum so that a
/// constant column returns its value exactly.
fn column_mean(rows: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = rows.nrows() as f64;
    rows.axis_iter(Axis(1))
        .map(|col| {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            lo + col.iter().map(|v| v - lo).sum::<f64>() / n
        })
        .collect()
}

/// Population standard deviation per column.
fn column_std(rows: ArrayView2<'_, f64>, mean: &[f64]) -> Vec<f64> {
    let n = rows.nrows() as f64;
    rows.axis_iter(Axis(1))
        .zip(mean)
        .map(|(col, m)| (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
        .collect()
}

fn column_median(rows: ArrayView2<'_, f64>) -> Vec<f64> {
    rows.axis_iter(Axis(1))
        .map(|col| {
            let mut v = col.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        })
        .collect()
}

/// Concatenates per-segment statistics (segment-major, config order) and
/// then whole-sequence statistics.
pub fn aggregate_temporal(frames: ArrayView2<'_, f64>, cfg: &AggregationConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let t = frames.nrows();
    if t < cfg.segments {
        return Err(Error::Shape(format!(
            "{t} frames cannot be split into {} segments",
            cfg.segments
        )));
    }
    let mut out = Vec::with_capacity(cfg.output_dim(frames.ncols()));
    for (start, end) in segment_bounds(t, cfg.segments) {
        let seg = frames.slice(s![start..end, ..]);
        let mean = column_mean(seg);
        for stat in cfg.stats.iter().filter(|s| s.is_segment()) {
            match stat {
                Statistic::SegmentMean => out.extend_from_slice(&mean),
                Statistic::SegmentStd => out.extend(column_std(seg, &mean)),
                _ => unreachable!(),
            }
        }
    }
    for stat in cfg.stats.iter().filter(|s| !s.is_segment()) {
        match stat {
            Statistic::GlobalMean => out.extend(column_mean(frames)),
            Statistic::GlobalMedian => out.extend(column_median(frames)),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// Layer averaging followed by temporal aggregation.
pub fn aggregate(seq: &FrameFeatureSequence, cfg: &AggregationConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let frames = average_layers(seq, cfg.layer_lo, cfg.layer_hi)?;
    aggregate_temporal(frames.view(), cfg)
}

// ---------------------------------------------------------------------------
// `.feat` text format

pub fn parse_feature_file(text: &str, video_id: &str, path: &Path) -> Result<FrameFeatureSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty feature file"))?;
    let mut dims = [None; 3];
    for tok in header.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("malformed header token '{tok}'")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("'{value}' is not a count")))?;
        let slot = match key {
            "layers" => 0,
            "frames" => 1,
            "dims" => 2,
            _ => return Err(Error::parse(path, 1, format!("unknown header key '{key}'"))),
        };
        dims[slot] = Some(value);
    }
    let [Some(l), Some(t), Some(d)] = dims else {
        return Err(Error::parse(path, 1, "header must define layers, frames and dims"));
    };
    let mut values = Vec::with_capacity(l * t * d);
    let mut rows = 0;
    for (i, line) in lines {
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("'{tok}' is not a decimal number")))?;
            values.push(v);
        }
        if values.len() - before != d {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {d} values, found {}", values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != l * t {
        return Err(Error::parse(
            path,
            1,
            format!("expected {} rows of features, found {rows}", l * t),
        ));
    }
    let data = Array3::from_shape_vec((l, t, d), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    FrameFeatureSequence::new(video_id, data)
}

pub fn format_feature_file(seq: &FrameFeatureSequence) -> String {
    let (l, t, d) = seq.data.dim();
    let mut out = format!("layers={l} frames={t} dims={d}\n");
    for row in seq.data.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn read_feature_file(path: &Path, video_id: &str) -> Result<FrameFeatureSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_file(&text, video_id, path)
}

pub fn write_feature_file(path: &Path, seq: &FrameFeatureSequence) -> Result<()> {
    fs::write(path, format_feature_file(seq)).map_err(|e| Error::io(path, e))
}
