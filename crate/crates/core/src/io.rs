//! Readers and writers for the comma-separated interchange files.
//!
//! Float columns are written with Rust's shortest round-trip formatting, so a
//! value read back is bit-identical to the value written.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::emotion::{BlendAnnotation, Emotion, EmotionDistribution, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::eval::FoldAssignment;
use crate::records::{check_manifest, EncoderPredictionSet, SampleRecord};

pub const PREDICTIONS_HEADER: [&str; 8] = [
    "video_id",
    "actor_id",
    "p_anger",
    "p_disgust",
    "p_fear",
    "p_happiness",
    "p_sadness",
    "p_surprise",
];

pub const LABELS_HEADER: [&str; 5] = ["video_id", "actor_id", "emotion_a", "emotion_b", "salience_a"];

pub const FEATURE_MANIFEST_HEADER: [&str; 3] = ["video_id", "actor_id", "path"];

pub const FOLDS_HEADER: [&str; 2] = ["actor_id", "fold"];

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(input)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads every record, checking the header row verbatim.
fn read_rows<R: Read>(input: R, path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = reader(input);
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = i + 1;
        if !seen_header {
            let got: Vec<&str> = rec.iter().collect();
            if got != header {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected header '{}', found '{}'", header.join(","), got.join(",")),
                ));
            }
            seen_header = true;
            continue;
        }
        rows.push((line, rec));
    }
    if !seen_header {
        return Err(Error::parse(path, 1, "file is empty (missing header)"));
    }
    Ok(rows)
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("'{field}' is not a decimal number")))
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn finish<W: Write>(wtr: csv::Writer<W>, path: &Path) -> Result<()> {
    let mut inner = wtr
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// predictions

pub fn parse_predictions<R: Read>(
    input: R,
    encoder_name: &str,
    path: &Path,
) -> Result<EncoderPredictionSet> {
    let mut set = EncoderPredictionSet::new(encoder_name);
    for (line, rec) in read_rows(input, path, &PREDICTIONS_HEADER)? {
        let mut values = [0.0; NUM_EMOTIONS];
        for (k, v) in values.iter_mut().enumerate() {
            *v = parse_f64(path, line, &rec[2 + k])?;
        }
        let (dist, renormalized) = EmotionDistribution::new_lenient(values)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if renormalized {
            log::warn!("{}:{line}: probability row renormalized", path.display());
        }
        set.push(&rec[0], &rec[1], dist)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(set)
}

/// Reads a predictions file; the encoder is named after the file stem.
pub fn read_predictions(path: &Path) -> Result<EncoderPredictionSet> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_predictions(open(path)?, &name, path)
}

pub fn format_predictions<W: Write>(set: &EncoderPredictionSet, out: W, path: &Path) -> Result<()> {
    let mut wtr = csv_writer(out);
    let io = |e: csv::Error| Error::csv(path, e);
    wtr.write_record(PREDICTIONS_HEADER).map_err(io)?;
    for (video, actor, rows) in set.iter() {
        for row in rows {
            let mut fields = vec![video.to_string(), actor.to_string()];
            fields.extend(row.values().iter().map(|v| v.to_string()));
            wtr.write_record(&fields).map_err(io)?;
        }
    }
    finish(wtr, path)
}

pub fn write_predictions(path: &Path, set: &EncoderPredictionSet) -> Result<()> {
    format_predictions(set, create(path)?, path)
}

// ---------------------------------------------------------------------------
// labels / manifest

fn parse_label_fields(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<Option<BlendAnnotation>> {
    let (a, b, s) = (rec[2].trim(), rec[3].trim(), rec[4].trim());
    if a.is_empty() && b.is_empty() && s.is_empty() {
        return Ok(None);
    }
    let wrap = |e: Error| Error::parse(path, line, e.to_string());
    let primary: Emotion = a.parse().map_err(wrap)?;
    let secondary = if b.is_empty() {
        None
    } else {
        Some(b.parse::<Emotion>().map_err(wrap)?)
    };
    let salience: u8 = s
        .parse()
        .map_err(|_| Error::parse(path, line, format!("salience '{s}' is not an integer")))?;
    BlendAnnotation::canonicalize(primary, secondary, salience)
        .map(Some)
        .map_err(wrap)
}

/// Parses a labels file. Rows with all three annotation fields empty are
/// unlabeled records.
pub fn parse_labels<R: Read>(input: R, path: &Path) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for (line, rec) in read_rows(input, path, &LABELS_HEADER)? {
        records.push(SampleRecord {
            video_id: rec[0].to_string(),
            actor_id: rec[1].to_string(),
            annotation: parse_label_fields(path, line, &rec)?,
        });
    }
    check_manifest(&records)?;
    Ok(records)
}

pub fn read_labels(path: &Path) -> Result<Vec<SampleRecord>> {
    parse_labels(open(path)?, path)
}

pub fn format_labels<W: Write>(records: &[SampleRecord], out: W, path: &Path) -> Result<()> {
    let mut wtr = csv_writer(out);
    let io = |e: csv::Error| Error::csv(path, e);
    wtr.write_record(LABELS_HEADER).map_err(io)?;
    for r in records {
        let (a, b, s) = match r.annotation {
            Some(ann) => (
                ann.primary().name().to_string(),
                ann.secondary().map(|e| e.name().to_string()).unwrap_or_default(),
                ann.salience().primary_percent().to_string(),
            ),
            None => Default::default(),
        };
        wtr.write_record([r.video_id.as_str(), r.actor_id.as_str(), &a, &b, &s])
            .map_err(io)?;
    }
    finish(wtr, path)
}

pub fn write_labels(path: &Path, records: &[SampleRecord]) -> Result<()> {
    format_labels(records, create(path)?, path)
}

/// One row of a feature-directory `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureEntry {
    pub video_id: String,
    pub actor_id: String,
    pub path: String,
}

pub fn read_feature_manifest(path: &Path) -> Result<Vec<FeatureEntry>> {
    let rows = read_rows(open(path)?, path, &FEATURE_MANIFEST_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|(_, rec)| FeatureEntry {
            video_id: rec[0].to_string(),
            actor_id: rec[1].to_string(),
            path: rec[2].to_string(),
        })
        .collect())
}

pub fn write_feature_manifest(path: &Path, entries: &[FeatureEntry]) -> Result<()> {
    let mut wtr = csv_writer(create(path)?);
    let io = |e: csv::Error| Error::csv(path, e);
    wtr.write_record(FEATURE_MANIFEST_HEADER).map_err(io)?;
    for e in entries {
        wtr.write_record([&e.video_id, &e.actor_id, &e.path]).map_err(io)?;
    }
    finish(wtr, path)
}

/// Reads either a labels file or a feature manifest as a list of records,
/// dispatching on the header.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("").trim_end_matches('\r');
    if first == FEATURE_MANIFEST_HEADER.join(",") {
        let rows = read_rows(text.as_bytes(), path, &FEATURE_MANIFEST_HEADER)?;
        let records: Vec<SampleRecord> = rows
            .into_iter()
            .map(|(_, rec)| SampleRecord {
                video_id: rec[0].to_string(),
                actor_id: rec[1].to_string(),
                annotation: None,
            })
            .collect();
        check_manifest(&records)?;
        Ok(records)
    } else {
        parse_labels(text.as_bytes(), path)
    }
}

// ---------------------------------------------------------------------------
// folds

pub fn read_folds(path: &Path) -> Result<FoldAssignment> {
    let rows = read_rows(open(path)?, path, &FOLDS_HEADER)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let fold: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("fold '{}' is not an integer", &rec[1])))?;
        pairs.push((rec[0].to_string(), fold));
    }
    FoldAssignment::from_pairs(pairs)
}

pub fn write_folds(path: &Path, folds: &FoldAssignment) -> Result<()> {
    let mut wtr = csv_writer(create(path)?);
    let io = |e: csv::Error| Error::csv(path, e);
    wtr.write_record(FOLDS_HEADER).map_err(io)?;
    for (actor, fold) in folds.iter() {
        wtr.write_record([actor, &fold.to_string()]).map_err(io)?;
    }
    finish(wtr, path)
}

// ---------------------------------------------------------------------------
// aggregated feature table

/// One aggregated feature vector per video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub actor_id: String,
    pub values: Vec<f64>,
}

/// `video_id,actor_id,f0,f1,...` with one row per video.
pub fn write_feature_table(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    if let Some(r) = rows.iter().find(|r| r.values.len() != dim) {
        return Err(Error::Shape(format!(
            "feature row '{}' has {} values, expected {dim}",
            r.video_id,
            r.values.len()
        )));
    }
    let mut wtr = csv_writer(create(path)?);
    let io = |e: csv::Error| Error::csv(path, e);
    let mut header = vec!["video_id".to_string(), "actor_id".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.video_id.clone(), r.actor_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(io)?;
    }
    finish(wtr, path)
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut rdr = reader(open(path)?);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::csv(path, e))?,
        None => return Err(Error::parse(path, 1, "file is empty (missing header)")),
    };
    let dim = header.len().saturating_sub(2);
    let expected: Vec<String> = ["video_id".to_string(), "actor_id".to_string()]
        .into_iter()
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) || dim == 0 {
        return Err(Error::parse(path, 1, "expected header 'video_id,actor_id,f0,f1,...'"));
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::parse(path, line, format!("duplicate video '{}'", &rec[0])));
        }
        let values = (2..rec.len())
            .map(|j| {
                let v = parse_f64(path, line, &rec[j])?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(path, line, format!("non-finite feature '{}'", &rec[j])))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            video_id: rec[0].to_string(),
            actor_id: rec[1].to_string(),
            values,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// directories

/// Every `*.csv` file in `dir`, sorted by file name, read as one encoder each.
pub fn read_prediction_dir(dir: &Path) -> Result<Vec<EncoderPredictionSet>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no .csv prediction files in {}", dir.display())));
    }
    paths.iter().map(|p| read_predictions(p)).collect()
}
