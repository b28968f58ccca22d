use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use blendfuse::eval::{cross_validate, fit_pipeline, fuse_all, split_actors, FoldAssignment};
use blendfuse::features::{aggregate, format_feature_file, read_feature_file};
use blendfuse::fusion::WeightVector;
use blendfuse::identities::{
    check_published_scores, check_published_weights, check_results_file, ScoreCheck, WeightCheck,
};
use blendfuse::io::{
    read_feature_manifest, read_feature_table, read_folds, read_labels, read_manifest,
    read_prediction_dir, write_feature_manifest, write_feature_table, write_folds, write_labels,
    write_predictions, FeatureEntry, FeatureRow,
};
use blendfuse::labels::{encode_soft_label, SoftLabel};
use blendfuse::mlp::{train, Dataset, Mode};
use blendfuse::postprocess::{search_thresholds, SelectionStrategy, ThresholdReport, ThresholdSurface};
use blendfuse::records::{EncoderPredictionSet, SampleRecord};
use blendfuse::synth::{feature_sequences, generate, oracle_encoder, random_encoder};
use blendfuse::BlendAnnotation;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{require, RunConfig};
use crate::error::CliError;
use crate::output::Outputs;
use crate::svg;

type CmdResult = Result<(), CliError>;

fn labels_in_fold(
    records: &[SampleRecord],
    folds: &FoldAssignment,
    fold: usize,
) -> BTreeMap<String, BlendAnnotation> {
    records
        .iter()
        .filter(|r| folds.fold_of(&r.actor_id) == Some(fold))
        .filter_map(|r| r.annotation.map(|a| (r.video_id.clone(), a)))
        .collect()
}

/// Every labeled video must belong to an actor listed in the folds file.
fn check_fold_coverage(records: &[SampleRecord], folds: &FoldAssignment) -> CmdResult {
    let unknown: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.annotation.is_some() && folds.fold_of(&r.actor_id).is_none())
        .map(|r| r.actor_id.as_str())
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{} actor(s) missing from the folds file: {}",
            unknown.len(),
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

/// Every encoder must cover every labeled video.
fn check_coverage(preds: &[EncoderPredictionSet], records: &[SampleRecord]) -> CmdResult {
    let mut problems = Vec::new();
    for p in preds {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| r.annotation.is_some() && p.clips(&r.video_id).is_none())
            .map(|r| r.video_id.as_str())
            .collect();
        if !missing.is_empty() {
            problems.push(format!(
                "encoder '{}' lacks {} labeled video(s): {}",
                p.encoder_name,
                missing.len(),
                missing.join(", ")
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(problems.join("; ")))
    }
}

fn check_encoder_names(preds: &[EncoderPredictionSet]) -> CmdResult {
    let mut seen = BTreeSet::new();
    for p in preds {
        if !seen.insert(p.encoder_name.as_str()) {
            return Err(CliError::validation(format!("encoder '{}' appears in two files", p.encoder_name)));
        }
    }
    Ok(())
}

pub fn split(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    let records = read_manifest(require(&cfg.paths.manifest, "manifest")?)?;
    if cfg.split.k < 2 {
        return Err(CliError::config(format!("split.k must be at least 2, got {}", cfg.split.k)));
    }
    let folds = split_actors(&records, cfg.split.k)?;
    write_folds(&out.file("folds.csv")?, &folds)?;
    info!("{} actors in {} folds", folds.iter().count(), folds.k());
    Ok(())
}

pub fn encode_labels(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    let records = read_labels(require(&cfg.paths.labels, "labels")?)?;
    let mut set = EncoderPredictionSet::new("soft_labels");
    for r in &records {
        if let Some(a) = r.annotation {
            set.push(r.video_id.clone(), r.actor_id.clone(), encode_soft_label(&a).as_distribution())?;
        }
    }
    if set.is_empty() {
        return Err(CliError::validation("labels file has no labeled videos"));
    }
    write_predictions(&out.file("soft_labels.csv")?, &set)?;
    Ok(())
}

pub fn aggregate_features(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    let manifest = require(&cfg.paths.features_manifest, "features_manifest")?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let entries = read_feature_manifest(manifest)?;
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !base.join(&e.path).is_file())
        .map(|e| format!("{} ({})", e.video_id, e.path))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "{} feature file(s) missing: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let rows = entries
        .par_iter()
        .map(|e| {
            let seq = read_feature_file(&base.join(&e.path), &e.video_id)?;
            Ok(FeatureRow {
                video_id: e.video_id.clone(),
                actor_id: e.actor_id.clone(),
                values: aggregate(&seq, &cfg.aggregate)?,
            })
        })
        .collect::<blendfuse::Result<Vec<_>>>()?;
    write_feature_table(&out.file("features.csv")?, &rows)?;
    info!("aggregated {} videos to {} dims", rows.len(), rows.first().map_or(0, |r| r.values.len()));
    Ok(())
}

pub fn train_mlp(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    cfg.mlp.validate()?;
    let table = read_feature_table(require(&cfg.paths.features, "features")?)?;
    let records = read_labels(require(&cfg.paths.labels, "labels")?)?;
    let folds = read_folds(require(&cfg.paths.folds, "folds")?)?;
    check_fold_coverage(&records, &folds)?;

    let features: BTreeMap<&str, &FeatureRow> = table.iter().map(|r| (r.video_id.as_str(), r)).collect();
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| r.annotation.is_some() && !features.contains_key(r.video_id.as_str()))
        .map(|r| r.video_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "features missing for {} labeled video(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let labels: BTreeMap<&str, BlendAnnotation> = records
        .iter()
        .filter_map(|r| r.annotation.map(|a| (r.video_id.as_str(), a)))
        .collect();

    let k = folds.k();
    let fold_of = |row: &FeatureRow| folds.fold_of(&row.actor_id);
    let dataset = |fs: &[usize]| -> blendfuse::Result<Dataset> {
        let (rows, y): (Vec<Vec<f64>>, Vec<SoftLabel>) = table
            .iter()
            .filter(|r| fold_of(r).is_some_and(|f| fs.contains(&f)))
            .filter_map(|r| labels.get(r.video_id.as_str()).map(|a| (r.values.clone(), encode_soft_label(a))))
            .unzip();
        Dataset::from_rows(&rows, y)
    };
    for f in 0..k {
        if !labels.keys().any(|v| fold_of(features[v]) == Some(f)) {
            return Err(CliError::validation(format!("fold {f} has no labeled videos")));
        }
    }
    if k == 2 {
        warn!("with 2 folds the held-out fold doubles as the early-stopping validation set");
    }

    let trained = (0..k)
        .into_par_iter()
        .map(|f| {
            let val_fold = if k == 2 { f } else { (f + 1) % k };
            let train_folds: Vec<usize> = (0..k).filter(|&g| g != f && g != val_fold).collect();
            let mut mcfg = cfg.mlp.clone();
            mcfg.seed = cfg.mlp.seed.wrapping_add(f as u64);
            let (mut model, log) = train(&dataset(&train_folds)?, &dataset(&[val_fold])?, &mcfg)?;
            model.set_mode(Mode::Eval);
            let held_out: Vec<&FeatureRow> = table.iter().filter(|r| fold_of(r) == Some(f)).collect();
            let preds = held_out
                .iter()
                .map(|r| Ok((r.video_id.clone(), r.actor_id.clone(), model.forward(&r.values)?)))
                .collect::<blendfuse::Result<Vec<_>>>()?;
            info!("fold {f}: best epoch {} val KL {:.5}", log.best_epoch, log.best_val_loss);
            Ok((f, model, log, preds))
        })
        .collect::<blendfuse::Result<Vec<_>>>()?;

    let skipped = table.iter().filter(|r| fold_of(r).is_none()).count();
    if skipped > 0 {
        warn!("{skipped} feature row(s) belong to actors outside the folds file and get no prediction");
    }
    let mut set = EncoderPredictionSet::new(cfg.train.encoder_name.clone());
    for (f, model, log, preds) in trained {
        out.text(&format!("fold{f}/model.json"), &model.to_json()?)?;
        out.text(&format!("fold{f}/train_log.csv"), &log.to_csv())?;
        for (v, a, p) in preds {
            set.push(v, a, p)?;
        }
    }
    write_predictions(&out.file(&format!("predictions/{}.csv", cfg.train.encoder_name))?, &set)?;
    Ok(())
}

fn load_fusion_inputs(cfg: &RunConfig) -> Result<(Vec<EncoderPredictionSet>, Vec<SampleRecord>, FoldAssignment), CliError> {
    let preds = read_prediction_dir(require(&cfg.paths.predictions_dir, "predictions_dir")?)?;
    check_encoder_names(&preds)?;
    let records = read_labels(require(&cfg.paths.labels, "labels")?)?;
    let folds = read_folds(require(&cfg.paths.folds, "folds")?)?;
    check_fold_coverage(&records, &folds)?;
    check_coverage(&preds, &records)?;
    Ok((preds, records, folds))
}

fn write_figures(out: &mut Outputs, surfaces: &[ThresholdSurface], report: &ThresholdReport) -> CmdResult {
    out.text("surface.svg", &svg::surface_heatmap(surfaces, "Mean Score over folds"))?;
    out.text("beta.svg", &svg::beta_bars(&report.per_fold, report.beta, "Per-fold optimal beta"))
}

pub fn fuse_evaluate(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    let (preds, records, folds) = load_fusion_inputs(cfg)?;
    let pipeline = &cfg.pipeline;
    pipeline.postprocess(pipeline.initial_thresholds).validate()?;

    let report = cross_validate(&preds, &records, &folds, pipeline)?;
    out.text("results.csv", &report.to_csv())?;
    out.stamped_json("results.json", &report)?;

    let all: Vec<usize> = (0..folds.k()).collect();
    let fitted = fit_pipeline(&preds, &records, &folds, &all, pipeline)?;
    out.text("weights.csv", &fitted.weights().to_csv())?;
    out.text("search_log.csv", &fitted.search.log_csv())?;
    let thresholds = ThresholdReport::build(&fitted.surfaces, pipeline.threshold_strategy)?;
    out.stamped_json("thresholds.json", &thresholds)?;
    write_figures(out, &fitted.surfaces, &thresholds)?;
    let s = &report.summary;
    println!(
        "score {:.4} (+/- {:.4})  acc_p {:.4}  acc_s {:.4}  alpha {} beta {}",
        s.score.mean, s.score.std, s.acc_p.mean, s.acc_s.mean, thresholds.alpha, thresholds.beta
    );
    Ok(())
}

#[derive(Serialize)]
struct Sensitivity<'a> {
    weights: BTreeMap<&'a str, f64>,
    reports: Vec<ThresholdReport>,
}

pub fn sensitivity(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    let (preds, records, folds) = load_fusion_inputs(cfg)?;
    let p = &cfg.pipeline;
    let weights = match &cfg.paths.weights {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
            WeightVector::from_csv(&text, blendfuse::identities::WEIGHT_TOLERANCE)?
        }
        None => {
            let names: Vec<&str> = preds.iter().map(|p| p.encoder_name.as_str()).collect();
            WeightVector::uniform(&names)?
        }
    };
    let surfaces = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            let labels = labels_in_fold(&records, &folds, f);
            let fused = fuse_all(&preds, &weights, labels.keys())?;
            search_thresholds(&fused, &labels, &p.alpha_grid, &p.beta_grid, p.neutral, p.renormalize_survivors)
        })
        .collect::<blendfuse::Result<Vec<_>>>()?;

    let mut csv = String::from("fold,alpha,beta,acc_p,acc_s,score\n");
    for (f, s) in surfaces.iter().enumerate() {
        for ai in 0..s.alpha_grid.len() {
            for bi in 0..s.beta_grid.len() {
                let t = s.pair(ai, bi);
                let c = s.cell(ai, bi);
                csv.push_str(&format!("{f},{},{},{},{},{}\n", t.alpha, t.beta, c.acc_p, c.acc_s, c.score));
            }
        }
    }
    out.text("surface.csv", &csv)?;

    let reports = [SelectionStrategy::PerFoldAverage, SelectionStrategy::Decoupled, SelectionStrategy::BestFold]
        .into_iter()
        .map(|s| ThresholdReport::build(&surfaces, s))
        .collect::<blendfuse::Result<Vec<_>>>()?;
    let chosen = reports
        .iter()
        .find(|r| r.strategy == p.threshold_strategy)
        .expect("every strategy is reported")
        .clone();
    for r in &reports[..1] {
        for f in &r.per_fold {
            println!("fold {}: alpha {} beta {} score {:.4}", f.fold, f.alpha, f.beta, f.score);
        }
        if let Some(b) = r.beta_spread {
            println!("beta spread {}..{} ratio {}", b.min, b.max, b.ratio.map_or("inf".into(), |x| format!("{x:.2}")));
        }
    }
    out.stamped_json(
        "sensitivity.json",
        &Sensitivity {
            weights: weights.iter().collect(),
            reports,
        },
    )?;
    write_figures(out, &surfaces, &chosen)
}

pub fn synth(cfg: &RunConfig, out: &mut Outputs) -> CmdResult {
    cfg.synth.validate()?;
    let so = &cfg.synth_output;
    let data = generate(&cfg.synth)?;
    write_labels(&out.file("labels.csv")?, &data.records)?;
    write_predictions(&out.file(&format!("predictions/{}.csv", cfg.synth.encoder_name))?, &data.predictions)?;
    write_folds(&out.file("folds.csv")?, &data.folds_by_gap(so.folds)?)?;
    let mut gaps = String::from("actor_id,gap\n");
    for (a, g) in &data.actor_gaps {
        gaps.push_str(&format!("{a},{g}\n"));
    }
    out.text("actor_gaps.csv", &gaps)?;

    let mut extra = Vec::new();
    if so.oracle {
        extra.push(oracle_encoder(&data.records, "oracle")?);
    }
    for i in 0..so.random_encoders {
        let seed = cfg.synth.seed.wrapping_mul(1000).wrapping_add(i as u64 + 1);
        extra.push(random_encoder(&data.records, &format!("random{i}"), seed)?);
    }
    for set in &extra {
        if set.encoder_name == cfg.synth.encoder_name {
            return Err(CliError::config(format!("encoder name '{}' is used twice", set.encoder_name)));
        }
        write_predictions(&out.file(&format!("predictions/{}.csv", set.encoder_name))?, set)?;
    }

    if let Some(fcfg) = &so.features {
        let seqs = feature_sequences(&data.records, fcfg)?;
        let actors: BTreeMap<&str, &str> = data.records.iter().map(|r| (r.video_id.as_str(), r.actor_id.as_str())).collect();
        let mut entries = Vec::with_capacity(seqs.len());
        for seq in &seqs {
            let name = format!("{}.feat", seq.video_id);
            out.text(&format!("features/{name}"), &format_feature_file(seq))?;
            entries.push(FeatureEntry {
                video_id: seq.video_id.clone(),
                actor_id: actors[seq.video_id.as_str()].to_string(),
                path: name,
            });
        }
        write_feature_manifest(&out.file("features/manifest.csv")?, &entries)?;
    }
    info!("{} videos from {} actors", data.records.len(), data.actor_gaps.len());
    Ok(())
}

#[derive(Serialize)]
struct Identities {
    scores: Vec<ScoreCheck>,
    weights: Vec<WeightCheck>,
    all_ok: bool,
}

/// Returns whether every identity holds. The report is written either way.
pub fn verify_identities(cfg: &RunConfig, tolerance: f64, out: &mut Outputs) -> Result<bool, CliError> {
    let (scores, weights) = match &cfg.paths.results {
        Some(path) => (check_results_file(path, tolerance)?, Vec::new()),
        None => {
            let mut scores = check_published_scores();
            for c in &mut scores {
                c.ok = c.abs_diff <= tolerance + 1e-12;
            }
            (scores, check_published_weights())
        }
    };
    for c in scores.iter().filter(|c| !c.ok) {
        println!(
            "MISMATCH {} / {}: 0.5*({} + {}) = {} vs {} (diff {:.4})",
            c.group, c.row, c.acc_p, c.acc_s, c.computed, c.published, c.abs_diff
        );
    }
    for w in weights.iter().filter(|w| !w.ok) {
        println!("MISMATCH weights {}: sum {}", w.column, w.sum);
    }
    let bad = scores.iter().filter(|c| !c.ok).count() + weights.iter().filter(|w| !w.ok).count();
    let total = scores.len() + weights.len();
    println!("{} of {total} identities hold", total - bad);
    out.stamped_json(
        "identities.json",
        &Identities {
            scores,
            weights,
            all_ok: bad == 0,
        },
    )?;
    Ok(bad == 0)
}
