//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed even when
//! cargo captures test output. The process fails if any criterion fails,
//! except criterion 1, whose one failing row is a known inconsistency in the
//! published numbers (see `KNOWN_BAD_TRIPLES`). That line still prints FAIL.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use blendfuse::eval::split_actors;
use blendfuse::features::{aggregate, aggregate_temporal, AggregationConfig, FrameFeatureSequence, Statistic};
use blendfuse::fusion::{optimize_weights, FusionProblem, FusionStrategy};
use blendfuse::identities::{check_published_scores, check_published_weights, WEIGHTS_12_ENC, WEIGHTS_9_ENC};
use blendfuse::labels::{encode_soft_label, kl_grad_logits, kl_loss, softmax, SoftLabel};
use blendfuse::mlp::{train, Dataset, MlpConfig, MlpModel};
use blendfuse::postprocess::{
    discretize, search_thresholds, Grid, Neutral, PostprocessConfig, ThresholdPair,
};
use blendfuse::synth::{
    feature_sequences, generate, oracle_encoder, random_encoder, FeatureSynthConfig, SynthConfig,
};
use blendfuse::{BlendAnnotation, Emotion, EmotionDistribution, Salience, NUM_EMOTIONS};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure explained by a documented source inconsistency.
    known: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            known: false,
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Score identity

/// (row, ACC_P, ACC_S, Score) in thousandths, transcribed separately
/// from the library table.
const TRIPLES_MILLI: [(&str, i64, i64, i64); 21] = [
    ("S4D-ViTMoE (face)", 340, 140, 240),
    ("Gemini Embed. 2.0 (2s)", 320, 137, 223),
    ("VideoMAE body (ft)", 291, 144, 218),
    ("Wav2Vec2 frozen+MLP-1024", 294, 120, 207),
    ("TimeSformer body (ft)", 259, 131, 195),
    ("Wav2Vec2 frozen+MLP-512", 264, 104, 184),
    ("Wav2Vec2 finetuned E2E", 234, 88, 161),
    ("HiCMAE", 298, 180, 239),
    ("ImageBind", 290, 130, 210),
    ("WavLM", 265, 121, 193),
    ("VideoMAEv2", 273, 106, 190),
    ("VideoMAEv2 + HuBERT", 332, 114, 223),
    ("ImageBind + WavLM", 327, 114, 221),
    ("HiCMAE", 268, 180, 224),
    ("S4D + Wav2Vec2", 327, 159, 243),
    ("9-encoder ensemble", 357, 168, 262),
    ("12-enc + Gemini", 391, 168, 279),
    ("S4D face only", 340, 140, 240),
    ("S4D + Wav2Vec2", 357, 175, 266),
    ("9-encoder", 414, 205, 309),
    ("12-encoder + Gemini", 418, 204, 311),
];

/// Rows whose printed numbers are mutually inconsistent at any rounding.
const KNOWN_BAD_TRIPLES: [&str; 1] = ["Gemini Embed. 2.0 (2s)"];

fn criterion_1() -> Outcome {
    // |(P + S)/2 - Score| <= 0.5e-3  <=>  |P + S - 2 Score| <= 1 in thousandths
    let oracle: Vec<bool> = TRIPLES_MILLI.iter().map(|&(_, p, s, sc)| (p + s - 2 * sc).abs() <= 1).collect();
    let checks = check_published_scores();
    let agree = checks.len() == oracle.len()
        && checks.iter().zip(&oracle).all(|(c, &ok)| c.ok == ok)
        && checks.iter().zip(&TRIPLES_MILLI).all(|(c, t)| c.row == t.0);
    let failing: Vec<&str> = checks.iter().filter(|c| !c.ok).map(|c| c.row.as_str()).collect();
    let worst = checks.iter().filter(|c| !c.ok).map(|c| c.abs_diff).fold(0.0, f64::max);
    let detail = format!(
        "{}/{} triples within 5e-4 (16 expected, 21 present); failing: {:?} (diff {:.4}); checker agrees with integer oracle: {}",
        checks.len() - failing.len(),
        checks.len(),
        failing,
        worst,
        agree
    );
    if !agree {
        return Outcome::new(false, detail);
    }
    if failing.is_empty() {
        return Outcome::new(true, detail);
    }
    Outcome {
        pass: false,
        known: failing == KNOWN_BAD_TRIPLES,
        detail,
    }
}

// ---------------------------------------------------------------------------
// 2. Weight simplex

fn criterion_2() -> Outcome {
    let milli = |ws: &[(&str, f64)]| -> i64 { ws.iter().map(|(_, w)| (w * 1000.0).round() as i64).sum() };
    let (s9, s12) = (milli(&WEIGHTS_9_ENC), milli(&WEIGHTS_12_ENC));
    let checks = check_published_weights();
    let oracle = [(s9 - 1000).abs() <= 5, (s12 - 1000).abs() <= 5];
    let pass = s9 == 999 && s12 == 1000 && checks.iter().all(|c| c.ok) && oracle.iter().all(|&o| o);
    Outcome::new(
        pass,
        format!("9-enc sums to {:.3}, 12-enc to {:.3}; validator at 5e-3: {:?}", s9 as f64 / 1000.0, s12 as f64 / 1000.0, checks.iter().map(|c| c.ok).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------------------
// 3. Discretization against a literal four-step reference

/// (presence mask, salience, index at 70 for a 70/30 split)
type Decision = (u8, Salience, Option<usize>);

fn reference_discretize(p: &[f64; 6], alpha: f64, beta: f64, neutral: Option<usize>, renormalize: bool) -> Decision {
    // step 1: keep the two largest, lower index first on ties
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    let mut masked = [0.0; 6];
    masked[order[0]] = p[order[0]];
    masked[order[1]] = p[order[1]];
    // step 2: zero kept entries below alpha
    for v in masked.iter_mut() {
        if *v < alpha {
            *v = 0.0;
        }
    }
    let survivors: Vec<usize> = order[..2].iter().copied().filter(|&i| masked[i] > 0.0).collect();
    // step 3: neutral next to another emotion collapses to that emotion
    if let (Some(n), 2) = (neutral, survivors.len()) {
        if survivors.contains(&n) {
            let other = if survivors[0] == n { survivors[1] } else { survivors[0] };
            return (1 << other, Salience::Single, None);
        }
    }
    // step 4
    match survivors.as_slice() {
        [] => {
            let mut arg = 0;
            for i in 1..6 {
                if p[i] > p[arg] {
                    arg = i;
                }
            }
            (1 << arg, Salience::Single, None)
        }
        [i] => (1 << i, Salience::Single, None),
        [i, j] => {
            let (a, b) = (masked[*i], masked[*j]);
            let gap = if renormalize { (a - b).abs() / (a + b) } else { (a - b).abs() };
            let mask = (1 << i) | (1 << j);
            if gap <= beta {
                (mask, Salience::Even, None)
            } else {
                (mask, Salience::Dominant, Some(if a >= b { *i } else { *j }))
            }
        }
        _ => unreachable!(),
    }
}

fn decision_of(d: &BlendAnnotation) -> Decision {
    let top = (d.salience() == Salience::Dominant).then(|| d.primary().index());
    (d.presence_mask(), d.salience(), top)
}

fn random_distribution(rng: &mut ChaCha8Rng) -> [f64; 6] {
    // a mix of coarse grids (exact ties, zeros) and continuous draws
    let raw: [f64; 6] = match rng.random_range(0..4) {
        0 => std::array::from_fn(|_| rng.random_range(0..5) as f64),
        1 => std::array::from_fn(|_| rng.random_range(0..20) as f64),
        2 => {
            let mut v = [0.0; 6];
            v[rng.random_range(0..6)] = 1.0;
            v
        }
        _ => std::array::from_fn(|_| -rng.random::<f64>().ln()),
    };
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return [1.0 / 6.0; 6];
    }
    raw.map(|v| v / total)
}

fn random_threshold(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        rng.random_range(0..=50) as f64 / 100.0
    } else {
        rng.random::<f64>()
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut first = None;
    let n = 10_000;
    for _ in 0..n {
        let raw = random_distribution(&mut rng);
        let (dist, _) = EmotionDistribution::new_lenient(raw).expect("valid row");
        let p = *dist.values();
        let alpha = random_threshold(&mut rng);
        let beta = random_threshold(&mut rng);
        let neutral = match rng.random_range(0..8) {
            0..=5 => Neutral::Index(rng.random_range(0..6)),
            6 => Neutral::SeventhClass,
            _ => Neutral::Absent,
        };
        let renormalize = rng.random_bool(0.3);
        let cfg = PostprocessConfig {
            neutral,
            thresholds: ThresholdPair::new(alpha, beta).unwrap(),
            renormalize_survivors: renormalize,
        };
        let idx = match neutral {
            Neutral::Index(i) => Some(i),
            _ => None,
        };
        let got = decision_of(&discretize(&dist, &cfg));
        let want = reference_discretize(&p, alpha, beta, idx, renormalize);
        if got != want {
            mismatches += 1;
            first.get_or_insert(format!("p={p:?} a={alpha} b={beta} n={neutral:?} got {got:?} want {want:?}"));
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} mismatches in {n} tuples{}", first.map_or(String::new(), |f| format!("; first: {f}"))),
    )
}

// ---------------------------------------------------------------------------
// 4. Surface cells against single-point evaluation

fn criterion_4() -> Outcome {
    let data = generate(&SynthConfig {
        n_actors: 10,
        clips_per_actor: 50,
        noise_sigma: 0.4,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let labels: BTreeMap<String, BlendAnnotation> =
        data.records.iter().map(|r| (r.video_id.clone(), r.annotation.unwrap())).collect();
    let fused: BTreeMap<String, EmotionDistribution> =
        labels.keys().map(|v| (v.clone(), data.predictions.averaged(v).unwrap())).collect();
    let grid = Grid::default();
    let surface = search_thresholds(&fused, &labels, &grid, &grid, Neutral::Absent, false).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut bad = Vec::new();
    for _ in 0..10 {
        let (ai, bi) = (rng.random_range(0..grid.len()), rng.random_range(0..grid.len()));
        let t = surface.pair(ai, bi);
        let cfg = PostprocessConfig::new(t);
        let (mut hit_p, mut hit_s) = (0usize, 0usize);
        for (v, truth) in &labels {
            let pred = discretize(&fused[v], &cfg);
            if pred.presence_mask() == truth.presence_mask() {
                hit_p += 1;
            }
            if pred.presence_mask() == truth.presence_mask()
                && pred.salience() == truth.salience()
                && (pred.salience() != Salience::Dominant || pred.primary() == truth.primary())
            {
                hit_s += 1;
            }
        }
        let n = labels.len() as f64;
        let (p, s) = (hit_p as f64 / n, hit_s as f64 / n);
        let score = (p + s) / 2.0;
        let cell = surface.cell(ai, bi);
        if cell.acc_p != p || cell.acc_s != s || cell.score != score {
            bad.push(format!("({}, {})", t.alpha, t.beta));
        }
    }
    Outcome::new(bad.is_empty(), format!("{} clips, 10 random cells, mismatched: {bad:?}", labels.len()))
}

// ---------------------------------------------------------------------------
// 5. Beta instability

/// Per-fold argmax (alpha, beta) on gap-sorted folds, each fold searched on
/// its own clips.
fn fold_optima(range: (f64, f64), seed: u64) -> Vec<(f64, f64)> {
    let data = generate(&SynthConfig {
        n_actors: 100,
        clips_per_actor: 40,
        actor_gap_range: range,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let folds = data.folds_by_gap(5).unwrap();
    (0..5)
        .map(|f| {
            let labels: BTreeMap<String, BlendAnnotation> = data
                .records
                .iter()
                .filter(|r| folds.fold_of(&r.actor_id) == Some(f))
                .map(|r| (r.video_id.clone(), r.annotation.unwrap()))
                .collect();
            let fused = labels.keys().map(|v| (v.clone(), data.predictions.averaged(v).unwrap())).collect();
            let s = search_thresholds(&fused, &labels, &Grid::default(), &Grid::default(), Neutral::Absent, false).unwrap();
            let (t, _) = s.argmax();
            (t.alpha, t.beta)
        })
        .collect()
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    (values.clone().fold(f64::INFINITY, f64::min), values.fold(f64::NEG_INFINITY, f64::max))
}

fn criterion_5() -> Outcome {
    let het = fold_optima((0.05, 0.45), 0);
    let deg = fold_optima((0.25, 0.25), 0);
    let (hb_lo, hb_hi) = spread(het.iter().map(|t| t.1));
    let (db_lo, db_hi) = spread(deg.iter().map(|t| t.1));
    let (ha_lo, ha_hi) = spread(het.iter().map(|t| t.0));
    let (da_lo, da_hi) = spread(deg.iter().map(|t| t.0));
    let ratio = hb_hi / hb_lo;
    let eps = 1e-9;
    let pass = hb_lo > 0.0
        && ratio >= 3.0
        && db_hi - db_lo <= 0.01 + eps
        && ha_hi - ha_lo <= 0.05 + eps
        && da_hi - da_lo <= 0.05 + eps;
    Outcome::new(
        pass,
        format!(
            "heterogeneous beta {:?} ratio {ratio:.2}, alpha {ha_lo}..{ha_hi}; degenerate beta {:?}, alpha {da_lo}..{da_hi}",
            het.iter().map(|t| t.1).collect::<Vec<_>>(),
            deg.iter().map(|t| t.1).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Gradients

fn random_label(rng: &mut ChaCha8Rng) -> SoftLabel {
    let a = Emotion::ALL[rng.random_range(0..6)];
    let b = Emotion::ALL[(a.index() + rng.random_range(1..6)) % 6];
    let ann = match rng.random_range(0..3) {
        0 => BlendAnnotation::single(a),
        1 => BlendAnnotation::dominant(a, b).unwrap(),
        _ => BlendAnnotation::even(a, b).unwrap(),
    };
    encode_soft_label(&ann)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    let mut kl_worst: f64 = 0.0;
    for _ in 0..100 {
        let y = random_label(&mut rng);
        let z: [f64; 6] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let g = kl_grad_logits(&y, &z).unwrap();
        let loss = |z: &[f64; 6]| {
            let p: [f64; 6] = softmax(z).try_into().unwrap();
            kl_loss(&y, &p).unwrap()
        };
        for i in 0..NUM_EMOTIONS {
            let (mut zp, mut zm) = (z, z);
            zp[i] += h;
            zm[i] -= h;
            kl_worst = kl_worst.max(rel_err(g[i], (loss(&zp) - loss(&zm)) / (2.0 * h)));
        }
    }

    // Central differences through batch norm are truncation-limited on tiny
    // batches, so use eight rows and skip draws with a ReLU input near zero.
    let h = 1e-4;
    let mut mlp_worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 100 {
        let dropout = if cases % 2 == 0 { 0.0 } else { 0.3 };
        let cfg = MlpConfig {
            hidden_dims: vec![3, 2],
            dropout,
            seed: rng.random(),
            ..MlpConfig::default()
        };
        let model = MlpModel::new(4, cfg).unwrap();
        let x = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-2.0..2.0));
        if model.relu_inputs(x.view()).unwrap().iter().flatten().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let y: Vec<SoftLabel> = (0..8).map(|_| random_label(&mut rng)).collect();
        let mask_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let loss_at = |m: &MlpModel| m.loss_and_gradient(x.view(), &y, Some(&mut mask_rng.clone())).unwrap().0;
        let (_, grad) = model.loss_and_gradient(x.view(), &y, Some(&mut mask_rng.clone())).unwrap();
        let params = model.parameters();
        let mut m = model.clone();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            m.set_parameters(&p).unwrap();
            let fp = loss_at(&m);
            p[i] -= 2.0 * h;
            m.set_parameters(&p).unwrap();
            let fm = loss_at(&m);
            mlp_worst = mlp_worst.max(rel_err(grad[i], (fp - fm) / (2.0 * h)));
        }
        cases += 1;
    }
    Outcome::new(
        kl_worst <= 1e-5 && mlp_worst <= 1e-4,
        format!("KL logit worst rel err {kl_worst:.2e} (tol 1e-5), MLP params worst {mlp_worst:.2e} (tol 1e-4), 100 cases each"),
    )
}

// ---------------------------------------------------------------------------
// 7. Overfit capacity and best-snapshot restore

fn criterion_7() -> Outcome {
    let data = generate(&SynthConfig {
        n_actors: 5,
        clips_per_actor: 10,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let seqs = feature_sequences(
        &data.records,
        &FeatureSynthConfig {
            layers: 1,
            frames: 6,
            dims: 16,
            noise: 0.5,
            seed: 2,
        },
    )
    .unwrap();
    let agg = AggregationConfig {
        layer_lo: 0,
        layer_hi: 0,
        ..AggregationConfig::default()
    };
    let rows: Vec<Vec<f64>> = seqs.iter().map(|s| aggregate(s, &agg).unwrap()).collect();
    let y: Vec<SoftLabel> = data.records.iter().map(|r| encode_soft_label(&r.annotation.unwrap())).collect();
    let ds = Dataset::from_rows(&rows, y.clone()).unwrap();
    let cfg = MlpConfig {
        dropout: 0.0,
        max_epochs: 500,
        patience: 500,
        seed: 3,
        ..MlpConfig::default()
    };
    let (model, _) = train(&ds, &ds, &cfg).unwrap();
    let train_kl = model.mean_kl(ds.x(), ds.y()).unwrap();

    // Early stopping on a held-out split: the returned model must be the
    // logged best epoch, and the run must stop `patience` epochs later.
    let (tr_rows, va_rows) = rows.split_at(40);
    let (tr_y, va_y) = y.split_at(40);
    let tr = Dataset::from_rows(tr_rows, tr_y.to_vec()).unwrap();
    let va = Dataset::from_rows(va_rows, va_y.to_vec()).unwrap();
    let es_cfg = MlpConfig {
        hidden_dims: vec![64, 32],
        dropout: 0.0,
        lr: 0.05,
        batch_size: 8,
        max_epochs: 400,
        patience: 15,
        seed: 5,
        ..MlpConfig::default()
    };
    let (best, log) = train(&tr, &va, &es_cfg).unwrap();
    let min_epoch = log
        .epochs
        .iter()
        .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap().then(a.epoch.cmp(&b.epoch)))
        .unwrap();
    let restored = best.mean_kl(va.x(), va.y()).unwrap();
    let last = log.epochs.last().unwrap();
    let snapshot_ok = min_epoch.epoch == log.best_epoch
        && restored == min_epoch.val_loss
        && log.best_val_loss == min_epoch.val_loss
        && log.stopped_early
        && last.epoch == log.best_epoch + es_cfg.patience
        && last.val_loss > min_epoch.val_loss;
    Outcome::new(
        train_kl < 0.01 && snapshot_ok,
        format!(
            "train KL {train_kl:.5} after 500 epochs (need < 0.01); early stop at {} of {}, best epoch {} val KL {:.5}, restored model val KL {:.5}",
            last.epoch, es_cfg.max_epochs, log.best_epoch, log.best_val_loss, restored
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Fusion oracle recovery

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3u64 {
        let data = generate(&SynthConfig {
            n_actors: 20,
            clips_per_actor: 20,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let folds = split_actors(&data.records, 5).unwrap();
        let oracle = oracle_encoder(&data.records, "oracle").unwrap();
        for m in [2usize, 3] {
            let mut preds = vec![oracle.clone()];
            for i in 1..m {
                preds.push(random_encoder(&data.records, &format!("noise{i}"), 100 * seed + i as u64).unwrap());
            }
            let post = PostprocessConfig::new(ThresholdPair::new(0.15, 0.33).unwrap());
            let problem = FusionProblem::new(&preds, &data.records, &folds, &[0, 1, 2, 3, 4], post).unwrap();
            let ca = optimize_weights(&problem, &FusionStrategy::default()).unwrap();
            // step-0.05 simplex grid, enumerated here
            let grid_best = compositions(20, m)
                .iter()
                .map(|c| problem.objective(&c.iter().map(|&k| k as f64 / 20.0).collect::<Vec<_>>()))
                .fold(f64::NEG_INFINITY, f64::max);
            let ex = optimize_weights(&problem, &FusionStrategy::Exhaustive { step: 0.05 }).unwrap();
            let w = ca.weights.get("oracle").unwrap();
            let ok = w >= 0.9 && ca.objective == grid_best && ex.objective == grid_best;
            pass &= ok;
            lines.push(format!("seed {seed} M={m}: w_oracle {w:.3} obj {} grid {grid_best}", ca.objective));
        }
    }
    Outcome::new(pass, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 9. Aggregation

fn criterion_9() -> Outcome {
    let cfg = AggregationConfig::default();
    let seq = FrameFeatureSequence::new("v", Array3::from_shape_fn((13, 4, 1024), |(l, t, d)| (l + t + d % 7) as f64)).unwrap();
    let dim = aggregate(&seq, &cfg).unwrap().len();

    let frames = Array2::from_shape_fn((6, 2), |(t, _)| 2.0 * t as f64);
    let got = aggregate_temporal(frames.view(), &cfg).unwrap();
    let want: [f64; 14] = [1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 1.0, 1.0, 9.0, 9.0, 1.0, 1.0, 5.0, 5.0];
    let exact = got.len() == want.len() && got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
    let stats_default = cfg.stats == [Statistic::SegmentMean, Statistic::SegmentStd, Statistic::GlobalMean];
    Outcome::new(
        dim == 7168 && cfg.output_dim(1024) == 7168 && exact && stats_default,
        format!("D=1024 -> {dim} dims; worked T=6, D=2 example {got:?} bit-exact: {exact}"),
    )
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_blendfuse"))
}

fn run(args: &[&str], cwd: &Path) -> i32 {
    let out = Command::new(bin()).args(args).current_dir(cwd).output().expect("binary runs");
    out.status.code().unwrap_or(-1)
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_meta.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SYNTH_TOML: &str = r#"
seed = 11
[synth]
n_actors = 10
clips_per_actor = 12
actor_gap_range = [0.05, 0.45]
noise_sigma = 0.3
[synth_output]
folds = 5
oracle = true
random_encoders = 1
[synth_output.features]
layers = 2
frames = 6
dims = 8
noise = 0.2
seed = 0
"#;

const RUN_TOML: &str = r#"
seed = 11
[aggregate]
layer_lo = 0
layer_hi = 1
segments = 3
stats = ["segment_mean", "segment_std", "global_mean"]
[mlp]
hidden_dims = [16, 8]
dropout = 0.2
lr = 0.01
max_epochs = 40
patience = 10
batch_size = 16
"#;

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::write(root.join("synth.toml"), SYNTH_TOML).unwrap();
    std::fs::write(root.join("run.toml"), RUN_TOML).unwrap();
    let steps: Vec<(&str, Vec<&str>, i32)> = vec![
        ("synth", vec!["synth", "--config", "synth.toml"], 0),
        ("split", vec!["split", "--manifest", "data/labels.csv", "--k", "5"], 0),
        ("encode-labels", vec!["encode-labels", "--labels", "data/labels.csv"], 0),
        ("aggregate", vec!["aggregate", "--config", "run.toml", "--features-manifest", "data/features/manifest.csv"], 0),
        ("train-mlp", vec!["train-mlp", "--config", "run.toml", "--features", "agg/features.csv", "--labels", "data/labels.csv", "--folds", "data/folds.csv"], 0),
        ("fuse-evaluate", vec!["fuse-evaluate", "--predictions", "data/predictions", "--labels", "data/labels.csv", "--folds", "data/folds.csv"], 0),
        ("sensitivity", vec!["sensitivity", "--predictions", "data/predictions", "--labels", "data/labels.csv", "--folds", "data/folds.csv"], 0),
        ("verify-identities", vec!["verify-identities"], 2),
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for (name, args, expected) in &steps {
        let mut outputs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "4")] {
            // the first run of synth and aggregate feeds later steps
            let dir = match (*name, rep) {
                ("synth", 0) => "data".to_string(),
                ("aggregate", 0) => "agg".to_string(),
                _ => format!("{name}-{rep}"),
            };
            let mut full: Vec<&str> = args.clone();
            full.extend(["--out", &dir, "--threads", threads]);
            let code = run(&full, root);
            if code != *expected {
                problems.push(format!("{name} exited {code}"));
            }
            outputs.push(files_under(&root.join(&dir)));
        }
        compared += outputs[0].len();
        if outputs[0].is_empty() {
            problems.push(format!("{name} wrote nothing"));
        } else if outputs[0] != outputs[1] {
            let differing: Vec<String> = outputs[0]
                .iter()
                .filter(|(k, v)| outputs[1].get(*k) != Some(v))
                .map(|(k, _)| k.display().to_string())
                .collect();
            problems.push(format!("{name} differs: {differing:?}"));
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!("{} commands run twice (1 vs 4 threads), {compared} files compared; problems: {problems:?}", steps.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 10] = [
        (1, "score identity", criterion_1, Duration::from_secs(1)),
        (2, "weight simplex identity", criterion_2, Duration::from_secs(1)),
        (3, "discretization oracle", criterion_3, Duration::from_secs(10)),
        (4, "threshold surface consistency", criterion_4, Duration::from_secs(30)),
        (5, "beta instability", criterion_5, Duration::from_secs(120)),
        (6, "gradient suite", criterion_6, Duration::from_secs(60)),
        (7, "overfit capacity", criterion_7, Duration::from_secs(60)),
        (8, "fusion oracle recovery", criterion_8, Duration::from_secs(120)),
        (9, "aggregation dimensionality", criterion_9, Duration::from_secs(1)),
        (10, "determinism", criterion_10, Duration::from_secs(120)),
    ];
    let mut unexpected = 0;
    for (id, name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = outcome.pass && in_time;
        let status = if pass { "PASS" } else { "FAIL" };
        let note = if !pass && outcome.known { " [known source inconsistency]" } else { "" };
        println!(
            "criterion {id:>2} {status} {name}: {} ({:.2}s, budget {}s){note}",
            outcome.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass && !(outcome.known && in_time) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion/criteria failed");
        std::process::exit(1);
    }
}
