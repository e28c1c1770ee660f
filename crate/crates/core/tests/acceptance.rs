//! Acceptance suite: one test per criterion, each printing a pass line
//! with its runtime. The end-to-end pipeline runs twice behind a shared
//! lock; the determinism criterion byte-compares the two runs.

use std::sync::OnceLock;
use std::time::Instant;

use protoxct::config::RunConfig;
use protoxct::data::{Label, Split};
use protoxct::encoder::EmbeddingBatch;
use protoxct::eval::{
    apply_temperature, bootstrap_ci, confusion_and_metrics, fit_temperature, metrics_from_confusion,
    roc_auc, select_threshold, ScoredRecord, ScoredSet,
};
use protoxct::harness::{certify_gradient, head_identity_check, medoid_oracle_check};
use protoxct::maps::{aggregate_majority, tile, DefectMap, MapRecord};
use protoxct::numerics::Rng;
use protoxct::pipeline;

fn report(criterion: &str, start: Instant, budget_s: f64) {
    let dt = start.elapsed().as_secs_f64();
    println!("ACCEPTANCE {criterion}: PASS ({dt:.2}s, budget {budget_s}s)");
    assert!(
        dt < budget_s,
        "{criterion} exceeded its runtime budget: {dt:.2}s >= {budget_s}s"
    );
}

fn scored_from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> ScoredSet {
    let mut records = Vec::new();
    let mut id = 0;
    let mut push = |label: u8, score: f64, n: usize, records: &mut Vec<ScoredRecord>| {
        for _ in 0..n {
            records.push(ScoredRecord {
                id,
                label: Label::from_u8(label).unwrap(),
                score,
            });
            id += 1;
        }
    };
    push(1, 0.9, tp, &mut records);
    push(0, 0.9, fp, &mut records);
    push(0, 0.1, tn, &mut records);
    push(1, 0.1, fn_, &mut records);
    ScoredSet::new(records, true).unwrap()
}

#[test]
fn criterion_01_metric_arithmetic() {
    let start = Instant::now();
    for (counts, expect) in [
        ((147, 12, 254, 5), [0.959, 0.925, 0.967, 0.945, 0.955]),
        ((139, 5, 261, 13), [0.957, 0.965, 0.914, 0.939, 0.981]),
    ] {
        let scored = scored_from_confusion(counts.0, counts.1, counts.2, counts.3);
        let (c, m) = confusion_and_metrics(&scored, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), counts);
        let got = [
            m.accuracy.unwrap(),
            m.precision.unwrap(),
            m.recall.unwrap(),
            m.f1.unwrap(),
            m.specificity.unwrap(),
        ];
        for (g, e) in got.iter().zip(&expect) {
            assert!(
                (g - e).abs() <= 5e-4,
                "confusion {counts:?}: got {g:.6}, table says {e}"
            );
        }
    }
    report("01 metric-arithmetic", start, 1.0);
}

#[test]
fn criterion_02_gradient_certification() {
    let start = Instant::now();
    // Each of the ten terms and the weighted total, 50 seeded instances,
    // D = 8, batch 5, paper weight vector, rel. err < 1e-4.
    for term in 0..protoxct::loss::NUM_TERMS {
        let worst = certify_gradient(Some(term), 0..50, 8, 5, 1e-4, 1e-4).unwrap();
        assert!(worst <= 1e-4);
    }
    let worst = certify_gradient(None, 0..50, 8, 5, 1e-4, 1e-4).unwrap();
    assert!(worst <= 1e-4);
    report("02 gradient-certification", start, 30.0);
}

#[test]
fn criterion_03_head_identity() {
    let start = Instant::now();
    let worst = head_identity_check(1000, 424242).unwrap();
    assert!(worst < 1e-12, "max abs diff {worst:e}");
    report("03 head-identity", start, 5.0);
}

#[test]
fn criterion_04_medoid_oracle() {
    let start = Instant::now();
    medoid_oracle_check(200, 31337).unwrap();
    report("04 medoid-oracle", start, 5.0);
}

#[test]
fn criterion_05_calibration() {
    let start = Instant::now();
    let mut rng = Rng::new(77);
    for factor in [0.5, 1.0, 2.0] {
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..30_000 {
            let l = 2.5 * rng.normal();
            let y = rng.next_f64() < 1.0 / (1.0 + (-l).exp());
            logits.push(factor * l);
            labels.push(if y { Label::Defect } else { Label::NonDefect });
        }
        let t = fit_temperature(&logits, &labels).unwrap();
        assert!(
            (t - factor).abs() / factor <= 0.05,
            "factor {factor}: recovered T = {t}"
        );
        // Rank preservation: ROC-AUC bit-identical before and after.
        let make = |scores: Vec<f64>| {
            ScoredSet::new(
                scores
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| ScoredRecord {
                        id: i as u32,
                        label: labels[i],
                        score: s,
                    })
                    .collect(),
                false,
            )
            .unwrap()
        };
        let raw = make(apply_temperature(&logits, 1.0).unwrap());
        let cal = make(apply_temperature(&logits, t).unwrap());
        let auc_raw = roc_auc(&raw).unwrap();
        let auc_cal = roc_auc(&cal).unwrap();
        assert_eq!(auc_raw.to_bits(), auc_cal.to_bits());
    }
    report("05 calibration", start, 10.0);
}

#[test]
fn criterion_06_threshold_selection() {
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed);
        let n = 20 + rng.below(60);
        let mut records = Vec::new();
        let mut pos = 0;
        for i in 0..n {
            let label = rng.bernoulli(0.4);
            pos += label as usize;
            let score = if label {
                0.25 + 0.75 * rng.next_f64()
            } else {
                0.75 * rng.next_f64()
            };
            records.push(ScoredRecord {
                id: i as u32,
                label: if label { Label::Defect } else { Label::NonDefect },
                score,
            });
        }
        if pos == 0 || pos == n {
            continue;
        }
        let scored = ScoredSet::new(records, false).unwrap();
        let t = select_threshold(&scored).unwrap();
        let f1_at = |t: f64| {
            metrics_from_confusion(&protoxct::eval::confusion(&scored, t))
                .f1
                .unwrap_or(f64::NEG_INFINITY)
        };
        // Dense 10^4-point sweep oracle.
        let mut best_grid_f1 = f64::NEG_INFINITY;
        let mut best_grid_t = 0.0;
        for i in 0..=10_000 {
            let cand = i as f64 / 10_000.0;
            let f1 = f1_at(cand);
            if f1 > best_grid_f1 {
                best_grid_f1 = f1;
                best_grid_t = cand;
            }
        }
        assert!(
            f1_at(t) >= best_grid_f1 - 1e-12,
            "seed {seed}: F1({t}) = {} below dense sweep {}",
            f1_at(t),
            best_grid_f1
        );
        // Same or adjacent inter-score midpoint interval.
        let mut scores: Vec<f64> = scored.records.iter().map(|r| r.score).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.dedup();
        let mids: Vec<f64> = scores.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let interval = |x: f64| mids.iter().filter(|&&m| m <= x).count();
        assert!(
            interval(t).abs_diff(interval(best_grid_t)) <= 1,
            "seed {seed}: {t} vs grid {best_grid_t} more than one midpoint apart"
        );
    }
    report("06 threshold-selection", start, 10.0);
}

#[test]
fn criterion_07_bootstrap_coverage() {
    let start = Instant::now();
    let true_p = 0.9;
    let n = 400;
    let sims = 500;
    let mut covered = 0;
    for sim in 0..sims {
        let mut rng = Rng::new(9000 + sim);
        let records: Vec<ScoredRecord> = (0..n)
            .map(|i| {
                let correct = rng.next_f64() < true_p;
                // Label 1 with a score on the correct side of 0.5.
                ScoredRecord {
                    id: i as u32,
                    label: Label::Defect,
                    score: if correct { 0.9 } else { 0.1 },
                }
            })
            .collect();
        let scored = ScoredSet::new(records, true).unwrap();
        let ci = bootstrap_ci(&scored, 0.5, 2000, &Rng::new(5000 + sim)).unwrap();
        let (lo, hi) = ci.intervals["accuracy"];
        if lo <= true_p && true_p <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / sims as f64;
    assert!(
        (0.92..=0.97).contains(&coverage),
        "empirical coverage {coverage}"
    );
    report("07 bootstrap-coverage", start, 120.0);
}

/// Serialized artifacts of one full synthetic run, for metric checks
/// and byte-level determinism comparison.
struct PipelineRun {
    manifest_csv: Vec<u8>,
    volume_raw: Vec<u8>,
    patch_stores: Vec<Vec<u8>>,
    model_pmdl: Vec<u8>,
    standardizer_pstd: Vec<u8>,
    train_log_csv: Vec<u8>,
    eval_json: Vec<u8>,
    projection_pemb: Vec<u8>,
    projection_csv: Vec<u8>,
    accuracy: f64,
    roc_auc: f64,
    train_attribution_counts: [usize; 6],
    nearest_anchor_types: Vec<(usize, Option<protoxct::head::SemanticType>)>,
}

fn acceptance_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.seed = 9;
    config.sample_count = 8000;
    config.embedding_mode = "descriptor".to_string();
    config
}

fn run_pipeline_once() -> PipelineRun {
    let config = acceptance_config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let ds = pipeline::synth_dataset(&config).unwrap();
    pipeline::save_dataset(out, &ds).unwrap();

    let artifacts = pipeline::train_pipeline(&config, &ds.set).unwrap();
    assert!(!artifacts.log.diverged);
    let mut model = artifacts.model;
    let (val_b, val_l) = pipeline::split_batch(&ds.set, &artifacts.embeddings, Split::Val).unwrap();
    let (test_b, test_l) =
        pipeline::split_batch(&ds.set, &artifacts.embeddings, Split::Test).unwrap();
    let (_, threshold) = pipeline::calibrate_and_select_threshold(
        &mut model,
        &artifacts.standardizer,
        &val_b,
        &val_l,
    )
    .unwrap();
    let eval = pipeline::evaluate_test(
        &model,
        &artifacts.standardizer,
        &test_b,
        &test_l,
        threshold,
        &config,
    )
    .unwrap();

    model.save(&out.join("model.pmdl")).unwrap();
    artifacts
        .standardizer
        .save(&out.join("standardizer.pstd"))
        .unwrap();
    artifacts.log.save_csv(&out.join("train_log.csv")).unwrap();
    eval.save_json(&out.join("eval_report.json")).unwrap();

    let standardized = pipeline::standardize_all(&artifacts.standardizer, &artifacts.embeddings).unwrap();
    let rows = pipeline::projection_rows(&model, &ds.set, &standardized, threshold).unwrap();
    let std_batch = EmbeddingBatch::new(artifacts.embeddings.ids.clone(), standardized.clone()).unwrap();
    protoxct::maps::export_projection_bundle(&out.join("projection.pemb"), &std_batch, &rows)
        .unwrap();

    // Dead-prototype check data: train attribution argmax counts.
    let train_idx = ds.set.manifest.indices_of(Split::Train);
    let mut counts = [0usize; 6];
    for &i in &train_idx {
        let p = protoxct::head::predict(standardized.row(i), &model, threshold).unwrap();
        counts[p.attributed_type.index()] += 1;
    }

    // Nearest learned anchor type per prototype, over training records.
    let (train_b, _) = pipeline::split_batch(&ds.set, &artifacts.embeddings, Split::Train).unwrap();
    let train_std = pipeline::standardize_all(&artifacts.standardizer, &train_b).unwrap();
    let train_batch = EmbeddingBatch::new(train_b.ids.clone(), train_std).unwrap();
    let na = protoxct::maps::nearest_anchors(&model, &train_batch, 1).unwrap();
    let id_to_type: std::collections::BTreeMap<u32, Option<protoxct::head::SemanticType>> = ds
        .set
        .manifest
        .records
        .iter()
        .map(|r| (r.id, r.semantic_type))
        .collect();
    let nearest_types: Vec<(usize, Option<protoxct::head::SemanticType>)> = na
        .per_prototype
        .iter()
        .enumerate()
        .map(|(p, list)| (p, id_to_type[&list[0].0]))
        .collect();

    let read = |name: &str| std::fs::read(out.join(name)).unwrap();
    PipelineRun {
        manifest_csv: read("manifest.csv"),
        volume_raw: read("volume.raw"),
        patch_stores: Split::ALL
            .iter()
            .map(|s| read(&format!("{s}.ppat")))
            .collect(),
        model_pmdl: read("model.pmdl"),
        standardizer_pstd: read("standardizer.pstd"),
        train_log_csv: read("train_log.csv"),
        eval_json: read("eval_report.json"),
        projection_pemb: read("projection.pemb"),
        projection_csv: read("projection.csv"),
        accuracy: eval.metrics.accuracy.unwrap(),
        roc_auc: eval.roc_auc,
        train_attribution_counts: counts,
        nearest_anchor_types: nearest_types,
    }
}

fn pipeline_runs() -> &'static (PipelineRun, PipelineRun) {
    static RUNS: OnceLock<(PipelineRun, PipelineRun)> = OnceLock::new();
    RUNS.get_or_init(|| (run_pipeline_once(), run_pipeline_once()))
}

#[test]
fn criterion_08_end_to_end_synthetic_run() {
    let start = Instant::now();
    let (run, _) = pipeline_runs();
    assert!(
        run.accuracy >= 0.95,
        "test accuracy {} below 0.95",
        run.accuracy
    );
    assert!(run.roc_auc >= 0.99, "ROC-AUC {} below 0.99", run.roc_auc);
    for (k, &count) in run.train_attribution_counts.iter().enumerate() {
        assert!(
            count >= 1,
            "prototype {k} is dead: never the attribution argmax ({:?})",
            run.train_attribution_counts
        );
    }
    for &(p, t) in &run.nearest_anchor_types {
        assert_eq!(
            t,
            Some(protoxct::head::SemanticType::ALL[p]),
            "prototype {p}: nearest learned anchor has type {t:?}"
        );
    }
    report("08 end-to-end-synthetic", start, 600.0);
}

#[test]
fn criterion_09_map_arithmetic() {
    let start = Instant::now();
    // Tiling a 930×1485 slice at stride 64 yields exactly 322 windows.
    assert_eq!(tile(930, 1485, 64).unwrap().origins.len(), 322);

    // Stride-32 interior pixels receive exactly 4 votes.
    let grid = tile(256, 256, 32).unwrap();
    for pixel in [(100, 100), (128, 131), (191, 64)] {
        let votes = grid
            .origins
            .iter()
            .filter(|&&(r, c)| {
                pixel.0 >= r && pixel.0 < r + 64 && pixel.1 >= c && pixel.1 < c + 64
            })
            .count();
        assert_eq!(votes, 4, "pixel {pixel:?}");
    }

    // Majority aggregation matches a brute-force per-pixel vote count
    // on a 256×256 fixture.
    let labels: Vec<Label> = (0..grid.origins.len())
        .map(|i| {
            if (i * 13) % 5 < 2 {
                Label::Defect
            } else {
                Label::NonDefect
            }
        })
        .collect();
    let map = DefectMap {
        height: 256,
        width: 256,
        stride: 32,
        threshold: 0.5,
        model_checksum: 0,
        records: grid
            .origins
            .iter()
            .zip(&labels)
            .map(|(&(row, col), &label)| MapRecord {
                row,
                col,
                p_defect: 0.5,
                label,
                proto_index: 0,
            })
            .collect(),
    };
    let px = aggregate_majority(&map).unwrap();
    for y in 0..256 {
        for x in 0..256 {
            let mut defect = 0usize;
            let mut total = 0usize;
            for r in &map.records {
                if y >= r.row && y < r.row + 64 && x >= r.col && x < r.col + 64 {
                    total += 1;
                    defect += (r.label == Label::Defect) as usize;
                }
            }
            let expect = if total == 0 {
                protoxct::maps::PIXEL_UNCOVERED
            } else if 2 * defect >= total {
                protoxct::maps::PIXEL_DEFECT
            } else {
                protoxct::maps::PIXEL_NON_DEFECT
            };
            assert_eq!(px.data[y * 256 + x], expect, "pixel ({y},{x})");
        }
    }
    report("09 map-arithmetic", start, 5.0);
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();

    // The full end-to-end pipeline, repeated with identical seeds,
    // produces byte-identical artifacts.
    let (a, b) = pipeline_runs();
    assert_eq!(a.manifest_csv, b.manifest_csv, "manifest bytes differ");
    assert_eq!(a.volume_raw, b.volume_raw, "volume bytes differ");
    for (store_a, store_b) in a.patch_stores.iter().zip(&b.patch_stores) {
        assert_eq!(store_a, store_b, "patch store bytes differ");
    }
    assert_eq!(a.model_pmdl, b.model_pmdl, "model checkpoint bytes differ");
    assert_eq!(
        a.standardizer_pstd, b.standardizer_pstd,
        "standardizer bytes differ"
    );
    assert_eq!(a.train_log_csv, b.train_log_csv, "training log bytes differ");
    assert_eq!(a.eval_json, b.eval_json, "eval report bytes differ");
    assert_eq!(
        a.projection_pemb, b.projection_pemb,
        "projection embedding bytes differ"
    );
    assert_eq!(a.projection_csv, b.projection_csv, "projection csv differs");

    // The seeded statistical procedures repeat bit-identically too.
    let scored = scored_from_confusion(139, 5, 261, 13);
    let ci1 = bootstrap_ci(&scored, 0.5, 2000, &Rng::new(4)).unwrap();
    let ci2 = bootstrap_ci(&scored, 0.5, 2000, &Rng::new(4)).unwrap();
    assert_eq!(
        serde_json::to_vec(&ci1.intervals).unwrap(),
        serde_json::to_vec(&ci2.intervals).unwrap()
    );
    let w1 = certify_gradient(None, 0..3, 8, 5, 1e-4, 1e-4).unwrap();
    let w2 = certify_gradient(None, 0..3, 8, 5, 1e-4, 1e-4).unwrap();
    assert_eq!(w1.to_bits(), w2.to_bits());

    report("10 determinism", start, 600.0);
}
