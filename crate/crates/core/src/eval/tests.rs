use super::*;
use crate::numerics::Rng;
use proptest::prelude::*;

fn scored(values: &[(u8, f64)]) -> ScoredSet {
    ScoredSet::new(
        values
            .iter()
            .enumerate()
            .map(|(i, &(label, score))| ScoredRecord {
                id: i as u32,
                label: Label::from_u8(label).unwrap(),
                score,
            })
            .collect(),
        false,
    )
    .unwrap()
}

/// A synthetic scored set whose confusion at t=0.5 equals the given
/// counts exactly.
fn from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> ScoredSet {
    let mut values = Vec::new();
    values.extend(std::iter::repeat_n((1u8, 0.9), tp));
    values.extend(std::iter::repeat_n((0u8, 0.9), fp));
    values.extend(std::iter::repeat_n((0u8, 0.1), tn));
    values.extend(std::iter::repeat_n((1u8, 0.1), fn_));
    scored(&values)
}

#[test]
fn scored_set_validation() {
    assert!(ScoredSet::new(
        vec![ScoredRecord { id: 0, label: Label::Defect, score: 1.5 }],
        false
    )
    .is_err());
    assert!(ScoredSet::new(
        vec![
            ScoredRecord { id: 3, label: Label::Defect, score: 0.5 },
            ScoredRecord { id: 3, label: Label::NonDefect, score: 0.4 },
        ],
        false
    )
    .is_err());
}

#[test]
fn baseline_reference_cells() {
    let set = from_confusion(147, 12, 254, 5);
    let (c, m) = confusion_and_metrics(&set, 0.5).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (147, 12, 254, 5));
    for (got, expect) in [
        (m.accuracy, 0.959),
        (m.precision, 0.925),
        (m.recall, 0.967),
        (m.f1, 0.945),
        (m.specificity, 0.955),
    ] {
        assert!((got.unwrap() - expect).abs() <= 5e-4, "{got:?} vs {expect}");
    }
}

#[test]
fn prototype_reference_cells() {
    let set = from_confusion(139, 5, 261, 13);
    let (c, m) = confusion_and_metrics(&set, 0.5).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (139, 5, 261, 13));
    for (got, expect) in [
        (m.accuracy, 0.957),
        (m.precision, 0.965),
        (m.recall, 0.914),
        (m.f1, 0.939),
        (m.specificity, 0.981),
    ] {
        assert!((got.unwrap() - expect).abs() <= 5e-4, "{got:?} vs {expect}");
    }
}

#[test]
fn perfect_predictions_all_ones() {
    let set = scored(&[(1, 0.99), (1, 0.8), (0, 0.1), (0, 0.2)]);
    let (_, m) = confusion_and_metrics(&set, 0.5).unwrap();
    for name in THRESHOLDED_METRIC_NAMES {
        assert_eq!(m.by_name(name), Some(1.0), "{name}");
    }
}

#[test]
fn undefined_ratios_are_none_not_zero() {
    // No predicted positives: precision undefined; no true positives
    // in the labels: recall undefined.
    let set = scored(&[(0, 0.1), (0, 0.2)]);
    let (_, m) = confusion_and_metrics(&set, 0.5).unwrap();
    assert!(m.precision.is_none());
    assert!(m.recall.is_none());
    assert_eq!(m.accuracy, Some(1.0));
    assert!(confusion_and_metrics(&set, 0.0).is_err());
    assert!(confusion_and_metrics(&set, 1.0).is_err());
}

#[test]
fn metrics_consistent_with_counts() {
    let set = from_confusion(31, 7, 55, 9);
    let (c, m) = confusion_and_metrics(&set, 0.5).unwrap();
    let n = c.total() as f64;
    assert!((m.accuracy.unwrap() - (31.0 + 55.0) / n).abs() < 1e-12);
    assert!((m.precision.unwrap() - 31.0 / 38.0).abs() < 1e-12);
    assert!((m.recall.unwrap() - 31.0 / 40.0).abs() < 1e-12);
    assert!((m.specificity.unwrap() - 55.0 / 62.0).abs() < 1e-12);
    let (p, r) = (31.0 / 38.0, 31.0 / 40.0);
    assert!((m.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
}

#[test]
fn roc_auc_examples() {
    let separated = scored(&[(0, 0.1), (0, 0.2), (1, 0.7), (1, 0.9)]);
    assert_eq!(roc_auc(&separated).unwrap(), 1.0);
    assert_eq!(pr_auc(&separated).unwrap(), 1.0);

    let flat = scored(&[(0, 0.5), (1, 0.5), (0, 0.5), (1, 0.5)]);
    assert!((roc_auc(&flat).unwrap() - 0.5).abs() < 1e-12);

    let single = scored(&[(1, 0.5), (1, 0.6)]);
    assert!(roc_auc(&single).is_err());
    assert!(pr_auc(&single).is_err());
}

#[test]
fn roc_auc_matches_pair_counting_oracle() {
    // Handcrafted 8-point set with ties.
    let set = scored(&[
        (0, 0.1),
        (1, 0.9),
        (0, 0.4),
        (1, 0.4),
        (0, 0.3),
        (1, 0.75),
        (0, 0.75),
        (1, 0.6),
    ]);
    // Mann-Whitney pair count: wins + 0.5·ties over pos × neg pairs.
    let mut wins = 0.0;
    let mut total = 0.0;
    for p in set.records.iter().filter(|r| r.label == Label::Defect) {
        for n in set.records.iter().filter(|r| r.label == Label::NonDefect) {
            total += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    let expect = wins / total;
    assert!((roc_auc(&set).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn pr_auc_matches_step_integration_oracle() {
    let set = scored(&[
        (1, 0.95),
        (0, 0.8),
        (1, 0.7),
        (1, 0.65),
        (0, 0.5),
        (1, 0.4),
        (0, 0.3),
        (0, 0.2),
    ]);
    // Direct step integration over descending distinct thresholds.
    let mut pts: Vec<(f64, Label)> = set.records.iter().map(|r| (r.score, r.label)).collect();
    pts.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let pos = 4.0;
    let (mut tp, mut fp, mut prev_r, mut expect) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pts.len() {
        let s = pts[i].0;
        while i < pts.len() && pts[i].0 == s {
            if pts[i].1 == Label::Defect {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let r = tp / pos;
        expect += (r - prev_r) * (tp / (tp + fp));
        prev_r = r;
    }
    assert!((pr_auc(&set).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn ece_brier_trivial() {
    let confident_right = scored(&[(1, 1.0), (1, 1.0), (1, 1.0)]);
    assert_eq!(ece(&confident_right, 15).unwrap(), 0.0);
    assert_eq!(brier(&confident_right).unwrap(), 0.0);

    let half = scored(&[(0, 0.5), (1, 0.5), (0, 0.5), (1, 0.5)]);
    assert!(ece(&half, 15).unwrap().abs() < 1e-15);
    assert!((brier(&half).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn ece_matches_per_bin_arithmetic() {
    // Three occupied bins with known contents (bins of width 1/3).
    let set = scored(&[
        (0, 0.10),
        (0, 0.20),
        (1, 0.30), // bin 0: conf 0.2, acc 1/3
        (1, 0.40),
        (0, 0.50), // bin 1: conf 0.45, acc 0.5
        (1, 0.90),
        (1, 0.95), // bin 2: conf 0.925, acc 1.0
    ]);
    let expect = 3.0 / 7.0 * (1.0 / 3.0 - 0.2f64).abs()
        + 2.0 / 7.0 * (0.5 - 0.45f64).abs()
        + 2.0 / 7.0 * (1.0 - 0.925f64).abs();
    assert!((ece(&set, 3).unwrap() - expect).abs() < 1e-12);
    assert!(ece(&set, 0).is_err());
}

#[test]
fn temperature_identity_on_calibrated_logits() {
    // Labels sampled from sigmoid(logit): T = 1 is optimal.
    let mut rng = Rng::new(51);
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..60_000 {
        let l = 2.0 * rng.normal();
        let y = rng.next_f64() < 1.0 / (1.0 + (-l).exp());
        logits.push(l);
        labels.push(if y { Label::Defect } else { Label::NonDefect });
    }
    let t = fit_temperature(&logits, &labels).unwrap();
    assert!((t - 1.0).abs() < 1e-3 * 60.0, "T = {t}"); // ±5% band is the gate elsewhere
    assert!((t - 1.0).abs() / 1.0 < 0.05, "T = {t}");
}

#[test]
fn temperature_recovers_overconfidence_factor() {
    let mut rng = Rng::new(52);
    for factor in [0.5, 2.0] {
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20_000 {
            let l = 2.5 * rng.normal();
            let y = rng.next_f64() < 1.0 / (1.0 + (-l).exp());
            logits.push(factor * l);
            labels.push(if y { Label::Defect } else { Label::NonDefect });
        }
        let t = fit_temperature(&logits, &labels).unwrap();
        assert!(
            (t - factor).abs() / factor < 0.05,
            "factor {factor}: T = {t}"
        );
    }
}

#[test]
fn temperature_preserves_ranking_bit_exactly() {
    let mut rng = Rng::new(53);
    let logits: Vec<f64> = (0..500).map(|_| 3.0 * rng.normal()).collect();
    let labels: Vec<Label> = logits
        .iter()
        .map(|&l| {
            if rng.next_f64() < 1.0 / (1.0 + (-l).exp()) {
                Label::Defect
            } else {
                Label::NonDefect
            }
        })
        .collect();
    let t = fit_temperature(&logits, &labels).unwrap();
    let raw = apply_temperature(&logits, 1.0).unwrap();
    let cal = apply_temperature(&logits, t).unwrap();
    let make = |scores: &[f64]| {
        ScoredSet::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScoredRecord {
                    id: i as u32,
                    label: labels[i],
                    score: s,
                })
                .collect(),
            false,
        )
        .unwrap()
    };
    let auc_raw = roc_auc(&make(&raw)).unwrap();
    let auc_cal = roc_auc(&make(&cal)).unwrap();
    assert_eq!(auc_raw.to_bits(), auc_cal.to_bits(), "rank statistic unchanged");
    let pr_raw = pr_auc(&make(&raw)).unwrap();
    let pr_cal = pr_auc(&make(&cal)).unwrap();
    assert_eq!(pr_raw.to_bits(), pr_cal.to_bits());
}

#[test]
fn temperature_rejects_degenerate_labels() {
    let logits = vec![0.5, -0.5, 1.0];
    let labels = vec![Label::Defect; 3];
    assert!(fit_temperature(&logits, &labels).is_err());
}

#[test]
fn select_threshold_separable_gap_midpoint() {
    let set = scored(&[(0, 0.1), (0, 0.3), (1, 0.7), (1, 0.9)]);
    let t = select_threshold(&set).unwrap();
    assert!((t - 0.5).abs() < 1e-12, "t = {t}");
    let (_, m) = confusion_and_metrics(&set, t).unwrap();
    assert_eq!(m.f1, Some(1.0));
}

#[test]
fn select_threshold_matches_exhaustive_sweep() {
    // Ten handcrafted scores; oracle sweeps a dense grid.
    let set = scored(&[
        (0, 0.05),
        (1, 0.15),
        (0, 0.35),
        (1, 0.45),
        (1, 0.52),
        (0, 0.58),
        (1, 0.70),
        (1, 0.84),
        (0, 0.86),
        (1, 0.95),
    ]);
    let t = select_threshold(&set).unwrap();
    let f1_at = |t: f64| {
        metrics_from_confusion(&confusion(&set, t))
            .f1
            .unwrap_or(f64::NEG_INFINITY)
    };
    let best_grid = (0..=10_000)
        .map(|i| i as f64 / 10_000.0)
        .map(f1_at)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(f1_at(t) >= best_grid - 1e-12, "{} vs {}", f1_at(t), best_grid);
}

#[test]
fn select_threshold_tie_goes_low() {
    // Duplicate interior scores give several candidates with equal F1.
    let set = scored(&[(0, 0.2), (0, 0.2), (1, 0.8), (1, 0.8)]);
    let t = select_threshold(&set).unwrap();
    assert!((t - 0.5).abs() < 1e-12);
    let also = scored(&[(1, 0.6), (0, 0.4), (1, 0.6), (0, 0.4), (1, 0.9)]);
    let t2 = select_threshold(&also).unwrap();
    let f1_at = |tt: f64| metrics_from_confusion(&confusion(&also, tt)).f1.unwrap();
    assert!(f1_at(t2) >= f1_at(0.5) - 1e-12);
}

#[test]
fn bootstrap_degenerate_interval_and_determinism() {
    let set = scored(&[(1, 0.9), (1, 0.9), (1, 0.9), (1, 0.9)]);
    let ci = bootstrap_ci(&set, 0.5, 300, &Rng::new(5)).unwrap();
    assert_eq!(ci.intervals["accuracy"], (1.0, 1.0));
    let again = bootstrap_ci(&set, 0.5, 300, &Rng::new(5)).unwrap();
    assert_eq!(ci.intervals, again.intervals);
    assert!(bootstrap_ci(&set, 0.5, 99, &Rng::new(5)).is_err());
}

#[test]
fn bootstrap_dropped_replicates_are_counted() {
    // Tiny all-negative-prediction set: precision undefined whenever the
    // resample holds no predicted positives (always, here).
    let set = scored(&[(0, 0.1), (1, 0.2), (0, 0.15)]);
    let ci = bootstrap_ci(&set, 0.9, 200, &Rng::new(3)).unwrap();
    assert_eq!(ci.dropped["precision"], 200);
    assert!(!ci.intervals.contains_key("precision"));
    assert!(ci.intervals.contains_key("accuracy"));
}

#[test]
fn evaluate_scored_report_is_self_consistent() {
    let set = from_confusion(139, 5, 261, 13);
    let report = evaluate_scored(&set, 0.5, 0.608, 15, 300, &Rng::new(20)).unwrap();
    assert_eq!(report.n, 418);
    assert_eq!(report.confusion.tp, 139);
    assert_eq!(report.temperature, 0.608);
    // Point estimates inside their bootstrap intervals.
    for name in THRESHOLDED_METRIC_NAMES {
        let point = report.metrics.by_name(name).unwrap();
        let (lo, hi) = report.bootstrap.intervals[name];
        assert!(lo <= point && point <= hi, "{name}: {point} not in [{lo}, {hi}]");
    }
    // JSON round-trips through serde with the fn rename in place.
    let json = report.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["confusion"]["fn"], 13);
    assert!(report.to_table().contains("threshold"));
}

#[test]
fn scored_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = scored(&[(0, 0.25), (1, 0.75)]);
    let path = dir.path().join("scored.csv");
    set.save_csv(&path).unwrap();
    let back = ScoredSet::load_csv(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back.records[1].label, Label::Defect);
    assert!((back.records[1].score - 0.75).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Bootstrap intervals contain the point estimate whenever defined.
    #[test]
    fn bootstrap_contains_point_estimate(seed in 0u64..200) {
        let mut rng = Rng::new(seed);
        let n = 40 + rng.below(60);
        let mut values = Vec::new();
        let mut pos = 0;
        for _ in 0..n {
            let label = rng.bernoulli(0.4);
            pos += label as usize;
            let score = if label { 0.3 + 0.7 * rng.next_f64() } else { 0.7 * rng.next_f64() };
            values.push((label as u8, score));
        }
        prop_assume!(pos > 0 && pos < n);
        let set = scored(&values);
        let t = 0.5;
        let (_, m) = confusion_and_metrics(&set, t).unwrap();
        let ci = bootstrap_ci(&set, t, 200, &Rng::new(seed)).unwrap();
        for name in THRESHOLDED_METRIC_NAMES {
            if let (Some(point), Some(&(lo, hi))) = (m.by_name(name), ci.intervals.get(name)) {
                prop_assert!(lo <= point + 1e-12 && point <= hi + 1e-12,
                    "{} = {} outside [{}, {}]", name, point, lo, hi);
            }
        }
    }

    // The returned threshold's F1 dominates every swept candidate.
    #[test]
    fn threshold_sweep_exhaustive(seed in 0u64..200) {
        let mut rng = Rng::new(seed);
        let n = 20 + rng.below(30);
        let mut values = Vec::new();
        let mut pos = 0;
        for _ in 0..n {
            let label = rng.bernoulli(0.5);
            pos += label as usize;
            values.push((label as u8, rng.next_f64()));
        }
        prop_assume!(pos > 0 && pos < n);
        let set = scored(&values);
        let t = select_threshold(&set).unwrap();
        let f1 = metrics_from_confusion(&confusion(&set, t)).f1.unwrap();
        for i in 0..=1000 {
            let cand = i as f64 / 1000.0;
            if let Some(other) = metrics_from_confusion(&confusion(&set, cand)).f1 {
                prop_assert!(f1 >= other - 1e-12);
            }
        }
    }
}
