//! Metrics, calibration and uncertainty: confusion-derived statistics,
//! ROC/PR AUC, expected calibration error, Brier score, temperature
//! scaling, F1-maximizing threshold selection, and patch-level bootstrap
//! confidence intervals.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::Label;
use crate::numerics::Rng;
use crate::{Error, Result};

/// Default number of equal-width ECE bins.
pub const DEFAULT_ECE_BINS: usize = 15;
/// Default bootstrap replicate count.
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 2000;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScoredRecord {
    pub id: u32,
    pub label: Label,
    pub score: f64,
}

/// Per-record defect scores in [0,1] with unique ids; `calibrated`
/// flags whether temperature scaling has been applied.
#[derive(Clone, Debug)]
pub struct ScoredSet {
    pub records: Vec<ScoredRecord>,
    pub calibrated: bool,
}

impl ScoredSet {
    pub fn new(records: Vec<ScoredRecord>, calibrated: bool) -> Result<ScoredSet> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            if !(r.score.is_finite() && (0.0..=1.0).contains(&r.score)) {
                return Err(Error::invalid(format!(
                    "score {} for record {} outside [0,1]",
                    r.score, r.id
                )));
            }
            if !seen.insert(r.id) {
                return Err(Error::invalid(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(ScoredSet {
            records,
            calibrated,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn both_classes_present(&self) -> bool {
        let pos = self.records.iter().filter(|r| r.label == Label::Defect).count();
        pos > 0 && pos < self.records.len()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::io::open_writer(path)?;
        writeln!(w, "id,label,score")?;
        for r in &self.records {
            writeln!(w, "{},{},{:.12}", r.id, r.label.as_u8(), r.score)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<ScoredSet> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("scored csv: empty file"))?;
        if header != "id,label,score" {
            return Err(Error::format(format!("scored csv: unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::format(format!(
                    "scored csv line {}: expected 3 fields",
                    lineno + 2
                )));
            }
            let bad = |what: &str| Error::format(format!("scored csv line {}: bad {what}", lineno + 2));
            records.push(ScoredRecord {
                id: parts[0].parse().map_err(|_| bad("id"))?,
                label: Label::from_u8(parts[1].parse().map_err(|_| bad("label"))?)?,
                score: parts[2].parse().map_err(|_| bad("score"))?,
            });
        }
        ScoredSet::new(records, false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts at threshold `t` with the ≥ decision rule.
pub fn confusion(scored: &ScoredSet, t: f64) -> Confusion {
    let mut c = Confusion::default();
    for r in &scored.records {
        let predicted = r.score >= t;
        match (predicted, r.label) {
            (true, Label::Defect) => c.tp += 1,
            (true, Label::NonDefect) => c.fp += 1,
            (false, Label::NonDefect) => c.tn += 1,
            (false, Label::Defect) => c.fn_ += 1,
        }
    }
    c
}

/// Thresholded metrics; ratios with zero denominators are `None`
/// ("undefined"), never a silent zero.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct ThresholdedMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
}

pub const THRESHOLDED_METRIC_NAMES: [&str; 5] =
    ["accuracy", "precision", "recall", "f1", "specificity"];

impl ThresholdedMetrics {
    pub fn by_name(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "specificity" => self.specificity,
            _ => None,
        }
    }
}

pub fn metrics_from_confusion(c: &Confusion) -> ThresholdedMetrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ThresholdedMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Counts and thresholded metrics in one call; `t` must lie in (0,1).
pub fn confusion_and_metrics(scored: &ScoredSet, t: f64) -> Result<(Confusion, ThresholdedMetrics)> {
    if !(0.0 < t && t < 1.0) {
        return Err(Error::invalid("threshold must lie in (0,1)"));
    }
    let c = confusion(scored, t);
    Ok((c, metrics_from_confusion(&c)))
}

/// ROC-AUC via the Mann-Whitney rank statistic with midrank tie
/// correction.
pub fn roc_auc(scored: &ScoredSet) -> Result<f64> {
    if !scored.both_classes_present() {
        return Err(Error::invalid("ROC-AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored.records[a]
            .score
            .partial_cmp(&scored.records[b].score)
            .unwrap()
    });
    let n = scored.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n
            && scored.records[order[j + 1]].score == scored.records[order[i]].score
        {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = midrank;
        }
        i = j + 1;
    }
    let n_pos = scored.records.iter().filter(|r| r.label == Label::Defect).count();
    let n_neg = n - n_pos;
    let rank_sum: f64 = scored
        .records
        .iter()
        .zip(&ranks)
        .filter(|(r, _)| r.label == Label::Defect)
        .map(|(_, &rk)| rk)
        .sum();
    Ok((rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// PR-AUC by step-wise integration of the precision-recall curve over
/// distinct score thresholds, with no interpolation.
pub fn pr_auc(scored: &ScoredSet) -> Result<f64> {
    if !scored.both_classes_present() {
        return Err(Error::invalid("PR-AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored.records[b]
            .score
            .partial_cmp(&scored.records[a].score)
            .unwrap()
    });
    let total_pos = scored.records.iter().filter(|r| r.label == Label::Defect).count() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = scored.records[order[i]].score;
        // Consume the whole tie group before emitting a curve point.
        while i < order.len() && scored.records[order[i]].score == score {
            match scored.records[order[i]].label {
                Label::Defect => tp += 1.0,
                Label::NonDefect => fp += 1.0,
            }
            i += 1;
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(auc)
}

/// Expected calibration error over `bins` equal-width confidence bins on
/// the defect score: Σ_b (n_b/n)·|acc_b − conf_b|.
pub fn ece(scored: &ScoredSet, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::invalid("ece needs bins >= 1"));
    }
    if scored.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let mut sum_conf = vec![0.0; bins];
    let mut sum_pos = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for r in &scored.records {
        let b = ((r.score * bins as f64) as usize).min(bins - 1);
        sum_conf[b] += r.score;
        sum_pos[b] += r.label.as_u8() as f64;
        count[b] += 1;
    }
    let n = scored.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let conf = sum_conf[b] / count[b] as f64;
            let acc = sum_pos[b] / count[b] as f64;
            total += count[b] as f64 / n * (acc - conf).abs();
        }
    }
    Ok(total)
}

/// Mean squared error of the score against the binary label.
pub fn brier(scored: &ScoredSet) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::EmptyReduction);
    }
    Ok(scored
        .records
        .iter()
        .map(|r| (r.score - r.label.as_u8() as f64).powi(2))
        .sum::<f64>()
        / scored.len() as f64)
}

/// Fits the temperature T > 0 minimizing the negative log-likelihood of
/// sigmoid(logit / T). NLL is convex in s = 1/T, so the derivative root
/// is found by bisection; score ranking is unchanged by construction.
pub fn fit_temperature(logits: &[f64], labels: &[Label]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::shape("logit/label count mismatch"));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Defect).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("temperature fit needs both classes present"));
    }
    // dNLL/ds = Σ (σ(s·ℓ) − y)·ℓ, nondecreasing in s.
    let grad_s = |s: f64| -> f64 {
        logits
            .iter()
            .zip(labels)
            .map(|(&l, &y)| {
                let p = 1.0 / (1.0 + (-s * l).exp());
                (p - y.as_u8() as f64) * l
            })
            .sum()
    };
    let (mut lo, mut hi) = (1.0 / 64.0, 64.0);
    if grad_s(lo) >= 0.0 {
        return Ok(1.0 / lo); // flattest allowed scaling
    }
    if grad_s(hi) <= 0.0 {
        return Ok(1.0 / hi); // sharpest allowed scaling
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = grad_s(mid);
        // |dNLL/dT| = s²·|dNLL/ds|
        if (g * mid * mid).abs() < 1e-8 || (hi - lo) < 1e-13 {
            return Ok(1.0 / mid);
        }
        if g > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(2.0 / (lo + hi))
}

/// Applies temperature scaling to raw logits, returning probabilities.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be > 0"));
    }
    Ok(logits
        .iter()
        .map(|&l| 1.0 / (1.0 + (-l / temperature).exp()))
        .collect())
}

/// Sweeps candidate thresholds at the midpoints between adjacent
/// distinct sorted scores, plus 0 and 1, and returns the F1-maximizing
/// threshold; ties go to the lowest candidate.
pub fn select_threshold(scored: &ScoredSet) -> Result<f64> {
    if !scored.both_classes_present() {
        return Err(Error::invalid("threshold selection needs both classes present"));
    }
    let mut scores: Vec<f64> = scored.records.iter().map(|r| r.score).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scores.dedup();
    let mut candidates = vec![0.0];
    for pair in scores.windows(2) {
        candidates.push(0.5 * (pair[0] + pair[1]));
    }
    candidates.push(1.0);
    let mut best_t = candidates[0];
    let mut best_f1 = f64::NEG_INFINITY;
    for &t in &candidates {
        let m = metrics_from_confusion(&confusion(scored, t));
        if let Some(f1) = m.f1 {
            if f1 > best_f1 {
                best_f1 = f1;
                best_t = t;
            }
        }
    }
    if best_f1.is_infinite() {
        return Err(Error::invalid("F1 undefined at every candidate threshold"));
    }
    Ok(best_t)
}

/// Empirical percentile with linear interpolation between order
/// statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let pos = q * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub seed: u64,
    /// 95% interval per thresholded metric.
    pub intervals: BTreeMap<String, (f64, f64)>,
    /// Replicates dropped per metric because the ratio was undefined.
    pub dropped: BTreeMap<String, usize>,
}

/// Patch-level bootstrap: resamples records with replacement, recomputes
/// every thresholded metric per replicate, and reports empirical
/// 2.5/97.5 percentiles. Undefined-metric replicates are dropped and
/// counted.
pub fn bootstrap_ci(
    scored: &ScoredSet,
    t: f64,
    replicates: usize,
    rng: &Rng,
) -> Result<BootstrapResult> {
    if replicates < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 replicates"));
    }
    if scored.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let n = scored.len();
    let mut samples: BTreeMap<&str, Vec<f64>> = THRESHOLDED_METRIC_NAMES
        .iter()
        .map(|&m| (m, Vec::with_capacity(replicates)))
        .collect();
    let mut dropped: BTreeMap<String, usize> =
        THRESHOLDED_METRIC_NAMES.iter().map(|&m| (m.to_string(), 0)).collect();
    for rep in 0..replicates {
        let mut rep_rng = rng.derive(rep as u64);
        let mut c = Confusion::default();
        for _ in 0..n {
            let r = &scored.records[rep_rng.below(n)];
            let predicted = r.score >= t;
            match (predicted, r.label) {
                (true, Label::Defect) => c.tp += 1,
                (true, Label::NonDefect) => c.fp += 1,
                (false, Label::NonDefect) => c.tn += 1,
                (false, Label::Defect) => c.fn_ += 1,
            }
        }
        let m = metrics_from_confusion(&c);
        for &name in &THRESHOLDED_METRIC_NAMES {
            match m.by_name(name) {
                Some(v) => samples.get_mut(name).unwrap().push(v),
                None => *dropped.get_mut(name).unwrap() += 1,
            }
        }
    }
    let mut intervals = BTreeMap::new();
    for (&name, values) in &mut samples {
        if values.is_empty() {
            continue;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        intervals.insert(
            name.to_string(),
            (percentile(values, 0.025), percentile(values, 0.975)),
        );
    }
    Ok(BootstrapResult {
        replicates,
        seed: rng.seed(),
        intervals,
        dropped,
    })
}

/// The full evaluation product: operating point, calibration constant,
/// confusion counts, every metric, and bootstrap intervals.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub temperature: f64,
    pub n: usize,
    pub confusion: Confusion,
    pub metrics: ThresholdedMetrics,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub ece: f64,
    pub brier: f64,
    pub ece_bins: usize,
    pub bootstrap: BootstrapResult,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Human-readable table; undefined ratios print as "undefined".
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.3}"),
            None => "undefined".to_string(),
        };
        let ci = |name: &str| match self.bootstrap.intervals.get(name) {
            Some((lo, hi)) => format!("({lo:.3}-{hi:.3})"),
            None => String::new(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "threshold {:.3}  temperature {:.3}  n {}\n",
            self.threshold, self.temperature, self.n
        ));
        out.push_str(&format!(
            "confusion TP={} FP={} TN={} FN={}\n",
            self.confusion.tp, self.confusion.fp, self.confusion.tn, self.confusion.fn_
        ));
        for name in THRESHOLDED_METRIC_NAMES {
            out.push_str(&format!(
                "{name:<12} {:<10} {}\n",
                fmt(self.metrics.by_name(name)),
                ci(name)
            ));
        }
        out.push_str(&format!("{:<12} {:.3}\n", "roc_auc", self.roc_auc));
        out.push_str(&format!("{:<12} {:.3}\n", "pr_auc", self.pr_auc));
        out.push_str(&format!("{:<12} {:.3}\n", "ece", self.ece));
        out.push_str(&format!("{:<12} {:.3}\n", "brier", self.brier));
        out
    }
}

/// Evaluates a calibrated scored set at threshold `t`.
pub fn evaluate_scored(
    scored: &ScoredSet,
    t: f64,
    temperature: f64,
    ece_bins: usize,
    replicates: usize,
    rng: &Rng,
) -> Result<EvalReport> {
    let (confusion, metrics) = confusion_and_metrics(scored, t)?;
    Ok(EvalReport {
        threshold: t,
        temperature,
        n: scored.len(),
        confusion,
        metrics,
        roc_auc: roc_auc(scored)?,
        pr_auc: pr_auc(scored)?,
        ece: ece(scored, ece_bins)?,
        brier: brier(scored)?,
        ece_bins,
        bootstrap: bootstrap_ci(scored, t, replicates, rng)?,
    })
}

#[cfg(test)]
mod tests;
