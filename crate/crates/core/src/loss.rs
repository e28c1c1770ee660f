//! The composite training objective: classification, pull/push,
//! diversity, entropy, usage, anchor, medoid, prototype-norm and
//! temperature terms, each with analytic gradients with respect to the
//! batch embeddings, the prototype matrix, and the temperature.
//!
//! The exact regularizer forms:
//!   pull    — mean over the batch of the normalized squared distance to
//!             the nearest same-class prototype.
//!   push    — mean of exp(-d_min_opposite / τ_push).
//!   div     — mean over unordered same-class prototype pairs of
//!             max(0, cos(P̂_j, P̂_k) - δ) on ℓ2-normalized prototypes.
//!   ent     — mean of Σ q log q over the within-class assignment
//!             softmax (minimizing it maximizes assignment entropy); a
//!             switch widens the softmax to all prototypes.
//!   usage   — K·Σ_k (ū_k - 1/K)² where ū is the batch-mean global
//!             prototype distribution; zero exactly at uniform usage.
//!   anchor  — mean over types of the mean normalized squared distance
//!             between the prototype and its expert anchors.
//!   medoid  — mean over prototypes of the normalized squared distance
//!             to the frozen initialization medoid.
//! Distances reuse the head's dimension-normalized squared form so the
//! loss weights keep their meaning across embedding sizes.

use crate::data::Label;
use crate::head::{AnchorSet, PrototypeModel};
use crate::numerics::Mat64;
use crate::{Error, Result};

pub const NUM_TERMS: usize = 10;
pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "cls",
    "pull",
    "push",
    "div",
    "ent",
    "usage",
    "anchor",
    "medoid",
    "proto_norm",
    "tau_pen",
];

/// Weights and scales of the composite objective. Defaults are the
/// reference configuration.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub pull: f64,
    pub push: f64,
    pub div: f64,
    pub ent: f64,
    pub usage: f64,
    pub anchor: f64,
    pub medoid: f64,
    pub proto_norm: f64,
    pub tau_pen: f64,
    pub tau_push: f64,
    pub delta: f64,
    /// When true (default) the entropy term softmaxes over same-class
    /// prototypes only; false widens it to all prototypes.
    pub ent_within_class: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 0.1,
            pull: 0.05,
            push: 0.01,
            div: 1.0,
            ent: 0.01,
            usage: 0.1,
            anchor: 2.0,
            medoid: 0.5,
            proto_norm: 1e-6,
            tau_pen: 1e-4,
            tau_push: 0.1,
            delta: 0.7,
            ent_within_class: true,
        }
    }
}

impl LossWeights {
    pub fn lambdas(&self) -> [f64; NUM_TERMS] {
        [
            self.cls,
            self.pull,
            self.push,
            self.div,
            self.ent,
            self.usage,
            self.anchor,
            self.medoid,
            self.proto_norm,
            self.tau_pen,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas().iter().any(|&l| l < 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if self.tau_push <= 0.0 {
            return Err(Error::invalid("tau_push must be > 0"));
        }
        if !(-1.0 < self.delta && self.delta < 1.0) {
            return Err(Error::invalid("diversity margin delta must lie in (-1, 1)"));
        }
        Ok(())
    }
}

/// Inverse-frequency class weights normalized to mean one over the
/// training set: w_c = n / (2 n_c).
pub fn class_weights_from_counts(n_nondefect: usize, n_defect: usize) -> Result<[f64; 2]> {
    if n_nondefect == 0 || n_defect == 0 {
        return Err(Error::invalid(
            "class weights need both classes present in the training set",
        ));
    }
    let n = (n_nondefect + n_defect) as f64;
    Ok([n / (2.0 * n_nondefect as f64), n / (2.0 * n_defect as f64)])
}

/// A batch of standardized embeddings with binary labels.
pub struct Batch<'a> {
    pub z: &'a Mat64,
    pub labels: &'a [Label],
}

impl<'a> Batch<'a> {
    pub fn new(z: &'a Mat64, labels: &'a [Label]) -> Result<Batch<'a>> {
        if z.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} embeddings vs {} labels",
                z.rows(),
                labels.len()
            )));
        }
        Ok(Batch { z, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients of a scalar loss with respect to embeddings, prototypes
/// and temperature.
#[derive(Clone, Debug)]
pub struct GradSet {
    pub z: Mat64,
    pub p: Mat64,
    pub tau: f64,
}

impl GradSet {
    pub fn zeros(n: usize, k: usize, d: usize) -> GradSet {
        GradSet {
            z: Mat64::zeros(n, d),
            p: Mat64::zeros(k, d),
            tau: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &GradSet, factor: f64) {
        for (a, b) in self.z.data_mut().iter_mut().zip(other.z.data()) {
            *a += factor * b;
        }
        for (a, b) in self.p.data_mut().iter_mut().zip(other.p.data()) {
            *a += factor * b;
        }
        self.tau += factor * other.tau;
    }

    pub fn norm(&self) -> f64 {
        (self.z.frobenius_sq() + self.p.frobenius_sq() + self.tau * self.tau).sqrt()
    }
}

/// Distances and logits of every (sample, prototype) pair, computed once
/// per evaluation.
pub struct HeadState {
    pub d: Mat64,
    pub l: Mat64,
}

pub fn head_state(batch: &Batch, model: &PrototypeModel) -> Result<HeadState> {
    let n = batch.len();
    let k = model.k();
    let mut d = Mat64::zeros(n, k);
    let mut l = Mat64::zeros(n, k);
    for i in 0..n {
        let di = crate::head::distances(batch.z.row(i), &model.prototypes)?;
        let li = crate::head::prototype_logits(&di, model.tau)?;
        d.row_mut(i).copy_from_slice(&di);
        l.row_mut(i).copy_from_slice(&li);
    }
    Ok(HeadState { d, l })
}

/// Adds gradients flowing through the logits: callers supply
/// g[i][k] = ∂loss/∂ℓ_ik and this routine chains through
/// ℓ = -d/τ, d = ||z - P||²/D.
fn accumulate_logit_grads(
    batch: &Batch,
    model: &PrototypeModel,
    state: &HeadState,
    g: &Mat64,
    out: &mut GradSet,
) {
    let dim = model.dim() as f64;
    let tau = model.tau;
    for i in 0..batch.len() {
        for k in 0..model.k() {
            let gik = g.row(i)[k];
            if gik == 0.0 {
                continue;
            }
            let coeff = gik * (-1.0 / tau) * 2.0 / dim;
            let (zi, pk) = (batch.z.row(i), model.prototypes.row(k));
            for dd in 0..zi.len() {
                let diff = zi[dd] - pk[dd];
                out.z.row_mut(i)[dd] += coeff * diff;
                out.p.row_mut(k)[dd] -= coeff * diff;
            }
            out.tau += gik * state.d.row(i)[k] / (tau * tau);
        }
    }
}

/// Adds gradients flowing directly through one distance d_ik with factor
/// g = ∂loss/∂d_ik.
fn accumulate_distance_grad(
    batch: &Batch,
    model: &PrototypeModel,
    i: usize,
    k: usize,
    g: f64,
    out: &mut GradSet,
) {
    let dim = model.dim() as f64;
    let (zi, pk) = (batch.z.row(i), model.prototypes.row(k));
    for dd in 0..zi.len() {
        let diff = zi[dd] - pk[dd];
        out.z.row_mut(i)[dd] += g * 2.0 * diff / dim;
        out.p.row_mut(k)[dd] -= g * 2.0 * diff / dim;
    }
}

fn proto_classes(model: &PrototypeModel) -> [Vec<usize>; 2] {
    [
        model.prototype_indices_of(Label::NonDefect),
        model.prototype_indices_of(Label::Defect),
    ]
}

fn stable_softmax_over(logits: &[f64], idx: &[usize]) -> (Vec<f64>, f64) {
    let m = idx.iter().map(|&k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = idx.iter().map(|&k| (logits[k] - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = m + sum.ln();
    (exps.iter().map(|e| e / sum).collect(), lse)
}

/// Weighted cross-entropy on the pooled class probabilities.
pub fn loss_cls(
    batch: &Batch,
    model: &PrototypeModel,
    state: &HeadState,
    class_weights: [f64; 2],
) -> Result<(f64, GradSet)> {
    if class_weights[0] <= 0.0 || class_weights[1] <= 0.0 {
        return Err(Error::invalid("class weights must be positive"));
    }
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyReduction);
    }
    let classes = proto_classes(model);
    if classes[0].is_empty() || classes[1].is_empty() {
        return Err(Error::invalid("each class needs at least one prototype"));
    }
    let mut value = 0.0;
    let mut g = Mat64::zeros(n, model.k());
    for i in 0..n {
        let li = state.l.row(i);
        let (q0, lse0) = stable_softmax_over(li, &classes[0]);
        let (q1, lse1) = stable_softmax_over(li, &classes[1]);
        let m = lse0.max(lse1);
        let (e0, e1) = ((lse0 - m).exp(), (lse1 - m).exp());
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let y = batch.labels[i].as_u8() as usize;
        let w = class_weights[y];
        value += -w * p[y].max(f64::MIN_POSITIVE).ln();
        for c in 0..2 {
            let residual = p[c] - if c == y { 1.0 } else { 0.0 };
            let q = if c == 0 { &q0 } else { &q1 };
            for (slot, &k) in classes[c].iter().enumerate() {
                g.row_mut(i)[k] += w / n as f64 * residual * q[slot];
            }
        }
    }
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    accumulate_logit_grads(batch, model, state, &g, &mut grads);
    Ok((value / n as f64, grads))
}

fn argmin_over(d: &[f64], idx: &[usize]) -> usize {
    let mut best = idx[0];
    for &k in idx {
        if d[k] < d[best] {
            best = k;
        }
    }
    best
}

/// Mean distance to the nearest same-class prototype.
pub fn loss_pull(batch: &Batch, model: &PrototypeModel, state: &HeadState) -> Result<(f64, GradSet)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyReduction);
    }
    let classes = proto_classes(model);
    let mut value = 0.0;
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    for i in 0..n {
        let own = &classes[batch.labels[i].as_u8() as usize];
        if own.is_empty() {
            return Err(Error::invalid("each class needs at least one prototype"));
        }
        let k = argmin_over(state.d.row(i), own);
        value += state.d.row(i)[k];
        accumulate_distance_grad(batch, model, i, k, 1.0 / n as f64, &mut grads);
    }
    Ok((value / n as f64, grads))
}

/// Mean exponential penalty on proximity to the nearest opposite-class
/// prototype: exp(-d / τ_push).
pub fn loss_push(
    batch: &Batch,
    model: &PrototypeModel,
    state: &HeadState,
    tau_push: f64,
) -> Result<(f64, GradSet)> {
    if tau_push <= 0.0 {
        return Err(Error::invalid("tau_push must be > 0"));
    }
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyReduction);
    }
    let classes = proto_classes(model);
    let mut value = 0.0;
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    for i in 0..n {
        let opposite = &classes[1 - batch.labels[i].as_u8() as usize];
        if opposite.is_empty() {
            return Err(Error::invalid("each class needs at least one prototype"));
        }
        let k = argmin_over(state.d.row(i), opposite);
        let e = (-state.d.row(i)[k] / tau_push).exp();
        value += e;
        let dd = -e / tau_push / n as f64;
        accumulate_distance_grad(batch, model, i, k, dd, &mut grads);
    }
    Ok((value / n as f64, grads))
}

/// Hinge on the cosine similarity of ℓ2-normalized same-class prototype
/// pairs: mean of max(0, cos - δ). Opposite-class pairs do not appear.
pub fn loss_div(model: &PrototypeModel, delta: f64, n: usize) -> Result<(f64, GradSet)> {
    let classes = proto_classes(model);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for class in &classes {
        for a in 0..class.len() {
            for b in a + 1..class.len() {
                pairs.push((class[a], class[b]));
            }
        }
    }
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    if pairs.is_empty() {
        return Ok((0.0, grads));
    }
    let mut value = 0.0;
    let m = pairs.len() as f64;
    for (j, k) in pairs {
        let (pj, pk) = (model.prototypes.row(j), model.prototypes.row(k));
        let nj = crate::numerics::norm(pj);
        let nk = crate::numerics::norm(pk);
        if nj <= 0.0 || nk <= 0.0 {
            return Err(Error::DegenerateDirection);
        }
        let cos = crate::numerics::dot(pj, pk)? / (nj * nk);
        if cos - delta <= 0.0 {
            continue;
        }
        value += cos - delta;
        for dd in 0..model.dim() {
            let hat_j = pj[dd] / nj;
            let hat_k = pk[dd] / nk;
            grads.p.row_mut(j)[dd] += (hat_k - cos * hat_j) / nj / m;
            grads.p.row_mut(k)[dd] += (hat_j - cos * hat_k) / nk / m;
        }
    }
    Ok((value / m, grads))
}

/// Negative entropy of the within-class assignment: mean over the batch
/// of Σ q log q. Ranges in [-ln k_c, 0].
pub fn loss_ent(
    batch: &Batch,
    model: &PrototypeModel,
    state: &HeadState,
    within_class: bool,
) -> Result<(f64, GradSet)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyReduction);
    }
    let classes = proto_classes(model);
    let all: Vec<usize> = (0..model.k()).collect();
    let mut value = 0.0;
    let mut g = Mat64::zeros(n, model.k());
    for i in 0..n {
        let idx: &[usize] = if within_class {
            &classes[batch.labels[i].as_u8() as usize]
        } else {
            &all
        };
        let (q, _) = stable_softmax_over(state.l.row(i), idx);
        let neg_h: f64 = q
            .iter()
            .map(|&qi| if qi > 0.0 { qi * qi.ln() } else { 0.0 })
            .sum();
        value += neg_h;
        for (slot, &k) in idx.iter().enumerate() {
            let qk = q[slot].max(f64::MIN_POSITIVE);
            g.row_mut(i)[k] += qk * (qk.ln() - neg_h) / n as f64;
        }
    }
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    accumulate_logit_grads(batch, model, state, &g, &mut grads);
    Ok((value / n as f64, grads))
}

/// Scaled squared deviation of the batch-mean prototype usage from
/// uniform: K · Σ_k (ū_k - 1/K)².
pub fn loss_usage(batch: &Batch, model: &PrototypeModel, state: &HeadState) -> Result<(f64, GradSet)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyReduction);
    }
    let k_total = model.k();
    let all: Vec<usize> = (0..k_total).collect();
    let mut u = Mat64::zeros(n, k_total);
    let mut mean_u = vec![0.0; k_total];
    for i in 0..n {
        let (ui, _) = stable_softmax_over(state.l.row(i), &all);
        for (k, &v) in ui.iter().enumerate() {
            u.row_mut(i)[k] = v;
            mean_u[k] += v / n as f64;
        }
    }
    let uniform = 1.0 / k_total as f64;
    let value: f64 = mean_u
        .iter()
        .map(|&m| k_total as f64 * (m - uniform) * (m - uniform))
        .sum();
    // dvalue/dū_k = 2K(ū_k - 1/K); softmax Jacobian per sample.
    let dv: Vec<f64> = mean_u
        .iter()
        .map(|&m| 2.0 * k_total as f64 * (m - uniform))
        .collect();
    let mut g = Mat64::zeros(n, k_total);
    for i in 0..n {
        let ui = u.row(i);
        let inner: f64 = dv.iter().zip(ui).map(|(&a, &b)| a * b).sum();
        for j in 0..k_total {
            g.row_mut(i)[j] = ui[j] * (dv[j] - inner) / n as f64;
        }
    }
    let mut grads = GradSet::zeros(n, k_total, model.dim());
    accumulate_logit_grads(batch, model, state, &g, &mut grads);
    Ok((value, grads))
}

/// Mean over types of the mean normalized squared distance between each
/// prototype and its expert anchors.
pub fn loss_anchor(
    model: &PrototypeModel,
    anchors: &AnchorSet,
    n: usize,
) -> Result<(f64, GradSet)> {
    if anchors.dim() != model.dim() {
        return Err(Error::shape("anchor set dim differs from model dim"));
    }
    let k_total = model.k();
    let dim = model.dim() as f64;
    let mut value = 0.0;
    let mut grads = GradSet::zeros(n, k_total, model.dim());
    for k in 0..k_total {
        let t = model.semantic_map[k];
        let list = anchors.of_type(t);
        let mut type_value = 0.0;
        for a in list {
            type_value += crate::numerics::squared_distance(model.prototypes.row(k), &a.embedding)?
                / dim;
            let coeff = 2.0 / dim / list.len() as f64 / k_total as f64;
            for dd in 0..model.dim() {
                grads.p.row_mut(k)[dd] +=
                    coeff * (model.prototypes.row(k)[dd] - a.embedding[dd]);
            }
        }
        value += type_value / list.len() as f64;
    }
    Ok((value / k_total as f64, grads))
}

/// Mean normalized squared deviation of each prototype from its frozen
/// initialization medoid.
pub fn loss_medoid(model: &PrototypeModel, n: usize) -> Result<(f64, GradSet)> {
    let k_total = model.k();
    let dim = model.dim() as f64;
    let mut value = 0.0;
    let mut grads = GradSet::zeros(n, k_total, model.dim());
    for k in 0..k_total {
        value += crate::numerics::squared_distance(model.prototypes.row(k), model.medoids.row(k))?
            / dim;
        let coeff = 2.0 / dim / k_total as f64;
        for dd in 0..model.dim() {
            grads.p.row_mut(k)[dd] +=
                coeff * (model.prototypes.row(k)[dd] - model.medoids.row(k)[dd]);
        }
    }
    Ok((value / k_total as f64, grads))
}

/// Squared Frobenius norm of the prototype matrix.
pub fn loss_proto_norm(model: &PrototypeModel, n: usize) -> (f64, GradSet) {
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    for (g, p) in grads.p.data_mut().iter_mut().zip(model.prototypes.data()) {
        *g = 2.0 * p;
    }
    (model.prototypes.frobenius_sq(), grads)
}

/// |τ - 1|; the subgradient at τ = 1 is taken as zero, matching the
/// central difference there.
pub fn loss_tau(model: &PrototypeModel, n: usize) -> (f64, GradSet) {
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    grads.tau = if model.tau > 1.0 {
        1.0
    } else if model.tau < 1.0 {
        -1.0
    } else {
        0.0
    };
    ((model.tau - 1.0).abs(), grads)
}

/// Per-term values, the weighted total, and per-term gradient norms.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LossBreakdown {
    pub values: [f64; NUM_TERMS],
    pub grad_norms: [f64; NUM_TERMS],
    pub total: f64,
}

impl LossBreakdown {
    pub fn csv_header() -> String {
        format!("step,{},total", TERM_NAMES.join(","))
    }

    pub fn csv_row(&self, step: usize) -> String {
        let vals: Vec<String> = self.values.iter().map(|v| format!("{v:.9}")).collect();
        format!("{step},{},{:.9}", vals.join(","), self.total)
    }
}

/// Evaluates one term by index (order matches [`TERM_NAMES`]); used by
/// the gradient-certification suites to probe each term in isolation.
pub fn eval_term(
    index: usize,
    batch: &Batch,
    model: &PrototypeModel,
    anchors: &AnchorSet,
    weights: &LossWeights,
    class_weights: [f64; 2],
) -> Result<(f64, GradSet)> {
    let state = head_state(batch, model)?;
    let n = batch.len();
    match index {
        0 => loss_cls(batch, model, &state, class_weights),
        1 => loss_pull(batch, model, &state),
        2 => loss_push(batch, model, &state, weights.tau_push),
        3 => loss_div(model, weights.delta, n),
        4 => loss_ent(batch, model, &state, weights.ent_within_class),
        5 => loss_usage(batch, model, &state),
        6 => loss_anchor(model, anchors, n),
        7 => loss_medoid(model, n),
        8 => Ok(loss_proto_norm(model, n)),
        9 => Ok(loss_tau(model, n)),
        _ => Err(Error::invalid(format!("no loss term with index {index}"))),
    }
}

/// The weighted composite loss with its full gradient set.
pub fn total_loss(
    batch: &Batch,
    model: &PrototypeModel,
    anchors: &AnchorSet,
    weights: &LossWeights,
    class_weights: [f64; 2],
) -> Result<(LossBreakdown, GradSet)> {
    weights.validate()?;
    let state = head_state(batch, model)?;
    let n = batch.len();
    let lambdas = weights.lambdas();
    let mut values = [0.0; NUM_TERMS];
    let mut grad_norms = [0.0; NUM_TERMS];
    let mut total = 0.0;
    let mut grads = GradSet::zeros(n, model.k(), model.dim());
    for (idx, &lambda) in lambdas.iter().enumerate() {
        let (value, term_grads) = match idx {
            0 => loss_cls(batch, model, &state, class_weights)?,
            1 => loss_pull(batch, model, &state)?,
            2 => loss_push(batch, model, &state, weights.tau_push)?,
            3 => loss_div(model, weights.delta, n)?,
            4 => loss_ent(batch, model, &state, weights.ent_within_class)?,
            5 => loss_usage(batch, model, &state)?,
            6 => loss_anchor(model, anchors, n)?,
            7 => loss_medoid(model, n)?,
            8 => loss_proto_norm(model, n),
            9 => loss_tau(model, n),
            _ => unreachable!(),
        };
        values[idx] = value;
        grad_norms[idx] = term_grads.norm();
        total += lambda * value;
        if lambda != 0.0 {
            grads.add_scaled(&term_grads, lambda);
        }
    }
    Ok((
        LossBreakdown {
            values,
            grad_norms,
            total,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests;
