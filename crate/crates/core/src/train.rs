//! Optimization: AdamW with decoupled weight decay and parameter
//! groups, global-norm clipping, plateau-driven learning-rate decay,
//! early stopping with best-checkpoint restoration, the prototype-head
//! fitting loop (file-backed embeddings or the compact encoder), the
//! baseline linear head, and the encoder warm-up.

use std::io::Write;
use std::path::Path;

use crate::data::{augment, normalize_patch, AugmentationPolicy, Label, Patch};
use crate::encoder::{CompactEncoder, EmbeddingBatch, EncoderGrads, Standardizer};
use crate::head::{init_prototypes, AnchorSet, PrototypeModel};
use crate::loss::{
    class_weights_from_counts, total_loss, Batch, LossBreakdown, LossWeights, NUM_TERMS,
    TERM_NAMES,
};
use crate::numerics::{clip_global_norm, Mat64, Rng};
use crate::{Error, Result};

/// One AdamW parameter group: a learning rate, a decay setting, and the
/// moment buffers of its tensors.
struct ParamGroup {
    lr: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// AdamW with bias-corrected moments and decoupled weight decay
/// (p ← p - lr·wd·p applied independently of the gradient term).
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    groups: Vec<ParamGroup>,
}

impl AdamW {
    pub fn new() -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            groups: Vec::new(),
        }
    }

    pub fn add_group(&mut self, lr: f64, weight_decay: f64, tensor_sizes: &[usize]) -> Result<usize> {
        if lr <= 0.0 {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        self.groups.push(ParamGroup {
            lr,
            weight_decay,
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        });
        Ok(self.groups.len() - 1)
    }

    pub fn lr(&self, group: usize) -> f64 {
        self.groups[group].lr
    }

    pub fn set_lr(&mut self, group: usize, lr: f64) {
        self.groups[group].lr = lr;
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Advances the shared step counter; call once per optimization step
    /// before updating any group.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(
        &mut self,
        group: usize,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<()> {
        let g = &mut self.groups[group];
        if params.len() != g.m.len() || grads.len() != g.m.len() {
            return Err(Error::shape(format!(
                "group {group} holds {} tensors, got {} params / {} grads",
                g.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, gr), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(g.m.iter_mut().zip(g.v.iter_mut()))
        {
            if p.len() != m.len() || gr.len() != m.len() {
                return Err(Error::shape("optimizer tensor shape mismatch"));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gr[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gr[i] * gr[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let decayed = p[i] * (1.0 - g.lr * g.weight_decay);
                p[i] = decayed - g.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW::new()
    }
}

/// Reduce-on-plateau scheduler state. Improvement means a strict
/// decrease by more than `tol`; after `patience` consecutive
/// non-improving epochs every group rate halves (never below `floor`).
#[derive(Clone, Debug)]
pub struct ScheduleState {
    pub best: f64,
    pub since: usize,
    pub factor: f64,
    pub patience: usize,
    pub floor: f64,
    pub tol: f64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        ScheduleState {
            best: f64::INFINITY,
            since: 0,
            factor: 0.5,
            patience: 10,
            floor: 1e-7,
            tol: 1e-6,
        }
    }
}

impl ScheduleState {
    /// Returns true when the rates were reduced this epoch.
    pub fn plateau_step(&mut self, metric: f64, optimizer: &mut AdamW) -> Result<bool> {
        if !metric.is_finite() {
            return Err(Error::NonFinite("plateau metric".into()));
        }
        if metric < self.best - self.tol {
            self.best = metric;
            self.since = 0;
            return Ok(false);
        }
        self.since += 1;
        if self.since > self.patience {
            for g in 0..optimizer.group_count() {
                let lr = (optimizer.lr(g) * self.factor).max(self.floor);
                optimizer.set_lr(g, lr);
            }
            self.since = 0;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Scans a validation history: stop once `patience` consecutive epochs
/// lack strict improvement; the best epoch is the earliest argmin.
pub fn early_stop(history: &[f64], patience: usize) -> (bool, Option<usize>) {
    if history.is_empty() {
        return (false, None);
    }
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since = 0;
    for (epoch, &v) in history.iter().enumerate() {
        if v < best {
            best = v;
            best_epoch = epoch;
            since = 0;
        } else {
            since += 1;
            if since >= patience {
                return (true, Some(best_epoch));
            }
        }
    }
    (false, Some(best_epoch))
}

/// Hyperparameters of the fitting loops.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub head_lr: f64,
    pub backbone_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Worker cap for the per-sample forward/backward fan-out; results
    /// are identical for any value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            head_lr: 5e-4,
            backbone_lr: 5e-6,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            early_stop_patience: 50,
            plateau_patience: 10,
            plateau_factor: 0.5,
            lr_floor: 1e-7,
            batch_size: 8,
            max_epochs: 200,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_lr <= 0.0 || self.backbone_lr <= 0.0 {
            return Err(Error::invalid("learning rates must be > 0"));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip norm must be > 0"));
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch record of the prototype training loop.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub train_total: f64,
    pub val: LossBreakdown,
    /// Largest joint gradient norm observed after clipping this epoch.
    pub max_post_clip_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub diverged: bool,
}

impl TrainingLog {
    pub fn csv_header() -> String {
        let terms: Vec<String> = TERM_NAMES.iter().map(|t| format!("val_{t}")).collect();
        format!(
            "epoch,lr_head,lr_backbone,train_total,val_total,{}",
            terms.join(",")
        )
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::io::open_writer(path)?;
        writeln!(w, "{}", Self::csv_header())?;
        for e in &self.epochs {
            let vals: Vec<String> = (0..NUM_TERMS).map(|i| format!("{:.9}", e.val.values[i])).collect();
            writeln!(
                w,
                "{},{:.9e},{:.9e},{:.9},{:.9},{}",
                e.epoch,
                e.lr_head,
                e.lr_backbone,
                e.train_total,
                e.val.total,
                vals.join(",")
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn min_val_total(&self) -> Option<f64> {
        self.epochs
            .iter()
            .map(|e| e.val.total)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

/// Where embeddings come from during prototype training.
pub enum EmbeddingSource<'a> {
    /// Precomputed raw embeddings; only the head (P, τ) trains.
    Files {
        train: &'a EmbeddingBatch,
        val: &'a EmbeddingBatch,
    },
    /// The compact encoder runs forward/backward; its trainable suffix
    /// joins the optimization. Training patches are augmented online,
    /// validation patches only normalized.
    Encoder {
        encoder: &'a mut CompactEncoder,
        train_patches: &'a [Patch],
        val_patches: &'a [Patch],
        augment: AugmentationPolicy,
    },
}

fn standardize_rows(std: &Standardizer, raw: &Mat64) -> Result<Mat64> {
    let mut out = Mat64::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        out.row_mut(i).copy_from_slice(&std.transform_vec(raw.row(i))?);
    }
    Ok(out)
}

struct BestCheckpoint {
    model: PrototypeModel,
    encoder: Option<CompactEncoder>,
    val_total: f64,
    epoch: usize,
}

/// Fits the prototype head (and, in encoder mode, the encoder's
/// trainable suffix): medoid initialization, AdamW groups at the head
/// and backbone rates, joint gradient clipping, plateau scheduling,
/// early stopping, and restoration of the checkpoint with the lowest
/// validation composite loss.
pub fn fit_prototype_model(
    mut source: EmbeddingSource,
    train_labels: &[Label],
    val_labels: &[Label],
    standardizer: &Standardizer,
    anchors: &AnchorSet,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<(PrototypeModel, TrainingLog)> {
    config.validate()?;
    weights.validate()?;
    let mut model = init_prototypes(anchors, 1.0)?;
    if model.dim() != standardizer.dim() {
        return Err(Error::shape("anchor dim differs from standardizer dim"));
    }
    let n_def = train_labels.iter().filter(|&&l| l == Label::Defect).count();
    let class_weights = class_weights_from_counts(train_labels.len() - n_def, n_def)?;

    let mut opt = AdamW::new();
    let k = model.k();
    let d = model.dim();
    let g_proto = opt.add_group(config.head_lr, config.weight_decay, &[k * d])?;
    // τ is regularized by its own loss term, so it takes no weight decay.
    let g_tau = opt.add_group(config.head_lr, 0.0, &[1])?;
    let g_enc = match &source {
        EmbeddingSource::Encoder { encoder, .. } => {
            let mut sizes = Vec::new();
            for s in encoder.frozen_stages..crate::encoder::NUM_STAGES {
                sizes.push(encoder.stage(s).w.len());
                sizes.push(encoder.stage(s).b.len());
            }
            if sizes.is_empty() {
                None
            } else {
                Some(opt.add_group(config.backbone_lr, config.weight_decay, &sizes)?)
            }
        }
        EmbeddingSource::Files { .. } => None,
    };

    let mut schedule = ScheduleState {
        patience: config.plateau_patience,
        factor: config.plateau_factor,
        floor: config.lr_floor,
        ..ScheduleState::default()
    };

    // File mode: standardize once up front.
    let file_train_z;
    let file_val_z;
    match &source {
        EmbeddingSource::Files { train, val } => {
            if train.len() != train_labels.len() || val.len() != val_labels.len() {
                return Err(Error::shape("embedding/label count mismatch"));
            }
            file_train_z = Some(standardize_rows(standardizer, &train.data)?);
            file_val_z = Some(standardize_rows(standardizer, &val.data)?);
        }
        EmbeddingSource::Encoder {
            train_patches,
            val_patches,
            ..
        } => {
            if train_patches.len() != train_labels.len() || val_patches.len() != val_labels.len() {
                return Err(Error::shape("patch/label count mismatch"));
            }
            file_train_z = None;
            file_val_z = None;
        }
    }

    let base_rng = Rng::new(config.seed);
    let mut log = TrainingLog::default();
    let mut best: Option<BestCheckpoint> = None;
    let mut stop_since = 0usize;
    let mut stop_best = f64::INFINITY;

    'epochs: for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_labels.len()).collect();
        base_rng.derive(2 * epoch as u64).shuffle(&mut order);
        let augment_rng = base_rng.derive(2 * epoch as u64 + 1);

        let mut train_total_sum = 0.0;
        let mut batches = 0usize;
        let mut max_post_clip: f64 = 0.0;

        for chunk in order.chunks(config.batch_size) {
            let labels: Vec<Label> = chunk.iter().map(|&i| train_labels[i]).collect();
            // Gather standardized embeddings, caching encoder activations.
            // Encoder-mode forward fans out with per-sample derived rng
            // streams so the result is thread-count independent.
            let mut z = Mat64::zeros(chunk.len(), d);
            let mut caches = Vec::new();
            match &mut source {
                EmbeddingSource::Files { .. } => {
                    let zt = file_train_z.as_ref().unwrap();
                    for (bi, &i) in chunk.iter().enumerate() {
                        z.row_mut(bi).copy_from_slice(zt.row(i));
                    }
                }
                EmbeddingSource::Encoder {
                    encoder,
                    train_patches,
                    augment: policy,
                    ..
                } => {
                    let encoder_ref = &**encoder;
                    let results = crate::numerics::parallel_map(chunk.len(), config.threads, |bi| {
                        let i = chunk[bi];
                        let mut rng = augment_rng.derive(i as u64);
                        let patch = augment(&train_patches[i], policy, &mut rng)?;
                        let patch = if patch.normalized { patch } else { normalize_patch(&patch) };
                        let (e, cache) = encoder_ref.forward_cached(&patch.tile)?;
                        Ok::<_, Error>((standardizer.transform_vec(&e)?, cache))
                    });
                    for (bi, r) in results.into_iter().enumerate() {
                        let (zv, cache) = r?;
                        z.row_mut(bi).copy_from_slice(&zv);
                        caches.push(cache);
                    }
                }
            }

            let batch = Batch::new(&z, &labels)?;
            let (breakdown, mut grads) = total_loss(&batch, &model, anchors, weights, class_weights)?;
            if !breakdown.total.is_finite() {
                log.diverged = true;
                break 'epochs;
            }
            train_total_sum += breakdown.total;
            batches += 1;

            // Backprop into the encoder suffix before clipping so the
            // joint norm covers every trainable tensor.
            let mut enc_grads = EncoderGrads::default();
            if let EmbeddingSource::Encoder { encoder, .. } = &source {
                let encoder_ref = &**encoder;
                let grads_ref = &grads;
                let per_sample = crate::numerics::parallel_map(caches.len(), config.threads, |bi| {
                    let upstream: Vec<f64> = grads_ref
                        .z
                        .row(bi)
                        .iter()
                        .zip(&standardizer.scale)
                        .map(|(&g, &s)| g / s)
                        .collect();
                    encoder_ref.backward(&caches[bi], &upstream)
                });
                for r in per_sample {
                    enc_grads.add_assign(&r?);
                }
            }

            let mut tau_grad = [grads.tau];
            {
                let mut tensors: Vec<&mut [f64]> = vec![grads.p.data_mut(), &mut tau_grad];
                for (_, w, b) in &mut enc_grads.stages {
                    tensors.push(w.as_mut_slice());
                    tensors.push(b.as_mut_slice());
                }
                let pre: f64 = tensors
                    .iter()
                    .map(|t| t.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                let factor = clip_global_norm(&mut tensors, config.clip_norm)?;
                max_post_clip = max_post_clip.max(pre * factor);
            }

            opt.begin_step();
            opt.update(g_proto, &mut [model.prototypes.data_mut()], &[grads.p.data()])?;
            let mut tau_param = [model.tau];
            opt.update(g_tau, &mut [&mut tau_param], &[&tau_grad])?;
            // Numeric guard: the head needs τ > 0.
            model.tau = tau_param[0].max(1e-6);
            if let (Some(g_enc), EmbeddingSource::Encoder { encoder, .. }) = (g_enc, &mut source) {
                let frozen = encoder.frozen_stages;
                let mut params: Vec<&mut [f64]> = Vec::new();
                let mut grads_flat: Vec<&[f64]> = Vec::new();
                let stages = encoder.stages_mut();
                for (stage, (_, gw, gb)) in stages.into_iter().skip(frozen).zip(&enc_grads.stages) {
                    params.push(stage.w.as_mut_slice());
                    params.push(stage.b.as_mut_slice());
                    grads_flat.push(gw);
                    grads_flat.push(gb);
                }
                opt.update(g_enc, &mut params, &grads_flat)?;
            }
        }

        // Validation pass without augmentation.
        let val_z = match &source {
            EmbeddingSource::Files { .. } => file_val_z.clone().unwrap(),
            EmbeddingSource::Encoder {
                encoder,
                val_patches,
                ..
            } => {
                let mut z = Mat64::zeros(val_patches.len(), d);
                for (i, p) in val_patches.iter().enumerate() {
                    let p = if p.normalized { p.clone() } else { normalize_patch(p) };
                    let e = encoder.forward(&p.tile)?;
                    z.row_mut(i).copy_from_slice(&standardizer.transform_vec(&e)?);
                }
                z
            }
        };
        let val_batch = Batch::new(&val_z, val_labels)?;
        let (val_breakdown, _) = total_loss(&val_batch, &model, anchors, weights, class_weights)?;
        if !val_breakdown.total.is_finite() {
            log.diverged = true;
            break 'epochs;
        }

        let val_total = val_breakdown.total;
        log.epochs.push(EpochLog {
            epoch,
            lr_head: opt.lr(g_proto),
            lr_backbone: g_enc.map(|g| opt.lr(g)).unwrap_or(config.backbone_lr),
            train_total: if batches > 0 {
                train_total_sum / batches as f64
            } else {
                f64::NAN
            },
            val: val_breakdown,
            max_post_clip_norm: max_post_clip,
        });

        let improved_checkpoint = best.as_ref().is_none_or(|b| val_total < b.val_total);
        if improved_checkpoint {
            best = Some(BestCheckpoint {
                model: model.clone(),
                encoder: match &source {
                    EmbeddingSource::Encoder { encoder, .. } => Some((*encoder).clone()),
                    _ => None,
                },
                val_total,
                epoch,
            });
        }

        schedule.plateau_step(val_total, &mut opt)?;

        // Early stopping: strict improvement with the same tolerance.
        if val_total < stop_best - schedule.tol {
            stop_best = val_total;
            stop_since = 0;
        } else {
            stop_since += 1;
            if stop_since >= config.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some(b) = best {
        model = b.model;
        log.best_epoch = b.epoch;
        if let (Some(enc_saved), EmbeddingSource::Encoder { encoder, .. }) = (b.encoder, &mut source)
        {
            **encoder = enc_saved;
        }
    }
    Ok((model, log))
}

/// Single-logit linear head over embeddings; the black-box comparison
/// model at desk scale.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LinearHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearHead {
    pub fn zeros(dim: usize) -> LinearHead {
        LinearHead {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn logit(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(w, z)| w * z).sum::<f64>() + self.b
    }

    pub fn probability(&self, z: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.logit(z)).exp())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LinearHead> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct BaselineLog {
    pub epochs: Vec<(usize, f64, f64)>, // (epoch, lr, val_bce)
    pub best_epoch: usize,
}

/// Trains the baseline head with plain Adam (no weight decay) on
/// standardized embeddings: binary cross-entropy, batch size from the
/// config, plateau schedule, early stopping, best-checkpoint restore.
pub fn fit_baseline_head(
    train: &Mat64,
    train_labels: &[Label],
    val: &Mat64,
    val_labels: &[Label],
    config: &TrainConfig,
) -> Result<(LinearHead, BaselineLog)> {
    config.validate()?;
    if train.rows() != train_labels.len() || val.rows() != val_labels.len() {
        return Err(Error::shape("embedding/label count mismatch"));
    }
    let dim = train.cols();
    let mut head = LinearHead::zeros(dim);
    let mut opt = AdamW::new();
    let group = opt.add_group(config.head_lr, 0.0, &[dim, 1])?;
    let mut schedule = ScheduleState {
        patience: config.plateau_patience,
        factor: config.plateau_factor,
        floor: config.lr_floor,
        ..ScheduleState::default()
    };
    let base_rng = Rng::new(config.seed);
    let mut log = BaselineLog::default();
    let mut best: Option<(LinearHead, f64, usize)> = None;
    let mut stop_since = 0;
    let mut stop_best = f64::INFINITY;

    let bce = |head: &LinearHead, z: &Mat64, labels: &[Label]| -> f64 {
        let mut sum = 0.0;
        for i in 0..z.rows() {
            let p = head.probability(z.row(i)).clamp(1e-12, 1.0 - 1e-12);
            sum -= match labels[i] {
                Label::Defect => p.ln(),
                Label::NonDefect => (1.0 - p).ln(),
            };
        }
        sum / z.rows().max(1) as f64
    };

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train.rows()).collect();
        base_rng.derive(epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for &i in chunk {
                let z = train.row(i);
                let p = head.probability(z);
                let residual = (p - train_labels[i].as_u8() as f64) / chunk.len() as f64;
                for (g, &zv) in gw.iter_mut().zip(z) {
                    *g += residual * zv;
                }
                gb += residual;
            }
            opt.begin_step();
            let mut b_param = [head.b];
            opt.update(group, &mut [&mut head.w, &mut b_param], &[&gw, &[gb]])?;
            head.b = b_param[0];
        }
        let val_bce = bce(&head, val, val_labels);
        log.epochs.push((epoch, opt.lr(group), val_bce));
        if best.as_ref().is_none_or(|(_, b, _)| val_bce < *b) {
            best = Some((head.clone(), val_bce, epoch));
        }
        schedule.plateau_step(val_bce, &mut opt)?;
        if val_bce < stop_best - schedule.tol {
            stop_best = val_bce;
            stop_since = 0;
        } else {
            stop_since += 1;
            if stop_since >= config.early_stop_patience {
                break;
            }
        }
    }
    if let Some((h, _, e)) = best {
        head = h;
        log.best_epoch = e;
    }
    Ok((head, log))
}

/// One supervised warm-up objective: softmax cross-entropy over
/// `n_classes` targets, weighted into the joint warm-up loss.
pub struct WarmUpTask {
    pub targets: Vec<usize>,
    pub val_targets: Vec<usize>,
    pub n_classes: usize,
    pub weight: f64,
}

/// Brief supervised warm-up of the whole encoder plus one scratch
/// softmax head per task; afterwards the first two stages freeze and
/// the scratch heads are discarded. The usual configuration pairs the
/// binary task with an auxiliary semantic-type task so the embedding
/// both separates the classes and keeps type-coherent clusters for the
/// prototype head.
///
/// Per-sample work fans out over `threads` workers on fixed index
/// chunks; gradients are summed in sample order, so the result does not
/// depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn warm_up_encoder(
    encoder: &mut CompactEncoder,
    train_patches: &[Patch],
    val_patches: &[Patch],
    tasks: &[WarmUpTask],
    max_epochs: usize,
    lr: f64,
    batch_size: usize,
    policy: &AugmentationPolicy,
    seed: u64,
    threads: usize,
) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("warm-up needs at least one task"));
    }
    for task in tasks {
        if task.targets.len() != train_patches.len() || task.val_targets.len() != val_patches.len()
        {
            return Err(Error::shape("patch/target count mismatch"));
        }
        if task.n_classes < 2
            || task.targets.iter().any(|&t| t >= task.n_classes)
            || task.val_targets.iter().any(|&t| t >= task.n_classes)
        {
            return Err(Error::invalid("warm-up targets out of range"));
        }
        if task.weight <= 0.0 {
            return Err(Error::invalid("warm-up task weight must be > 0"));
        }
    }
    encoder.set_frozen_stages(0)?;
    let dim = encoder.dim;
    // Scratch softmax heads: per task, W is C×D row-major plus biases.
    let mut head_w: Vec<Vec<f64>> = tasks.iter().map(|t| vec![0.0; t.n_classes * dim]).collect();
    let mut head_b: Vec<Vec<f64>> = tasks.iter().map(|t| vec![0.0; t.n_classes]).collect();

    let mut opt = AdamW::new();
    let mut head_sizes = Vec::new();
    for t in tasks {
        head_sizes.push(t.n_classes * dim);
        head_sizes.push(t.n_classes);
    }
    let g_head = opt.add_group(lr, 0.0, &head_sizes)?;
    let mut enc_sizes = Vec::new();
    for s in 0..crate::encoder::NUM_STAGES {
        enc_sizes.push(encoder.stage(s).w.len());
        enc_sizes.push(encoder.stage(s).b.len());
    }
    let g_enc = opt.add_group(lr, 0.0, &enc_sizes)?;

    // Training control: validation loss drives a plateau
    // scheduler and early stopping; the best checkpoint is restored.
    let mut schedule = ScheduleState::default();
    let mut best: Option<(CompactEncoder, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> = None;
    let mut stop_since = 0usize;
    let mut stop_best = f64::INFINITY;
    const WARMUP_STOP_PATIENCE: usize = 15;

    let val_loss = |encoder: &CompactEncoder, head_w: &[Vec<f64>], head_b: &[Vec<f64>]| -> Result<f64> {
        let per_sample = crate::numerics::parallel_map(val_patches.len(), threads, |i| {
            let p = &val_patches[i];
            let patch = if p.normalized { p.clone() } else { normalize_patch(p) };
            let e = encoder.forward(&patch.tile)?;
            let mut sum = 0.0;
            for (ti, task) in tasks.iter().enumerate() {
                let w = &head_w[ti];
                let b = &head_b[ti];
                let logits: Vec<f64> = (0..task.n_classes)
                    .map(|c| {
                        b[c] + w[c * dim..(c + 1) * dim]
                            .iter()
                            .zip(&e)
                            .map(|(w, x)| w * x)
                            .sum::<f64>()
                    })
                    .collect();
                let lse = crate::numerics::log_sum_exp(&logits)?;
                sum += task.weight * (lse - logits[task.val_targets[i]]);
            }
            Ok::<f64, Error>(sum)
        });
        let mut total = 0.0;
        for r in per_sample {
            total += r?;
        }
        Ok(total / val_patches.len().max(1) as f64)
    };

    let base_rng = Rng::new(seed);
    for epoch in 0..max_epochs {
        let mut order: Vec<usize> = (0..train_patches.len()).collect();
        base_rng.derive(2 * epoch as u64).shuffle(&mut order);
        let augment_base = base_rng.derive(2 * epoch as u64 + 1);
        for chunk in order.chunks(batch_size) {
            struct SampleGrads {
                logit_grads: Vec<Vec<f64>>,
                embedding: Vec<f64>,
                encoder: EncoderGrads,
            }
            let encoder_ref = &*encoder;
            let head_w_ref = &head_w;
            let head_b_ref = &head_b;
            let results = crate::numerics::parallel_map(chunk.len(), threads, |bi| {
                let i = chunk[bi];
                let mut rng = augment_base.derive(i as u64);
                let patch = augment(&train_patches[i], policy, &mut rng)?;
                let patch = if patch.normalized { patch } else { normalize_patch(&patch) };
                let (e, cache) = encoder_ref.forward_cached(&patch.tile)?;
                let mut upstream = vec![0.0; dim];
                let mut logit_grads = Vec::with_capacity(tasks.len());
                for (ti, task) in tasks.iter().enumerate() {
                    let w = &head_w_ref[ti];
                    let b = &head_b_ref[ti];
                    let logits: Vec<f64> = (0..task.n_classes)
                        .map(|c| {
                            b[c] + w[c * dim..(c + 1) * dim]
                                .iter()
                                .zip(&e)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                        })
                        .collect();
                    let p = crate::numerics::softmax(&logits)?;
                    let g: Vec<f64> = (0..task.n_classes)
                        .map(|c| {
                            task.weight * (p[c] - (c == task.targets[i]) as usize as f64)
                                / chunk.len() as f64
                        })
                        .collect();
                    for c in 0..task.n_classes {
                        for (u, &wv) in upstream.iter_mut().zip(&w[c * dim..(c + 1) * dim]) {
                            *u += g[c] * wv;
                        }
                    }
                    logit_grads.push(g);
                }
                Ok::<SampleGrads, Error>(SampleGrads {
                    logit_grads,
                    embedding: e,
                    encoder: encoder_ref.backward(&cache, &upstream)?,
                })
            });

            let mut gw: Vec<Vec<f64>> =
                tasks.iter().map(|t| vec![0.0; t.n_classes * dim]).collect();
            let mut gb: Vec<Vec<f64>> = tasks.iter().map(|t| vec![0.0; t.n_classes]).collect();
            let mut enc_grads = EncoderGrads::default();
            for r in results {
                let r = r?;
                for (ti, task) in tasks.iter().enumerate() {
                    for c in 0..task.n_classes {
                        gb[ti][c] += r.logit_grads[ti][c];
                        for (g, &e) in gw[ti][c * dim..(c + 1) * dim]
                            .iter_mut()
                            .zip(&r.embedding)
                        {
                            *g += r.logit_grads[ti][c] * e;
                        }
                    }
                }
                enc_grads.add_assign(&r.encoder);
            }

            opt.begin_step();
            {
                let mut params: Vec<&mut [f64]> = Vec::new();
                let mut grads_flat: Vec<&[f64]> = Vec::new();
                for ((w, b), (gwv, gbv)) in
                    head_w.iter_mut().zip(head_b.iter_mut()).zip(gw.iter().zip(&gb))
                {
                    params.push(w.as_mut_slice());
                    params.push(b.as_mut_slice());
                    grads_flat.push(gwv);
                    grads_flat.push(gbv);
                }
                opt.update(g_head, &mut params, &grads_flat)?;
            }
            let mut params: Vec<&mut [f64]> = Vec::new();
            let mut grads_flat: Vec<&[f64]> = Vec::new();
            for (stage, (_, gwv, gbv)) in encoder.stages_mut().into_iter().zip(&enc_grads.stages) {
                params.push(stage.w.as_mut_slice());
                params.push(stage.b.as_mut_slice());
                grads_flat.push(gwv);
                grads_flat.push(gbv);
            }
            opt.update(g_enc, &mut params, &grads_flat)?;
        }

        let vl = val_loss(encoder, &head_w, &head_b)?;
        if !vl.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(_, _, _, b)| vl < *b) {
            best = Some((encoder.clone(), head_w.clone(), head_b.clone(), vl));
        }
        schedule.plateau_step(vl, &mut opt)?;
        if vl < stop_best - schedule.tol {
            stop_best = vl;
            stop_since = 0;
        } else {
            stop_since += 1;
            if stop_since >= WARMUP_STOP_PATIENCE {
                break;
            }
        }
        let _ = epoch;
    }
    if let Some((enc_best, _, _, _)) = best {
        *encoder = enc_best;
    }
    encoder.set_frozen_stages(2)?;
    Ok(())
}
