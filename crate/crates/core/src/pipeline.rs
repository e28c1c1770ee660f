//! End-to-end orchestration shared by the CLI and the acceptance suite:
//! synthetic dataset construction, encoder warm-up, embedding,
//! anchor scripting, prototype training, calibration, and evaluation.
//!
//! Seed threading is fixed: every stage derives its stream from the
//! global seed with a documented index (volume 0, sampling 1,
//! rebalance 2, split 3, encoder init 10, warm-up 11, anchors 12,
//! bootstrap 20).

use std::path::Path;

use crate::config::RunConfig;
use crate::data::{
    auto_label_low_intensity, generate_synthetic_volume, median_matrix_intensity, normalize_patch,
    rebalance, sample_patches, split, GroundTruth, Label, Patch, PatchSet, Split, Volume,
};
use crate::encoder::{fit_standardizer, CompactEncoder, EmbeddingBatch, Standardizer};
use crate::eval::{
    evaluate_scored, fit_temperature, select_threshold, EvalReport, ScoredRecord, ScoredSet,
};
use crate::head::{
    class_logits, distances, prototype_logits, Anchor, AnchorSet, PrototypeModel, SemanticType,
    ANCHORS_PER_TYPE, EDGE_ANCHORS_PER_DEFECT_TYPE,
};

use crate::maps::ProjectionRow;
use crate::numerics::{Mat64, Rng};
use crate::train::{fit_prototype_model, EmbeddingSource, TrainConfig, TrainingLog};
use crate::{Error, Result};

/// A labeled, rebalanced, split synthetic dataset with its provenance.
pub struct SynthDataset {
    pub volume: Volume,
    pub truth: GroundTruth,
    pub set: PatchSet,
    pub median_matrix: f64,
}

/// Generates a volume, samples patches with the intensity bias,
/// auto-labels the dark subset, labels the remainder from the
/// ground-truth mask (the synthetic stand-in for expert annotation),
/// rebalances to the target ratio, and assigns stratified splits.
pub fn synth_dataset(config: &RunConfig) -> Result<SynthDataset> {
    let base = Rng::new(config.seed);
    let spec = config.synth_spec();
    let (volume, truth) = generate_synthetic_volume(&spec, &mut base.derive(0))?;
    let sampled = sample_patches(&volume, config.sample_count, &mut base.derive(1))?;
    let median = median_matrix_intensity(&volume);

    let (auto, rest) = auto_label_low_intensity(sampled);
    // The mask stands in for the expert annotators; windows in the
    // ambiguous overlap band go to the manual pool and are dropped.
    // Auto-labeled dark windows get the same screening: a mostly-air
    // window can still straddle the boundary and catch a defect sliver,
    // and keeping it as class 0 would poison labels and anchors.
    let mut labeled = Vec::new();
    for mut p in auto {
        let t = truth.window_truth(p.provenance.slice as usize, p.provenance.row as usize, p.provenance.col as usize);
        if let Some((Label::NonDefect, semantic)) = t.curated_label() {
            p.semantic_type = Some(semantic);
            labeled.push(p);
        }
    }
    for mut p in rest {
        let t = truth.window_truth(p.provenance.slice as usize, p.provenance.row as usize, p.provenance.col as usize);
        if let Some((label, semantic)) = t.curated_label() {
            p.label = Some(label);
            p.semantic_type = Some(semantic);
            labeled.push(p);
        }
    }

    let set = PatchSet::from_labeled_patches(labeled, config.seed)?;
    let mut set = rebalance(&set, config.rebalance_ratio, median, &mut base.derive(2))?;
    split(
        &mut set,
        (config.split_train, config.split_val, config.split_test),
        &mut base.derive(3),
    )?;
    Ok(SynthDataset {
        volume,
        truth,
        set,
        median_matrix: median,
    })
}

/// Writes volume, manifest, and one patch store per split.
pub fn save_dataset(dir: &Path, ds: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    ds.volume.save(&dir.join("volume.raw"))?;
    ds.set.manifest.save_csv(&dir.join("manifest.csv"))?;
    for s in Split::ALL {
        let tiles: Vec<&[f32]> = ds
            .set
            .manifest
            .indices_of(s)
            .into_iter()
            .map(|i| ds.set.patches[i].tile.as_slice())
            .collect();
        crate::data::save_patch_store(&dir.join(format!("{s}.ppat")), &tiles)?;
    }
    Ok(())
}

/// Reloads manifest plus patch stores into an index-aligned set.
pub fn load_dataset(dir: &Path) -> Result<PatchSet> {
    let manifest = crate::data::DatasetManifest::load_csv(&dir.join("manifest.csv"))?;
    let mut tiles_by_index: Vec<Option<Vec<f32>>> = vec![None; manifest.records.len()];
    for s in Split::ALL {
        let tiles = crate::data::load_patch_store(&dir.join(format!("{s}.ppat")))?;
        let idx = manifest.indices_of(s);
        if tiles.len() != idx.len() {
            return Err(Error::format(format!(
                "patch store {s}.ppat holds {} tiles but manifest lists {}",
                tiles.len(),
                idx.len()
            )));
        }
        for (i, tile) in idx.into_iter().zip(tiles) {
            tiles_by_index[i] = Some(tile);
        }
    }
    let mut patches = Vec::with_capacity(manifest.records.len());
    for (r, tile) in manifest.records.iter().zip(tiles_by_index) {
        let tile = tile.ok_or_else(|| {
            Error::format(format!("record {} has no split assignment", r.id))
        })?;
        patches.push(Patch {
            tile,
            provenance: crate::data::Provenance {
                volume: r.volume.clone(),
                slice: r.slice,
                row: r.row,
                col: r.col,
            },
            label: Some(r.label),
            semantic_type: r.semantic_type,
            normalized: false,
        });
    }
    Ok(PatchSet {
        manifest,
        patches,
    })
}

/// Raw (unstandardized) embeddings for every record, in manifest order.
/// Forward passes fan out over `threads` read-only workers; the result
/// does not depend on the thread count.
pub fn embed_dataset(
    encoder: &CompactEncoder,
    set: &PatchSet,
    threads: usize,
) -> Result<EmbeddingBatch> {
    let rows = crate::numerics::parallel_map(set.len(), threads, |i| {
        let p = &set.patches[i];
        let normalized = if p.normalized { p.clone() } else { normalize_patch(p) };
        encoder.forward(&normalized.tile)
    });
    let mut data = Mat64::zeros(set.len(), encoder.dim);
    for (i, row) in rows.into_iter().enumerate() {
        data.row_mut(i).copy_from_slice(&row?);
    }
    EmbeddingBatch::new(set.manifest.records.iter().map(|r| r.id).collect(), data)
}

/// Rows of `all` belonging to one split, with labels.
pub fn split_batch(
    set: &PatchSet,
    all: &EmbeddingBatch,
    s: Split,
) -> Result<(EmbeddingBatch, Vec<Label>)> {
    let idx = set.manifest.indices_of(s);
    let mut data = Mat64::zeros(idx.len(), all.dim());
    let mut ids = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        data.row_mut(row).copy_from_slice(all.data.row(i));
        ids.push(all.ids[i]);
        labels.push(set.manifest.records[i].label);
    }
    Ok((EmbeddingBatch::new(ids, data)?, labels))
}

/// Whether a raw tile straddles an air/matrix interface: a substantial
/// air-dark population (below the auto-label bound, so pore/line levels
/// do not qualify) next to a substantial bright population.
pub fn tile_has_edge(tile: &[f32]) -> bool {
    let n = tile.len() as f64;
    let air_bound = crate::data::AUTO_LABEL_MEAN as f32;
    let dark = tile.iter().filter(|&&v| v < air_bound).count() as f64 / n;
    let bright = tile.iter().filter(|&&v| v > 0.30).count() as f64 / n;
    dark > 0.05 && bright > 0.08
}

/// Scripted anchor curation for synthetic runs: per semantic type, six
/// training patches chosen (seeded) from the records tagged with that
/// type; defect types take three edge and three internal anchors.
pub fn script_anchors(
    set: &PatchSet,
    standardized_all: &Mat64,
    rng: &mut Rng,
) -> Result<AnchorSet> {
    let train_idx = set.manifest.indices_of(Split::Train);
    let mut per_type = Vec::with_capacity(SemanticType::ALL.len());
    for t in SemanticType::ALL {
        let mut pool: Vec<usize> = train_idx
            .iter()
            .copied()
            .filter(|&i| set.manifest.records[i].semantic_type == Some(t))
            .collect();
        let pick = |idx: &usize| Anchor {
            record_id: set.manifest.records[*idx].id,
            embedding: standardized_all.row(*idx).to_vec(),
            edge: tile_has_edge(&set.patches[*idx].tile),
        };
        let anchors: Vec<Anchor> = if t.class() == Label::Defect {
            let mut edge_pool: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&i| tile_has_edge(&set.patches[i].tile))
                .collect();
            let mut internal_pool: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|&i| !tile_has_edge(&set.patches[i].tile))
                .collect();
            if edge_pool.len() < EDGE_ANCHORS_PER_DEFECT_TYPE
                || internal_pool.len() < ANCHORS_PER_TYPE - EDGE_ANCHORS_PER_DEFECT_TYPE
            {
                return Err(Error::invalid(format!(
                    "type {t}: need {EDGE_ANCHORS_PER_DEFECT_TYPE} edge + {} internal training patches, found {} + {}",
                    ANCHORS_PER_TYPE - EDGE_ANCHORS_PER_DEFECT_TYPE,
                    edge_pool.len(),
                    internal_pool.len()
                )));
            }
            rng.shuffle(&mut edge_pool);
            rng.shuffle(&mut internal_pool);
            edge_pool
                .iter()
                .take(EDGE_ANCHORS_PER_DEFECT_TYPE)
                .chain(internal_pool.iter().take(ANCHORS_PER_TYPE - EDGE_ANCHORS_PER_DEFECT_TYPE))
                .map(pick)
                .collect()
        } else {
            if pool.len() < ANCHORS_PER_TYPE {
                return Err(Error::invalid(format!(
                    "type {t}: need {ANCHORS_PER_TYPE} training patches, found {}",
                    pool.len()
                )));
            }
            rng.shuffle(&mut pool);
            pool.iter().take(ANCHORS_PER_TYPE).map(pick).collect()
        };
        per_type.push(anchors);
    }
    AnchorSet::new(per_type)
}

/// Everything the training stage produces.
pub struct TrainedArtifacts {
    pub encoder: CompactEncoder,
    pub standardizer: Standardizer,
    pub anchors: AnchorSet,
    pub model: PrototypeModel,
    pub log: TrainingLog,
    pub embeddings: EmbeddingBatch,
}

/// Descriptor embeddings for every record, in manifest order.
pub fn embed_descriptors(set: &PatchSet, threads: usize) -> Result<EmbeddingBatch> {
    crate::encoder::descriptor::descriptor_batch(
        &set.patches,
        set.manifest.records.iter().map(|r| r.id).collect(),
        threads,
    )
}

/// The full synthetic training pipeline. In "encoder" mode a compact
/// CNN is warmed up on the training split (binary task plus an
/// auxiliary semantic-type task when tags exist) and then frozen up to
/// its last stage; in "descriptor" mode the deterministic statistical
/// embedding stands in for a backbone. Either way: one-time embedding,
/// standardizer fit on training embeddings, scripted anchors, prototype
/// training, and optional joint fine-tuning of the encoder suffix.
pub fn train_pipeline(config: &RunConfig, set: &PatchSet) -> Result<TrainedArtifacts> {
    let base = Rng::new(config.seed);
    let train_idx = set.manifest.indices_of(Split::Train);
    let train_patches: Vec<Patch> = train_idx.iter().map(|&i| set.patches[i].clone()).collect();

    let descriptor_mode = config.embedding_mode == "descriptor";
    let mut encoder = CompactEncoder::new(config.embedding_dim, &mut base.derive(10))?;
    if !descriptor_mode {
        // The warm-up always trains the binary task; when every record
        // carries a semantic tag, an auxiliary six-way task shapes
        // type-coherent clusters that the prototype head inherits.
        let val_idx = set.manifest.indices_of(Split::Val);
        let val_patches: Vec<Patch> = val_idx.iter().map(|&i| set.patches[i].clone()).collect();
        let binary = |idx: &[usize]| -> Vec<usize> {
            idx.iter()
                .map(|&i| set.manifest.records[i].label.as_u8() as usize)
                .collect()
        };
        let mut tasks = vec![crate::train::WarmUpTask {
            targets: binary(&train_idx),
            val_targets: binary(&val_idx),
            n_classes: 2,
            weight: 1.0,
        }];
        let types_of = |idx: &[usize]| -> Option<Vec<usize>> {
            idx.iter()
                .map(|&i| set.manifest.records[i].semantic_type.map(|t| t.index()))
                .collect()
        };
        if let (Some(targets), Some(val_targets)) = (types_of(&train_idx), types_of(&val_idx)) {
            tasks.push(crate::train::WarmUpTask {
                targets,
                val_targets,
                n_classes: crate::head::NUM_TYPES,
                weight: 0.5,
            });
        }
        crate::train::warm_up_encoder(
            &mut encoder,
            &train_patches,
            &val_patches,
            &tasks,
            config.warmup_epochs,
            config.warmup_lr,
            config.warmup_batch,
            &config.augmentation(),
            base.derive(11).seed(),
            config.threads,
        )?;
    }

    let embeddings = if descriptor_mode {
        embed_descriptors(set, config.threads)?
    } else {
        embed_dataset(&encoder, set, config.threads)?
    };
    let (train_batch, train_labels) = split_batch(set, &embeddings, Split::Train)?;
    let (val_batch, val_labels) = split_batch(set, &embeddings, Split::Val)?;
    let standardizer = fit_standardizer(&train_batch)?;

    let mut standardized_all = Mat64::zeros(embeddings.len(), embeddings.dim());
    for i in 0..embeddings.len() {
        standardized_all
            .row_mut(i)
            .copy_from_slice(&standardizer.transform_vec(embeddings.data.row(i))?);
    }
    let anchors = script_anchors(set, &standardized_all, &mut base.derive(12))?;

    let weights = config.loss_weights();
    let train_config = TrainConfig {
        seed: config.seed,
        threads: config.threads,
        ..config.train_config()
    };
    let (model, log) = if config.encoder_finetune && !descriptor_mode {
        // Joint optimization of the head and the encoder's trainable
        // suffix, with online augmentation on training patches.
        let val_idx = set.manifest.indices_of(Split::Val);
        let val_patches: Vec<Patch> = val_idx.iter().map(|&i| set.patches[i].clone()).collect();
        fit_prototype_model(
            EmbeddingSource::Encoder {
                encoder: &mut encoder,
                train_patches: &train_patches,
                val_patches: &val_patches,
                augment: config.augmentation(),
            },
            &train_labels,
            &val_labels,
            &standardizer,
            &anchors,
            &weights,
            &train_config,
        )?
    } else {
        fit_prototype_model(
            EmbeddingSource::Files {
                train: &train_batch,
                val: &val_batch,
            },
            &train_labels,
            &val_labels,
            &standardizer,
            &anchors,
            &weights,
            &train_config,
        )?
    };

    // Downstream artifacts use embeddings from the final encoder.
    let embeddings = if config.encoder_finetune && !descriptor_mode {
        embed_dataset(&encoder, set, config.threads)?
    } else {
        embeddings
    };

    Ok(TrainedArtifacts {
        encoder,
        standardizer,
        anchors,
        model,
        log,
        embeddings,
    })
}

/// Uncalibrated defect logit of one raw embedding.
pub fn defect_logit(
    model: &PrototypeModel,
    standardizer: &Standardizer,
    raw_embedding: &[f64],
) -> Result<f64> {
    let z = standardizer.transform_vec(raw_embedding)?;
    let d = distances(&z, &model.prototypes)?;
    let l = prototype_logits(&d, model.tau)?;
    let (non, def) = class_logits(&l, &model.semantic_map)?;
    Ok(def - non)
}

fn batch_logits(
    model: &PrototypeModel,
    standardizer: &Standardizer,
    batch: &EmbeddingBatch,
) -> Result<Vec<f64>> {
    (0..batch.len())
        .map(|i| defect_logit(model, standardizer, batch.data.row(i)))
        .collect()
}

/// Calibrated scores for one split.
pub fn score_split(
    model: &PrototypeModel,
    standardizer: &Standardizer,
    batch: &EmbeddingBatch,
    labels: &[Label],
) -> Result<ScoredSet> {
    let logits = batch_logits(model, standardizer, batch)?;
    let records = logits
        .iter()
        .zip(batch.ids.iter().zip(labels))
        .map(|(&l, (&id, &label))| ScoredRecord {
            id,
            label,
            score: 1.0 / (1.0 + (-l / model.calibration_temperature).exp()),
        })
        .collect();
    ScoredSet::new(records, model.calibration_temperature != 1.0)
}

/// Fits the post-hoc temperature on validation logits and stores it in
/// the model, then selects the F1-maximizing threshold on the calibrated
/// validation scores.
pub fn calibrate_and_select_threshold(
    model: &mut PrototypeModel,
    standardizer: &Standardizer,
    val: &EmbeddingBatch,
    val_labels: &[Label],
) -> Result<(f64, f64)> {
    let logits = batch_logits(model, standardizer, val)?;
    let temperature = fit_temperature(&logits, val_labels)?;
    model.calibration_temperature = temperature;
    let scored = score_split(model, standardizer, val, val_labels)?;
    let threshold = select_threshold(&scored)?;
    Ok((temperature, threshold))
}

/// Evaluates calibrated test scores at threshold `t` with bootstrap
/// intervals (stream derived from the global seed, index 20).
pub fn evaluate_test(
    model: &PrototypeModel,
    standardizer: &Standardizer,
    test: &EmbeddingBatch,
    test_labels: &[Label],
    threshold: f64,
    config: &RunConfig,
) -> Result<EvalReport> {
    let scored = score_split(model, standardizer, test, test_labels)?;
    evaluate_scored(
        &scored,
        threshold,
        model.calibration_temperature,
        config.ece_bins,
        config.bootstrap_replicates,
        &Rng::new(config.seed).derive(20),
    )
}

/// Attribution index and FP/FN flag per record for the projection
/// bundle.
pub fn projection_rows(
    model: &PrototypeModel,
    set: &PatchSet,
    standardized_all: &Mat64,
    threshold: f64,
) -> Result<Vec<ProjectionRow>> {
    let mut rows = Vec::with_capacity(set.len());
    for (i, r) in set.manifest.records.iter().enumerate() {
        let p = crate::head::predict(standardized_all.row(i), model, threshold)?;
        let split = r
            .split
            .ok_or_else(|| Error::invalid(format!("record {} has no split", r.id)))?;
        let flag = if split == Split::Test {
            match (r.label, p.label) {
                (Label::NonDefect, Label::Defect) => "fp",
                (Label::Defect, Label::NonDefect) => "fn",
                _ => "",
            }
        } else {
            ""
        };
        rows.push(ProjectionRow {
            id: r.id,
            label: r.label,
            split,
            proto_index: p.attributed_type.index(),
            flag,
        });
    }
    Ok(rows)
}

/// Standardizes every row of `batch` with `standardizer`.
pub fn standardize_all(standardizer: &Standardizer, batch: &EmbeddingBatch) -> Result<Mat64> {
    let mut out = Mat64::zeros(batch.len(), batch.dim());
    for i in 0..batch.len() {
        out.row_mut(i)
            .copy_from_slice(&standardizer.transform_vec(batch.data.row(i))?);
    }
    Ok(out)
}
