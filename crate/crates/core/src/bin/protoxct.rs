//! Command-line surface wiring the pipeline end to end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/configuration
//! error. All randomness flows from `--seed` through the documented
//! per-stage stream derivation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use protoxct::config::RunConfig;
use protoxct::data::{DatasetManifest, Label, Split, Volume};
use protoxct::encoder::{
    fit_standardizer, load_companion, load_embeddings, save_companion, save_embeddings,
    CompactEncoder, EmbeddingBatch, Standardizer,
};
use protoxct::eval::{evaluate_scored, ScoredSet};
use protoxct::head::{init_prototypes, Anchor, AnchorSet, PrototypeModel, SemanticType};
use protoxct::maps::{aggregate_majority, nearest_anchors, predict_map, save_pgm};
use protoxct::numerics::Rng;
use protoxct::pipeline;
use protoxct::{Error, Result};

#[derive(Parser)]
#[command(
    name = "protoxct",
    version,
    about = "Prototype-based interpretable defect classification for tomographic patches"
)]
struct Cli {
    /// Flat `key = value` configuration file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; every stage derives its stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker cap for the parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Ad-hoc config override, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic volume, sample/label/rebalance/split patches.
    SynthData {
        /// Scale factor on all defect densities (0 disables defects).
        #[arg(long)]
        defect_density: Option<f64>,
    },
    /// Fit the standardizer and initialize prototypes from anchors.
    InitProtos {
        /// Dataset directory produced by synth-data.
        #[arg(long)]
        data: PathBuf,
        /// Precomputed raw embeddings (PEMB) aligned with the manifest.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Encoder checkpoint used to compute embeddings instead.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Anchor list `record_id,semantic_type,edge`; scripted from the
        /// manifest's semantic tags when omitted.
        #[arg(long)]
        anchors: Option<PathBuf>,
    },
    /// Warm up the encoder, embed, script anchors, fit the prototype head.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Skip the encoder: train file-backed on these raw embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Also fit the baseline linear head for comparison.
        #[arg(long)]
        baseline: bool,
    },
    /// Fit the temperature and operating threshold on the validation split.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        standardizer: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Full evaluation: calibrate on validation, metrics on test.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        standardizer: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Evaluate a pre-scored CSV fixture (`id,label,score`) instead.
        #[arg(long)]
        scored: Option<PathBuf>,
        /// Operating threshold (required with --scored).
        #[arg(long)]
        threshold: Option<f64>,
        /// Calibration temperature to report with --scored.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Patch-wise defect/attribution map over one slice.
    PredictMap {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, default_value_t = 0)]
        slice: usize,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        standardizer: PathBuf,
        /// Encoder checkpoint; omit with --descriptor models.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Exact top-k training records nearest to each prototype.
    NearestAnchors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        standardizer: PathBuf,
        /// Raw embeddings with a companion CSV carrying splits.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Standardized embeddings + attribution + FP/FN flags for projection.
    ExportEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        standardizer: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        threshold: f64,
    },
    /// Run the fixture/property suite (TAP output + JSON summary).
    Verify {
        #[arg(long, default_value = "")]
        filter: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Usage and configuration problems exit 2; runtime failures
        // (including violated preconditions on otherwise valid runs)
        // exit 1.
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    for pair in &cli.overrides {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads.max(1);
    }
    Ok(config)
}

fn prepare_out(out: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    config.save(&out.join("config.txt"))
}

/// Loads raw embeddings for a dataset: from file, by running an encoder
/// checkpoint, or (in descriptor mode) by computing the deterministic
/// descriptors. Record alignment is validated.
fn obtain_embeddings(
    set: &protoxct::data::PatchSet,
    embeddings: &Option<PathBuf>,
    encoder: &Option<PathBuf>,
    config: &RunConfig,
) -> Result<(EmbeddingBatch, Option<CompactEncoder>)> {
    match (embeddings, encoder) {
        (Some(path), _) => {
            let batch = load_embeddings(path)?;
            if batch.len() != set.len() {
                return Err(Error::invalid(format!(
                    "embedding file holds {} rows but the manifest has {} records",
                    batch.len(),
                    set.len()
                )));
            }
            Ok((batch, None))
        }
        (None, Some(path)) => {
            let enc = CompactEncoder::load(path)?;
            let batch = pipeline::embed_dataset(&enc, set, config.threads)?;
            Ok((batch, Some(enc)))
        }
        (None, None) if config.embedding_mode == "descriptor" => {
            Ok((pipeline::embed_descriptors(set, config.threads)?, None))
        }
        (None, None) => Err(Error::Config(
            "provide --embeddings or --encoder, or set embedding_mode = descriptor".into(),
        )),
    }
}

fn load_anchor_csv(
    path: &Path,
    manifest: &DatasetManifest,
    standardized_all: &protoxct::numerics::Mat64,
) -> Result<AnchorSet> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("anchors: empty file"))?;
    if header != "record_id,semantic_type,edge" {
        return Err(Error::format(format!("anchors: unexpected header {header:?}")));
    }
    let index_of: std::collections::BTreeMap<u32, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id, i))
        .collect();
    let mut per_type: Vec<Vec<Anchor>> = vec![Vec::new(); SemanticType::ALL.len()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::format(format!(
                "anchors line {}: expected 3 fields",
                lineno + 2
            )));
        }
        let id: u32 = parts[0]
            .parse()
            .map_err(|_| Error::format(format!("anchors line {}: bad record id", lineno + 2)))?;
        let t = SemanticType::parse(parts[1])?;
        let edge = parts[2] == "1" || parts[2] == "true";
        let &idx = index_of
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("anchor record {id} not in manifest")))?;
        if manifest.records[idx].split != Some(Split::Train) {
            return Err(Error::invalid(format!(
                "anchor record {id} is not in the training split"
            )));
        }
        per_type[t.index()].push(Anchor {
            record_id: id,
            embedding: standardized_all.row(idx).to_vec(),
            edge,
        });
    }
    AnchorSet::new(per_type)
}

fn save_anchor_csv(path: &Path, anchors: &AnchorSet) -> Result<()> {
    use std::io::Write;
    let mut w = protoxct::io::open_writer(path)?;
    writeln!(w, "record_id,semantic_type,edge")?;
    for t in SemanticType::ALL {
        for a in anchors.of_type(t) {
            writeln!(w, "{},{},{}", a.record_id, t.as_str(), a.edge as u8)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::SynthData { defect_density } => {
            let mut config = config;
            if let Some(f) = defect_density {
                if f < 0.0 {
                    return Err(Error::Config("defect density factor must be >= 0".into()));
                }
                config.pores_per_slice *= f;
                config.lines_per_slice *= f;
                config.mixed_per_slice *= f;
            }
            prepare_out(&out, &config)?;
            let ds = pipeline::synth_dataset(&config)?;
            pipeline::save_dataset(&out, &ds)?;
            for s in Split::ALL {
                let (non, def) = ds.set.manifest.split_class_counts(s);
                println!("{s}: {non} non-defect, {def} defect");
            }
            if let Some(r) = ds.set.manifest.achieved_ratio {
                println!("achieved non-defect:defect ratio {r:.3}");
            }
            Ok(())
        }

        Command::InitProtos {
            data,
            embeddings,
            encoder,
            anchors,
        } => {
            prepare_out(&out, &config)?;
            let set = pipeline::load_dataset(&data)?;
            let (batch, _) = obtain_embeddings(&set, &embeddings, &encoder, &config)?;
            let (train_batch, _) = pipeline::split_batch(&set, &batch, Split::Train)?;
            let standardizer = fit_standardizer(&train_batch)?;
            let standardized = pipeline::standardize_all(&standardizer, &batch)?;
            let anchor_set = match anchors {
                Some(path) => load_anchor_csv(&path, &set.manifest, &standardized)?,
                None => pipeline::script_anchors(&set, &standardized, &mut Rng::new(config.seed).derive(12))?,
            };
            let mut model = init_prototypes(&anchor_set, 1.0)?;
            model.standardizer_ref = Some("standardizer.pstd".into());
            standardizer.save(&out.join("standardizer.pstd"))?;
            model.save(&out.join("model.pmdl"))?;
            save_anchor_csv(&out.join("anchors.csv"), &anchor_set)?;
            println!(
                "initialized {} prototypes in {} dims from medoids",
                model.k(),
                model.dim()
            );
            Ok(())
        }

        Command::Train {
            data,
            embeddings,
            anchors,
            baseline,
        } => {
            prepare_out(&out, &config)?;
            let set = pipeline::load_dataset(&data)?;
            let artifacts = match &embeddings {
                None => pipeline::train_pipeline(&config, &set)?,
                Some(path) => {
                    // File-backed: no encoder, head-only optimization.
                    let batch = load_embeddings(path)?;
                    if batch.len() != set.len() {
                        return Err(Error::invalid(
                            "embedding row count differs from manifest".to_string(),
                        ));
                    }
                    let (train_batch, train_labels) =
                        pipeline::split_batch(&set, &batch, Split::Train)?;
                    let (val_batch, val_labels) = pipeline::split_batch(&set, &batch, Split::Val)?;
                    let standardizer = fit_standardizer(&train_batch)?;
                    let standardized = pipeline::standardize_all(&standardizer, &batch)?;
                    let anchor_set = match &anchors {
                        Some(path) => load_anchor_csv(path, &set.manifest, &standardized)?,
                        None => pipeline::script_anchors(
                            &set,
                            &standardized,
                            &mut Rng::new(config.seed).derive(12),
                        )?,
                    };
                    let (model, log) = protoxct::train::fit_prototype_model(
                        protoxct::train::EmbeddingSource::Files {
                            train: &train_batch,
                            val: &val_batch,
                        },
                        &train_labels,
                        &val_labels,
                        &standardizer,
                        &anchor_set,
                        &config.loss_weights(),
                        &config.train_config(),
                    )?;
                    pipeline::TrainedArtifacts {
                        encoder: CompactEncoder::new(config.embedding_dim.max(8), &mut Rng::new(0))?,
                        standardizer,
                        anchors: anchor_set,
                        model,
                        log,
                        embeddings: batch,
                    }
                }
            };
            if artifacts.log.diverged {
                artifacts.log.save_csv(&out.join("train_log.csv"))?;
                return Err(Error::NonFinite(
                    "training loss diverged; last finite checkpoint kept in train_log.csv".into(),
                ));
            }
            let mut model = artifacts.model;
            model.standardizer_ref = Some("standardizer.pstd".into());
            model.save(&out.join("model.pmdl"))?;
            artifacts.standardizer.save(&out.join("standardizer.pstd"))?;
            if embeddings.is_none() && config.embedding_mode == "encoder" {
                artifacts.encoder.save(&out.join("encoder.penc"))?;
            }
            artifacts.log.save_csv(&out.join("train_log.csv"))?;
            save_anchor_csv(&out.join("anchors.csv"), &artifacts.anchors)?;
            save_embeddings(&out.join("embeddings.pemb"), &artifacts.embeddings)?;
            let rows: Vec<(u32, Label, Split)> = set
                .manifest
                .records
                .iter()
                .map(|r| (r.id, r.label, r.split.expect("split assigned")))
                .collect();
            save_companion(&out.join("embeddings.csv"), &rows)?;
            if baseline {
                let (train_batch, train_labels) =
                    pipeline::split_batch(&set, &artifacts.embeddings, Split::Train)?;
                let (val_batch, val_labels) =
                    pipeline::split_batch(&set, &artifacts.embeddings, Split::Val)?;
                let train_z = pipeline::standardize_all(&artifacts.standardizer, &train_batch)?;
                let val_z = pipeline::standardize_all(&artifacts.standardizer, &val_batch)?;
                let baseline_config = protoxct::train::TrainConfig {
                    head_lr: config.baseline_lr,
                    ..config.train_config()
                };
                let (head, _) = protoxct::train::fit_baseline_head(
                    &train_z,
                    &train_labels,
                    &val_z,
                    &val_labels,
                    &baseline_config,
                )?;
                head.save(&out.join("baseline.json"))?;
            }
            println!(
                "trained {} epochs (best {}), min val loss {:.6}",
                artifacts.log.epochs.len(),
                artifacts.log.best_epoch,
                artifacts.log.min_val_total().unwrap_or(f64::NAN)
            );
            Ok(())
        }

        Command::Calibrate {
            data,
            model,
            standardizer,
            embeddings,
            encoder,
        } => {
            prepare_out(&out, &config)?;
            let set = pipeline::load_dataset(&data)?;
            let mut model = PrototypeModel::load(&model)?;
            let standardizer = Standardizer::load(&standardizer)?;
            let (batch, _) = obtain_embeddings(&set, &embeddings, &encoder, &config)?;
            let (val_batch, val_labels) = pipeline::split_batch(&set, &batch, Split::Val)?;
            let (temperature, threshold) = pipeline::calibrate_and_select_threshold(
                &mut model,
                &standardizer,
                &val_batch,
                &val_labels,
            )?;
            model.save(&out.join("model_calibrated.pmdl"))?;
            std::fs::write(
                out.join("calibration.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "temperature": temperature,
                    "threshold": threshold,
                }))?,
            )?;
            println!("temperature {temperature:.4}, threshold {threshold:.4}");
            Ok(())
        }

        Command::Eval {
            data,
            model,
            standardizer,
            embeddings,
            encoder,
            scored,
            threshold,
            temperature,
        } => {
            prepare_out(&out, &config)?;
            let rng = Rng::new(config.seed).derive(20);
            let report = match scored {
                Some(path) => {
                    let scored = ScoredSet::load_csv(&path)?;
                    let t = threshold.ok_or_else(|| {
                        Error::Config("--scored evaluation requires --threshold".into())
                    })?;
                    evaluate_scored(
                        &scored,
                        t,
                        temperature.unwrap_or(1.0),
                        config.ece_bins,
                        config.bootstrap_replicates,
                        &rng,
                    )?
                }
                None => {
                    let data = data.ok_or_else(|| Error::Config("eval requires --data".into()))?;
                    let model_path =
                        model.ok_or_else(|| Error::Config("eval requires --model".into()))?;
                    let std_path = standardizer
                        .ok_or_else(|| Error::Config("eval requires --standardizer".into()))?;
                    let set = pipeline::load_dataset(&data)?;
                    let mut model = PrototypeModel::load(&model_path)?;
                    let standardizer = Standardizer::load(&std_path)?;
                    let (batch, _) =
                        obtain_embeddings(&set, &embeddings, &encoder, &config)?;
                    let (val_batch, val_labels) =
                        pipeline::split_batch(&set, &batch, Split::Val)?;
                    let (test_batch, test_labels) =
                        pipeline::split_batch(&set, &batch, Split::Test)?;
                    let (_, t) = pipeline::calibrate_and_select_threshold(
                        &mut model,
                        &standardizer,
                        &val_batch,
                        &val_labels,
                    )?;
                    let t = threshold.unwrap_or(t);
                    let val_scored =
                        pipeline::score_split(&model, &standardizer, &val_batch, &val_labels)?;
                    val_scored.save_csv(&out.join("val_scored.csv"))?;
                    let test_scored =
                        pipeline::score_split(&model, &standardizer, &test_batch, &test_labels)?;
                    test_scored.save_csv(&out.join("test_scored.csv"))?;
                    model.save(&out.join("model_calibrated.pmdl"))?;
                    pipeline::evaluate_test(&model, &standardizer, &test_batch, &test_labels, t, &config)?
                }
            };
            report.save_json(&out.join("eval_report.json"))?;
            print!("{}", report.to_table());
            Ok(())
        }

        Command::PredictMap {
            volume,
            slice,
            model,
            standardizer,
            encoder,
            threshold,
            stride,
        } => {
            prepare_out(&out, &config)?;
            let volume = Volume::load(&volume)?;
            let model = PrototypeModel::load(&model)?;
            let standardizer = Standardizer::load(&standardizer)?;
            let encoder = encoder.map(|p| CompactEncoder::load(&p)).transpose()?;
            let embedder = match &encoder {
                Some(enc) => protoxct::encoder::Embedder::Network(enc),
                None => protoxct::encoder::Embedder::Descriptor,
            };
            if embedder.dim() != model.dim() {
                return Err(Error::invalid(format!(
                    "embedder dim {} differs from model dim {}",
                    embedder.dim(),
                    model.dim()
                )));
            }
            let stride = stride.unwrap_or(config.map_stride);
            let map = predict_map(
                &volume,
                slice,
                &model,
                &embedder,
                &standardizer,
                stride,
                threshold,
                config.threads,
            )?;
            map.save(&out.join("map.csv"))?;
            let pixel = aggregate_majority(&map)?;
            save_pgm(&out.join("map.pgm"), &pixel)?;
            let defects = map
                .records
                .iter()
                .filter(|r| r.label == Label::Defect)
                .count();
            println!(
                "{} windows, {} defect, {} uncovered pixels",
                map.records.len(),
                defects,
                pixel.uncovered
            );
            Ok(())
        }

        Command::NearestAnchors {
            model,
            standardizer,
            embeddings,
            k,
        } => {
            prepare_out(&out, &config)?;
            let model = PrototypeModel::load(&model)?;
            let standardizer = Standardizer::load(&standardizer)?;
            let batch = load_embeddings(&embeddings)?;
            // Restrict to the training split when the companion lists it.
            let companion = load_companion(&protoxct::encoder::companion_path(&embeddings));
            let keep: Vec<usize> = match &companion {
                Ok(meta) if meta.len() == batch.len() => (0..batch.len())
                    .filter(|&i| meta[i].2 == Split::Train)
                    .collect(),
                _ => (0..batch.len()).collect(),
            };
            let mut data = protoxct::numerics::Mat64::zeros(keep.len(), batch.dim());
            let mut ids = Vec::with_capacity(keep.len());
            for (row, &i) in keep.iter().enumerate() {
                data.row_mut(row)
                    .copy_from_slice(&standardizer.transform_vec(batch.data.row(i))?);
                ids.push(batch.ids[i]);
            }
            let train = EmbeddingBatch::new(ids, data)?;
            let result = nearest_anchors(&model, &train, k)?;
            if result.clamped {
                eprintln!(
                    "warning: k={} clamped to {} (dataset size)",
                    result.k_requested, result.k_used
                );
            }
            result.save_csv(&out.join("nearest_anchors.csv"))?;
            println!(
                "wrote top-{} anchors for {} prototypes",
                result.k_used,
                result.per_prototype.len()
            );
            Ok(())
        }

        Command::ExportEmbeddings {
            data,
            model,
            standardizer,
            embeddings,
            encoder,
            threshold,
        } => {
            prepare_out(&out, &config)?;
            let set = pipeline::load_dataset(&data)?;
            let model = PrototypeModel::load(&model)?;
            let standardizer = Standardizer::load(&standardizer)?;
            let (batch, _) = obtain_embeddings(&set, &embeddings, &encoder, &config)?;
            let standardized = pipeline::standardize_all(&standardizer, &batch)?;
            let rows = pipeline::projection_rows(&model, &set, &standardized, threshold)?;
            let std_batch = EmbeddingBatch::new(batch.ids.clone(), standardized)?;
            protoxct::maps::export_projection_bundle(&out.join("projection.pemb"), &std_batch, &rows)?;
            println!("exported {} rows", rows.len());
            Ok(())
        }

        Command::Verify { filter } => {
            prepare_out(&out, &config)?;
            let report = protoxct::harness::run_suite(&filter);
            print!("{}", report.tap);
            std::fs::write(out.join("harness.json"), report.summary_json())?;
            if report.failed > 0 {
                return Err(Error::invalid(format!("{} fixtures failed", report.failed)));
            }
            println!("# {} fixtures passed", report.passed);
            Ok(())
        }
    }
}
