//! Run configuration: one flat `key = value` file (unknown keys
//! rejected), merged with command-line flags before any stage runs, and
//! written back next to every output for provenance.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::AugmentationPolicy;
use crate::data::SynthSpec;
use crate::loss::LossWeights;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,

    // synthetic data
    pub synth_depth: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    pub pores_per_slice: f64,
    pub lines_per_slice: f64,
    pub mixed_per_slice: f64,
    pub edge_defect_fraction: f64,
    pub sample_count: usize,
    pub rebalance_ratio: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    // encoder
    pub embedding_dim: usize,
    /// "encoder" trains the compact CNN; "descriptor" uses the
    /// deterministic statistical embedding.
    pub embedding_mode: String,
    pub warmup_epochs: usize,
    pub encoder_finetune: bool,
    pub warmup_lr: f64,
    pub warmup_batch: usize,

    // augmentation
    pub flip_p: f64,
    pub rot_p: f64,
    pub max_rot_deg: f64,

    // loss weights
    pub lambda_cls: f64,
    pub lambda_pull: f64,
    pub lambda_push: f64,
    pub lambda_div: f64,
    pub lambda_ent: f64,
    pub lambda_usage: f64,
    pub lambda_anchor: f64,
    pub lambda_medoid: f64,
    pub lambda_proto: f64,
    pub lambda_tau: f64,
    pub tau_push: f64,
    pub delta: f64,
    pub ent_within_class: bool,

    // optimization
    pub head_lr: f64,
    pub backbone_lr: f64,
    pub baseline_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub lr_floor: f64,

    // evaluation
    pub ece_bins: usize,
    pub bootstrap_replicates: usize,

    // maps
    pub map_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        let weights = LossWeights::default();
        let train = TrainConfig::default();
        let threads = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8);
        RunConfig {
            seed: 7,
            threads,
            synth_depth: synth.depth,
            synth_height: synth.height,
            synth_width: synth.width,
            pores_per_slice: synth.pores_per_slice,
            lines_per_slice: synth.lines_per_slice,
            mixed_per_slice: synth.mixed_per_slice,
            edge_defect_fraction: synth.edge_defect_fraction,
            sample_count: 6000,
            rebalance_ratio: 2.0,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            embedding_dim: 64,
            embedding_mode: "encoder".to_string(),
            warmup_epochs: 80,
            encoder_finetune: false,
            warmup_lr: 1e-3,
            warmup_batch: 16,
            flip_p: 0.5,
            rot_p: 0.25,
            max_rot_deg: 15.0,
            lambda_cls: weights.cls,
            lambda_pull: weights.pull,
            lambda_push: weights.push,
            lambda_div: weights.div,
            lambda_ent: weights.ent,
            lambda_usage: weights.usage,
            lambda_anchor: weights.anchor,
            lambda_medoid: weights.medoid,
            lambda_proto: weights.proto_norm,
            lambda_tau: weights.tau_pen,
            tau_push: weights.tau_push,
            delta: weights.delta,
            ent_within_class: weights.ent_within_class,
            head_lr: train.head_lr,
            backbone_lr: train.backbone_lr,
            baseline_lr: 5e-5,
            weight_decay: train.weight_decay,
            clip_norm: train.clip_norm,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            early_stop_patience: train.early_stop_patience,
            plateau_patience: train.plateau_patience,
            plateau_factor: train.plateau_factor,
            lr_floor: train.lr_floor,
            ece_bins: crate::eval::DEFAULT_ECE_BINS,
            bootstrap_replicates: crate::eval::DEFAULT_BOOTSTRAP_REPLICATES,
            map_stride: 64,
        }
    }
}

macro_rules! config_keys {
    ($($field:ident : $kind:ident),* $(,)?) => {
        impl RunConfig {
            /// Sets one key from its text value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = parse_value!($kind, key, value)?;
                        Ok(())
                    })*
                    _ => Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            }

            /// Serializes every key, sorted, as `key = value` lines.
            pub fn to_text(&self) -> String {
                let mut pairs: Vec<(String, String)> = vec![
                    $((stringify!($field).to_string(), format_value!($kind, self.$field)),)*
                ];
                pairs.sort();
                let mut out = String::new();
                for (k, v) in pairs {
                    let _ = writeln!(out, "{k} = {v}");
                }
                out
            }
        }
    };
}

macro_rules! parse_value {
    (u64, $key:expr, $value:expr) => {
        $value
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("key {}: expected integer, got {:?}", $key, $value)))
    };
    (usize, $key:expr, $value:expr) => {
        $value
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("key {}: expected integer, got {:?}", $key, $value)))
    };
    (f64, $key:expr, $value:expr) => {
        $value
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("key {}: expected number, got {:?}", $key, $value)))
    };
    (bool, $key:expr, $value:expr) => {
        match $value {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Config(format!(
                "key {}: expected true/false, got {:?}",
                $key, other
            ))),
        }
    };
    (mode, $key:expr, $value:expr) => {
        match $value {
            "encoder" | "descriptor" => Ok($value.to_string()),
            other => Err(Error::Config(format!(
                "key {}: expected encoder or descriptor, got {:?}",
                $key, other
            ))),
        }
    };
}

macro_rules! format_value {
    (f64, $v:expr) => {
        format!("{}", $v)
    };
    ($kind:ident, $v:expr) => {
        format!("{}", $v)
    };
}

config_keys! {
    seed: u64,
    threads: usize,
    synth_depth: usize,
    synth_height: usize,
    synth_width: usize,
    pores_per_slice: f64,
    lines_per_slice: f64,
    mixed_per_slice: f64,
    edge_defect_fraction: f64,
    sample_count: usize,
    rebalance_ratio: f64,
    split_train: f64,
    split_val: f64,
    split_test: f64,
    embedding_dim: usize,
    embedding_mode: mode,
    warmup_epochs: usize,
    encoder_finetune: bool,
    warmup_lr: f64,
    warmup_batch: usize,
    flip_p: f64,
    rot_p: f64,
    max_rot_deg: f64,
    lambda_cls: f64,
    lambda_pull: f64,
    lambda_push: f64,
    lambda_div: f64,
    lambda_ent: f64,
    lambda_usage: f64,
    lambda_anchor: f64,
    lambda_medoid: f64,
    lambda_proto: f64,
    lambda_tau: f64,
    tau_push: f64,
    delta: f64,
    ent_within_class: bool,
    head_lr: f64,
    backbone_lr: f64,
    baseline_lr: f64,
    weight_decay: f64,
    clip_norm: f64,
    batch_size: usize,
    max_epochs: usize,
    early_stop_patience: usize,
    plateau_patience: usize,
    plateau_factor: f64,
    lr_floor: f64,
    ece_bins: usize,
    bootstrap_replicates: usize,
    map_stride: usize,
}

impl RunConfig {
    /// Parses a flat `key = value` file; `#` starts a comment; unknown
    /// keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Writes the resolved snapshot carried alongside every artifact.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            depth: self.synth_depth,
            height: self.synth_height,
            width: self.synth_width,
            pores_per_slice: self.pores_per_slice,
            lines_per_slice: self.lines_per_slice,
            mixed_per_slice: self.mixed_per_slice,
            edge_defect_fraction: self.edge_defect_fraction,
            ..SynthSpec::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            cls: self.lambda_cls,
            pull: self.lambda_pull,
            push: self.lambda_push,
            div: self.lambda_div,
            ent: self.lambda_ent,
            usage: self.lambda_usage,
            anchor: self.lambda_anchor,
            medoid: self.lambda_medoid,
            proto_norm: self.lambda_proto,
            tau_pen: self.lambda_tau,
            tau_push: self.tau_push,
            delta: self.delta,
            ent_within_class: self.ent_within_class,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            head_lr: self.head_lr,
            backbone_lr: self.backbone_lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            early_stop_patience: self.early_stop_patience,
            plateau_patience: self.plateau_patience,
            plateau_factor: self.plateau_factor,
            lr_floor: self.lr_floor,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn augmentation(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            flip_p: self.flip_p,
            rot_p: self.rot_p,
            max_rot_deg: self.max_rot_deg,
            normalize: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("no_such_key", "1"), Err(Error::Config(_))));
    }

    #[test]
    fn roundtrip_through_text() {
        let mut c = RunConfig::default();
        c.set("seed", "99").unwrap();
        c.set("lambda_anchor", "3.5").unwrap();
        c.set("ent_within_class", "false").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        c.save(&path).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&path).unwrap();
        assert_eq!(back.seed, 99);
        assert_eq!(back.lambda_anchor, 3.5);
        assert!(!back.ent_within_class);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn bad_value_reports_key() {
        let mut c = RunConfig::default();
        let err = c.set("seed", "abc").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }
}
