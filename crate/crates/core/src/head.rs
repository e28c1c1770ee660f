//! The prototype head: semantic types, expert anchors, medoid
//! initialization, distances in the standardized embedding space,
//! temperature logits, per-class log-sum-exp pooling, and prototype
//! attribution.

use std::fmt;
use std::path::Path;

use crate::data::Label;
use crate::io as bin;
use crate::numerics::{log_sum_exp, softmax, squared_distance, Mat64};
use crate::{Error, Result};

/// Number of semantic prototype types.
pub const NUM_TYPES: usize = 6;
/// Expert anchors curated per type.
pub const ANCHORS_PER_TYPE: usize = 6;
/// Edge-containing anchors required per defect type.
pub const EDGE_ANCHORS_PER_DEFECT_TYPE: usize = 3;

/// The six semantic prototype types. The first three are non-defect,
/// the last three defect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Air = 0,
    Matrix = 1,
    MatrixAir = 2,
    Pores = 3,
    Lines = 4,
    PoresLines = 5,
}

impl SemanticType {
    pub const ALL: [SemanticType; NUM_TYPES] = [
        SemanticType::Air,
        SemanticType::Matrix,
        SemanticType::MatrixAir,
        SemanticType::Pores,
        SemanticType::Lines,
        SemanticType::PoresLines,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<SemanticType> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("semantic type index {i} out of range")))
    }

    pub fn class(self) -> Label {
        match self {
            SemanticType::Air | SemanticType::Matrix | SemanticType::MatrixAir => Label::NonDefect,
            _ => Label::Defect,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Air => "air",
            SemanticType::Matrix => "matrix",
            SemanticType::MatrixAir => "matrix+air",
            SemanticType::Pores => "pores",
            SemanticType::Lines => "lines",
            SemanticType::PoresLines => "pores+lines",
        }
    }

    pub fn parse(s: &str) -> Result<SemanticType> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::format(format!("unknown semantic type {s:?}")))
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One expert-designated training patch: its record id and standardized
/// embedding; defect anchors carry an edge flag.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub record_id: u32,
    pub embedding: Vec<f64>,
    pub edge: bool,
}

/// The full expert anchor set: exactly six anchors per semantic type,
/// with three edge-flagged anchors per defect type.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    per_type: Vec<Vec<Anchor>>,
    dim: usize,
}

impl AnchorSet {
    pub fn new(per_type: Vec<Vec<Anchor>>) -> Result<AnchorSet> {
        if per_type.len() != NUM_TYPES {
            return Err(Error::invalid(format!(
                "anchor set needs {NUM_TYPES} types, got {}",
                per_type.len()
            )));
        }
        let mut missing = Vec::new();
        for (i, anchors) in per_type.iter().enumerate() {
            if anchors.len() != ANCHORS_PER_TYPE {
                missing.push(format!(
                    "{} ({} of {ANCHORS_PER_TYPE})",
                    SemanticType::ALL[i],
                    anchors.len()
                ));
            }
        }
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "incomplete anchor set: {}",
                missing.join(", ")
            )));
        }
        let dim = per_type[0][0].embedding.len();
        for anchors in &per_type {
            for a in anchors {
                if a.embedding.len() != dim {
                    return Err(Error::shape(format!(
                        "anchor {} embedding dim {} != {dim}",
                        a.record_id,
                        a.embedding.len()
                    )));
                }
            }
        }
        for t in SemanticType::ALL {
            if t.class() == Label::Defect {
                let edges = per_type[t.index()].iter().filter(|a| a.edge).count();
                if edges != EDGE_ANCHORS_PER_DEFECT_TYPE {
                    return Err(Error::invalid(format!(
                        "defect type {t} needs {EDGE_ANCHORS_PER_DEFECT_TYPE} edge anchors, got {edges}"
                    )));
                }
            }
        }
        Ok(AnchorSet { per_type, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn of_type(&self, t: SemanticType) -> &[Anchor] {
        &self.per_type[t.index()]
    }

    pub fn anchor_ids(&self) -> Vec<Vec<u32>> {
        self.per_type
            .iter()
            .map(|v| v.iter().map(|a| a.record_id).collect())
            .collect()
    }
}

/// Coordinate-wise mean of a set of anchor embeddings.
pub fn centroid(anchors: &[Anchor]) -> Result<Vec<f64>> {
    if anchors.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let dim = anchors[0].embedding.len();
    let mut mean = vec![0.0; dim];
    for a in anchors {
        if a.embedding.len() != dim {
            return Err(Error::shape("ragged anchor embeddings"));
        }
        for (m, &v) in mean.iter_mut().zip(&a.embedding) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= anchors.len() as f64;
    }
    Ok(mean)
}

/// The anchor whose embedding is closest to the candidate centroid;
/// ties break to the lowest record id.
pub fn medoid(anchors: &[Anchor]) -> Result<&Anchor> {
    let center = centroid(anchors)?;
    let mut best: Option<(&Anchor, f64)> = None;
    for a in anchors {
        let d = squared_distance(&a.embedding, &center)?;
        let better = match best {
            None => true,
            Some((b, bd)) => d < bd || (d == bd && a.record_id < b.record_id),
        };
        if better {
            best = Some((a, d));
        }
    }
    Ok(best.expect("non-empty by centroid check").0)
}

/// Prototype matrix, temperature, frozen medoid snapshot, and the
/// semantic/class maps. Lives entirely in the standardized embedding
/// space defined by the companion standardizer file.
#[derive(Clone, Debug)]
pub struct PrototypeModel {
    /// K×D prototype matrix.
    pub prototypes: Mat64,
    /// Temperature for distance → logit conversion; always > 0.
    pub tau: f64,
    /// K×D snapshot of the initialization medoids.
    pub medoids: Mat64,
    /// Semantic type of each prototype row.
    pub semantic_map: Vec<SemanticType>,
    /// Anchor record ids per type, kept for retrieval and provenance.
    pub anchor_ids: Vec<Vec<u32>>,
    /// Post-hoc temperature-scaling constant applied to the defect logit
    /// at prediction time (1 = uncalibrated).
    pub calibration_temperature: f64,
    /// Path hint to the standardizer this model was fitted against.
    pub standardizer_ref: Option<String>,
}

impl PrototypeModel {
    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn class_of(&self, proto: usize) -> Label {
        self.semantic_map[proto].class()
    }

    pub fn prototype_indices_of(&self, class: Label) -> Vec<usize> {
        (0..self.k())
            .filter(|&k| self.class_of(k) == class)
            .collect()
    }

    /// FNV fingerprint over the numerical state, used to stamp derived
    /// artifacts like defect maps.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.tau.to_le_bytes());
        bytes.extend_from_slice(&self.calibration_temperature.to_le_bytes());
        for v in self.prototypes.data().iter().chain(self.medoids.data()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.semantic_map {
            bytes.push(t.index() as u8);
        }
        bin::fnv1a64(&bytes)
    }
}

/// Builds the model from the anchor set: each prototype starts at its
/// type's medoid, so every prototype row equals a real training
/// embedding, and the medoid snapshot equals the initial matrix.
pub fn init_prototypes(anchors: &AnchorSet, tau0: f64) -> Result<PrototypeModel> {
    if tau0 <= 0.0 {
        return Err(Error::invalid("initial temperature must be > 0"));
    }
    let dim = anchors.dim();
    let mut proto = Mat64::zeros(NUM_TYPES, dim);
    for t in SemanticType::ALL {
        let m = medoid(anchors.of_type(t))?;
        proto.row_mut(t.index()).copy_from_slice(&m.embedding);
    }
    Ok(PrototypeModel {
        medoids: proto.clone(),
        prototypes: proto,
        tau: tau0,
        semantic_map: SemanticType::ALL.to_vec(),
        anchor_ids: anchors.anchor_ids(),
        calibration_temperature: 1.0,
        standardizer_ref: None,
    })
}

/// Squared Euclidean distance to each prototype, normalized by the
/// embedding dimension: d_k = ||z - P_k||² / D.
pub fn distances(z: &[f64], prototypes: &Mat64) -> Result<Vec<f64>> {
    if z.len() != prototypes.cols() {
        return Err(Error::shape(format!(
            "embedding dim {} vs prototype dim {}",
            z.len(),
            prototypes.cols()
        )));
    }
    let d = prototypes.cols() as f64;
    (0..prototypes.rows())
        .map(|k| Ok(squared_distance(z, prototypes.row(k))? / d))
        .collect()
}

/// Distance → logit: ℓ_k = -d_k / τ.
pub fn prototype_logits(dists: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::invalid("temperature must be > 0"));
    }
    Ok(dists.iter().map(|d| -d / tau).collect())
}

/// Log-sum-exp pooling of prototype logits within each class.
pub fn class_logits(logits: &[f64], semantic_map: &[SemanticType]) -> Result<(f64, f64)> {
    let collect = |class: Label| -> Vec<f64> {
        logits
            .iter()
            .zip(semantic_map)
            .filter(|(_, t)| t.class() == class)
            .map(|(&l, _)| l)
            .collect()
    };
    let non = collect(Label::NonDefect);
    let def = collect(Label::Defect);
    if non.is_empty() || def.is_empty() {
        return Err(Error::invalid("each class needs at least one prototype"));
    }
    Ok((log_sum_exp(&non)?, log_sum_exp(&def)?))
}

/// Softmax over the two class logits: (p_nondefect, p_defect).
pub fn class_probabilities(class_logits: (f64, f64)) -> (f64, f64) {
    let m = class_logits.0.max(class_logits.1);
    let e0 = (class_logits.0 - m).exp();
    let e1 = (class_logits.1 - m).exp();
    (e0 / (e0 + e1), e1 / (e0 + e1))
}

/// Global softmax over all prototype logits; the argmax is the
/// attributed prototype.
pub fn prototype_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    softmax(logits)
}

/// Index of the largest entry; earlier index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Full inference product for one standardized embedding.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Prediction {
    pub label: Label,
    pub p_defect: f64,
    pub attribution: Vec<f64>,
    pub attributed_type: SemanticType,
}

/// Calibrated defect probability: sigmoid of the class-logit difference
/// divided by the post-hoc temperature.
pub fn calibrated_p_defect(model: &PrototypeModel, logits_classes: (f64, f64)) -> f64 {
    let raw_logit = logits_classes.1 - logits_classes.0;
    1.0 / (1.0 + (-raw_logit / model.calibration_temperature).exp())
}

/// Classifies one standardized embedding: label 1 iff calibrated
/// p_defect ≥ t. Attribution is reported for every patch regardless of
/// the decision.
pub fn predict(z: &[f64], model: &PrototypeModel, threshold: f64) -> Result<Prediction> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0,1)"));
    }
    let d = distances(z, &model.prototypes)?;
    let l = prototype_logits(&d, model.tau)?;
    let cls = class_logits(&l, &model.semantic_map)?;
    let p_defect = calibrated_p_defect(model, cls);
    let attribution = prototype_distribution(&l)?;
    let attributed_type = model.semantic_map[argmax(&attribution)];
    Ok(Prediction {
        label: if p_defect >= threshold {
            Label::Defect
        } else {
            Label::NonDefect
        },
        p_defect,
        attribution,
        attributed_type,
    })
}

const MODEL_MAGIC: &[u8; 4] = b"PMDL";

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelTrailer {
    semantic_map: Vec<SemanticType>,
    anchor_ids: Vec<Vec<u32>>,
    calibration_temperature: f64,
    standardizer_ref: Option<String>,
}

impl PrototypeModel {
    /// Checkpoint: magic `PMDL`, u32 version=1, u32 K, u32 D, τ (f64 LE),
    /// P rows then M rows (f64 LE), then a u32-length-prefixed JSON
    /// trailer holding the semantic/class maps and anchor ids.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = bin::open_writer(path)?;
        bin::write_magic(&mut w, MODEL_MAGIC)?;
        bin::write_u32(&mut w, 1)?;
        bin::write_u32(&mut w, self.k() as u32)?;
        bin::write_u32(&mut w, self.dim() as u32)?;
        bin::write_f64(&mut w, self.tau)?;
        bin::write_f64_slice(&mut w, self.prototypes.data())?;
        bin::write_f64_slice(&mut w, self.medoids.data())?;
        let trailer = serde_json::to_vec(&ModelTrailer {
            semantic_map: self.semantic_map.clone(),
            anchor_ids: self.anchor_ids.clone(),
            calibration_temperature: self.calibration_temperature,
            standardizer_ref: self.standardizer_ref.clone(),
        })?;
        bin::write_u32(&mut w, trailer.len() as u32)?;
        use std::io::Write;
        w.write_all(&trailer)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PrototypeModel> {
        let mut r = bin::open_reader(path)?;
        bin::read_magic(&mut r, MODEL_MAGIC, "model checkpoint")?;
        let version = bin::read_u32(&mut r, "model version")?;
        if version != 1 {
            return Err(Error::format(format!("model checkpoint: unsupported version {version}")));
        }
        let k = bin::read_u32(&mut r, "model K")? as usize;
        let d = bin::read_u32(&mut r, "model D")? as usize;
        let tau = bin::read_f64(&mut r, "model tau")?;
        if tau <= 0.0 {
            return Err(Error::format(format!("model checkpoint: tau {tau} must be > 0")));
        }
        let p = bin::read_f64_vec(&mut r, k * d, "model prototypes")?;
        let m = bin::read_f64_vec(&mut r, k * d, "model medoids")?;
        let tlen = bin::read_u32(&mut r, "model trailer length")? as usize;
        let mut tbuf = vec![0u8; tlen];
        use std::io::Read;
        r.read_exact(&mut tbuf)
            .map_err(|_| Error::format("model checkpoint: truncated JSON trailer".to_string()))?;
        let trailer: ModelTrailer = serde_json::from_slice(&tbuf)?;
        if trailer.semantic_map.len() != k {
            return Err(Error::format(format!(
                "model checkpoint: semantic map covers {} prototypes, expected {k}",
                trailer.semantic_map.len()
            )));
        }
        Ok(PrototypeModel {
            prototypes: Mat64::from_flat(k, d, p)?,
            medoids: Mat64::from_flat(k, d, m)?,
            tau,
            semantic_map: trailer.semantic_map,
            anchor_ids: trailer.anchor_ids,
            calibration_temperature: trailer.calibration_temperature,
            standardizer_ref: trailer.standardizer_ref,
        })
    }
}

#[cfg(test)]
mod tests;
