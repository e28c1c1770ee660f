//! Patch dataset model: sampling from volumes, low-intensity
//! auto-labeling, class rebalancing, split management, augmentation and
//! per-patch normalization, plus the manifest / patch-store / volume
//! file formats.

mod synth;

pub use synth::{generate_synthetic_volume, GroundTruth, SynthSpec, WindowTruth};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::head::SemanticType;
use crate::io as bin;
use crate::numerics::Rng;
use crate::{Error, Result};

/// Side length of every classification patch.
pub const PATCH_SIDE: usize = 64;
/// Tile pixel count.
pub const PATCH_AREA: usize = PATCH_SIDE * PATCH_SIDE;
/// Mean-intensity ceiling (strict) under which a patch is auto-labeled
/// non-defect, on the unit intensity scale.
pub const AUTO_LABEL_MEAN: f64 = 30.0 / 255.0;
/// Width of the intensity-bias kernel used by the pseudo-random sampler.
pub const SAMPLING_BIAS_WIDTH: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Label {
    NonDefect = 0,
    Defect = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Label> {
        match v {
            0 => Ok(Label::NonDefect),
            1 => Ok(Label::Defect),
            other => Err(Error::format(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::format(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A depth × height × width intensity grid with 16-bit encoding.
#[derive(Clone, Debug)]
pub struct Volume {
    pub id: String,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u16>,
}

impl Volume {
    pub fn new(id: impl Into<String>, depth: usize, height: usize, width: usize) -> Result<Self> {
        if depth == 0 || height < PATCH_SIDE || width < PATCH_SIDE {
            return Err(Error::invalid(format!(
                "volume dims {depth}x{height}x{width} too small; in-plane dims must be >= {PATCH_SIDE}"
            )));
        }
        Ok(Volume {
            id: id.into(),
            depth,
            height,
            width,
            data: vec![0; depth * height * width],
        })
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u16 {
        self.data[(z * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: u16) {
        self.data[(z * self.height + y) * self.width + x] = v;
    }

    pub fn slice(&self, z: usize) -> &[u16] {
        let n = self.height * self.width;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn voxels(&self) -> &[u16] {
        &self.data
    }

    /// Raw u16 LE grid plus a `{depth,height,width}` JSON sidecar.
    pub fn save(&self, raw_path: &Path) -> Result<()> {
        let mut w = bin::open_writer(raw_path)?;
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "depth": self.depth,
            "height": self.height,
            "width": self.width,
        });
        fs::write(
            raw_path.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(raw_path: &Path) -> Result<Volume> {
        let sidecar: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(raw_path.with_extension("json"))?)?;
        let dim = |k: &str| -> Result<usize> {
            sidecar[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::format(format!("volume sidecar missing {k:?}")))
        };
        let (depth, height, width) = (dim("depth")?, dim("height")?, dim("width")?);
        let bytes = fs::read(raw_path)?;
        let expect = depth * height * width * 2;
        if bytes.len() != expect {
            return Err(Error::format(format!(
                "volume store: expected {expect} bytes, found {}",
                bytes.len()
            )));
        }
        let id = raw_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "volume".into());
        let mut vol = Volume::new(id, depth, height, width)?;
        for (dst, src) in vol.data.iter_mut().zip(bytes.chunks_exact(2)) {
            *dst = u16::from_le_bytes([src[0], src[1]]);
        }
        Ok(vol)
    }
}

/// 16-bit intensity to the unit scale used everywhere downstream.
#[inline]
pub fn to_unit(v: u16) -> f32 {
    v as f32 / 65535.0
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub volume: String,
    pub slice: u32,
    pub row: u32,
    pub col: u32,
}

/// A 64×64 single-channel tile with provenance. Tiles are windowed to
/// [0,1] at extraction; `normalized` marks tiles recentered to zero mean
/// and unit variance.
#[derive(Clone, Debug)]
pub struct Patch {
    pub tile: Vec<f32>,
    pub provenance: Provenance,
    pub label: Option<Label>,
    pub semantic_type: Option<SemanticType>,
    pub normalized: bool,
}

impl Patch {
    pub fn mean(&self) -> f64 {
        self.tile.iter().map(|&v| v as f64).sum::<f64>() / self.tile.len() as f64
    }
}

/// Extracts the window at (row, col) of slice z, windowed to [0,1].
pub fn extract_patch(volume: &Volume, z: usize, row: usize, col: usize) -> Result<Patch> {
    if z >= volume.depth
        || row + PATCH_SIDE > volume.height
        || col + PATCH_SIDE > volume.width
    {
        return Err(Error::invalid(format!(
            "patch at z={z} row={row} col={col} falls outside {}x{}x{}",
            volume.depth, volume.height, volume.width
        )));
    }
    let mut tile = Vec::with_capacity(PATCH_AREA);
    for y in row..row + PATCH_SIDE {
        for x in col..col + PATCH_SIDE {
            tile.push(to_unit(volume.get(z, y, x)));
        }
    }
    Ok(Patch {
        tile,
        provenance: Provenance {
            volume: volume.id.clone(),
            slice: z as u32,
            row: row as u32,
            col: col as u32,
        },
        label: None,
        semantic_type: None,
        normalized: false,
    })
}

/// Summed-area table over one slice (unit intensities) for O(1) window
/// means during sampling.
struct SliceSums {
    width: usize,
    table: Vec<f64>,
}

impl SliceSums {
    fn new(slice: &[u16], height: usize, width: usize) -> Self {
        let mut table = vec![0.0; (height + 1) * (width + 1)];
        for y in 0..height {
            let mut rowsum = 0.0;
            for x in 0..width {
                rowsum += to_unit(slice[y * width + x]) as f64;
                table[(y + 1) * (width + 1) + (x + 1)] = table[y * (width + 1) + (x + 1)] + rowsum;
            }
        }
        SliceSums { width, table }
    }

    fn window_mean(&self, row: usize, col: usize, side: usize) -> f64 {
        let w = self.width + 1;
        let (r0, c0, r1, c1) = (row, col, row + side, col + side);
        let sum = self.table[r1 * w + c1] - self.table[r0 * w + c1] - self.table[r1 * w + c0]
            + self.table[r0 * w + c0];
        sum / (side * side) as f64
    }
}

/// Median unit intensity of the matrix-like voxels (those above 0.3);
/// falls back to the global median when nothing qualifies.
pub fn median_matrix_intensity(volume: &Volume) -> f64 {
    // Subsample large volumes; ~1M values are plenty for a median.
    let total = volume.voxels().len();
    let stride = (total / 1_000_000).max(1);
    let mut bright: Vec<f64> = Vec::new();
    let mut all: Vec<f64> = Vec::with_capacity(total / stride + 1);
    for i in (0..total).step_by(stride) {
        let v = to_unit(volume.voxels()[i]) as f64;
        all.push(v);
        if v > 0.3 {
            bright.push(v);
        }
    }
    let pool = if bright.is_empty() { &mut all } else { &mut bright };
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pool[pool.len() / 2]
}

/// Draws `n` in-bounds patches, biased towards windows whose mean
/// intensity sits near the median matrix intensity
/// (weight = exp(-|mean - median| / 0.1), accepted by rejection).
pub fn sample_patches(volume: &Volume, n: usize, rng: &mut Rng) -> Result<Vec<Patch>> {
    if n == 0 {
        return Err(Error::invalid("sample_patches requires n >= 1"));
    }
    let median = median_matrix_intensity(volume);
    let sums: Vec<SliceSums> = (0..volume.depth)
        .map(|z| SliceSums::new(volume.slice(z), volume.height, volume.width))
        .collect();
    let max_row = volume.height - PATCH_SIDE;
    let max_col = volume.width - PATCH_SIDE;
    let mut out = Vec::with_capacity(n);
    let mut tries: usize = 0;
    let try_budget = n.saturating_mul(10_000).max(1_000_000);
    while out.len() < n {
        tries += 1;
        if tries > try_budget {
            return Err(Error::invalid(
                "sample_patches: acceptance rate too low; volume intensities degenerate",
            ));
        }
        let z = rng.below(volume.depth);
        let row = rng.below(max_row + 1);
        let col = rng.below(max_col + 1);
        let mean = sums[z].window_mean(row, col, PATCH_SIDE);
        let weight = (-(mean - median).abs() / SAMPLING_BIAS_WIDTH).exp();
        if rng.next_f64() < weight {
            out.push(extract_patch(volume, z, row, col)?);
        }
    }
    Ok(out)
}

/// Moves every patch with mean intensity strictly below 30/255 into the
/// auto-labeled non-defect subset; ties at the boundary stay in the
/// remainder for manual inspection.
pub fn auto_label_low_intensity(patches: Vec<Patch>) -> (Vec<Patch>, Vec<Patch>) {
    let mut auto = Vec::new();
    let mut rest = Vec::new();
    for mut p in patches {
        if p.mean() < AUTO_LABEL_MEAN {
            p.label = Some(Label::NonDefect);
            auto.push(p);
        } else {
            rest.push(p);
        }
    }
    (auto, rest)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ManifestRecord {
    pub id: u32,
    pub volume: String,
    pub slice: u32,
    pub row: u32,
    pub col: u32,
    pub label: Label,
    pub split: Option<Split>,
    pub semantic_type: Option<SemanticType>,
}

/// Ordered patch records with split assignments and rebalancing
/// provenance. Patch stores are written in manifest order per split.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub seed: u64,
    /// Non-defect : defect ratio actually achieved by rebalance.
    pub achieved_ratio: Option<f64>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> (usize, usize) {
        let defect = self
            .records
            .iter()
            .filter(|r| r.label == Label::Defect)
            .count();
        (self.records.len() - defect, defect)
    }

    pub fn split_class_counts(&self, split: Split) -> (usize, usize) {
        let mut non = 0;
        let mut def = 0;
        for r in self.records.iter().filter(|r| r.split == Some(split)) {
            match r.label {
                Label::NonDefect => non += 1,
                Label::Defect => def += 1,
            }
        }
        (non, def)
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == Some(split))
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = bin::open_writer(path)?;
        writeln!(w, "id,volume,slice,row,col,label,split,semantic_type")?;
        for r in &self.records {
            if r.volume.contains(',') {
                return Err(Error::invalid(format!(
                    "volume id {:?} may not contain commas",
                    r.volume
                )));
            }
            let split = r.split.map(|s| s.as_str()).unwrap_or("");
            let sem = r.semantic_type.map(|s| s.as_str()).unwrap_or("");
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.id,
                r.volume,
                r.slice,
                r.row,
                r.col,
                r.label.as_u8(),
                split,
                sem
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("manifest: empty file"))?;
        if header != "id,volume,slice,row,col,label,split,semantic_type" {
            return Err(Error::format(format!("manifest: unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 8 {
                return Err(Error::format(format!(
                    "manifest line {}: expected 8 fields, found {}",
                    lineno + 2,
                    parts.len()
                )));
            }
            let parse_u32 = |s: &str, what: &str| {
                s.parse::<u32>()
                    .map_err(|_| Error::format(format!("manifest line {}: bad {what} {s:?}", lineno + 2)))
            };
            records.push(ManifestRecord {
                id: parse_u32(parts[0], "id")?,
                volume: parts[1].to_string(),
                slice: parse_u32(parts[2], "slice")?,
                row: parse_u32(parts[3], "row")?,
                col: parse_u32(parts[4], "col")?,
                label: Label::from_u8(
                    parts[5]
                        .parse::<u8>()
                        .map_err(|_| Error::format(format!("manifest line {}: bad label", lineno + 2)))?,
                )?,
                split: if parts[6].is_empty() {
                    None
                } else {
                    Some(Split::parse(parts[6])?)
                },
                semantic_type: if parts[7].is_empty() {
                    None
                } else {
                    Some(SemanticType::parse(parts[7])?)
                },
            });
        }
        Ok(DatasetManifest {
            records,
            seed: 0,
            achieved_ratio: None,
        })
    }
}

/// Manifest records paired 1:1 (by position) with their tiles.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    pub manifest: DatasetManifest,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn from_labeled_patches(patches: Vec<Patch>, seed: u64) -> Result<PatchSet> {
        let mut records = Vec::with_capacity(patches.len());
        for (i, p) in patches.iter().enumerate() {
            let label = p
                .label
                .ok_or_else(|| Error::invalid("PatchSet requires labeled patches"))?;
            records.push(ManifestRecord {
                id: i as u32,
                volume: p.provenance.volume.clone(),
                slice: p.provenance.slice,
                row: p.provenance.row,
                col: p.provenance.col,
                label,
                split: None,
                semantic_type: p.semantic_type,
            });
        }
        Ok(PatchSet {
            manifest: DatasetManifest {
                records,
                seed,
                achieved_ratio: None,
            },
            patches,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Sub-samples non-defect patches down to `target_ratio` : 1, keeping
/// every defect patch. Keep probability is proportional to the distance
/// of the patch mean from the median matrix intensity
/// (Efraimidis-Spirakis weighted sampling without replacement). The
/// weight is floored at 0.02 so exactly-median patches keep a small
/// but nonzero share instead of vanishing from small keep-sets.
pub fn rebalance(
    set: &PatchSet,
    target_ratio: f64,
    median_matrix: f64,
    rng: &mut Rng,
) -> Result<PatchSet> {
    if target_ratio <= 0.0 {
        return Err(Error::invalid("rebalance requires target_ratio > 0"));
    }
    let (non, def) = set.manifest.class_counts();
    if def == 0 {
        return Err(Error::invalid("cannot rebalance empty positive class"));
    }
    let keep_target = ((target_ratio * def as f64).round() as usize).min(non);
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(non);
    for (i, r) in set.manifest.records.iter().enumerate() {
        if r.label == Label::NonDefect {
            let dist = (set.patches[i].mean() - median_matrix).abs().max(0.02);
            let u = rng.next_f64().max(f64::MIN_POSITIVE);
            keys.push((-u.ln() / dist, i));
        }
    }
    keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let kept: BTreeSet<usize> = keys.iter().take(keep_target).map(|&(_, i)| i).collect();

    let mut records = Vec::new();
    let mut patches = Vec::new();
    for (i, r) in set.manifest.records.iter().enumerate() {
        if r.label == Label::Defect || kept.contains(&i) {
            records.push(r.clone());
            patches.push(set.patches[i].clone());
        }
    }
    let achieved = keep_target as f64 / def as f64;
    Ok(PatchSet {
        manifest: DatasetManifest {
            records,
            seed: set.manifest.seed,
            achieved_ratio: Some(achieved),
        },
        patches,
    })
}

/// Assigns stratified train/val/test splits. Per class, counts follow the
/// largest-remainder rule so every split lands within one patch of the
/// exact fractional target.
pub fn split(set: &mut PatchSet, fractions: (f64, f64, f64), rng: &mut Rng) -> Result<()> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be nonnegative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    for class in [Label::NonDefect, Label::Defect] {
        let mut idx: Vec<usize> = (0..set.manifest.records.len())
            .filter(|&i| set.manifest.records[i].label == class)
            .collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let exact = [ft * n as f64, fv * n as f64, fe * n as f64];
        let mut counts = [
            exact[0].floor() as usize,
            exact[1].floor() as usize,
            exact[2].floor() as usize,
        ];
        let mut rem: Vec<(f64, usize)> = exact
            .iter()
            .enumerate()
            .map(|(k, e)| (e - e.floor(), k))
            .collect();
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut leftover = n - counts.iter().sum::<usize>();
        for &(_, k) in &rem {
            if leftover == 0 {
                break;
            }
            counts[k] += 1;
            leftover -= 1;
        }
        let mut cursor = 0;
        for (k, &count) in counts.iter().enumerate() {
            for &i in &idx[cursor..cursor + count] {
                set.manifest.records[i].split = Some(Split::ALL[k]);
            }
            cursor += count;
        }
    }
    Ok(())
}

/// Random flips, occasional small rotation, optional normalization.
#[derive(Clone, Copy, Debug)]
pub struct AugmentationPolicy {
    pub flip_p: f64,
    pub rot_p: f64,
    pub max_rot_deg: f64,
    pub normalize: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            flip_p: 0.5,
            rot_p: 0.25,
            max_rot_deg: 15.0,
            normalize: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_p) || !(0.0..=1.0).contains(&self.rot_p) {
            return Err(Error::invalid("augmentation probabilities must be in [0,1]"));
        }
        if !(self.max_rot_deg > 0.0 && self.max_rot_deg <= 45.0) {
            return Err(Error::invalid("rotation bound must be in (0, 45] degrees"));
        }
        Ok(())
    }
}

pub fn flip_horizontal(tile: &mut [f32]) {
    for row in tile.chunks_exact_mut(PATCH_SIDE) {
        row.reverse();
    }
}

pub fn flip_vertical(tile: &mut [f32]) {
    for r in 0..PATCH_SIDE / 2 {
        for c in 0..PATCH_SIDE {
            tile.swap(r * PATCH_SIDE + c, (PATCH_SIDE - 1 - r) * PATCH_SIDE + c);
        }
    }
}

/// In-plane rotation about the tile center: bilinear interpolation with
/// edge replication, so no dark border pixels appear that could mimic
/// defects.
pub fn rotate_bilinear(tile: &[f32], degrees: f64) -> Vec<f32> {
    let n = PATCH_SIDE as f64;
    let center = (n - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut out = vec![0.0f32; PATCH_AREA];
    for r in 0..PATCH_SIDE {
        for c in 0..PATCH_SIDE {
            let dy = r as f64 - center;
            let dx = c as f64 - center;
            // Inverse mapping: rotate the output coordinate by -angle.
            let sy = center + cos * dy + sin * dx;
            let sx = center - sin * dy + cos * dx;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let clamp = |v: f64| (v.max(0.0) as usize).min(PATCH_SIDE - 1);
            let (y0i, y1i) = (clamp(y0), clamp(y0 + 1.0));
            let (x0i, x1i) = (clamp(x0), clamp(x0 + 1.0));
            let at = |y: usize, x: usize| tile[y * PATCH_SIDE + x] as f64;
            let v = at(y0i, x0i) * (1.0 - fy) * (1.0 - fx)
                + at(y0i, x1i) * (1.0 - fy) * fx
                + at(y1i, x0i) * fy * (1.0 - fx)
                + at(y1i, x1i) * fy * fx;
            out[r * PATCH_SIDE + c] = v as f32;
        }
    }
    out
}

/// Applies flips, then with probability `rot_p` a rotation uniform in
/// [-max, +max] degrees, then per-patch normalization if flagged. The
/// rng draw order is fixed: h-flip gate, v-flip gate, rotation gate,
/// rotation angle.
pub fn augment(patch: &Patch, policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Patch> {
    policy.validate()?;
    let mut out = patch.clone();
    if rng.bernoulli(policy.flip_p) {
        flip_horizontal(&mut out.tile);
    }
    if rng.bernoulli(policy.flip_p) {
        flip_vertical(&mut out.tile);
    }
    if rng.bernoulli(policy.rot_p) {
        let angle = rng.uniform(-policy.max_rot_deg, policy.max_rot_deg);
        out.tile = rotate_bilinear(&out.tile, angle);
    }
    if policy.normalize {
        out = normalize_patch(&out);
    }
    Ok(out)
}

/// Zero-mean unit-variance (population) rescale; a constant tile carries
/// no information and maps to all zeros.
pub fn normalize_patch(patch: &Patch) -> Patch {
    let n = patch.tile.len() as f64;
    let mean = patch.tile.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch
        .tile
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let mut out = patch.clone();
    if std < 1e-12 {
        out.tile.iter_mut().for_each(|v| *v = 0.0);
    } else {
        for v in &mut out.tile {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
    out.normalized = true;
    out
}

const PATCH_MAGIC: &[u8; 4] = b"PPAT";

/// Writes tiles in the given order: magic `PPAT`, u32 version=1,
/// u32 count, u32 side, then count×side×side f32 LE row-major.
pub fn save_patch_store(path: &Path, tiles: &[&[f32]]) -> Result<()> {
    let mut w = bin::open_writer(path)?;
    bin::write_magic(&mut w, PATCH_MAGIC)?;
    bin::write_u32(&mut w, 1)?;
    bin::write_u32(&mut w, tiles.len() as u32)?;
    bin::write_u32(&mut w, PATCH_SIDE as u32)?;
    for t in tiles {
        if t.len() != PATCH_AREA {
            return Err(Error::shape(format!(
                "patch store: tile has {} values, expected {PATCH_AREA}",
                t.len()
            )));
        }
        bin::write_f32_slice(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_patch_store(path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut r = bin::open_reader(path)?;
    bin::read_magic(&mut r, PATCH_MAGIC, "patch store")?;
    let version = bin::read_u32(&mut r, "patch store version")?;
    if version != 1 {
        return Err(Error::format(format!("patch store: unsupported version {version}")));
    }
    let count = bin::read_u32(&mut r, "patch store count")? as usize;
    let side = bin::read_u32(&mut r, "patch store side")? as usize;
    if side != PATCH_SIDE {
        return Err(Error::format(format!(
            "patch store: side {side}, expected {PATCH_SIDE}"
        )));
    }
    let mut tiles = Vec::with_capacity(count);
    for _ in 0..count {
        tiles.push(bin::read_f32_vec(&mut r, PATCH_AREA, "patch store")?);
    }
    Ok(tiles)
}
