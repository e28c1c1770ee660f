//! Slice-level inference products: patch tiling, dense defect maps with
//! overlapping-stride majority voting, prototype attribution, learned
//! anchor retrieval, and embedding export for external projection.

use std::io::Write;
use std::path::Path;

use crate::data::{extract_patch, Label, Split, Volume, PATCH_SIDE};
use crate::encoder::{Embedder, EmbeddingBatch, Standardizer};
use crate::head::{predict, PrototypeModel};
use crate::numerics::squared_distance;
use crate::{Error, Result};

/// Window origins over a slice at a fixed stride; origins are sorted
/// row-major and every window fits inside the slice. Right/bottom
/// margins smaller than one window stay uncovered.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
}

/// Origins at multiples of `stride` such that origin + 64 ≤ dim.
pub fn tile(height: usize, width: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if height < PATCH_SIDE || width < PATCH_SIDE {
        return Err(Error::invalid(format!(
            "slice {height}x{width} smaller than one {PATCH_SIDE}x{PATCH_SIDE} window"
        )));
    }
    let rows = (height - PATCH_SIDE) / stride + 1;
    let cols = (width - PATCH_SIDE) / stride + 1;
    let mut origins = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            origins.push((r * stride, c * stride));
        }
    }
    Ok(PatchGrid {
        height,
        width,
        stride,
        origins,
    })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MapRecord {
    pub row: usize,
    pub col: usize,
    pub p_defect: f64,
    pub label: Label,
    pub proto_index: usize,
}

/// Patch-wise predictions over one slice.
#[derive(Clone, Debug)]
pub struct DefectMap {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub threshold: f64,
    pub model_checksum: u64,
    pub records: Vec<MapRecord>,
}

/// Runs the model over every grid window of slice `z`: calibrated
/// defect probability, thresholded label, and attribution argmax per
/// patch. Per-patch inference is read-only and fans out over `threads`
/// workers deterministically.
pub fn predict_map(
    volume: &Volume,
    z: usize,
    model: &PrototypeModel,
    embedder: &Embedder,
    standardizer: &Standardizer,
    stride: usize,
    threshold: f64,
    threads: usize,
) -> Result<DefectMap> {
    let grid = tile(volume.height, volume.width, stride)?;
    let results = crate::numerics::parallel_map(grid.origins.len(), threads, |i| {
        let (row, col) = grid.origins[i];
        let patch = extract_patch(volume, z, row, col)?;
        let embedding = embedder.embed_tile(&patch.tile)?;
        let zvec = standardizer.transform_vec(&embedding)?;
        let p = predict(&zvec, model, threshold)?;
        Ok::<MapRecord, Error>(MapRecord {
            row,
            col,
            p_defect: p.p_defect,
            label: p.label,
            proto_index: p.attributed_type.index(),
        })
    });
    let mut records = Vec::with_capacity(grid.origins.len());
    for r in results {
        records.push(r?);
    }
    Ok(DefectMap {
        height: volume.height,
        width: volume.width,
        stride,
        threshold,
        model_checksum: model.checksum(),
        records,
    })
}

/// Pixel values of the aggregated map.
pub const PIXEL_NON_DEFECT: u8 = 0;
pub const PIXEL_DEFECT: u8 = 255;
pub const PIXEL_UNCOVERED: u8 = 128;

#[derive(Clone, Debug)]
pub struct PixelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub uncovered: usize,
}

/// Per-pixel majority vote over all covering windows; exact ties vote
/// defect (conservative for screening). Pixels no window covers are
/// flagged with [`PIXEL_UNCOVERED`], never silently filled. The stride
/// must divide the window side so overlapping coverage is even.
pub fn aggregate_majority(map: &DefectMap) -> Result<PixelMap> {
    if map.stride > PATCH_SIDE || !PATCH_SIDE.is_multiple_of(map.stride) {
        return Err(Error::invalid(format!(
            "aggregation requires a stride dividing {PATCH_SIDE}, got {}",
            map.stride
        )));
    }
    let mut defect = vec![0u16; map.height * map.width];
    let mut total = vec![0u16; map.height * map.width];
    for r in &map.records {
        for y in r.row..r.row + PATCH_SIDE {
            let base = y * map.width;
            for x in r.col..r.col + PATCH_SIDE {
                total[base + x] += 1;
                if r.label == Label::Defect {
                    defect[base + x] += 1;
                }
            }
        }
    }
    let mut data = vec![0u8; map.height * map.width];
    let mut uncovered = 0;
    for i in 0..data.len() {
        data[i] = if total[i] == 0 {
            uncovered += 1;
            PIXEL_UNCOVERED
        } else if 2 * defect[i] >= total[i] {
            PIXEL_DEFECT
        } else {
            PIXEL_NON_DEFECT
        };
    }
    Ok(PixelMap {
        height: map.height,
        width: map.width,
        data,
        uncovered,
    })
}

impl DefectMap {
    /// CSV `row,col,p_defect,label,proto_index` plus a JSON header file
    /// carrying slice dims, stride, threshold and the model checksum.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut w = crate::io::open_writer(csv_path)?;
        writeln!(w, "row,col,p_defect,label,proto_index")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.9},{},{}",
                r.row,
                r.col,
                r.p_defect,
                r.label.as_u8(),
                r.proto_index
            )?;
        }
        w.flush()?;
        let header = serde_json::json!({
            "height": self.height,
            "width": self.width,
            "stride": self.stride,
            "threshold": self.threshold,
            "model_checksum": format!("{:016x}", self.model_checksum),
        });
        std::fs::write(
            csv_path.with_extension("json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        Ok(())
    }
}

/// 8-bit binary PGM (P5).
pub fn save_pgm(path: &Path, map: &PixelMap) -> Result<()> {
    let mut w = crate::io::open_writer(path)?;
    write!(w, "P5\n{} {}\n255\n", map.width, map.height)?;
    w.write_all(&map.data)?;
    w.flush()?;
    Ok(())
}

/// Exact top-k training records per prototype, ascending by distance
/// with ties broken by record id. A k beyond the dataset clamps.
#[derive(Clone, Debug)]
pub struct NearestAnchors {
    pub k_requested: usize,
    pub k_used: usize,
    pub clamped: bool,
    /// Per prototype: (record id, normalized squared distance).
    pub per_prototype: Vec<Vec<(u32, f64)>>,
}

pub fn nearest_anchors(
    model: &PrototypeModel,
    train: &EmbeddingBatch,
    k: usize,
) -> Result<NearestAnchors> {
    if k == 0 {
        return Err(Error::invalid("nearest_anchors needs k >= 1"));
    }
    if train.dim() != model.dim() {
        return Err(Error::shape("embedding dim differs from model dim"));
    }
    let k_used = k.min(train.len());
    let dim = model.dim() as f64;
    let mut per_prototype = Vec::with_capacity(model.k());
    for p in 0..model.k() {
        let mut dists: Vec<(u32, f64)> = (0..train.len())
            .map(|i| {
                let d = squared_distance(train.data.row(i), model.prototypes.row(p)).unwrap() / dim;
                (train.ids[i], d)
            })
            .collect();
        dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        dists.truncate(k_used);
        per_prototype.push(dists);
    }
    Ok(NearestAnchors {
        k_requested: k,
        k_used,
        clamped: k_used < k,
        per_prototype,
    })
}

impl NearestAnchors {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::io::open_writer(path)?;
        writeln!(w, "proto_index,rank,record_id,distance")?;
        for (p, list) in self.per_prototype.iter().enumerate() {
            for (rank, (id, d)) in list.iter().enumerate() {
                writeln!(w, "{p},{rank},{id},{d:.9}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of the projection bundle.
#[derive(Clone, Debug)]
pub struct ProjectionRow {
    pub id: u32,
    pub label: Label,
    pub split: Split,
    pub proto_index: usize,
    /// "fp" / "fn" on misclassified test records, empty otherwise.
    pub flag: &'static str,
}

/// Writes standardized embeddings plus attribution and FP/FN markers
/// for external projection: a PEMB file and a CSV
/// `id,label,split,proto_index,flag` in the same order.
pub fn export_projection_bundle(
    pemb_path: &Path,
    standardized: &EmbeddingBatch,
    rows: &[ProjectionRow],
) -> Result<()> {
    if standardized.len() != rows.len() {
        return Err(Error::shape(format!(
            "{} embeddings vs {} rows",
            standardized.len(),
            rows.len()
        )));
    }
    crate::encoder::save_embeddings(pemb_path, standardized)?;
    let mut w = crate::io::open_writer(&crate::encoder::companion_path(pemb_path))?;
    writeln!(w, "id,label,split,proto_index,flag")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.id,
            r.label.as_u8(),
            r.split.as_str(),
            r.proto_index,
            r.flag
        )?;
    }
    w.flush()?;
    Ok(())
}
