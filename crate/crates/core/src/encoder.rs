//! Embedding providers: precomputed embedding files, the per-dimension
//! standardizer, and a compact convolutional encoder whose early stages
//! freeze after warm-up while the final stage stays trainable.

pub mod descriptor;

use std::path::Path;

use crate::data::{Label, Patch, Split, PATCH_AREA, PATCH_SIDE};
use crate::io as bin;
use crate::numerics::{Mat64, Rng};
use crate::{Error, Result};

/// n×D embeddings with aligned record ids.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub ids: Vec<u32>,
    pub data: Mat64,
}

impl EmbeddingBatch {
    pub fn new(ids: Vec<u32>, data: Mat64) -> Result<EmbeddingBatch> {
        if ids.len() != data.rows() {
            return Err(Error::shape(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                data.rows()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("embedding batch".into()));
        }
        Ok(EmbeddingBatch { ids, data })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Per-dimension mean and scale fitted on training embeddings; defines
/// the scaled space where prototypes live.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dims whose training variance was zero (scale forced to 1).
    pub degenerate: Vec<bool>,
}

/// Population statistics per dimension; zero-variance dims get scale 1
/// and a warning flag.
pub fn fit_standardizer(train: &EmbeddingBatch) -> Result<Standardizer> {
    let n = train.len();
    if n < 2 {
        return Err(Error::invalid("standardizer needs at least 2 rows"));
    }
    let d = train.dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(train.data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (s, (&v, &m)) in var.iter_mut().zip(train.data.row(i).iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    let mut scale = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for s in &var {
        let v = s / n as f64;
        if v <= 0.0 {
            scale.push(1.0);
            degenerate.push(true);
        } else {
            scale.push(v.sqrt());
            degenerate.push(false);
        }
    }
    Ok(Standardizer {
        mean,
        scale,
        degenerate,
    })
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "standardizer dim {} vs input {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    pub fn inverse_vec(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::shape("standardizer dim mismatch"));
        }
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect())
    }

    pub fn transform(&self, batch: &EmbeddingBatch) -> Result<EmbeddingBatch> {
        let mut out = Mat64::zeros(batch.len(), batch.dim());
        for i in 0..batch.len() {
            let row = self.transform_vec(batch.data.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        EmbeddingBatch::new(batch.ids.clone(), out)
    }

    /// Standardizer file: magic `PSTD`, u32 dim, then dim (μ, σ) pairs
    /// as f64 LE.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = bin::open_writer(path)?;
        bin::write_magic(&mut w, b"PSTD")?;
        bin::write_u32(&mut w, self.dim() as u32)?;
        for (m, s) in self.mean.iter().zip(&self.scale) {
            bin::write_f64(&mut w, *m)?;
            bin::write_f64(&mut w, *s)?;
        }
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Standardizer> {
        let mut r = bin::open_reader(path)?;
        bin::read_magic(&mut r, b"PSTD", "standardizer")?;
        let dim = bin::read_u32(&mut r, "standardizer dim")? as usize;
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(bin::read_f64(&mut r, "standardizer mean")?);
            let s = bin::read_f64(&mut r, "standardizer scale")?;
            if s <= 0.0 {
                return Err(Error::format(format!("standardizer: scale {s} must be > 0")));
            }
            scale.push(s);
        }
        // Degeneracy flags are a fit-time warning, not part of the format.
        Ok(Standardizer {
            mean,
            scale,
            degenerate: vec![false; dim],
        })
    }
}

const EMBEDDING_MAGIC: &[u8; 4] = b"PEMB";

/// Embedding file: magic `PEMB`, u32 version=1, u32 count, u32 dim,
/// count×dim f32 LE row-major.
pub fn save_embeddings(path: &Path, batch: &EmbeddingBatch) -> Result<()> {
    let mut w = bin::open_writer(path)?;
    bin::write_magic(&mut w, EMBEDDING_MAGIC)?;
    bin::write_u32(&mut w, 1)?;
    bin::write_u32(&mut w, batch.len() as u32)?;
    bin::write_u32(&mut w, batch.dim() as u32)?;
    for i in 0..batch.len() {
        let row: Vec<f32> = batch.data.row(i).iter().map(|&v| v as f32).collect();
        bin::write_f32_slice(&mut w, &row)?;
    }
    use std::io::Write;
    w.flush()?;
    Ok(())
}

/// Reads a `PEMB` file. Record ids come from the companion CSV when one
/// exists next to the file; otherwise they are sequential.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingBatch> {
    let mut r = bin::open_reader(path)?;
    bin::read_magic(&mut r, EMBEDDING_MAGIC, "embedding file")?;
    let version = bin::read_u32(&mut r, "embedding version")?;
    if version != 1 {
        return Err(Error::format(format!("embedding file: unsupported version {version}")));
    }
    let count = bin::read_u32(&mut r, "embedding count")? as usize;
    let dim = bin::read_u32(&mut r, "embedding dim")? as usize;
    let mut data = Mat64::zeros(count, dim);
    for i in 0..count {
        let row = bin::read_f32_vec(&mut r, dim, "embedding file")?;
        for (dst, v) in data.row_mut(i).iter_mut().zip(row) {
            *dst = v as f64;
        }
    }
    let ids = match load_companion(&companion_path(path)) {
        Ok(meta) if meta.len() == count => meta.into_iter().map(|m| m.0).collect(),
        _ => (0..count as u32).collect(),
    };
    EmbeddingBatch::new(ids, data)
}

pub fn companion_path(pemb: &Path) -> std::path::PathBuf {
    pemb.with_extension("csv")
}

/// Companion CSV `id,label,split` in file order.
pub fn save_companion(path: &Path, rows: &[(u32, Label, Split)]) -> Result<()> {
    use std::io::Write;
    let mut w = bin::open_writer(path)?;
    writeln!(w, "id,label,split")?;
    for (id, label, split) in rows {
        writeln!(w, "{},{},{}", id, label.as_u8(), split.as_str())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_companion(path: &Path) -> Result<Vec<(u32, Label, Split)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("companion csv: empty file"))?;
    if !header.starts_with("id,label,split") {
        return Err(Error::format(format!("companion csv: unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 3 {
            return Err(Error::format(format!(
                "companion csv line {}: expected 3 fields",
                lineno + 2
            )));
        }
        let id = parts[0]
            .parse::<u32>()
            .map_err(|_| Error::format(format!("companion csv line {}: bad id", lineno + 2)))?;
        let label = Label::from_u8(parts[1].parse::<u8>().map_err(|_| {
            Error::format(format!("companion csv line {}: bad label", lineno + 2))
        })?)?;
        let split = Split::parse(parts[2])?;
        out.push((id, label, split));
    }
    Ok(out)
}

pub const NUM_STAGES: usize = 3;

/// One 3×3 stride-2 convolution stage with padding 1, followed by ReLU.
#[derive(Clone, Debug)]
pub struct ConvStage {
    pub c_in: usize,
    pub c_out: usize,
    /// Weights laid out [out][in][ky][kx].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConvStage {
    fn new(c_in: usize, c_out: usize, rng: &mut Rng) -> ConvStage {
        let std = (2.0 / (c_in * 9) as f64).sqrt();
        let w = (0..c_out * c_in * 9).map(|_| std * rng.normal()).collect();
        ConvStage {
            c_in,
            c_out,
            w,
            b: vec![0.0; c_out],
        }
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.c_in + i) * 3 + ky) * 3 + kx
    }

    /// Valid output-column range for kernel column `kx`: the input
    /// column 2·ox + kx − 1 must fall inside [0, in_side).
    #[inline]
    fn ox_range(kx: usize, in_side: usize, out_side: usize) -> (usize, usize) {
        let lo = usize::from(kx == 0);
        let hi = (((in_side - kx) / 2) + 1).min(out_side);
        (lo, hi)
    }

    /// Forward: out spatial = in spatial / 2 (stride 2, pad 1). Returns
    /// post-ReLU activations. Inner loops run over contiguous output
    /// rows against stride-2 input windows.
    fn forward(&self, input: &[f64], in_side: usize) -> Vec<f64> {
        let out_side = in_side / 2;
        let mut out = vec![0.0; self.c_out * out_side * out_side];
        for o in 0..self.c_out {
            let out_plane = &mut out[o * out_side * out_side..(o + 1) * out_side * out_side];
            out_plane.fill(self.b[o]);
            for i in 0..self.c_in {
                let plane = &input[i * in_side * in_side..(i + 1) * in_side * in_side];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let w = self.w[self.widx(o, i, ky, kx)];
                        let (ox_lo, ox_hi) = Self::ox_range(kx, in_side, out_side);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..out_side {
                            let iy = (oy * 2 + ky).wrapping_sub(1);
                            if iy >= in_side {
                                continue;
                            }
                            let in_row = &plane[iy * in_side..(iy + 1) * in_side];
                            let out_row = &mut out_plane[oy * out_side..(oy + 1) * out_side];
                            let ix0 = 2 * ox_lo + kx - 1;
                            for (dst, src) in out_row[ox_lo..ox_hi]
                                .iter_mut()
                                .zip(in_row[ix0..].iter().step_by(2))
                            {
                                *dst += w * src;
                            }
                        }
                    }
                }
            }
        }
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    /// Backward through ReLU + conv. `post` is the stage's own output
    /// (ReLU gate), `input` its input. Accumulates weight/bias grads and
    /// returns the gradient w.r.t. the input when requested.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        input: &[f64],
        in_side: usize,
        post: &[f64],
        upstream: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let out_side = in_side / 2;
        // ReLU gate applied once.
        let mut dpre = vec![0.0; post.len()];
        for ((d, &p), &u) in dpre.iter_mut().zip(post).zip(upstream) {
            if p > 0.0 {
                *d = u;
            }
        }
        let mut din = if want_input_grad {
            Some(vec![0.0; self.c_in * in_side * in_side])
        } else {
            None
        };
        for o in 0..self.c_out {
            let dplane = &dpre[o * out_side * out_side..(o + 1) * out_side * out_side];
            db[o] += dplane.iter().sum::<f64>();
            for i in 0..self.c_in {
                let plane_range = i * in_side * in_side..(i + 1) * in_side * in_side;
                let plane = &input[plane_range.clone()];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = self.widx(o, i, ky, kx);
                        let w = self.w[widx];
                        let (ox_lo, ox_hi) = Self::ox_range(kx, in_side, out_side);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix0 = 2 * ox_lo + kx - 1;
                        let mut wacc = 0.0;
                        for oy in 0..out_side {
                            let iy = (oy * 2 + ky).wrapping_sub(1);
                            if iy >= in_side {
                                continue;
                            }
                            let in_row = &plane[iy * in_side..(iy + 1) * in_side];
                            let d_row = &dplane[oy * out_side..(oy + 1) * out_side];
                            for (&g, src) in d_row[ox_lo..ox_hi]
                                .iter()
                                .zip(in_row[ix0..].iter().step_by(2))
                            {
                                wacc += g * src;
                            }
                        }
                        dw[widx] += wacc;
                        if let Some(din) = din.as_mut() {
                            let din_plane = &mut din[plane_range.clone()];
                            for oy in 0..out_side {
                                let iy = (oy * 2 + ky).wrapping_sub(1);
                                if iy >= in_side {
                                    continue;
                                }
                                let d_row = &dplane[oy * out_side..(oy + 1) * out_side];
                                let din_row = &mut din_plane[iy * in_side..(iy + 1) * in_side];
                                for (&g, dst) in d_row[ox_lo..ox_hi]
                                    .iter()
                                    .zip(din_row[ix0..].iter_mut().step_by(2))
                                {
                                    *dst += w * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        din
    }
}

/// Intermediate activations for one sample, kept for backward.
pub struct ForwardCache {
    acts: Vec<Vec<f64>>, // input, then post-ReLU of each stage
}

/// Gradients for the trainable suffix only; frozen stages never appear.
#[derive(Clone, Debug, Default)]
pub struct EncoderGrads {
    /// (stage index, dW, dB).
    pub stages: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl EncoderGrads {
    pub fn add_assign(&mut self, other: &EncoderGrads) {
        if self.stages.is_empty() {
            self.stages = other.stages.clone();
            return;
        }
        for ((_, w, b), (_, ow, ob)) in self.stages.iter_mut().zip(&other.stages) {
            for (x, y) in w.iter_mut().zip(ow) {
                *x += y;
            }
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for (_, w, b) in &mut self.stages {
            w.iter_mut().for_each(|x| *x *= f);
            b.iter_mut().for_each(|x| *x *= f);
        }
    }
}

/// An embedding provider for raw (windowed, unnormalized) tiles: either
/// the compact network (which sees per-patch-normalized input) or the
/// deterministic statistical descriptor.
pub enum Embedder<'a> {
    Network(&'a CompactEncoder),
    Descriptor,
}

impl Embedder<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Network(enc) => enc.dim,
            Embedder::Descriptor => descriptor::DESCRIPTOR_DIM,
        }
    }

    /// Embeds one raw tile, applying the provider's own preprocessing.
    pub fn embed_tile(&self, raw_tile: &[f32]) -> Result<Vec<f64>> {
        match self {
            Embedder::Network(enc) => {
                let patch = Patch {
                    tile: raw_tile.to_vec(),
                    provenance: crate::data::Provenance {
                        volume: String::new(),
                        slice: 0,
                        row: 0,
                        col: 0,
                    },
                    label: None,
                    semantic_type: None,
                    normalized: false,
                };
                enc.forward(&crate::data::normalize_patch(&patch).tile)
            }
            Embedder::Descriptor => Ok(descriptor::patch_descriptor(raw_tile)),
        }
    }
}

/// Three stride-2 conv stages plus global average pooling down to a
/// D-dimensional embedding. `frozen_stages` leading stages take no
/// gradient; the remainder form the trainable suffix.
#[derive(Clone, Debug)]
pub struct CompactEncoder {
    pub dim: usize,
    pub frozen_stages: usize,
    stages: Vec<ConvStage>,
}

impl CompactEncoder {
    pub fn channels(dim: usize) -> [usize; NUM_STAGES] {
        [(dim / 8).max(4), (dim / 4).max(8), dim]
    }

    pub fn new(dim: usize, rng: &mut Rng) -> Result<CompactEncoder> {
        if dim < 8 {
            return Err(Error::invalid("encoder dim must be >= 8"));
        }
        let ch = Self::channels(dim);
        let stages = vec![
            ConvStage::new(1, ch[0], rng),
            ConvStage::new(ch[0], ch[1], rng),
            ConvStage::new(ch[1], ch[2], rng),
        ];
        Ok(CompactEncoder {
            dim,
            frozen_stages: 0,
            stages,
        })
    }

    pub fn set_frozen_stages(&mut self, n: usize) -> Result<()> {
        if n > NUM_STAGES {
            return Err(Error::invalid(format!("cannot freeze {n} of {NUM_STAGES} stages")));
        }
        self.frozen_stages = n;
        Ok(())
    }

    pub fn stage(&self, i: usize) -> &ConvStage {
        &self.stages[i]
    }

    pub fn stage_mut(&mut self, i: usize) -> &mut ConvStage {
        &mut self.stages[i]
    }

    /// Disjoint mutable borrows of all stages, in order.
    pub fn stages_mut(&mut self) -> Vec<&mut ConvStage> {
        self.stages.iter_mut().collect()
    }

    fn sides() -> [usize; NUM_STAGES + 1] {
        [PATCH_SIDE, 32, 16, 8]
    }

    /// Deterministic forward pass for one normalized tile.
    pub fn forward(&self, tile: &[f32]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(tile)?.0)
    }

    pub fn forward_cached(&self, tile: &[f32]) -> Result<(Vec<f64>, ForwardCache)> {
        if tile.len() != PATCH_AREA {
            return Err(Error::shape(format!(
                "encoder input has {} values, expected {PATCH_AREA}",
                tile.len()
            )));
        }
        let sides = Self::sides();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(NUM_STAGES + 1);
        acts.push(tile.iter().map(|&v| v as f64).collect());
        for (s, stage) in self.stages.iter().enumerate() {
            let next = stage.forward(&acts[s], sides[s]);
            acts.push(next);
        }
        let last = &acts[NUM_STAGES];
        let spatial = sides[NUM_STAGES] * sides[NUM_STAGES];
        let mut emb = vec![0.0; self.dim];
        for (c, e) in emb.iter_mut().enumerate() {
            *e = last[c * spatial..(c + 1) * spatial].iter().sum::<f64>() / spatial as f64;
        }
        Ok((emb, ForwardCache { acts }))
    }

    /// Embeds a list of tiles; rows follow input order.
    pub fn embed_tiles(&self, tiles: &[&[f32]]) -> Result<Mat64> {
        let mut out = Mat64::zeros(tiles.len(), self.dim);
        for (i, tile) in tiles.iter().enumerate() {
            let emb = self.forward(tile)?;
            out.row_mut(i).copy_from_slice(&emb);
        }
        Ok(out)
    }

    pub fn embed_patches(&self, patches: &[Patch]) -> Result<Mat64> {
        let tiles: Vec<&[f32]> = patches.iter().map(|p| p.tile.as_slice()).collect();
        self.embed_tiles(&tiles)
    }

    /// Backpropagates `upstream` (dL/d embedding) through the trainable
    /// suffix; frozen-stage gradients are identically absent.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<EncoderGrads> {
        if upstream.len() != self.dim {
            return Err(Error::shape("encoder upstream gradient dim mismatch"));
        }
        let mut grads = EncoderGrads::default();
        if self.frozen_stages >= NUM_STAGES {
            return Ok(grads);
        }
        let sides = Self::sides();
        let spatial = sides[NUM_STAGES] * sides[NUM_STAGES];
        // GAP backward: each location shares the channel gradient.
        let mut current: Vec<f64> = Vec::with_capacity(self.dim * spatial);
        for &g in upstream {
            current.extend(std::iter::repeat_n(g / spatial as f64, spatial));
        }
        let mut per_stage: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; NUM_STAGES];
        for s in (self.frozen_stages..NUM_STAGES).rev() {
            let stage = &self.stages[s];
            let mut dw = vec![0.0; stage.w.len()];
            let mut db = vec![0.0; stage.b.len()];
            let want_input = s > self.frozen_stages;
            let din = stage.backward(
                &cache.acts[s],
                sides[s],
                &cache.acts[s + 1],
                &current,
                &mut dw,
                &mut db,
                want_input,
            );
            per_stage[s] = Some((dw, db));
            if let Some(din) = din {
                current = din;
            }
        }
        for (s, g) in per_stage.into_iter().enumerate() {
            if let Some((dw, db)) = g {
                grads.stages.push((s, dw, db));
            }
        }
        Ok(grads)
    }

    /// Parameter count of the trainable suffix.
    pub fn trainable_len(&self) -> usize {
        self.stages[self.frozen_stages..]
            .iter()
            .map(|s| s.w.len() + s.b.len())
            .sum()
    }

    /// FNV fingerprint of the frozen prefix, for invariance checks.
    pub fn frozen_checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for stage in &self.stages[..self.frozen_stages] {
            for v in stage.w.iter().chain(&stage.b) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bin::fnv1a64(&bytes)
    }

    /// Encoder checkpoint: magic `PENC`, u32 version=1, u32 dim,
    /// u32 frozen_stages, then per stage u32 c_in, u32 c_out, weights
    /// and biases as f64 LE.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = bin::open_writer(path)?;
        bin::write_magic(&mut w, b"PENC")?;
        bin::write_u32(&mut w, 1)?;
        bin::write_u32(&mut w, self.dim as u32)?;
        bin::write_u32(&mut w, self.frozen_stages as u32)?;
        for s in &self.stages {
            bin::write_u32(&mut w, s.c_in as u32)?;
            bin::write_u32(&mut w, s.c_out as u32)?;
            bin::write_f64_slice(&mut w, &s.w)?;
            bin::write_f64_slice(&mut w, &s.b)?;
        }
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CompactEncoder> {
        let mut r = bin::open_reader(path)?;
        bin::read_magic(&mut r, b"PENC", "encoder checkpoint")?;
        let version = bin::read_u32(&mut r, "encoder version")?;
        if version != 1 {
            return Err(Error::format(format!("encoder checkpoint: unsupported version {version}")));
        }
        let dim = bin::read_u32(&mut r, "encoder dim")? as usize;
        let frozen = bin::read_u32(&mut r, "encoder frozen stages")? as usize;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for _ in 0..NUM_STAGES {
            let c_in = bin::read_u32(&mut r, "encoder stage c_in")? as usize;
            let c_out = bin::read_u32(&mut r, "encoder stage c_out")? as usize;
            let w = bin::read_f64_vec(&mut r, c_out * c_in * 9, "encoder weights")?;
            let b = bin::read_f64_vec(&mut r, c_out, "encoder biases")?;
            stages.push(ConvStage { c_in, c_out, w, b });
        }
        Ok(CompactEncoder {
            dim,
            frozen_stages: frozen,
            stages,
        })
    }
}
