//! Synthetic XCT-like volume generation for desk-scale experiments.
//!
//! Slices hold a bright matrix slab with wavy boundaries and smooth
//! texture noise on a dark air background. Defects are dark ellipsoidal
//! pores and thinner elongated line ridges; mixed clusters place a pore
//! and a line together so windows containing both occur. A configurable
//! fraction of defects sits near the matrix boundary so edge-adjacent
//! defect patches exist for anchor curation. The generator returns an
//! exact voxel mask distinguishing pore and line voxels.

use crate::data::{Label, Volume, PATCH_SIDE};
use crate::head::SemanticType;
use crate::numerics::Rng;
use crate::{Error, Result};

pub const VOXEL_MATRIX: u8 = 1;
pub const VOXEL_PORE: u8 = 2;
pub const VOXEL_LINE: u8 = 4;

/// Geometry and defect densities for one synthetic volume.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Vertical matrix extent as fractions of the slice height; an empty
    /// interval produces a pure-air volume.
    pub matrix_span: (f64, f64),
    pub pores_per_slice: f64,
    pub lines_per_slice: f64,
    /// Pore+line pairs placed close together.
    pub mixed_per_slice: f64,
    /// Fraction of defects centered near the matrix boundary.
    pub edge_defect_fraction: f64,
    pub air_level: f64,
    pub matrix_level: f64,
    pub pore_level: f64,
    pub line_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            depth: 4,
            height: 930,
            width: 1485,
            matrix_span: (0.14, 0.86),
            pores_per_slice: 3.5,
            lines_per_slice: 2.5,
            mixed_per_slice: 4.0,
            edge_defect_fraction: 0.5,
            air_level: 0.05,
            matrix_level: 0.445,
            pore_level: 0.13,
            line_level: 0.14,
        }
    }
}

impl SynthSpec {
    /// A volume with no matrix at all; everything is air.
    pub fn pure_air(depth: usize, height: usize, width: usize) -> Self {
        SynthSpec {
            depth,
            height,
            width,
            matrix_span: (0.5, 0.5),
            pores_per_slice: 0.0,
            lines_per_slice: 0.0,
            mixed_per_slice: 0.0,
            ..SynthSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < PATCH_SIDE || self.width < PATCH_SIDE || self.depth == 0 {
            return Err(Error::invalid(format!(
                "synthetic volume dims {}x{}x{} too small",
                self.depth, self.height, self.width
            )));
        }
        if self.pores_per_slice < 0.0 || self.lines_per_slice < 0.0 || self.mixed_per_slice < 0.0 {
            return Err(Error::invalid("defect densities must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.edge_defect_fraction) {
            return Err(Error::invalid("edge_defect_fraction must be in [0,1]"));
        }
        Ok(())
    }
}

/// Exact per-voxel ground truth: matrix membership plus pore/line masks.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    flags: Vec<u8>,
}

impl GroundTruth {
    fn new(depth: usize, height: usize, width: usize) -> Self {
        GroundTruth {
            depth,
            height,
            width,
            flags: vec![0; depth * height * width],
        }
    }

    #[inline]
    pub fn flags_at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.flags[(z * self.height + y) * self.width + x]
    }

    #[inline]
    fn or_at(&mut self, z: usize, y: usize, x: usize, bit: u8) {
        self.flags[(z * self.height + y) * self.width + x] |= bit;
    }

    pub fn defect_voxel_count(&self) -> usize {
        self.flags
            .iter()
            .filter(|&&f| f & (VOXEL_PORE | VOXEL_LINE) != 0)
            .count()
    }

    /// Aggregates the ground truth over a 64×64 window of slice `z`.
    pub fn window_truth(&self, z: usize, row: usize, col: usize) -> WindowTruth {
        let mut matrix = 0usize;
        let mut pore = 0usize;
        let mut line = 0usize;
        for y in row..row + PATCH_SIDE {
            let base = (z * self.height + y) * self.width;
            for x in col..col + PATCH_SIDE {
                let f = self.flags[base + x];
                matrix += (f & VOXEL_MATRIX != 0) as usize;
                pore += (f & VOXEL_PORE != 0) as usize;
                line += (f & VOXEL_LINE != 0) as usize;
            }
        }
        let area = (PATCH_SIDE * PATCH_SIDE) as f64;
        WindowTruth {
            matrix_frac: matrix as f64 / area,
            air_frac: 1.0 - matrix as f64 / area,
            pore_voxels: pore,
            line_voxels: line,
        }
    }
}

/// Ground-truth summary of one patch window.
#[derive(Clone, Copy, Debug)]
pub struct WindowTruth {
    pub air_frac: f64,
    pub matrix_frac: f64,
    pub pore_voxels: usize,
    pub line_voxels: usize,
}

impl WindowTruth {
    /// Minimum defect voxels inside a window before it counts as a
    /// defect patch; slivers of a blob clipped at a window corner stay
    /// non-defect.
    pub const MIN_DEFECT_VOXELS: usize = 16;
    /// Curation band: windows with at least this many defect voxels are
    /// unambiguously defective...
    pub const CURATED_DEFECT_VOXELS: usize = 80;
    /// ...and windows with at most this many are unambiguously clean.
    /// Anything between goes to the manual-inspection pool, the
    /// synthetic stand-in for the expert disambiguation of subtle cases.
    pub const CURATED_CLEAN_VOXELS: usize = 4;

    pub fn label(&self) -> Label {
        if self.pore_voxels >= Self::MIN_DEFECT_VOXELS
            || self.line_voxels >= Self::MIN_DEFECT_VOXELS
        {
            Label::Defect
        } else {
            Label::NonDefect
        }
    }

    /// Curated label and type for dataset construction: `None` marks
    /// windows too ambiguous to keep without inspection. Each defect
    /// component must be decisively present (≥ the defect bound) or
    /// decisively absent (≤ the clean bound), so the six type tags stay
    /// crisp and disjoint.
    pub fn curated_label(&self) -> Option<(Label, SemanticType)> {
        let decide = |count: usize| -> Option<bool> {
            if count >= Self::CURATED_DEFECT_VOXELS {
                Some(true)
            } else if count <= Self::CURATED_CLEAN_VOXELS {
                Some(false)
            } else {
                None
            }
        };
        let pores = decide(self.pore_voxels)?;
        let lines = decide(self.line_voxels)?;
        let t = match (pores, lines) {
            (true, true) => SemanticType::PoresLines,
            (true, false) => SemanticType::Pores,
            (false, true) => SemanticType::Lines,
            (false, false) => {
                if self.matrix_frac >= 0.96 {
                    SemanticType::Matrix
                } else if self.air_frac >= 0.96 {
                    SemanticType::Air
                } else {
                    SemanticType::MatrixAir
                }
            }
        };
        Some((t.class(), t))
    }

    pub fn semantic_type(&self) -> SemanticType {
        let pores = self.pore_voxels >= Self::MIN_DEFECT_VOXELS;
        let lines = self.line_voxels >= Self::MIN_DEFECT_VOXELS;
        match (pores, lines) {
            (true, true) => SemanticType::PoresLines,
            (true, false) => SemanticType::Pores,
            (false, true) => SemanticType::Lines,
            (false, false) => {
                if self.matrix_frac >= 0.96 {
                    SemanticType::Matrix
                } else if self.air_frac >= 0.96 {
                    SemanticType::Air
                } else {
                    SemanticType::MatrixAir
                }
            }
        }
    }

    /// Whether the window straddles an air/matrix interface.
    pub fn has_edge(&self) -> bool {
        self.air_frac > 0.04 && self.matrix_frac > 0.04
    }
}

struct MatrixGeometry {
    top_base: f64,
    bot_base: f64,
    left: f64,
    right: f64,
    wave_amp: f64,
    wave_freq: f64,
    phase_top: Vec<f64>,
    phase_bot: Vec<f64>,
}

impl MatrixGeometry {
    fn from_spec(spec: &SynthSpec, rng: &mut Rng) -> Self {
        let phase_top = (0..spec.depth).map(|_| rng.uniform(0.0, std::f64::consts::TAU)).collect();
        let phase_bot = (0..spec.depth).map(|_| rng.uniform(0.0, std::f64::consts::TAU)).collect();
        MatrixGeometry {
            top_base: spec.matrix_span.0 * spec.height as f64,
            bot_base: spec.matrix_span.1 * spec.height as f64,
            left: 0.04 * spec.width as f64,
            right: 0.96 * spec.width as f64,
            wave_amp: 6.0,
            wave_freq: std::f64::consts::TAU / (spec.width as f64 / 3.0),
            phase_top,
            phase_bot,
        }
    }

    fn top(&self, z: usize, x: f64) -> f64 {
        self.top_base + self.wave_amp * (self.wave_freq * x + self.phase_top[z]).sin()
    }

    fn bot(&self, z: usize, x: f64) -> f64 {
        self.bot_base + self.wave_amp * (self.wave_freq * x + self.phase_bot[z]).sin()
    }

    fn contains(&self, z: usize, y: f64, x: f64) -> bool {
        self.bot_base > self.top_base
            && x >= self.left
            && x < self.right
            && y >= self.top(z, x)
            && y < self.bot(z, x)
    }
}

fn count_for(density: f64, rng: &mut Rng) -> usize {
    let base = density.floor() as usize;
    base + rng.bernoulli(density.fract()) as usize
}

struct Painter<'a> {
    volume: &'a mut Volume,
    truth: &'a mut GroundTruth,
    geo: &'a MatrixGeometry,
}

impl Painter<'_> {
    /// Dark ellipsoid centered at (z, y, x); paints only inside matrix.
    fn pore(&mut self, rng: &mut Rng, z: usize, cy: f64, cx: f64, level: f64) {
        let ry = rng.uniform(4.5, 9.0);
        let rx = rng.uniform(4.5, 9.0);
        let rz = rng.uniform(1.0, 2.2);
        let z_lo = (z as f64 - rz).floor().max(0.0) as usize;
        let z_hi = ((z as f64 + rz).ceil() as usize).min(self.volume.depth - 1);
        for zz in z_lo..=z_hi {
            let dz = (zz as f64 - z as f64) / rz;
            if dz.abs() > 1.0 {
                continue;
            }
            let span_y = ry * (1.0 - dz * dz).sqrt();
            let span_x = rx * (1.0 - dz * dz).sqrt();
            let y_lo = (cy - span_y).floor().max(0.0) as usize;
            let y_hi = ((cy + span_y).ceil() as usize).min(self.volume.height - 1);
            let x_lo = (cx - span_x).floor().max(0.0) as usize;
            let x_hi = ((cx + span_x).ceil() as usize).min(self.volume.width - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let u = ((y as f64 - cy) / ry).powi(2)
                        + ((x as f64 - cx) / rx).powi(2)
                        + dz * dz;
                    if u <= 1.0 && self.geo.contains(zz, y as f64, x as f64) {
                        let v = level + 0.02 * rng.normal();
                        self.volume.set(zz, y, x, to_u16(v));
                        self.truth.or_at(zz, y, x, VOXEL_PORE);
                    }
                }
            }
        }
    }

    /// Thin dark ridge along a random direction; paints only inside matrix.
    fn line(&mut self, rng: &mut Rng, z: usize, cy: f64, cx: f64, level: f64) {
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let len = rng.uniform(30.0, 90.0);
        let half_thick = rng.uniform(2.0, 3.2);
        let depth_extent = 1 + rng.below(2);
        let (dy, dx) = (theta.sin(), theta.cos());
        let half = len / 2.0;
        let pad = half_thick + 1.0;
        let y_lo = (cy - half * dy.abs() - pad).floor().max(0.0) as usize;
        let y_hi = ((cy + half * dy.abs() + pad).ceil() as usize).min(self.volume.height - 1);
        let x_lo = (cx - half * dx.abs() - pad).floor().max(0.0) as usize;
        let x_hi = ((cx + half * dx.abs() + pad).ceil() as usize).min(self.volume.width - 1);
        let z_hi = (z + depth_extent - 1).min(self.volume.depth - 1);
        for zz in z..=z_hi {
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    // Distance from (y,x) to the centered segment.
                    let py = y as f64 - cy;
                    let px = x as f64 - cx;
                    let t = (py * dy + px * dx).clamp(-half, half);
                    let dist = ((py - t * dy).powi(2) + (px - t * dx).powi(2)).sqrt();
                    if dist <= half_thick && self.geo.contains(zz, y as f64, x as f64) {
                        let v = level + 0.015 * rng.normal();
                        self.volume.set(zz, y, x, to_u16(v));
                        self.truth.or_at(zz, y, x, VOXEL_LINE);
                    }
                }
            }
        }
    }
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Picks a defect center inside the matrix, optionally near its boundary.
fn defect_center(
    geo: &MatrixGeometry,
    spec: &SynthSpec,
    z: usize,
    near_edge: bool,
    rng: &mut Rng,
) -> Option<(f64, f64)> {
    if geo.bot_base - geo.top_base < 80.0 {
        return None;
    }
    for _ in 0..64 {
        let x = rng.uniform(geo.left + 20.0, geo.right - 20.0);
        let y = if near_edge {
            let inset = rng.uniform(6.0, 20.0);
            if rng.bernoulli(0.5) {
                geo.top(z, x) + inset
            } else {
                geo.bot(z, x) - inset
            }
        } else {
            rng.uniform(geo.top(z, x) + 40.0, geo.bot(z, x) - 40.0)
        };
        if y > 12.0 && y < spec.height as f64 - 12.0 && geo.contains(z, y, x) {
            return Some((y, x));
        }
    }
    None
}

/// Generates one volume and its exact ground truth.
pub fn generate_synthetic_volume(spec: &SynthSpec, rng: &mut Rng) -> Result<(Volume, GroundTruth)> {
    spec.validate()?;
    let mut volume = Volume::new(
        format!("synth{}", rng.seed()),
        spec.depth,
        spec.height,
        spec.width,
    )?;
    let mut truth = GroundTruth::new(spec.depth, spec.height, spec.width);
    let geo = MatrixGeometry::from_spec(spec, rng);

    // Matrix texture: isotropic speckle plus bright fiber-like dots.
    // Directional waves are deliberately avoided: per-patch
    // normalization would amplify their troughs into ridge patterns
    // indistinguishable from faint line defects.
    for z in 0..spec.depth {
        for y in 0..spec.height {
            for x in 0..spec.width {
                let v = if geo.contains(z, y as f64, x as f64) {
                    truth.or_at(z, y, x, VOXEL_MATRIX);
                    spec.matrix_level + 0.010 * rng.normal()
                } else {
                    (spec.air_level + 0.012 * rng.normal()).min(0.11)
                };
                volume.set(z, y, x, to_u16(v));
            }
        }
    }
    // Fiber cross-sections: small bright dots scattered over the matrix,
    // roughly one per 18×18 px patch of slice area.
    let dots_per_slice = spec.height * spec.width / 324;
    for z in 0..spec.depth {
        for _ in 0..dots_per_slice {
            let cy = rng.uniform(0.0, spec.height as f64);
            let cx = rng.uniform(0.0, spec.width as f64);
            let radius = rng.uniform(1.0, 2.2);
            let gain = rng.uniform(0.03, 0.07);
            let y_lo = (cy - radius).floor().max(0.0) as usize;
            let y_hi = ((cy + radius).ceil() as usize).min(spec.height - 1);
            let x_lo = (cx - radius).floor().max(0.0) as usize;
            let x_hi = ((cx + radius).ceil() as usize).min(spec.width - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let r2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2))
                        / (radius * radius);
                    if r2 <= 1.0 && geo.contains(z, y as f64, x as f64) {
                        let base = volume.get(z, y, x) as f64 / 65535.0;
                        volume.set(z, y, x, to_u16(base + gain * (1.0 - r2)));
                    }
                }
            }
        }
    }

    let mut painter = Painter {
        volume: &mut volume,
        truth: &mut truth,
        geo: &geo,
    };
    for z in 0..spec.depth {
        for _ in 0..count_for(spec.pores_per_slice, rng) {
            let near_edge = rng.bernoulli(spec.edge_defect_fraction);
            if let Some((cy, cx)) = defect_center(&geo, spec, z, near_edge, rng) {
                painter.pore(rng, z, cy, cx, spec.pore_level);
            }
        }
        for _ in 0..count_for(spec.lines_per_slice, rng) {
            let near_edge = rng.bernoulli(spec.edge_defect_fraction);
            if let Some((cy, cx)) = defect_center(&geo, spec, z, near_edge, rng) {
                painter.line(rng, z, cy, cx, spec.line_level);
            }
        }
        for _ in 0..count_for(spec.mixed_per_slice, rng) {
            let near_edge = rng.bernoulli(spec.edge_defect_fraction);
            if let Some((cy, cx)) = defect_center(&geo, spec, z, near_edge, rng) {
                painter.pore(rng, z, cy, cx, spec.pore_level);
                // Keep the pair tight so one window captures both.
                let oy = rng.uniform(-12.0, 12.0);
                let ox = rng.uniform(-12.0, 12.0);
                painter.line(rng, z, cy + oy, cx + ox, spec.line_level);
            }
        }
    }

    Ok((volume, truth))
}
