//! Deterministic patch descriptors: a fixed 40-dimensional statistical
//! embedding computed directly from the windowed tile. Serves as the
//! file-backed embedding provider when no trained backbone is wanted.
//!
//! Layout: intensity distribution (0-8), population fractions (9-12),
//! gradient energy (13-16), interface profiles (17-18), global
//! dark-component morphology (19-22), per-quadrant morphology (23-34),
//! the global morphology repeated for extra weight in the head's
//! dimension-normalized distances (35-38), and a strict-dark area
//! (39). Defect evidence deliberately occupies nearly half the
//! dimensions so windows sharing an air/matrix interface do not pull
//! defect and non-defect neighborhoods together.

use crate::data::{Patch, PATCH_SIDE};
use crate::encoder::EmbeddingBatch;
use crate::numerics::Mat64;
use crate::Result;

/// Dimension of the descriptor embedding.
pub const DESCRIPTOR_DIM: usize = 40;

/// Air-dark bound on the unit intensity scale (matches the auto-label
/// threshold).
const AIR_BOUND: f64 = 30.0 / 255.0;
/// Upper bound of defect-dark intensities (pores/lines sit below it,
/// matrix texture above).
const DEFECT_BOUND: f64 = 0.30;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Area, elongation, spread, fill of the defect-dark pixels among
/// `points` (already filtered), relative to `region_area`.
fn dark_morphology(points: &[(f64, f64)], region_area: f64) -> [f64; 4] {
    if points.len() < 4 {
        return [0.0; 4];
    }
    let m = points.len() as f64;
    let cy = points.iter().map(|p| p.0).sum::<f64>() / m;
    let cx = points.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for &(y, x) in points {
        syy += (y - cy) * (y - cy);
        sxx += (x - cx) * (x - cx);
        sxy += (y - cy) * (x - cx);
    }
    syy /= m;
    sxx /= m;
    sxy /= m;
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = (tr / 2.0 - disc).max(1e-9);
    [
        (m / region_area).sqrt(),
        (l1 / l2).ln().min(8.0),
        (l1.max(1e-9)).sqrt().ln().max(-3.0),
        m / (l1.sqrt() * l2.sqrt() * std::f64::consts::PI * 4.0 + 1.0),
    ]
}

/// Computes the descriptor of one raw (windowed, unnormalized) tile.
pub fn patch_descriptor(tile: &[f32]) -> Vec<f64> {
    let side = PATCH_SIDE;
    let n = tile.len() as f64;
    let v: Vec<f64> = tile.iter().map(|&x| x as f64).collect();
    let mut out = Vec::with_capacity(DESCRIPTOR_DIM);

    // 0-8: intensity distribution.
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = v.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.push(mean);
    out.push(var.sqrt());
    out.push(sorted[0]);
    out.push(sorted[sorted.len() - 1]);
    for q in [0.10, 0.25, 0.50, 0.75, 0.90] {
        out.push(quantile(&sorted, q));
    }

    // 9-12: population fractions.
    let frac = |pred: &dyn Fn(f64) -> bool| v.iter().filter(|&&x| pred(x)).count() as f64 / n;
    out.push(frac(&|x| x < AIR_BOUND));
    out.push(frac(&|x| (AIR_BOUND..DEFECT_BOUND).contains(&x)));
    out.push(frac(&|x| x >= 0.35));
    out.push(frac(&|x| x >= 0.48));

    // 13-16: gradient energy.
    let mut gx_sum = 0.0;
    let mut gy_sum = 0.0;
    let mut gmag = Vec::with_capacity(v.len());
    for y in 0..side {
        for x in 0..side {
            let gx = if x + 1 < side { v[y * side + x + 1] - v[y * side + x] } else { 0.0 };
            let gy = if y + 1 < side { v[(y + 1) * side + x] - v[y * side + x] } else { 0.0 };
            gx_sum += gx.abs();
            gy_sum += gy.abs();
            gmag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let gmean = gmag.iter().sum::<f64>() / n;
    let gvar = gmag.iter().map(|g| (g - gmean) * (g - gmean)).sum::<f64>() / n;
    out.push(gx_sum / n);
    out.push(gy_sum / n);
    out.push(gmean);
    out.push(gvar.sqrt());

    // 17-18: interface profiles (row/col mean ranges).
    let mut row_means = Vec::with_capacity(side);
    let mut col_means = vec![0.0; side];
    for y in 0..side {
        let row = &v[y * side..(y + 1) * side];
        row_means.push(row.iter().sum::<f64>() / side as f64);
        for (x, &val) in row.iter().enumerate() {
            col_means[x] += val / side as f64;
        }
    }
    let range = |xs: &[f64]| {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    out.push(range(&row_means));
    out.push(range(&col_means));

    // 19-22: global dark-component morphology.
    let dark: Vec<(f64, f64)> = (0..side * side)
        .filter(|&i| (AIR_BOUND..DEFECT_BOUND).contains(&v[i]))
        .map(|i| ((i / side) as f64, (i % side) as f64))
        .collect();
    let global_morph = dark_morphology(&dark, n);
    out.extend_from_slice(&global_morph);

    // 23-34: per-quadrant dark morphology (area, elongation, fill).
    let half = side / 2;
    for qy in 0..2 {
        for qx in 0..2 {
            let quadrant: Vec<(f64, f64)> = dark
                .iter()
                .copied()
                .filter(|&(y, x)| {
                    (y as usize) / half == qy && (x as usize) / half == qx
                })
                .collect();
            let m = dark_morphology(&quadrant, (half * half) as f64);
            out.push(m[0]);
            out.push(m[1]);
            out.push(m[3]);
        }
    }

    // 35-38: global morphology repeated (double weight).
    out.extend_from_slice(&global_morph);

    // 39: strict-dark area.
    out.push(frac(&|x| (AIR_BOUND..0.20).contains(&x)).sqrt());

    debug_assert_eq!(out.len(), DESCRIPTOR_DIM);
    out
}

/// Descriptor embeddings for a set of patches, aligned with `ids`.
pub fn descriptor_batch(patches: &[Patch], ids: Vec<u32>, threads: usize) -> Result<EmbeddingBatch> {
    let rows = crate::numerics::parallel_map(patches.len(), threads, |i| {
        patch_descriptor(&patches[i].tile)
    });
    let mut data = Mat64::zeros(patches.len(), DESCRIPTOR_DIM);
    for (i, row) in rows.into_iter().enumerate() {
        data.row_mut(i).copy_from_slice(&row);
    }
    EmbeddingBatch::new(ids, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn tile_of(f: impl Fn(usize, usize) -> f32) -> Vec<f32> {
        let mut t = vec![0.0; PATCH_SIDE * PATCH_SIDE];
        for y in 0..PATCH_SIDE {
            for x in 0..PATCH_SIDE {
                t[y * PATCH_SIDE + x] = f(y, x);
            }
        }
        t
    }

    #[test]
    fn descriptor_is_deterministic_and_fixed_dim() {
        let mut rng = Rng::new(3);
        let tile: Vec<f32> = (0..PATCH_SIDE * PATCH_SIDE)
            .map(|_| rng.next_f64() as f32)
            .collect();
        let a = patch_descriptor(&tile);
        let b = patch_descriptor(&tile);
        assert_eq!(a, b);
        assert_eq!(a.len(), DESCRIPTOR_DIM);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn descriptor_separates_generative_factors() {
        let air = tile_of(|_, _| 0.05);
        let matrix = tile_of(|_, _| 0.45);
        let edge = tile_of(|y, _| if y < 32 { 0.05 } else { 0.45 });
        // Roundish dark blob vs elongated dark ridge on matrix.
        let pore = tile_of(|y, x| {
            let d = ((y as f32 - 32.0).powi(2) + (x as f32 - 32.0).powi(2)).sqrt();
            if d < 8.0 { 0.13 } else { 0.45 }
        });
        let line = tile_of(|y, x| {
            if (y as i32 - x as i32).abs() < 3 { 0.14 } else { 0.45 }
        });

        let d_air = patch_descriptor(&air);
        let d_matrix = patch_descriptor(&matrix);
        let d_edge = patch_descriptor(&edge);
        let d_pore = patch_descriptor(&pore);
        let d_line = patch_descriptor(&line);

        // Mean separates air from matrix; air fraction flags air.
        assert!(d_air[0] < 0.1 && d_matrix[0] > 0.4);
        assert!(d_air[9] > 0.9 && d_matrix[9] == 0.0);
        // Edge has both populations and a large row range.
        assert!(d_edge[9] > 0.4, "air_frac {}", d_edge[9]);
        assert!(d_edge[17] > 0.3, "row range {}", d_edge[17]);
        // Dark-component area nonzero only for defect tiles.
        assert_eq!(d_air[19], 0.0);
        assert_eq!(d_matrix[19], 0.0);
        assert_eq!(d_edge[19], 0.0);
        assert!(d_pore[19] > 0.0 && d_line[19] > 0.0);
        // Elongation separates the ridge from the blob.
        assert!(
            d_line[20] > d_pore[20] + 1.0,
            "line elongation {} vs pore {}",
            d_line[20],
            d_pore[20]
        );
        // Defect evidence dominates the distance between a clean edge
        // and a defective tile.
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        };
        assert!(dist(&d_edge, &d_line) > dist(&d_matrix, &d_matrix));
    }
}
