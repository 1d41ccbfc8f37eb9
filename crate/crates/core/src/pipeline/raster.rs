//! Tile-based alpha compositing, forward and backward, plus the timed target
//! upload stage.
//!
//! Both passes parallelize over tiles; the backward pass accumulates
//! per-Gaussian gradients as per-tile contribution lists merged in tile-major
//! order, so results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::math::{lit, Scalar, V3};
use crate::scene::{ImageBuffer, TileGrid};

use super::{
    PipelineError, PipelineParams, ProjectedSet, RasterGrads, RenderAux, ResidentTarget,
    SortedIntersections,
};

/// One composited sample: alpha and the transmittance in front of it.
#[inline]
fn sample_alpha<T: Scalar>(
    proj: &ProjectedSet<T>,
    id: usize,
    px: T,
    py: T,
    params: &PipelineParams<T>,
) -> Option<(T, bool)> {
    let mean = proj.means2d[id];
    let [a, b, c] = proj.conics[id];
    let dx = px - mean[0];
    let dy = py - mean[1];
    let half = lit::<T>(0.5);
    let sigma = half * (a * dx * dx + c * dy * dy) + b * dx * dy;
    if sigma < T::zero() {
        return None;
    }
    let raw = proj.opacities[id] * (-sigma).exp();
    let clamped = raw > params.alpha_clamp;
    let alpha = if clamped { params.alpha_clamp } else { raw };
    if alpha < params.alpha_skip {
        return None;
    }
    Some((alpha, clamped))
}

/// Composites every pixel front-to-back over its tile's sorted range.
/// Returns the image and the per-pixel replay state for the backward pass.
pub fn rasterize_forward<T: Scalar>(
    proj: &ProjectedSet<T>,
    sorted: &SortedIntersections,
    grid: &TileGrid,
    params: &PipelineParams<T>,
) -> (ImageBuffer<T>, RenderAux<T>) {
    assert_eq!(sorted.tile_ranges.len(), grid.n_tiles());
    let width = grid.width as usize;
    let half = lit::<T>(0.5);
    let tile_results: Vec<Vec<(V3<T>, T, u32)>> = (0..grid.n_tiles())
        .into_par_iter()
        .map(|tile| {
            let (s, e) = sorted.tile_ranges[tile];
            let ids = &sorted.gaussian_ids[s as usize..e as usize];
            let tx = tile as u32 % grid.tiles_x;
            let ty = tile as u32 / grid.tiles_x;
            let x0 = tx * grid.tile_size;
            let y0 = ty * grid.tile_size;
            let x1 = (x0 + grid.tile_size).min(grid.width);
            let y1 = (y0 + grid.tile_size).min(grid.height);
            let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = lit::<T>(x as f64) + half;
                    let py = lit::<T>(y as f64) + half;
                    let mut color = [T::zero(); 3];
                    let mut transmittance = T::one();
                    let mut last = 0u32;
                    for (k, &id) in ids.iter().enumerate() {
                        let Some((alpha, _)) = sample_alpha(proj, id as usize, px, py, params)
                        else {
                            continue;
                        };
                        let weight = alpha * transmittance;
                        let c = proj.colors[id as usize];
                        for ch in 0..3 {
                            color[ch] = color[ch] + c[ch] * weight;
                        }
                        transmittance = transmittance * (T::one() - alpha);
                        last = k as u32 + 1;
                        if transmittance < params.transmittance_stop {
                            break;
                        }
                    }
                    out.push((color, transmittance, last));
                }
            }
            out
        })
        .collect();

    let mut image = ImageBuffer::black(grid.width, grid.height);
    let mut aux = RenderAux {
        width: grid.width,
        height: grid.height,
        final_transmittance: vec![T::one(); width * grid.height as usize],
        last_contributor: vec![0u32; width * grid.height as usize],
    };
    for (tile, results) in tile_results.into_iter().enumerate() {
        let tx = tile as u32 % grid.tiles_x;
        let ty = tile as u32 / grid.tiles_x;
        let x0 = tx * grid.tile_size;
        let y0 = ty * grid.tile_size;
        let x1 = (x0 + grid.tile_size).min(grid.width);
        let mut it = results.into_iter();
        for y in y0..(y0 + grid.tile_size).min(grid.height) {
            for x in x0..x1 {
                let (color, transmittance, last) = it.next().expect("tile block size");
                let p = y as usize * width + x as usize;
                image.pixels[p] = color;
                aux.final_transmittance[p] = transmittance;
                aux.last_contributor[p] = last;
            }
        }
    }
    (image, aux)
}

/// Replays compositing back-to-front from the saved per-pixel state and
/// accumulates exact gradients of the forward formula with respect to each
/// Gaussian's 2D mean, conic, color, and opacity. Gradients are zero through
/// the alpha clamp and skip thresholds.
pub fn rasterize_backward<T: Scalar>(
    proj: &ProjectedSet<T>,
    sorted: &SortedIntersections,
    grid: &TileGrid,
    aux: &RenderAux<T>,
    dl_dpixel: &[V3<T>],
    params: &PipelineParams<T>,
) -> Result<RasterGrads<T>, PipelineError> {
    if aux.width != grid.width || aux.height != grid.height {
        return Err(PipelineError::StaleAux);
    }
    if dl_dpixel.len() != grid.width as usize * grid.height as usize
        || aux.final_transmittance.len() != dl_dpixel.len()
        || aux.last_contributor.len() != dl_dpixel.len()
    {
        return Err(PipelineError::DimensionMismatch);
    }
    let width = grid.width as usize;
    let half = lit::<T>(0.5);
    let one = T::one();
    // (gaussian id, d_mean2d x/y, d_conic a/b/c, d_color r/g/b, d_opacity)
    let tile_contribs: Vec<Vec<(u32, [T; 9])>> = (0..grid.n_tiles())
        .into_par_iter()
        .map(|tile| {
            let (s, e) = sorted.tile_ranges[tile];
            let ids = &sorted.gaussian_ids[s as usize..e as usize];
            let tx = tile as u32 % grid.tiles_x;
            let ty = tile as u32 / grid.tiles_x;
            let x0 = tx * grid.tile_size;
            let y0 = ty * grid.tile_size;
            let x1 = (x0 + grid.tile_size).min(grid.width);
            let y1 = (y0 + grid.tile_size).min(grid.height);
            let mut out: Vec<(u32, [T; 9])> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y as usize * width + x as usize;
                    let last = aux.last_contributor[p] as usize;
                    if last == 0 {
                        continue;
                    }
                    let g = dl_dpixel[p];
                    if g[0] == T::zero() && g[1] == T::zero() && g[2] == T::zero() {
                        continue;
                    }
                    let px = lit::<T>(x as f64) + half;
                    let py = lit::<T>(y as f64) + half;
                    let mut t_after = aux.final_transmittance[p];
                    // Suffix accumulator: g_t such that the alpha gradient of
                    // the current sample is T_before * (g . color - g_t).
                    let mut g_t = T::zero();
                    for &id in ids[..last].iter().rev() {
                        let idx = id as usize;
                        let mean = proj.means2d[idx];
                        let [a, b, c] = proj.conics[idx];
                        let dx = px - mean[0];
                        let dy = py - mean[1];
                        let sigma = half * (a * dx * dx + c * dy * dy) + b * dx * dy;
                        if sigma < T::zero() {
                            continue;
                        }
                        let raw = proj.opacities[idx] * (-sigma).exp();
                        let clamped = raw > params.alpha_clamp;
                        let alpha = if clamped { params.alpha_clamp } else { raw };
                        if alpha < params.alpha_skip {
                            continue;
                        }
                        let t_before = t_after / (one - alpha);
                        let color = proj.colors[idx];
                        let g_dot_c = g[0] * color[0] + g[1] * color[1] + g[2] * color[2];
                        let d_alpha = t_before * (g_dot_c - g_t);
                        let weight = alpha * t_before;
                        let mut v = [T::zero(); 9];
                        // d color
                        v[5] = g[0] * weight;
                        v[6] = g[1] * weight;
                        v[7] = g[2] * weight;
                        if !clamped {
                            // alpha = opacity * exp(-sigma)
                            let d_sigma = -d_alpha * alpha;
                            v[8] = d_alpha * alpha / proj.opacities[idx];
                            v[2] = half * dx * dx * d_sigma;
                            v[3] = dx * dy * d_sigma;
                            v[4] = half * dy * dy * d_sigma;
                            v[0] = -(a * dx + b * dy) * d_sigma;
                            v[1] = -(c * dy + b * dx) * d_sigma;
                        }
                        out.push((id, v));
                        g_t = g_dot_c * alpha + g_t * (one - alpha);
                        t_after = t_before;
                    }
                }
            }
            out
        })
        .collect();

    let mut grads = RasterGrads::zeros(proj.len());
    for contribs in tile_contribs {
        for (id, v) in contribs {
            let i = id as usize;
            grads.means2d[i][0] = grads.means2d[i][0] + v[0];
            grads.means2d[i][1] = grads.means2d[i][1] + v[1];
            grads.conics[i][0] = grads.conics[i][0] + v[2];
            grads.conics[i][1] = grads.conics[i][1] + v[3];
            grads.conics[i][2] = grads.conics[i][2] + v[4];
            grads.colors[i][0] = grads.colors[i][0] + v[5];
            grads.colors[i][1] = grads.colors[i][1] + v[6];
            grads.colors[i][2] = grads.colors[i][2] + v[7];
            grads.opacities[i] = grads.opacities[i] + v[8];
        }
    }
    Ok(grads)
}

/// Converts the interleaved target image into the pipeline-resident planar
/// layout. Modeled as an explicit stage (a full copy plus layout conversion)
/// so its cost shows up in the stage breakdown.
pub fn copy_image_to_device<T: Scalar>(
    target: &ImageBuffer<T>,
    expected_width: u32,
    expected_height: u32,
) -> Result<ResidentTarget<T>, PipelineError> {
    if target.width != expected_width || target.height != expected_height {
        return Err(PipelineError::DimensionMismatch);
    }
    Ok(ResidentTarget {
        width: target.width,
        height: target.height,
        planes: target.planes(),
    })
}
