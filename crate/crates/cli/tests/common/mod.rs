//! Shared oracles for the acceptance suite, all in f64: a finite-difference
//! gradient checker over the full render-and-loss chain, a naive per-tile
//! comparison-sort oracle for intersection binning, an arena-trace replay
//! checker, and an independent SSIM implementation.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use splatbench_core::math::logit;
use splatbench_core::membench::{EventKind, TraceEvent};
use splatbench_core::pipeline::binning::depth_bits;
use splatbench_core::pipeline::{
    compute_index_offsets, compute_tile_ranges, copy_image_to_device, generate_keys,
    loss_gradient, project_backward, project_forward, rasterize_backward, rasterize_forward,
    sort_intersections, ParamGrads, PipelineParams, ProjectedSet, ResidentTarget,
    SortedIntersections,
};
use splatbench_core::scene::{Camera, GaussianCloud, ImageBuffer, TileGrid};

// ---------------------------------------------------------------------------
// Scene construction

/// A camera on a ring of the given radius, looking at the origin, with the
/// same frame convention as the rest of the crate: rows [right, down,
/// forward], translation -R * position, fx = fy = 0.8 * width.
pub fn ring_camera(angle: f64, radius: f64, width: u32, height: u32) -> Camera<f64> {
    let position = [radius * angle.sin(), 0.3, radius * angle.cos()];
    let inv_norm = 1.0 / (position[0].powi(2) + position[1].powi(2) + position[2].powi(2)).sqrt();
    let forward = [
        -position[0] * inv_norm,
        -position[1] * inv_norm,
        -position[2] * inv_norm,
    ];
    let up = [0.0, 1.0, 0.0];
    let mut right = [
        up[1] * forward[2] - up[2] * forward[1],
        up[2] * forward[0] - up[0] * forward[2],
        up[0] * forward[1] - up[1] * forward[0],
    ];
    let rnorm = (right[0].powi(2) + right[1].powi(2) + right[2].powi(2)).sqrt();
    for c in &mut right {
        *c /= rnorm;
    }
    let down = [
        forward[1] * right[2] - forward[2] * right[1],
        forward[2] * right[0] - forward[0] * right[2],
        forward[0] * right[1] - forward[1] * right[0],
    ];
    let rot = [right, down, forward];
    let trans = [
        -(rot[0][0] * position[0] + rot[0][1] * position[1] + rot[0][2] * position[2]),
        -(rot[1][0] * position[0] + rot[1][1] * position[1] + rot[1][2] * position[2]),
        -(rot[2][0] * position[0] + rot[2][1] * position[1] + rot[2][2] * position[2]),
    ];
    Camera {
        fx: 0.8 * width as f64,
        fy: 0.8 * width as f64,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rot,
        trans,
    }
}

/// A seeded random cloud centered near the origin, sized so that ring cameras
/// at radius ~2 see it.
pub fn random_cloud(rng: &mut impl Rng, n: usize) -> GaussianCloud<f64> {
    let mut cloud = GaussianCloud::empty();
    for _ in 0..n {
        let position = [
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        ];
        let log_scales = [
            rng.gen_range(0.08f64..0.3).ln(),
            rng.gen_range(0.08f64..0.3).ln(),
            rng.gen_range(0.08f64..0.3).ln(),
        ];
        let rotation = loop {
            let q: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
            }
        };
        let opacity_logit = logit(rng.gen_range(0.3..0.9));
        let colors = [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ];
        cloud.push(position, log_scales, rotation, opacity_logit, colors);
    }
    cloud
}

// ---------------------------------------------------------------------------
// Full forward chain

pub struct ChainOutput {
    pub proj: ProjectedSet<f64>,
    pub sorted: SortedIntersections,
    pub image: ImageBuffer<f64>,
    pub final_transmittance: Vec<f64>,
}

/// Runs projection, binning, sorting, range computation, and forward
/// rasterization — the same stage sequence the training loop executes.
pub fn forward_chain(
    cloud: &GaussianCloud<f64>,
    camera: &Camera<f64>,
    grid: &TileGrid,
    params: &PipelineParams<f64>,
) -> ChainOutput {
    let proj = project_forward(cloud, camera, grid, params).expect("projection");
    let (offsets, total) = compute_index_offsets(&proj.tile_counts);
    let (keys, ids) = generate_keys(&proj, &offsets, total, grid).expect("keys");
    let (keys, ids) = sort_intersections(keys, ids);
    let tile_ranges = compute_tile_ranges(&keys, grid).expect("ranges");
    let sorted = SortedIntersections {
        keys,
        gaussian_ids: ids,
        tile_ranges,
    };
    let (image, aux) = rasterize_forward(&proj, &sorted, grid, params);
    ChainOutput {
        proj,
        sorted,
        image,
        final_transmittance: aux.final_transmittance,
    }
}

/// Mean-absolute-error loss of the rendered image against the target
/// (the lambda = 0 path of the training loss).
pub fn scene_loss(
    cloud: &GaussianCloud<f64>,
    camera: &Camera<f64>,
    grid: &TileGrid,
    params: &PipelineParams<f64>,
    target: &ResidentTarget<f64>,
) -> f64 {
    let chain = forward_chain(cloud, camera, grid, params);
    let (loss, _) = loss_gradient(&chain.image, target, 0.0).expect("loss");
    loss
}

/// Analytic gradient of `scene_loss` with respect to every raw parameter.
pub fn analytic_grads(
    cloud: &GaussianCloud<f64>,
    camera: &Camera<f64>,
    grid: &TileGrid,
    params: &PipelineParams<f64>,
    target: &ResidentTarget<f64>,
) -> ParamGrads<f64> {
    let proj = project_forward(cloud, camera, grid, params).expect("projection");
    let (offsets, total) = compute_index_offsets(&proj.tile_counts);
    let (keys, ids) = generate_keys(&proj, &offsets, total, grid).expect("keys");
    let (keys, ids) = sort_intersections(keys, ids);
    let tile_ranges = compute_tile_ranges(&keys, grid).expect("ranges");
    let sorted = SortedIntersections {
        keys,
        gaussian_ids: ids,
        tile_ranges,
    };
    let (image, aux) = rasterize_forward(&proj, &sorted, grid, params);
    let (_, dl_dpixel) = loss_gradient(&image, target, 0.0).expect("loss");
    let raster = rasterize_backward(&proj, &sorted, grid, &aux, &dl_dpixel, params)
        .expect("raster backward");
    project_backward(cloud, camera, &proj, &raster, params)
}

/// Renders a target image into the resident planar layout.
pub fn resident_target(
    cloud: &GaussianCloud<f64>,
    camera: &Camera<f64>,
    grid: &TileGrid,
    params: &PipelineParams<f64>,
) -> ResidentTarget<f64> {
    let chain = forward_chain(cloud, camera, grid, params);
    copy_image_to_device(&chain.image, camera.width, camera.height).expect("target upload")
}

// ---------------------------------------------------------------------------
// Flat parameter-coordinate view of a cloud
//
// Order: positions (3n), log_scales (3n), rotations (4n), opacity logits (n),
// colors (3n) — 14 coordinates per Gaussian.

pub const COORDS_PER_GAUSSIAN: usize = 14;

pub fn coord_count(cloud: &GaussianCloud<f64>) -> usize {
    cloud.len() * COORDS_PER_GAUSSIAN
}

fn coord_slot(j: usize, n: usize) -> (usize, usize, usize) {
    // (group, gaussian, component)
    if j < 3 * n {
        (0, j / 3, j % 3)
    } else if j < 6 * n {
        let k = j - 3 * n;
        (1, k / 3, k % 3)
    } else if j < 10 * n {
        let k = j - 6 * n;
        (2, k / 4, k % 4)
    } else if j < 11 * n {
        (3, j - 10 * n, 0)
    } else {
        let k = j - 11 * n;
        (4, k / 3, k % 3)
    }
}

pub fn get_coord(cloud: &GaussianCloud<f64>, j: usize) -> f64 {
    let (group, i, c) = coord_slot(j, cloud.len());
    match group {
        0 => cloud.positions[i][c],
        1 => cloud.log_scales[i][c],
        2 => cloud.rotations[i][c],
        3 => cloud.opacity_logits[i],
        _ => cloud.colors[i][c],
    }
}

pub fn set_coord(cloud: &mut GaussianCloud<f64>, j: usize, value: f64) {
    let (group, i, c) = coord_slot(j, cloud.len());
    match group {
        0 => cloud.positions[i][c] = value,
        1 => cloud.log_scales[i][c] = value,
        2 => cloud.rotations[i][c] = value,
        3 => cloud.opacity_logits[i] = value,
        _ => cloud.colors[i][c] = value,
    }
}

pub fn analytic_coord(grads: &ParamGrads<f64>, j: usize, n: usize) -> f64 {
    let (group, i, c) = coord_slot(j, n);
    match group {
        0 => grads.positions[i][c],
        1 => grads.log_scales[i][c],
        2 => grads.rotations[i][c],
        3 => grads.opacity_logits[i],
        _ => grads.colors[i][c],
    }
}

pub fn coord_name(j: usize, n: usize) -> String {
    let (group, i, c) = coord_slot(j, n);
    let name = ["position", "log_scale", "rotation", "opacity_logit", "color"][group];
    format!("{name}[{i}][{c}]")
}

// ---------------------------------------------------------------------------
// Discrete decision signature
//
// Central differences are only valid where the loss is smooth in the probed
// coordinate. The discrete structure of the render — culling, tile overlap,
// the sample skip and clamp thresholds, early compositing termination, and
// the L1 subgradient sign — changes in jumps; a coordinate whose nudge flips
// any of those decisions is excluded from the check.

#[derive(PartialEq, Clone)]
pub struct DiscreteSignature {
    visible: Vec<bool>,
    radii: Vec<u32>,
    tile_counts: Vec<u32>,
    /// Tile part of every sorted key plus the Gaussian id, in order. Depth
    /// bits are deliberately left out: depth varies continuously, but a
    /// change in the sorted ORDER is a compositing discontinuity and shows up
    /// here as a permuted id sequence.
    tile_ids: Vec<(u32, u32)>,
    /// Per pixel, per sorted entry: 0 = negative-density skip, 1 = below
    /// alpha threshold, 2 = composited, 3 = composited at the alpha clamp,
    /// 4 = terminated by the transmittance stop; 5 closes each pixel.
    sample_codes: Vec<u8>,
    /// Sign of (render - target) per pixel channel: the L1 subgradient.
    residual_signs: Vec<i8>,
}

pub fn discrete_signature(
    cloud: &GaussianCloud<f64>,
    camera: &Camera<f64>,
    grid: &TileGrid,
    params: &PipelineParams<f64>,
    target: &ResidentTarget<f64>,
) -> DiscreteSignature {
    let chain = forward_chain(cloud, camera, grid, params);
    let proj = &chain.proj;
    let sorted = &chain.sorted;

    let mut tile_ids = Vec::with_capacity(sorted.keys.len());
    for (k, &key) in sorted.keys.iter().enumerate() {
        tile_ids.push(((key >> 32) as u32, sorted.gaussian_ids[k]));
    }

    let mut sample_codes = Vec::new();
    for tile in 0..grid.n_tiles() {
        let (s, e) = sorted.tile_ranges[tile];
        let ids = &sorted.gaussian_ids[s as usize..e as usize];
        let tx = tile as u32 % grid.tiles_x;
        let ty = tile as u32 / grid.tiles_x;
        for y in ty * grid.tile_size..((ty + 1) * grid.tile_size).min(grid.height) {
            for x in tx * grid.tile_size..((tx + 1) * grid.tile_size).min(grid.width) {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let mut transmittance = 1.0f64;
                for &id in ids {
                    let id = id as usize;
                    let mean = proj.means2d[id];
                    let [a, b, c] = proj.conics[id];
                    let dx = px - mean[0];
                    let dy = py - mean[1];
                    let sigma = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy;
                    if sigma < 0.0 {
                        sample_codes.push(0);
                        continue;
                    }
                    let raw = proj.opacities[id] * (-sigma).exp();
                    let clamped = raw > params.alpha_clamp;
                    let alpha = if clamped { params.alpha_clamp } else { raw };
                    if alpha < params.alpha_skip {
                        sample_codes.push(1);
                        continue;
                    }
                    sample_codes.push(if clamped { 3 } else { 2 });
                    transmittance *= 1.0 - alpha;
                    if transmittance < params.transmittance_stop {
                        sample_codes.push(4);
                        break;
                    }
                }
                sample_codes.push(5);
            }
        }
    }

    let mut residual_signs = Vec::with_capacity(chain.image.pixels.len() * 3);
    for (p, pixel) in chain.image.pixels.iter().enumerate() {
        for ch in 0..3 {
            let r = pixel[ch] - target.planes[ch][p];
            residual_signs.push(if r > 0.0 {
                1
            } else if r < 0.0 {
                -1
            } else {
                0
            });
        }
    }

    DiscreteSignature {
        visible: proj.visible.clone(),
        radii: proj.radii.clone(),
        tile_counts: proj.tile_counts.clone(),
        tile_ids,
        sample_codes,
        residual_signs,
    }
}

// ---------------------------------------------------------------------------
// Naive tiling oracle

/// Rebuilds the sorted intersection lists the slow, obvious way: bucket every
/// (Gaussian, tile) overlap per tile in Gaussian-index order, stable
/// comparison-sort each bucket by depth encoding, and concatenate the buckets
/// in tile order. Empty tiles get an empty range at the running cursor, the
/// same convention the fast path uses.
pub fn naive_tile_sort(proj: &ProjectedSet<f64>, grid: &TileGrid) -> SortedIntersections {
    let n_tiles = grid.n_tiles();
    let mut buckets: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_tiles];
    for i in 0..proj.len() {
        if proj.tile_counts[i] == 0 {
            continue;
        }
        let rect = grid
            .overlap_rect(proj.means2d[i], proj.radii[i])
            .expect("a counted Gaussian overlaps at least one tile");
        let bits = depth_bits(proj.depths[i]);
        for ty in rect[2]..rect[3] {
            for tx in rect[0]..rect[1] {
                buckets[(ty * grid.tiles_x + tx) as usize].push((bits, i as u32));
            }
        }
    }
    let mut keys = Vec::new();
    let mut gaussian_ids = Vec::new();
    let mut tile_ranges = vec![(u32::MAX, 0u32); n_tiles];
    for (t, bucket) in buckets.iter_mut().enumerate() {
        bucket.sort_by_key(|&(bits, _)| bits); // stable: ties keep index order
        let start = keys.len() as u32;
        for &(bits, id) in bucket.iter() {
            keys.push(((t as u64) << 32) | bits as u64);
            gaussian_ids.push(id);
        }
        let end = keys.len() as u32;
        if end > start {
            tile_ranges[t] = (start, end);
        }
    }
    let mut cursor = 0u32;
    for r in &mut tile_ranges {
        if r.0 == u32::MAX {
            *r = (cursor, cursor);
        } else {
            cursor = r.1;
        }
    }
    SortedIntersections {
        keys,
        gaussian_ids,
        tile_ranges,
    }
}

// ---------------------------------------------------------------------------
// Arena trace replay oracle

/// Recomputes the running total and peak from nothing but each event's kind
/// and capacities, and checks them against the recorded columns. Grow-resizes
/// must account the copy window during which old and new capacity coexist.
pub fn replay_trace(trace: &[TraceEvent]) {
    let mut total = 0u64;
    let mut peak = 0u64;
    for (k, e) in trace.iter().enumerate() {
        match e.kind {
            EventKind::Alloc => {
                total += e.new_capacity;
                peak = peak.max(total);
            }
            EventKind::Resize => {
                peak = peak.max(total + e.new_capacity);
                total = total - e.old_capacity + e.new_capacity;
            }
            EventKind::Free => {
                total -= e.old_capacity;
            }
        }
        assert_eq!(
            (e.total, e.peak),
            (total, peak),
            "event {k} ({} {}) disagrees with the replay",
            e.kind.label(),
            e.name
        );
    }
}

// ---------------------------------------------------------------------------
// Independent SSIM reference

/// SSIM computed from scratch with direct 2D convolution: an 11x11 Gaussian
/// window (sigma 1.5) normalized to unit sum, stability constants 0.01^2 and
/// 0.03^2, windows fully inside the image, averaged over windows and the
/// three channels.
pub fn reference_ssim(a: &ImageBuffer<f64>, b: &ImageBuffer<f64>) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    let (w, h) = (a.width as usize, a.height as usize);
    const WIN: usize = 11;
    assert!(w >= WIN && h >= WIN);
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut kernel_sum = 0.0;
    for (dy, row) in kernel.iter_mut().enumerate() {
        for (dx, cell) in row.iter_mut().enumerate() {
            let u = dx as f64 - 5.0;
            let v = dy as f64 - 5.0;
            *cell = (-(u * u + v * v) / (2.0 * 1.5 * 1.5)).exp();
            kernel_sum += *cell;
        }
    }
    for row in &mut kernel {
        for cell in row {
            *cell /= kernel_sum;
        }
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut sum = 0.0;
    let mut count = 0u64;
    for ch in 0..3 {
        for oy in 0..=(h - WIN) {
            for ox in 0..=(w - WIN) {
                let (mut ex, mut ey, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let p = (oy + dy) * w + (ox + dx);
                        let xv = a.pixels[p][ch];
                        let yv = b.pixels[p][ch];
                        let wgt = kernel[dy][dx];
                        ex += wgt * xv;
                        ey += wgt * yv;
                        exx += wgt * xv * xv;
                        eyy += wgt * yv * yv;
                        exy += wgt * xv * yv;
                    }
                }
                let var_x = exx - ex * ex;
                let var_y = eyy - ey * ey;
                let cov = exy - ex * ey;
                let val = ((2.0 * ex * ey + c1) * (2.0 * cov + c2))
                    / ((ex * ex + ey * ey + c1) * (var_x + var_y + c2));
                sum += val;
                count += 1;
            }
        }
    }
    sum / count as f64
}
