//! Intersection binning: prefix-sum offsets, key generation, radix sort, and
//! per-tile ranges.

use crate::math::Scalar;
use crate::scene::TileGrid;

use super::{PipelineError, ProjectedSet};

/// Exclusive prefix sum of per-Gaussian tile counts. Returns the offset list
/// (same length) and the total intersection count.
pub fn compute_index_offsets(tile_counts: &[u32]) -> (Vec<u32>, u64) {
    let mut offsets = Vec::with_capacity(tile_counts.len());
    let mut total = 0u64;
    for &c in tile_counts {
        offsets.push(total as u32);
        total += c as u64;
    }
    (offsets, total)
}

/// Monotone 32-bit encoding of a positive depth: the IEEE-754 single-precision
/// bit pattern, which preserves order for positive floats.
#[inline]
pub fn depth_bits<T: Scalar>(depth: T) -> u32 {
    (depth.to_f64().unwrap_or(f64::NAN) as f32).to_bits()
}

/// Emits one (key, gaussian id) pair per overlapped tile, at the slots given
/// by the offsets. Key = tile ID in the high 32 bits, depth bits in the low.
pub fn generate_keys<T: Scalar>(
    proj: &ProjectedSet<T>,
    offsets: &[u32],
    total: u64,
    grid: &TileGrid,
) -> Result<(Vec<u64>, Vec<u32>), PipelineError> {
    assert_eq!(offsets.len(), proj.len(), "offsets must match the projection");
    let mut keys = vec![0u64; total as usize];
    let mut ids = vec![0u32; total as usize];
    for i in 0..proj.len() {
        if proj.tile_counts[i] == 0 {
            continue;
        }
        if proj.depths[i] <= T::zero() {
            return Err(PipelineError::NegativeDepth { index: i });
        }
        let rect = grid
            .overlap_rect(proj.means2d[i], proj.radii[i])
            .expect("positive tile count implies a non-empty overlap rect");
        let bits = depth_bits(proj.depths[i]) as u64;
        let mut slot = offsets[i] as usize;
        for ty in rect[2]..rect[3] {
            for tx in rect[0]..rect[1] {
                let tile = (ty * grid.tiles_x + tx) as u64;
                keys[slot] = (tile << 32) | bits;
                ids[slot] = i as u32;
                slot += 1;
            }
        }
        debug_assert_eq!(slot - offsets[i] as usize, proj.tile_counts[i] as usize);
    }
    Ok((keys, ids))
}

/// Stable least-significant-digit radix sort of the key/value pairs by key
/// ascending, one 8-bit digit per pass. Passes whose digit is constant across
/// all keys are skipped.
pub fn sort_intersections(keys: Vec<u64>, ids: Vec<u32>) -> (Vec<u64>, Vec<u32>) {
    assert_eq!(keys.len(), ids.len());
    let n = keys.len();
    let mut src_k = keys;
    let mut src_v = ids;
    if n <= 1 {
        return (src_k, src_v);
    }
    let mut dst_k = vec![0u64; n];
    let mut dst_v = vec![0u32; n];
    for pass in 0..8 {
        let shift = pass * 8;
        let mut counts = [0usize; 256];
        for &k in &src_k {
            counts[((k >> shift) & 0xff) as usize] += 1;
        }
        if counts.iter().any(|&c| c == n) {
            continue; // constant digit: pass is the identity permutation
        }
        let mut starts = [0usize; 256];
        let mut acc = 0usize;
        for d in 0..256 {
            starts[d] = acc;
            acc += counts[d];
        }
        for (&k, &v) in src_k.iter().zip(&src_v) {
            let d = ((k >> shift) & 0xff) as usize;
            dst_k[starts[d]] = k;
            dst_v[starts[d]] = v;
            starts[d] += 1;
        }
        std::mem::swap(&mut src_k, &mut dst_k);
        std::mem::swap(&mut src_v, &mut dst_v);
    }
    (src_k, src_v)
}

/// Half-open index run of every tile within the sorted key list. Tiles with
/// no entries get an empty range at the boundary position, so the ranges
/// partition the whole span in tile order.
pub fn compute_tile_ranges(
    sorted_keys: &[u64],
    grid: &TileGrid,
) -> Result<Vec<(u32, u32)>, PipelineError> {
    for (i, w) in sorted_keys.windows(2).enumerate() {
        if w[0] > w[1] {
            return Err(PipelineError::UnsortedInput { position: i + 1 });
        }
    }
    let n_tiles = grid.n_tiles();
    let mut ranges = vec![(u32::MAX, 0u32); n_tiles];
    for (k, &key) in sorted_keys.iter().enumerate() {
        let tile = (key >> 32) as usize;
        assert!(tile < n_tiles, "tile id {tile} outside the grid");
        if ranges[tile].0 == u32::MAX {
            ranges[tile].0 = k as u32;
        }
        ranges[tile].1 = k as u32 + 1;
    }
    let mut cursor = 0u32;
    for r in &mut ranges {
        if r.0 == u32::MAX {
            *r = (cursor, cursor);
        } else {
            cursor = r.1;
        }
    }
    Ok(ranges)
}
