//! The per-iteration differentiable rendering pipeline, decomposed into the
//! individually timed stages: projection, index offsets, key generation,
//! sorting, tile ranges, forward rasterization, target upload, loss gradient,
//! backward rasterization, and projection backward.
//!
//! Every stage is a pure function of its inputs. Parallel sections reduce in
//! a fixed tile-major order, so results are bitwise independent of the thread
//! count.

pub mod binning;
pub mod loss;
pub mod project;
pub mod raster;

use thiserror::Error;

use crate::math::{lit, Scalar, Sym2, V2, V3, V4};

pub use binning::{compute_index_offsets, compute_tile_ranges, generate_keys, sort_intersections};
pub use loss::loss_gradient;
pub use project::{project_backward, project_forward};
pub use raster::{copy_image_to_device, rasterize_backward, rasterize_forward};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("non-finite Gaussian parameter")]
    NonFiniteParameter,
    #[error("visible Gaussian {index} has non-positive depth")]
    NegativeDepth { index: usize },
    #[error("keys not sorted ascending at position {position}")]
    UnsortedInput { position: usize },
    #[error("buffer dimensions do not match")]
    DimensionMismatch,
    #[error("render aux does not match this raster configuration")]
    StaleAux,
    #[error("image sides must be at least 11 px for the SSIM loss term")]
    TooSmall,
}

/// Numeric thresholds of the render pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams<T> {
    /// Camera-space z at or below which a Gaussian is culled.
    pub near_plane: T,
    /// Upper clamp on per-sample alpha.
    pub alpha_clamp: T,
    /// Samples below this alpha are skipped.
    pub alpha_skip: T,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: T,
    /// Low-pass floor added to both diagonal entries of the 2D covariance.
    pub covariance_floor: T,
}

impl<T: Scalar> Default for PipelineParams<T> {
    fn default() -> Self {
        PipelineParams {
            near_plane: lit(0.01),
            alpha_clamp: lit(0.99),
            alpha_skip: lit(1.0 / 255.0),
            transmittance_stop: lit(1e-4),
            covariance_floor: lit(0.3),
        }
    }
}

/// Per-Gaussian screen-space data produced by projection.
///
/// `conics` holds the upper triangle (a, b, c) of the inverse 2D covariance
/// [[a, b], [b, c]]. For culled Gaussians (`visible` false) only `depths`,
/// `colors`, and `opacities` are meaningful; radii and tile counts are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSet<T> {
    pub means2d: Vec<V2<T>>,
    pub conics: Vec<Sym2<T>>,
    pub depths: Vec<T>,
    pub radii: Vec<u32>,
    pub tile_counts: Vec<u32>,
    pub colors: Vec<V3<T>>,
    pub opacities: Vec<T>,
    pub visible: Vec<bool>,
}

impl<T: Scalar> ProjectedSet<T> {
    pub fn len(&self) -> usize {
        self.means2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means2d.is_empty()
    }

    pub fn with_capacity(n: usize) -> Self {
        ProjectedSet {
            means2d: Vec::with_capacity(n),
            conics: Vec::with_capacity(n),
            depths: Vec::with_capacity(n),
            radii: Vec::with_capacity(n),
            tile_counts: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            visible: Vec::with_capacity(n),
        }
    }
}

/// Key/value intersection lists sorted by (tile, depth), with per-tile ranges.
///
/// Keys pack the tile ID in the high 32 bits and a monotone depth encoding in
/// the low 32 bits; `tile_ranges[t]` is the half-open index run of tile t.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedIntersections {
    pub keys: Vec<u64>,
    pub gaussian_ids: Vec<u32>,
    pub tile_ranges: Vec<(u32, u32)>,
}

/// Per-pixel state saved by the forward pass so the backward pass can replay
/// compositing: the residual transmittance after the last composited sample,
/// and how many entries of the pixel's tile range were consumed (0 = none).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderAux<T> {
    pub width: u32,
    pub height: u32,
    pub final_transmittance: Vec<T>,
    pub last_contributor: Vec<u32>,
}

/// Gradients with respect to the screen-space quantities of every Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrads<T> {
    pub means2d: Vec<V2<T>>,
    pub conics: Vec<Sym2<T>>,
    pub colors: Vec<V3<T>>,
    pub opacities: Vec<T>,
}

impl<T: Scalar> RasterGrads<T> {
    pub fn zeros(n: usize) -> Self {
        RasterGrads {
            means2d: vec![[T::zero(); 2]; n],
            conics: vec![[T::zero(); 3]; n],
            colors: vec![[T::zero(); 3]; n],
            opacities: vec![T::zero(); n],
        }
    }
}

/// Gradients with respect to every raw Gaussian parameter, plus the
/// screen-space positional gradient norms consumed by densification.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub positions: Vec<V3<T>>,
    pub log_scales: Vec<V3<T>>,
    pub rotations: Vec<V4<T>>,
    pub opacity_logits: Vec<T>,
    pub colors: Vec<V3<T>>,
    pub screen_grad_norms: Vec<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros(n: usize) -> Self {
        ParamGrads {
            positions: vec![[T::zero(); 3]; n],
            log_scales: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            opacity_logits: vec![T::zero(); n],
            colors: vec![[T::zero(); 3]; n],
            screen_grad_norms: vec![T::zero(); n],
        }
    }
}

/// The training target in the pipeline-resident planar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentTarget<T> {
    pub width: u32,
    pub height: u32,
    pub planes: [Vec<T>; 3],
}
