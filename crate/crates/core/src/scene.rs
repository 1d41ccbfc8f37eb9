//! Scene-side data types: the Gaussian cloud, cameras, the tile grid, image
//! buffers, and the binary checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::math::{lit, m3_tmulv, normalize4, scale3, Scalar, M3, V2, V3, V4};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("quaternion {index} has zero norm")]
    ZeroQuaternion { index: usize },
    #[error("parameter arrays disagree in length")]
    LengthMismatch,
    #[error("tile size must be nonzero")]
    ZeroTileSize,
    #[error("image dimensions must be nonzero")]
    EmptyImage,
    #[error("camera rotation is not orthonormal")]
    BadRotation,
    #[error("camera intrinsics must be positive")]
    BadIntrinsics,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All per-Gaussian parameters, struct-of-arrays. The five arrays always have
/// equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    pub positions: Vec<V3<T>>,
    pub log_scales: Vec<V3<T>>,
    /// Unit quaternions in (w, x, y, z) order; normalized before use.
    pub rotations: Vec<V4<T>>,
    pub opacity_logits: Vec<T>,
    /// Degree-0 linear RGB.
    pub colors: Vec<V3<T>>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn empty() -> Self {
        GaussianCloud {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            colors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn check_coherent(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.colors.len() != n
        {
            return Err(SceneError::LengthMismatch);
        }
        Ok(())
    }

    pub fn push(&mut self, position: V3<T>, log_scale: V3<T>, rotation: V4<T>, opacity_logit: T, color: V3<T>) {
        self.positions.push(position);
        self.log_scales.push(log_scale);
        self.rotations.push(rotation);
        self.opacity_logits.push(opacity_logit);
        self.colors.push(color);
    }

    pub fn push_copy_of(&mut self, i: usize) {
        self.push(
            self.positions[i],
            self.log_scales[i],
            self.rotations[i],
            self.opacity_logits[i],
            self.colors[i],
        );
    }

    /// Keeps exactly the entries whose mask slot is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.len());
        let mut it = keep.iter();
        self.positions.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.log_scales.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.rotations.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacity_logits.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.colors.retain(|_| *it.next().unwrap());
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Rescales every quaternion to unit length in place.
pub fn normalize_rotations<T: Scalar>(cloud: &mut GaussianCloud<T>) -> Result<(), SceneError> {
    for (index, q) in cloud.rotations.iter_mut().enumerate() {
        let (qn, norm) = normalize4(*q);
        if !(norm > lit::<T>(1e-12)) {
            return Err(SceneError::ZeroQuaternion { index });
        }
        *q = qn;
    }
    Ok(())
}

/// Pinhole camera with a world-to-camera rigid transform. Camera space is
/// x-right, y-down, z-forward; a world point p maps to `rot * p + trans`.
#[derive(Debug, Clone)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    pub rot: M3<T>,
    pub trans: V3<T>,
}

impl<T: Scalar> Camera<T> {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > T::zero()) || !(self.fy > T::zero()) {
            return Err(SceneError::BadIntrinsics);
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::EmptyImage);
        }
        let tol = lit::<T>(1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = T::zero();
                for k in 0..3 {
                    dot = dot + self.rot[k][i] * self.rot[k][j];
                }
                let expect = if i == j { T::one() } else { T::zero() };
                if (dot - expect).abs() > tol {
                    return Err(SceneError::BadRotation);
                }
            }
        }
        Ok(())
    }

    /// Camera center in world coordinates: -R^T t.
    pub fn position(&self) -> V3<T> {
        scale3(m3_tmulv(&self.rot, self.trans), -T::one())
    }
}

/// Screen tiling for one image size. Tiles cover the image completely; the
/// right and bottom tiles may be partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub width: u32,
    pub height: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Result<Self, SceneError> {
        if tile_size == 0 {
            return Err(SceneError::ZeroTileSize);
        }
        if width == 0 || height == 0 {
            return Err(SceneError::EmptyImage);
        }
        Ok(TileGrid {
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
            width,
            height,
        })
    }

    pub fn n_tiles(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    /// Tile-index rectangle [x0, x1) x [y0, y1) covered by the axis-aligned
    /// square of the given half-width around `center`, clipped to the image.
    /// None when the square misses the image entirely.
    pub fn overlap_rect<T: Scalar>(&self, center: V2<T>, radius: u32) -> Option<[u32; 4]> {
        let cx = center[0].to_f64()?;
        let cy = center[1].to_f64()?;
        if !cx.is_finite() || !cy.is_finite() {
            return None;
        }
        let r = radius as f64;
        let x_lo = (cx - r).max(0.0);
        let x_hi = (cx + r).min(self.width as f64);
        let y_lo = (cy - r).max(0.0);
        let y_hi = (cy + r).min(self.height as f64);
        if x_lo >= x_hi || y_lo >= y_hi {
            return None;
        }
        let ts = self.tile_size as f64;
        let x0 = (x_lo / ts).floor() as u32;
        let x1 = ((x_hi / ts).ceil() as u32).min(self.tiles_x);
        let y0 = (y_lo / ts).floor() as u32;
        let y1 = ((y_hi / ts).ceil() as u32).min(self.tiles_y);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        Some([x0, x1, y0, y1])
    }
}

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<V3<T>>,
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn black(width: u32, height: u32) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![[T::zero(); 3]; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> V3<T> {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn at_mut(&mut self, x: u32, y: u32) -> &mut V3<T> {
        &mut self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Channel planes (all R, all G, all B), each row-major.
    pub fn planes(&self) -> [Vec<T>; 3] {
        let mut planes = [
            Vec::with_capacity(self.pixels.len()),
            Vec::with_capacity(self.pixels.len()),
            Vec::with_capacity(self.pixels.len()),
        ];
        for px in &self.pixels {
            for c in 0..3 {
                planes[c].push(px[c]);
            }
        }
        planes
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPLT";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the cloud as: magic "SPLT", u32 version, u64 count, then the five
/// parameter arrays as contiguous little-endian f32 in declaration order.
pub fn save_checkpoint(path: &Path, cloud: &GaussianCloud<f32>) -> Result<(), SceneError> {
    cloud.check_coherent()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    let write_v3 = |w: &mut BufWriter<File>, vs: &[V3<f32>]| -> std::io::Result<()> {
        for v in vs {
            for c in v {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    };
    write_v3(&mut w, &cloud.positions)?;
    write_v3(&mut w, &cloud.log_scales)?;
    for q in &cloud.rotations {
        for c in q {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for o in &cloud.opacity_logits {
        w.write_all(&o.to_le_bytes())?;
    }
    write_v3(&mut w, &cloud.colors)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianCloud<f32>, SceneError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_fully(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SceneError::Format("bad magic".into()));
    }
    let mut word = [0u8; 4];
    read_fully(&mut r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(SceneError::Format(format!("unsupported version {version}")));
    }
    let mut qword = [0u8; 8];
    read_fully(&mut r, &mut qword)?;
    let count = u64::from_le_bytes(qword) as usize;

    let read_f32 = |r: &mut BufReader<File>| -> Result<f32, SceneError> {
        let mut b = [0u8; 4];
        read_fully(r, &mut b)?;
        Ok(f32::from_le_bytes(b))
    };
    let mut cloud = GaussianCloud::empty();
    for _ in 0..count {
        cloud
            .positions
            .push([read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]);
    }
    for _ in 0..count {
        cloud
            .log_scales
            .push([read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]);
    }
    for _ in 0..count {
        cloud.rotations.push([
            read_f32(&mut r)?,
            read_f32(&mut r)?,
            read_f32(&mut r)?,
            read_f32(&mut r)?,
        ]);
    }
    for _ in 0..count {
        let o = read_f32(&mut r)?;
        cloud.opacity_logits.push(o);
    }
    for _ in 0..count {
        cloud
            .colors
            .push([read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]);
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(cloud),
        _ => Err(SceneError::Format("trailing data".into())),
    }
}

fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> Result<(), SceneError> {
    r.read_exact(buf)
        .map_err(|_| SceneError::Format("truncated file".into()))
}
