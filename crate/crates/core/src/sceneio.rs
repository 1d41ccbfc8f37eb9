//! Scene ingestion (cameras.json + PNG targets) and the synthetic-scene
//! generator used by the desk-scale training fixtures.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{lit, logit, norm3, normalize3, scale3, sub3, Scalar, M3, V3};
use crate::pipeline::{
    compute_index_offsets, compute_tile_ranges, generate_keys, project_forward, rasterize_forward,
    sort_intersections, PipelineError, PipelineParams,
};
use crate::scene::{load_checkpoint, Camera, GaussianCloud, ImageBuffer, SceneError, TileGrid};

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed cameras.json: {0}")]
    BadJson(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad image {path}: {message}")]
    BadImage { path: PathBuf, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One entry of `cameras.json`: intrinsics, extrinsics (row-major rotation,
/// translation), and the target image filename.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub image: String,
}

impl CameraRecord {
    pub fn to_camera<T: Scalar>(&self) -> Camera<T> {
        let r = &self.rotation;
        let rot: M3<T> = [
            [lit(r[0]), lit(r[1]), lit(r[2])],
            [lit(r[3]), lit(r[4]), lit(r[5])],
            [lit(r[6]), lit(r[7]), lit(r[8])],
        ];
        Camera {
            fx: lit(self.fx),
            fy: lit(self.fy),
            cx: lit(self.cx),
            cy: lit(self.cy),
            width: self.width,
            height: self.height,
            rot,
            trans: [
                lit(self.translation[0]),
                lit(self.translation[1]),
                lit(self.translation[2]),
            ],
        }
    }
}

/// A loaded or generated scene: cameras paired index-wise with target
/// images, an initial cloud, and the scene extent (world units).
#[derive(Debug, Clone)]
pub struct SceneBundle<T> {
    pub cameras: Vec<Camera<T>>,
    pub targets: Vec<ImageBuffer<T>>,
    pub initial_cloud: GaussianCloud<T>,
    pub extent: T,
}

impl<T: Scalar> SceneBundle<T> {
    pub fn check_coherent(&self) -> Result<(), SceneIoError> {
        if self.cameras.is_empty() || self.cameras.len() != self.targets.len() {
            return Err(SceneIoError::DimensionMismatch(format!(
                "{} cameras vs {} target images",
                self.cameras.len(),
                self.targets.len()
            )));
        }
        for (i, (cam, img)) in self.cameras.iter().zip(&self.targets).enumerate() {
            if cam.width != img.width || cam.height != img.height {
                return Err(SceneIoError::DimensionMismatch(format!(
                    "camera {i} is {}x{} but its image is {}x{}",
                    cam.width, cam.height, img.width, img.height
                )));
            }
        }
        if !(self.extent > T::zero()) {
            return Err(SceneIoError::DimensionMismatch(
                "scene extent must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Decodes an 8-bit RGB PNG into linear values in [0, 1] (v / 255).
pub fn load_png<T: Scalar>(path: &Path) -> Result<ImageBuffer<T>, SceneIoError> {
    if !path.is_file() {
        return Err(SceneIoError::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| SceneIoError::BadImage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8();
    let (width, height) = img.dimensions();
    let mut out = ImageBuffer::black(width, height);
    for (x, y, px) in img.enumerate_pixels() {
        let v: V3<T> = [
            lit(px.0[0] as f64 / 255.0),
            lit(px.0[1] as f64 / 255.0),
            lit(px.0[2] as f64 / 255.0),
        ];
        *out.at_mut(x, y) = v;
    }
    Ok(out)
}

/// Writes an image as 8-bit RGB PNG: round(clamp(v, 0, 1) * 255).
pub fn save_png<T: Scalar>(img: &ImageBuffer<T>, path: &Path) -> Result<(), SceneIoError> {
    let mut raw = Vec::with_capacity((img.width * img.height * 3) as usize);
    for px in &img.pixels {
        for c in 0..3 {
            let v = px[c].max(T::zero()).min(T::one()).to_f64().unwrap_or(0.0);
            raw.push((v * 255.0).round() as u8);
        }
    }
    let buf: image::RgbImage = image::ImageBuffer::from_raw(img.width, img.height, raw)
        .expect("buffer of exactly width*height*3 bytes");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| SceneIoError::BadImage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Box-filter downscale by an integer factor: each output pixel is the mean
/// of a full k x k input block (trailing rows/columns that do not fill a
/// block are dropped).
pub fn downscale_box<T: Scalar>(img: &ImageBuffer<T>, k: u32) -> Result<ImageBuffer<T>, SceneIoError> {
    if k == 0 {
        return Err(SceneIoError::DimensionMismatch(
            "downscale factor must be >= 1".to_string(),
        ));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let w = img.width / k;
    let h = img.height / k;
    if w == 0 || h == 0 {
        return Err(SceneIoError::DimensionMismatch(format!(
            "{}x{} image cannot be downscaled by {k}",
            img.width, img.height
        )));
    }
    let inv = T::one() / lit::<T>((k * k) as f64);
    let mut out = ImageBuffer::black(w, h);
    for oy in 0..h {
        for ox in 0..w {
            let mut acc = [T::zero(); 3];
            for dy in 0..k {
                for dx in 0..k {
                    let px = img.at(ox * k + dx, oy * k + dy);
                    for c in 0..3 {
                        acc[c] = acc[c] + px[c];
                    }
                }
            }
            *out.at_mut(ox, oy) = scale3(acc, inv);
        }
    }
    Ok(out)
}

/// Divides the intrinsics and image dimensions by the downscale factor.
pub fn scale_camera<T: Scalar>(cam: &Camera<T>, k: u32) -> Camera<T> {
    if k <= 1 {
        return cam.clone();
    }
    let kf: T = lit(k as f64);
    Camera {
        fx: cam.fx / kf,
        fy: cam.fy / kf,
        cx: cam.cx / kf,
        cy: cam.cy / kf,
        width: cam.width / k,
        height: cam.height / k,
        rot: cam.rot,
        trans: cam.trans,
    }
}

/// Scene extent: the largest distance from a camera position to the centroid
/// of all camera positions. A single camera (or coincident cameras) falls
/// back to the camera's distance from the world origin, then to 1.
pub fn camera_extent<T: Scalar>(cameras: &[Camera<T>]) -> T {
    if cameras.is_empty() {
        return T::one();
    }
    let positions: Vec<V3<T>> = cameras.iter().map(|c| c.position()).collect();
    let inv_n = T::one() / lit::<T>(positions.len() as f64);
    let mut centroid = [T::zero(); 3];
    for p in &positions {
        for k in 0..3 {
            centroid[k] = centroid[k] + p[k] * inv_n;
        }
    }
    let mut extent = T::zero();
    for p in &positions {
        extent = extent.max(norm3(sub3(*p, centroid)));
    }
    if extent > T::zero() {
        return extent;
    }
    let from_origin = norm3(positions[0]);
    if from_origin > T::zero() {
        from_origin
    } else {
        T::one()
    }
}

/// Converts a stored f32 cloud to the working scalar type.
fn widen_cloud<T: Scalar>(c: &GaussianCloud<f32>) -> GaussianCloud<T> {
    let w3 = |v: &[f32; 3]| -> V3<T> { [lit(v[0] as f64), lit(v[1] as f64), lit(v[2] as f64)] };
    GaussianCloud {
        positions: c.positions.iter().map(w3).collect(),
        log_scales: c.log_scales.iter().map(w3).collect(),
        rotations: c
            .rotations
            .iter()
            .map(|q| {
                [
                    lit(q[0] as f64),
                    lit(q[1] as f64),
                    lit(q[2] as f64),
                    lit(q[3] as f64),
                ]
            })
            .collect(),
        opacity_logits: c.opacity_logits.iter().map(|&o| lit(o as f64)).collect(),
        colors: c.colors.iter().map(w3).collect(),
    }
}

fn read_to_string(path: &Path) -> Result<String, SceneIoError> {
    if !path.is_file() {
        return Err(SceneIoError::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|source| SceneIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Seeded random cloud inside the axis-aligned bounding box of the camera
/// positions (inflated a little so a tight camera rig still encloses some
/// volume). Shape/appearance distributions match the synthetic generator,
/// with scales proportional to the scene extent.
pub fn random_cloud_in_camera_box<T: Scalar>(
    cameras: &[Camera<T>],
    extent: T,
    n: usize,
    seed: u64,
) -> GaussianCloud<T> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for cam in cameras {
        let p = cam.position();
        for k in 0..3 {
            let v = p[k].to_f64().unwrap_or(0.0);
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let ext = extent.to_f64().unwrap_or(1.0);
    for k in 0..3 {
        let pad = 0.1 * ext + 1e-3;
        lo[k] -= pad;
        hi[k] += pad;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::empty();
    for _ in 0..n {
        let position: V3<T> = [
            lit(rng.gen_range(lo[0]..hi[0])),
            lit(rng.gen_range(lo[1]..hi[1])),
            lit(rng.gen_range(lo[2]..hi[2])),
        ];
        let scale_rel = 0.4 * ext;
        let log_scales: V3<T> = [
            lit(rng.gen_range(0.06..0.18) * scale_rel),
            lit(rng.gen_range(0.06..0.18) * scale_rel),
            lit(rng.gen_range(0.06..0.18) * scale_rel),
        ]
        .map(|s: T| s.ln());
        let rotation = random_unit_quat::<T, _>(&mut rng);
        let opacity_logit = logit(lit::<T>(rng.gen_range(0.35..0.85)));
        let colors: V3<T> = [
            lit(rng.gen_range(0.1..0.95)),
            lit(rng.gen_range(0.1..0.95)),
            lit(rng.gen_range(0.1..0.95)),
        ];
        cloud.push(position, log_scales, rotation, opacity_logit, colors);
    }
    cloud
}

/// Loads cameras.json + PNG targets from `dir`, box-downscaling images and
/// intrinsics by the integer factor. The initial cloud comes from
/// `dir/init.splt` when present, otherwise `init_count` seeded random
/// Gaussians inside the camera bounding box.
pub fn load_scene<T: Scalar>(
    dir: &Path,
    downscale: u32,
    init_seed: u64,
    init_count: usize,
) -> Result<SceneBundle<T>, SceneIoError> {
    let json_path = dir.join("cameras.json");
    let text = read_to_string(&json_path)?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| SceneIoError::BadJson(e.to_string()))?;
    if records.is_empty() {
        return Err(SceneIoError::BadJson("cameras.json lists no cameras".to_string()));
    }
    let mut cameras = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for rec in &records {
        let cam: Camera<T> = rec.to_camera();
        cam.validate()?;
        let img_path = dir.join("images").join(&rec.image);
        let img: ImageBuffer<T> = load_png(&img_path)?;
        if img.width != cam.width || img.height != cam.height {
            return Err(SceneIoError::DimensionMismatch(format!(
                "{}: image is {}x{} but camera says {}x{}",
                rec.image, img.width, img.height, cam.width, cam.height
            )));
        }
        let cam = scale_camera(&cam, downscale);
        let img = downscale_box(&img, downscale)?;
        if img.width != cam.width || img.height != cam.height {
            return Err(SceneIoError::DimensionMismatch(format!(
                "{}: downscaled image is {}x{} but camera says {}x{}",
                rec.image, img.width, img.height, cam.width, cam.height
            )));
        }
        cameras.push(cam);
        targets.push(img);
    }
    let extent = camera_extent(&cameras);
    let init_path = dir.join("init.splt");
    let initial_cloud = if init_path.is_file() {
        widen_cloud(&load_checkpoint(&init_path)?)
    } else {
        random_cloud_in_camera_box(&cameras, extent, init_count, init_seed)
    };
    let bundle = SceneBundle {
        cameras,
        targets,
        initial_cloud,
        extent,
    };
    bundle.check_coherent()?;
    Ok(bundle)
}

fn random_unit_quat<T: Scalar, R: Rng>(rng: &mut R) -> [T; 4] {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 1e-9 {
            return [lit(q[0] / n), lit(q[1] / n), lit(q[2] / n), lit(q[3] / n)];
        }
    }
}

/// Noise applied to the reference cloud to form the initial cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPerturbation {
    /// Position noise sigma as a fraction of the scene extent.
    pub position_sigma_rel: f64,
    /// Per-channel color noise sigma (clamped back to [0, 1]).
    pub color_sigma: f64,
}

impl Default for SyntheticPerturbation {
    fn default() -> Self {
        SyntheticPerturbation {
            position_sigma_rel: 0.05,
            color_sigma: 0.1,
        }
    }
}

impl SyntheticPerturbation {
    pub fn none() -> Self {
        SyntheticPerturbation {
            position_sigma_rel: 0.0,
            color_sigma: 0.0,
        }
    }
}

fn look_at_camera<T: Scalar>(position: V3<f64>, width: u32, height: u32) -> Camera<T> {
    let forward = normalize3(scale3(position, -1.0));
    let up_world = [0.0, 1.0, 0.0];
    let right = normalize3([
        up_world[1] * forward[2] - up_world[2] * forward[1],
        up_world[2] * forward[0] - up_world[0] * forward[2],
        up_world[0] * forward[1] - up_world[1] * forward[0],
    ]);
    // Image rows run downward, so the middle row is forward x right ... the
    // down vector completing the right-handed [right, down, forward] frame.
    let down = [
        forward[1] * right[2] - forward[2] * right[1],
        forward[2] * right[0] - forward[0] * right[2],
        forward[0] * right[1] - forward[1] * right[0],
    ];
    let rot_f64: [ [f64; 3]; 3] = [right, down, forward];
    let trans_f64 = [
        -(rot_f64[0][0] * position[0] + rot_f64[0][1] * position[1] + rot_f64[0][2] * position[2]),
        -(rot_f64[1][0] * position[0] + rot_f64[1][1] * position[1] + rot_f64[1][2] * position[2]),
        -(rot_f64[2][0] * position[0] + rot_f64[2][1] * position[1] + rot_f64[2][2] * position[2]),
    ];
    let rot: M3<T> = [
        [lit(rot_f64[0][0]), lit(rot_f64[0][1]), lit(rot_f64[0][2])],
        [lit(rot_f64[1][0]), lit(rot_f64[1][1]), lit(rot_f64[1][2])],
        [lit(rot_f64[2][0]), lit(rot_f64[2][1]), lit(rot_f64[2][2])],
    ];
    Camera {
        fx: lit(0.8 * width as f64),
        fy: lit(0.8 * width as f64),
        cx: lit(width as f64 / 2.0),
        cy: lit(height as f64 / 2.0),
        width,
        height,
        rot,
        trans: [lit(trans_f64[0]), lit(trans_f64[1]), lit(trans_f64[2])],
    }
}

/// Renders one camera view of a cloud with the pipeline's own forward pass.
pub fn render_view<T: Scalar>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    tile_size: u32,
    params: &PipelineParams<T>,
) -> Result<ImageBuffer<T>, SceneIoError> {
    let grid = TileGrid::new(camera.width, camera.height, tile_size)?;
    let proj = project_forward(cloud, camera, &grid, params)?;
    let (offsets, total) = compute_index_offsets(&proj.tile_counts);
    let (keys, ids) = generate_keys(&proj, &offsets, total, &grid)?;
    let (keys, ids) = sort_intersections(keys, ids);
    let ranges = compute_tile_ranges(&keys, &grid)?;
    let sorted = crate::pipeline::SortedIntersections {
        keys,
        gaussian_ids: ids,
        tile_ranges: ranges,
    };
    let (img, _aux) = rasterize_forward(&proj, &sorted, &grid, params);
    Ok(img)
}

/// Generates a fully synthetic scene: a seeded reference cloud near the
/// origin, cameras on a ring looking inward, ground-truth targets rendered
/// with the pipeline's own forward pass, and a perturbed copy of the
/// reference cloud as the initial cloud. Deterministic for a fixed seed.
pub fn generate_synthetic_with<T: Scalar>(
    seed: u64,
    n_gaussians: usize,
    n_cameras: usize,
    width: u32,
    height: u32,
    perturbation: &SyntheticPerturbation,
) -> Result<SceneBundle<T>, SceneIoError> {
    assert!(n_gaussians >= 1 && n_cameras >= 1 && width >= 1 && height >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = GaussianCloud::empty();
    for _ in 0..n_gaussians {
        let position: V3<T> = [
            lit(rng.gen_range(-0.8..0.8)),
            lit(rng.gen_range(-0.8..0.8)),
            lit(rng.gen_range(-0.8..0.8)),
        ];
        let log_scales: V3<T> = [
            lit(rng.gen_range(0.06..0.18)),
            lit(rng.gen_range(0.06..0.18)),
            lit(rng.gen_range(0.06..0.18)),
        ]
        .map(|s: T| s.ln());
        let rotation = random_unit_quat::<T, _>(&mut rng);
        let opacity_logit = logit(lit::<T>(rng.gen_range(0.35..0.85)));
        let colors: V3<T> = [
            lit(rng.gen_range(0.1..0.95)),
            lit(rng.gen_range(0.1..0.95)),
            lit(rng.gen_range(0.1..0.95)),
        ];
        reference.push(position, log_scales, rotation, opacity_logit, colors);
    }
    let ring_radius = 2.5;
    let mut cameras = Vec::with_capacity(n_cameras);
    for j in 0..n_cameras {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / n_cameras as f64;
        let position = [
            ring_radius * theta.sin(),
            0.25 + 0.1 * (2.0 * theta).sin(),
            ring_radius * theta.cos(),
        ];
        cameras.push(look_at_camera::<T>(position, width, height));
    }
    let params = PipelineParams::default();
    let mut targets = Vec::with_capacity(n_cameras);
    for cam in &cameras {
        targets.push(render_view(&reference, cam, 16, &params)?);
    }
    let extent = camera_extent(&cameras);
    let mut initial_cloud = reference;
    let pos_sigma = perturbation.position_sigma_rel * extent.to_f64().unwrap_or(1.0);
    for i in 0..initial_cloud.len() {
        for k in 0..3 {
            let noise: f64 = rng.sample(StandardNormal);
            initial_cloud.positions[i][k] =
                initial_cloud.positions[i][k] + lit(pos_sigma * noise);
        }
        for k in 0..3 {
            let noise: f64 = rng.sample(StandardNormal);
            let c = initial_cloud.colors[i][k] + lit(perturbation.color_sigma * noise);
            initial_cloud.colors[i][k] = c.max(T::zero()).min(T::one());
        }
    }
    let bundle = SceneBundle {
        cameras,
        targets,
        initial_cloud,
        extent,
    };
    bundle.check_coherent()?;
    Ok(bundle)
}

/// `generate_synthetic_with` under the default perturbation.
pub fn generate_synthetic<T: Scalar>(
    seed: u64,
    n_gaussians: usize,
    n_cameras: usize,
    width: u32,
    height: u32,
) -> Result<SceneBundle<T>, SceneIoError> {
    generate_synthetic_with(
        seed,
        n_gaussians,
        n_cameras,
        width,
        height,
        &SyntheticPerturbation::default(),
    )
}
