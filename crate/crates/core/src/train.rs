//! The training driver: the per-iteration stage sequence with wall-clock
//! instrumentation, accounted device-style buffers, scheduled densification,
//! and end-of-run quality metrics.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instrument::{
    Clock, FixedStepClock, InstrumentError, RealClock, StageBreakdown, StageClock, StageId,
};
use crate::math::lit;
use crate::membench::{Arena, Handle, MemError, Policy, TraceEvent};
use crate::optim::{
    adam_step, densify_default, exponential_decay, mcmc_noise, mcmc_relocate, AdamParams,
    AdamState, DefaultDensifyOpts, DensifyStats, GroupLrs, McmcOpts, OptimError,
};
use crate::pipeline::{
    compute_index_offsets, compute_tile_ranges, copy_image_to_device, generate_keys,
    loss_gradient, project_backward, project_forward, rasterize_backward, rasterize_forward,
    sort_intersections, PipelineError, PipelineParams, SortedIntersections,
};
use crate::report::{psnr, ssim, ReportError, ResultsGrid, RESULT_ROWS};
use crate::scene::{Camera, GaussianCloud, ImageBuffer, SceneError, TileGrid};
use crate::sceneio::{generate_synthetic, load_scene, SceneBundle, SceneIoError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    SceneIo(#[from] SceneIoError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Where the scene comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synthetic {
        seed: u64,
        n_gaussians: usize,
        n_cameras: usize,
        width: u32,
        height: u32,
    },
    Directory {
        path: PathBuf,
        downscale: u32,
        init_count: usize,
    },
}

/// Which densification strategy the run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensifyMode {
    Default,
    Mcmc { budget: usize },
}

/// Timing source: real wall clock, or a fixed-step virtual clock for
/// bit-reproducible timing output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    Real,
    Fixed { step: f64 },
}

/// Optimizer knobs; the position rate is relative to the scene extent and
/// decays exponentially to `lr_position_final_mult` of its initial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerTuning {
    pub lr_position_rel: f64,
    pub lr_position_final_mult: f64,
    pub lr_log_scales: f64,
    pub lr_rotations: f64,
    pub lr_opacity: f64,
    pub lr_colors: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerTuning {
    /// Rates sized for short desk-scale runs (hundreds of iterations rather
    /// than tens of thousands); the position rate is relative to the scene
    /// extent.
    fn default() -> Self {
        OptimizerTuning {
            lr_position_rel: 2e-3,
            lr_position_final_mult: 0.01,
            lr_log_scales: 5e-3,
            lr_rotations: 1e-3,
            lr_opacity: 5e-2,
            lr_colors: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-densification knobs; `stop` defaults to half the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyTuning {
    pub interval: u64,
    pub start: u64,
    pub stop: Option<u64>,
    pub grad_threshold: f64,
    pub size_threshold_rel: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: u64,
    pub reset_opacity_to: f64,
}

impl Default for DensifyTuning {
    fn default() -> Self {
        DensifyTuning {
            interval: 100,
            start: 500,
            stop: None,
            grad_threshold: 2e-4,
            size_threshold_rel: 0.01,
            split_factor: 1.6,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            reset_opacity_to: 0.01,
        }
    }
}

/// Fixed-budget strategy knobs (the budget itself lives in `DensifyMode`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcTuning {
    pub interval: u64,
    pub dead_opacity: f64,
    pub noise_scale: f64,
    pub jitter_scale: f64,
    pub gate_sharpness: f64,
}

impl Default for McmcTuning {
    fn default() -> Self {
        McmcTuning {
            interval: 100,
            dead_opacity: 0.005,
            noise_scale: 100.0,
            jitter_scale: 0.01,
            gate_sharpness: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub scene: SceneSource,
    pub iterations: u64,
    /// Seed for train-time randomness (densification sampling, noise);
    /// the scene seed lives in `SceneSource`.
    pub seed: u64,
    pub lambda_dssim: f64,
    pub tile_size: u32,
    pub preallocate: bool,
    pub densify: DensifyMode,
    pub clock: ClockMode,
    pub optimizer: OptimizerTuning,
    pub densify_tuning: DensifyTuning,
    pub mcmc_tuning: McmcTuning,
}

impl TrainSettings {
    pub fn synthetic_default() -> Self {
        TrainSettings {
            scene: SceneSource::Synthetic {
                seed: 7,
                n_gaussians: 64,
                n_cameras: 3,
                width: 64,
                height: 64,
            },
            iterations: 500,
            seed: 1,
            lambda_dssim: 0.2,
            tile_size: 16,
            preallocate: false,
            densify: DensifyMode::Default,
            clock: ClockMode::Real,
            optimizer: OptimizerTuning::default(),
            densify_tuning: DensifyTuning::default(),
            mcmc_tuning: McmcTuning::default(),
        }
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud<f32>,
    pub breakdown: StageBreakdown,
    pub trace: Vec<TraceEvent>,
    pub total_bytes: u64,
    pub peak_bytes: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub initial_psnr_db: f64,
    pub time_seconds: f64,
    pub final_count: usize,
    pub count_history: Vec<usize>,
    pub last_loss: f64,
    pub densify_events: usize,
}

// Accounted byte sizes: what the equivalent device buffers would occupy
// (f32 layout), NOT this process's host memory.
const PER_GAUSSIAN_BUFFERS: [(&str, u64); 11] = [
    ("positions", 12),
    ("log_scales", 12),
    ("rotations", 16),
    ("opacities", 4),
    ("colors", 12),
    ("adam_m", 56),
    ("adam_v", 56),
    ("densify_stats", 8),
    ("projected", 52),
    ("grads_2d", 36),
    ("grads_3d", 60),
];
const BYTES_PER_KEY: u64 = 12; // u64 key + u32 Gaussian id
const BYTES_PER_TILE_RANGE: u64 = 8;
const BYTES_PER_FRAMEBUFFER_PIXEL: u64 = 20; // RGB f32 + transmittance + last id
const BYTES_PER_TARGET_PIXEL: u64 = 12;
const GROW_INITIAL_KEY_ENTRIES: u64 = 1024;

/// The accounted buffer set backing a run.
struct DeviceModel {
    arena: Arena,
    per_gaussian: Vec<Handle>,
    keys: Handle,
}

impl DeviceModel {
    /// Lays out every buffer. Under preallocation, per-Gaussian buffers are
    /// created at `n_max` capacity and the key buffer at its worst case
    /// (every Gaussian touching every tile), so nothing can ever grow.
    fn setup(
        preallocate: bool,
        n_initial: usize,
        n_max: usize,
        n_tiles: u64,
        width: u32,
        height: u32,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, MemError> {
        let pixels = width as u64 * height as u64;
        let fixed_bytes = n_tiles * BYTES_PER_TILE_RANGE
            + pixels * BYTES_PER_FRAMEBUFFER_PIXEL
            + pixels * BYTES_PER_TARGET_PIXEL;
        let (policy, n_alloc, key_entries) = if preallocate {
            let per_gaussian_bytes: u64 = PER_GAUSSIAN_BUFFERS.iter().map(|&(_, u)| u).sum();
            let key_entries = n_max as u64 * n_tiles;
            let budget = n_max as u64 * per_gaussian_bytes
                + key_entries * BYTES_PER_KEY
                + fixed_bytes;
            (
                Policy::Preallocate { budget_bytes: budget },
                n_max,
                key_entries,
            )
        } else {
            (Policy::default(), n_initial, GROW_INITIAL_KEY_ENTRIES)
        };
        let mut arena = Arena::new(policy, clock);
        let mut per_gaussian = Vec::with_capacity(PER_GAUSSIAN_BUFFERS.len());
        for &(name, unit) in &PER_GAUSSIAN_BUFFERS {
            per_gaussian.push(arena.alloc(name, n_alloc as u64 * unit)?);
        }
        let keys = arena.alloc("keys", key_entries * BYTES_PER_KEY)?;
        arena.alloc("tile_ranges", n_tiles * BYTES_PER_TILE_RANGE)?;
        arena.alloc("framebuffer", pixels * BYTES_PER_FRAMEBUFFER_PIXEL)?;
        arena.alloc("target_image", pixels * BYTES_PER_TARGET_PIXEL)?;
        Ok(DeviceModel {
            arena,
            per_gaussian,
            keys,
        })
    }

    fn resize_gaussians(&mut self, n: usize) -> Result<(), MemError> {
        for (&handle, &(_, unit)) in self.per_gaussian.iter().zip(&PER_GAUSSIAN_BUFFERS) {
            self.arena.resize(handle, n as u64 * unit)?;
        }
        Ok(())
    }

    fn resize_keys(&mut self, entries: u64) -> Result<(), MemError> {
        self.arena.resize(self.keys, entries * BYTES_PER_KEY)
    }
}

fn load_bundle(source: &SceneSource) -> Result<SceneBundle<f32>, TrainError> {
    match source {
        SceneSource::Synthetic {
            seed,
            n_gaussians,
            n_cameras,
            width,
            height,
        } => Ok(generate_synthetic(*seed, *n_gaussians, *n_cameras, *width, *height)?),
        SceneSource::Directory {
            path,
            downscale,
            init_count,
        } => Ok(load_scene(path, *downscale, 0xC0FFEE, *init_count)?),
    }
}

/// Mean PSNR/SSIM of the cloud rendered against every target view.
pub fn evaluate(
    cloud: &GaussianCloud<f32>,
    cameras: &[Camera<f32>],
    targets: &[ImageBuffer<f32>],
    tile_size: u32,
) -> Result<(f64, f64), TrainError> {
    let params = PipelineParams::default();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (cam, target) in cameras.iter().zip(targets) {
        let render = crate::sceneio::render_view(cloud, cam, tile_size, &params)?;
        psnr_sum += psnr(&render, target)?;
        ssim_sum += ssim(&render, target)?;
    }
    let n = cameras.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

fn make_clock(mode: ClockMode) -> Arc<dyn Clock> {
    match mode {
        ClockMode::Real => Arc::new(RealClock::new()),
        ClockMode::Fixed { step } => Arc::new(FixedStepClock::new(step)),
    }
}

/// Runs the full training loop and returns the instrumented outcome.
pub fn run_train(settings: &TrainSettings) -> Result<TrainOutcome, TrainError> {
    let bundle = load_bundle(&settings.scene)?;
    let mut cloud = bundle.initial_cloud.clone();
    let cameras = &bundle.cameras;
    let targets = &bundle.targets;
    let extent = bundle.extent;
    let width = cameras[0].width;
    let height = cameras[0].height;
    let grid = TileGrid::new(width, height, settings.tile_size)?;
    let params = PipelineParams::<f32>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    // A fixed-budget run must hold exactly `budget` Gaussians from the
    // start: clone round-robin (with a small deterministic position jitter)
    // or truncate.
    if let DensifyMode::Mcmc { budget } = settings.densify {
        let n0 = cloud.len();
        if n0 > budget {
            let keep: Vec<bool> = (0..n0).map(|i| i < budget).collect();
            cloud.retain_mask(&keep);
        } else if n0 < budget {
            use rand::Rng;
            for i in 0..budget - n0 {
                cloud.push_copy_of(i % n0);
                let last = cloud.len() - 1;
                for k in 0..3 {
                    let jitter: f64 = rng.sample(rand_distr::StandardNormal);
                    cloud.positions[last][k] += 1e-3 * extent * jitter as f32;
                }
            }
        }
    }

    let n_max = match settings.densify {
        DensifyMode::Mcmc { budget } => budget,
        // Headroom for adaptive growth when everything is preallocated.
        DensifyMode::Default => cloud.len() * 4,
    };

    let clock = make_clock(settings.clock);
    let stage_clock = StageClock::new(Arc::clone(&clock));
    let mut device = DeviceModel::setup(
        settings.preallocate,
        cloud.len(),
        n_max,
        grid.n_tiles() as u64,
        width,
        height,
        Arc::clone(&clock),
    )?;

    let adam_params = AdamParams::<f32> {
        beta1: lit(settings.optimizer.beta1),
        beta2: lit(settings.optimizer.beta2),
        epsilon: lit(settings.optimizer.epsilon),
    };
    let mut adam = AdamState::new(cloud.len(), adam_params);
    let mut stats = DensifyStats::<f32>::new(cloud.len());
    let lr_pos_initial = settings.optimizer.lr_position_rel * extent as f64;
    let lr_pos_final = lr_pos_initial * settings.optimizer.lr_position_final_mult;
    let densify_opts = DefaultDensifyOpts::<f32> {
        interval: settings.densify_tuning.interval,
        start: settings.densify_tuning.start,
        stop: settings
            .densify_tuning
            .stop
            .unwrap_or(settings.iterations / 2),
        grad_threshold: lit(settings.densify_tuning.grad_threshold),
        size_threshold_rel: lit(settings.densify_tuning.size_threshold_rel),
        split_factor: lit(settings.densify_tuning.split_factor),
        prune_opacity: lit(settings.densify_tuning.prune_opacity),
        opacity_reset_interval: settings.densify_tuning.opacity_reset_interval,
        reset_opacity_to: lit(settings.densify_tuning.reset_opacity_to),
    };
    let mcmc_opts_for = |budget: usize| McmcOpts::<f32> {
        budget,
        interval: settings.mcmc_tuning.interval,
        dead_opacity: lit(settings.mcmc_tuning.dead_opacity),
        noise_scale: lit(settings.mcmc_tuning.noise_scale),
        jitter_scale: lit(settings.mcmc_tuning.jitter_scale),
        gate_sharpness: lit(settings.mcmc_tuning.gate_sharpness),
    };
    let pixel_norm: f32 = 0.5 * width.max(height) as f32;

    let (initial_psnr_db, _) = evaluate(&cloud, cameras, targets, settings.tile_size)?;

    let mut count_history = Vec::with_capacity(settings.iterations as usize);
    let mut densify_events = 0usize;
    let mut last_loss = 0.0f64;
    let t_start = clock.now();

    for it in 1..=settings.iterations {
        let cam = &cameras[((it - 1) as usize) % cameras.len()];
        let target = &targets[((it - 1) as usize) % targets.len()];

        let proj = stage_clock.with_stage(StageId::ProjectionForward, || {
            project_forward(&cloud, cam, &grid, &params)
        })??;

        let (offsets, total) = stage_clock.with_stage(StageId::IndexOffset, || {
            compute_index_offsets(&proj.tile_counts)
        })?;

        let (keys, ids) = stage_clock.with_stage(StageId::GenerateKeys, || {
            device.resize_keys(total)?;
            Ok::<_, TrainError>(generate_keys(&proj, &offsets, total, &grid)?)
        })??;

        let (keys, ids) =
            stage_clock.with_stage(StageId::Sorting, || sort_intersections(keys, ids))?;

        let sorted = stage_clock.with_stage(StageId::TileRanges, || {
            let tile_ranges = compute_tile_ranges(&keys, &grid)?;
            Ok::<_, TrainError>(SortedIntersections {
                keys,
                gaussian_ids: ids,
                tile_ranges,
            })
        })??;

        let (render, aux) = stage_clock.with_stage(StageId::RasterizationForward, || {
            rasterize_forward(&proj, &sorted, &grid, &params)
        })?;

        let resident = stage_clock.with_stage(StageId::CopyImageToDevice, || {
            copy_image_to_device(target, width, height)
        })??;

        let (loss, dl_dpixel) = stage_clock.with_stage(StageId::LossGradient, || {
            loss_gradient(&render, &resident, lit(settings.lambda_dssim))
        })??;
        last_loss = loss as f64;
        if !last_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration: it });
        }

        let raster_grads = stage_clock.with_stage(StageId::RasterizationBackward, || {
            rasterize_backward(&proj, &sorted, &grid, &aux, &dl_dpixel, &params)
        })??;

        let progress = it as f64 / settings.iterations as f64;
        let lr_pos = exponential_decay(lr_pos_initial, lr_pos_final, progress);
        let lrs = GroupLrs::<f32> {
            positions: lit(lr_pos),
            log_scales: lit(settings.optimizer.lr_log_scales),
            rotations: lit(settings.optimizer.lr_rotations),
            opacity_logits: lit(settings.optimizer.lr_opacity),
            colors: lit(settings.optimizer.lr_colors),
        };
        stage_clock.with_stage(StageId::ProjBwdOptimizer, || {
            let grads = project_backward(&cloud, cam, &proj, &raster_grads, &params);
            stats.accumulate(&grads.screen_grad_norms, &proj.visible);
            adam_step(&mut cloud, &grads, &mut adam, &lrs)
        })??;

        stage_clock.with_stage(StageId::Densification, || {
            match settings.densify {
                DensifyMode::Default => {
                    let outcome = densify_default(
                        &mut cloud,
                        &mut adam,
                        &mut stats,
                        it,
                        extent,
                        pixel_norm,
                        &densify_opts,
                        &mut rng,
                    )?;
                    if outcome.event {
                        densify_events += 1;
                        device.resize_gaussians(cloud.len())?;
                    }
                }
                DensifyMode::Mcmc { budget } => {
                    let opts = mcmc_opts_for(budget);
                    if it % opts.interval == 0 {
                        let moved = mcmc_relocate(&mut cloud, &mut adam, &opts, &mut rng)?;
                        if moved > 0 {
                            densify_events += 1;
                        }
                    }
                    mcmc_noise(&mut cloud, lit(lr_pos), &opts, &mut rng);
                }
            }
            Ok::<_, TrainError>(())
        })??;

        count_history.push(cloud.len());
    }

    let total_seconds = clock.now() - t_start;
    let breakdown = stage_clock.finalize(total_seconds)?;
    let (psnr_db, ssim_val) = evaluate(&cloud, cameras, targets, settings.tile_size)?;

    let final_count = cloud.len();
    Ok(TrainOutcome {
        cloud,
        breakdown,
        trace: device.arena.trace().to_vec(),
        total_bytes: device.arena.total_bytes(),
        peak_bytes: device.arena.peak_bytes(),
        psnr_db,
        ssim: ssim_val,
        initial_psnr_db,
        time_seconds: total_seconds,
        final_count,
        count_history,
        last_loss,
        densify_events,
    })
}

/// Caps the process-wide worker pool at `n` threads (1 = fully sequential).
/// Returns false when the pool was already built; it cannot be resized.
pub fn configure_thread_pool(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_ok()
}

const BYTES_PER_GIB: f64 = 1024.0 * 1024.0 * 1024.0;

/// One metrics sample per `RESULT_ROWS` row for a finished run.
pub fn metric_samples(outcome: &TrainOutcome) -> [f64; RESULT_ROWS.len()] {
    [
        outcome.psnr_db,
        outcome.ssim,
        outcome.time_seconds,
        outcome.total_bytes as f64 / BYTES_PER_GIB,
        outcome.peak_bytes as f64 / BYTES_PER_GIB,
        outcome.final_count as f64 / 1000.0,
    ]
}

/// Collects finished runs into the results grid consumed by the table
/// renderer (single scene column).
pub fn metrics_grid(outcomes: &[TrainOutcome], scene_label: &str, level: f64) -> ResultsGrid {
    let mut rows = vec![Vec::with_capacity(outcomes.len()); RESULT_ROWS.len()];
    for outcome in outcomes {
        for (row, value) in metric_samples(outcome).into_iter().enumerate() {
            rows[row].push(value);
        }
    }
    ResultsGrid {
        scenes: vec![scene_label.to_string()],
        values: vec![rows],
        level,
    }
}

/// Runs training `repeats` times; run r uses train seed `settings.seed + r`
/// while the scene itself stays fixed.
pub fn run_bench(
    settings: &TrainSettings,
    repeats: usize,
    scene_label: &str,
    level: f64,
) -> Result<(ResultsGrid, Vec<TrainOutcome>), TrainError> {
    assert!(repeats >= 1);
    let mut outcomes = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut run_settings = settings.clone();
        run_settings.seed = settings.seed + r as u64;
        outcomes.push(run_train(&run_settings)?);
    }
    let grid = metrics_grid(&outcomes, scene_label, level);
    Ok((grid, outcomes))
}
