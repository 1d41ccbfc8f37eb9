//! TOML run configuration: every hyperparameter with its default, grouped in
//! sections that mirror the library modules, plus merging of command-line
//! overrides into `TrainSettings`.

use std::path::PathBuf;

use serde::Deserialize;
use splatbench_core::train::{
    ClockMode, DensifyMode, DensifyTuning, McmcTuning, OptimizerTuning, SceneSource,
    TrainSettings,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_iterations() -> u64 {
    500
}
fn default_seed() -> u64 {
    1
}
fn default_repeats() -> usize {
    5
}
fn default_densify() -> String {
    "default".to_string()
}
fn default_budget() -> usize {
    1000
}
fn default_lambda() -> f64 {
    0.2
}
fn default_tile_size() -> u32 {
    16
}
fn default_clock() -> String {
    "real".to_string()
}
fn default_clock_step() -> f64 {
    1e-3
}
fn default_level() -> f64 {
    0.90
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: u64,
    pub seed: u64,
    pub repeats: usize,
    /// "default" or "mcmc"
    pub densify: String,
    pub budget: usize,
    pub threads: usize,
    pub lambda_dssim: f64,
    pub tile_size: u32,
    pub preallocate: bool,
    /// "real" or "fixed"
    pub clock: String,
    pub clock_step: f64,
    /// Confidence level for interval rendering.
    pub level: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            iterations: default_iterations(),
            seed: default_seed(),
            repeats: default_repeats(),
            densify: default_densify(),
            budget: default_budget(),
            threads: 0,
            lambda_dssim: default_lambda(),
            tile_size: default_tile_size(),
            preallocate: false,
            clock: default_clock(),
            clock_step: default_clock_step(),
            level: default_level(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// "synthetic" or "directory"
    pub kind: String,
    pub seed: u64,
    pub gaussians: usize,
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    pub path: PathBuf,
    pub downscale: u32,
    pub init_count: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            kind: "synthetic".to_string(),
            seed: 7,
            gaussians: 64,
            cameras: 3,
            width: 64,
            height: 64,
            path: PathBuf::from("scene"),
            downscale: 1,
            init_count: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
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

impl Default for OptimizerSection {
    fn default() -> Self {
        let t = OptimizerTuning::default();
        OptimizerSection {
            lr_position_rel: t.lr_position_rel,
            lr_position_final_mult: t.lr_position_final_mult,
            lr_log_scales: t.lr_log_scales,
            lr_rotations: t.lr_rotations,
            lr_opacity: t.lr_opacity,
            lr_colors: t.lr_colors,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyDefaultSection {
    pub interval: u64,
    pub start: u64,
    /// 0 means "half the run".
    pub stop: u64,
    pub grad_threshold: f64,
    pub size_threshold_rel: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: u64,
    pub reset_opacity_to: f64,
}

impl Default for DensifyDefaultSection {
    fn default() -> Self {
        let t = DensifyTuning::default();
        DensifyDefaultSection {
            interval: t.interval,
            start: t.start,
            stop: 0,
            grad_threshold: t.grad_threshold,
            size_threshold_rel: t.size_threshold_rel,
            split_factor: t.split_factor,
            prune_opacity: t.prune_opacity,
            opacity_reset_interval: t.opacity_reset_interval,
            reset_opacity_to: t.reset_opacity_to,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyMcmcSection {
    pub interval: u64,
    pub dead_opacity: f64,
    pub noise_scale: f64,
    pub jitter_scale: f64,
    pub gate_sharpness: f64,
}

impl Default for DensifyMcmcSection {
    fn default() -> Self {
        let t = McmcTuning::default();
        DensifyMcmcSection {
            interval: t.interval,
            dead_opacity: t.dead_opacity,
            noise_scale: t.noise_scale,
            jitter_scale: t.jitter_scale,
            gate_sharpness: t.gate_sharpness,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifySections {
    #[serde(rename = "default")]
    pub default_: DensifyDefaultSection,
    pub mcmc: DensifyMcmcSection,
}

impl Default for DensifySections {
    fn default() -> Self {
        DensifySections {
            default_: DensifyDefaultSection::default(),
            mcmc: DensifyMcmcSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub scene: SceneSection,
    pub optimizer: OptimizerSection,
    pub densify: DensifySections,
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub densify: Option<String>,
    pub budget: Option<usize>,
    pub iters: Option<u64>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub tile_size: Option<u32>,
    pub preallocate: bool,
    pub downscale: Option<u32>,
    pub threads: Option<usize>,
    pub clock: Option<String>,
    pub scene_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.clone(),
                    source,
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.densify {
            self.run.densify = d.clone();
        }
        if let Some(b) = o.budget {
            self.run.budget = b;
        }
        if let Some(i) = o.iters {
            self.run.iterations = i;
        }
        if let Some(r) = o.repeats {
            self.run.repeats = r;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(t) = o.tile_size {
            self.run.tile_size = t;
        }
        if o.preallocate {
            self.run.preallocate = true;
        }
        if let Some(d) = o.downscale {
            self.scene.downscale = d;
        }
        if let Some(t) = o.threads {
            self.run.threads = t;
        }
        if let Some(c) = &o.clock {
            self.run.clock = c.clone();
        }
        if let Some(dir) = &o.scene_dir {
            self.scene.kind = "directory".to_string();
            self.scene.path = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if r.iterations < 1 {
            return Err(ConfigError::Invalid("iterations must be >= 1".into()));
        }
        if r.repeats < 1 {
            return Err(ConfigError::Invalid("repeats must be >= 1".into()));
        }
        if r.tile_size < 1 {
            return Err(ConfigError::Invalid("tile_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&r.lambda_dssim) {
            return Err(ConfigError::Invalid("lambda_dssim must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&r.level) || r.level <= 0.0 {
            return Err(ConfigError::Invalid("level must be in (0, 1)".into()));
        }
        match r.densify.as_str() {
            "default" => {}
            "mcmc" => {
                if r.budget < 1 {
                    return Err(ConfigError::Invalid("mcmc budget must be >= 1".into()));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "densify must be \"default\" or \"mcmc\", got \"{other}\""
                )));
            }
        }
        match r.clock.as_str() {
            "real" | "fixed" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "clock must be \"real\" or \"fixed\", got \"{other}\""
                )));
            }
        }
        if r.clock == "fixed" && r.clock_step <= 0.0 {
            return Err(ConfigError::Invalid("clock_step must be positive".into()));
        }
        let s = &self.scene;
        match s.kind.as_str() {
            "synthetic" => {
                if s.gaussians < 1 || s.cameras < 1 || s.width < 1 || s.height < 1 {
                    return Err(ConfigError::Invalid(
                        "synthetic scene counts and dimensions must be >= 1".into(),
                    ));
                }
            }
            "directory" => {
                if s.downscale < 1 {
                    return Err(ConfigError::Invalid("downscale must be >= 1".into()));
                }
                if s.init_count < 1 {
                    return Err(ConfigError::Invalid("init_count must be >= 1".into()));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "scene kind must be \"synthetic\" or \"directory\", got \"{other}\""
                )));
            }
        }
        Ok(())
    }

    pub fn to_settings(&self) -> Result<TrainSettings, ConfigError> {
        self.validate()?;
        let scene = match self.scene.kind.as_str() {
            "synthetic" => SceneSource::Synthetic {
                seed: self.scene.seed,
                n_gaussians: self.scene.gaussians,
                n_cameras: self.scene.cameras,
                width: self.scene.width,
                height: self.scene.height,
            },
            _ => SceneSource::Directory {
                path: self.scene.path.clone(),
                downscale: self.scene.downscale,
                init_count: self.scene.init_count,
            },
        };
        let densify = match self.run.densify.as_str() {
            "mcmc" => DensifyMode::Mcmc {
                budget: self.run.budget,
            },
            _ => DensifyMode::Default,
        };
        let clock = match self.run.clock.as_str() {
            "fixed" => ClockMode::Fixed {
                step: self.run.clock_step,
            },
            _ => ClockMode::Real,
        };
        let d = &self.densify.default_;
        Ok(TrainSettings {
            scene,
            iterations: self.run.iterations,
            seed: self.run.seed,
            lambda_dssim: self.run.lambda_dssim,
            tile_size: self.run.tile_size,
            preallocate: self.run.preallocate,
            densify,
            clock,
            optimizer: OptimizerTuning {
                lr_position_rel: self.optimizer.lr_position_rel,
                lr_position_final_mult: self.optimizer.lr_position_final_mult,
                lr_log_scales: self.optimizer.lr_log_scales,
                lr_rotations: self.optimizer.lr_rotations,
                lr_opacity: self.optimizer.lr_opacity,
                lr_colors: self.optimizer.lr_colors,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                epsilon: self.optimizer.epsilon,
            },
            densify_tuning: DensifyTuning {
                interval: d.interval,
                start: d.start,
                stop: if d.stop == 0 { None } else { Some(d.stop) },
                grad_threshold: d.grad_threshold,
                size_threshold_rel: d.size_threshold_rel,
                split_factor: d.split_factor,
                prune_opacity: d.prune_opacity,
                opacity_reset_interval: d.opacity_reset_interval,
                reset_opacity_to: d.reset_opacity_to,
            },
            mcmc_tuning: McmcTuning {
                interval: self.densify.mcmc.interval,
                dead_opacity: self.densify.mcmc.dead_opacity,
                noise_scale: self.densify.mcmc.noise_scale,
                jitter_scale: self.densify.mcmc.jitter_scale,
                gate_sharpness: self.densify.mcmc.gate_sharpness,
            },
        })
    }
}
