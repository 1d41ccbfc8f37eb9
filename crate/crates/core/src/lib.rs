//! Core library for a tile-based differentiable Gaussian-splatting trainer
//! with instrumented stage timing, device-style memory accounting, and
//! statistical benchmark reporting.

pub mod instrument;
pub mod math;
pub mod membench;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod scene;
pub mod sceneio;
pub mod ssim;
pub mod train;
