//! Per-stage wall-clock accounting for the training loop. Stages form a
//! closed, ordered set matching the benchmark breakdown rows; anything the
//! stage timers do not cover shows up as the Unaccounted row.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InstrumentError {
    #[error("stage timers cannot nest")]
    NestedStage,
    #[error("total {total} s is less than the stage sum {sum} s")]
    NegativeUnaccounted { total: f64, sum: f64 },
}

pub const N_STAGES: usize = 11;

/// One training-loop stage. Order is the breakdown-table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageId {
    ProjectionForward,
    IndexOffset,
    GenerateKeys,
    Sorting,
    TileRanges,
    RasterizationForward,
    CopyImageToDevice,
    LossGradient,
    RasterizationBackward,
    ProjBwdOptimizer,
    Densification,
}

impl StageId {
    pub const ALL: [StageId; N_STAGES] = [
        StageId::ProjectionForward,
        StageId::IndexOffset,
        StageId::GenerateKeys,
        StageId::Sorting,
        StageId::TileRanges,
        StageId::RasterizationForward,
        StageId::CopyImageToDevice,
        StageId::LossGradient,
        StageId::RasterizationBackward,
        StageId::ProjBwdOptimizer,
        StageId::Densification,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn label(self) -> &'static str {
        match self {
            StageId::ProjectionForward => "Projection Forward",
            StageId::IndexOffset => "Index Offset",
            StageId::GenerateKeys => "Generate Keys",
            StageId::Sorting => "Sorting",
            StageId::TileRanges => "Tile Ranges",
            StageId::RasterizationForward => "Rasterization Forward",
            StageId::CopyImageToDevice => "Copy Image to Device",
            StageId::LossGradient => "Loss Gradient",
            StageId::RasterizationBackward => "Rasterization Backward",
            StageId::ProjBwdOptimizer => "Proj Bwd + Optimizer",
            StageId::Densification => "Densification",
        }
    }
}

/// Monotonic time source, injectable so tests control the timeline.
pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary epoch; never decreases.
    fn now(&self) -> f64;
}

pub struct RealClock {
    start: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock { start: Instant::now() }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Test clock advanced explicitly.
pub struct ManualClock {
    t_bits: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock { t_bits: AtomicU64::new(0f64.to_bits()) }
    }

    pub fn advance(&self, dt: f64) {
        let t = f64::from_bits(self.t_bits.load(Ordering::SeqCst)) + dt;
        self.t_bits.store(t.to_bits(), Ordering::SeqCst);
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.t_bits.load(Ordering::SeqCst))
    }
}

/// Deterministic clock that advances a fixed step on every reading, making
/// timing-derived outputs reproducible run to run.
pub struct FixedStepClock {
    step: f64,
    t_bits: AtomicU64,
}

impl FixedStepClock {
    pub fn new(step: f64) -> Self {
        FixedStepClock { step, t_bits: AtomicU64::new(0f64.to_bits()) }
    }
}

impl Clock for FixedStepClock {
    fn now(&self) -> f64 {
        let t = f64::from_bits(self.t_bits.load(Ordering::SeqCst)) + self.step;
        self.t_bits.store(t.to_bits(), Ordering::SeqCst);
        t
    }
}

/// Accumulates time into per-stage buckets. Stages never nest; work inside a
/// stage may fan out to threads but must join before the closure returns.
pub struct StageClock {
    clock: Arc<dyn Clock>,
    seconds: RefCell<[f64; N_STAGES]>,
    counts: RefCell<[u64; N_STAGES]>,
    open: Cell<bool>,
}

impl StageClock {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        StageClock {
            clock,
            seconds: RefCell::new([0.0; N_STAGES]),
            counts: RefCell::new([0; N_STAGES]),
            open: Cell::new(false),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn with_stage<R>(&self, stage: StageId, f: impl FnOnce() -> R) -> Result<R, InstrumentError> {
        if self.open.get() {
            return Err(InstrumentError::NestedStage);
        }
        self.open.set(true);
        let t0 = self.clock.now();
        let out = f();
        let t1 = self.clock.now();
        self.open.set(false);
        self.seconds.borrow_mut()[stage.index()] += t1 - t0;
        self.counts.borrow_mut()[stage.index()] += 1;
        Ok(out)
    }

    /// Closes the books against an externally measured run total.
    pub fn finalize(&self, total_seconds: f64) -> Result<StageBreakdown, InstrumentError> {
        let seconds = *self.seconds.borrow();
        let counts = *self.counts.borrow();
        StageBreakdown::build(seconds, counts, total_seconds)
    }
}

/// Timer resolution: differences smaller than this are measurement noise, not
/// a negative Unaccounted row.
pub const CLOCK_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StageBreakdown {
    pub seconds: [f64; N_STAGES],
    pub counts: [u64; N_STAGES],
    pub unaccounted: f64,
    pub total: f64,
}

impl StageBreakdown {
    fn build(seconds: [f64; N_STAGES], counts: [u64; N_STAGES], total: f64) -> Result<Self, InstrumentError> {
        let sum: f64 = seconds.iter().sum();
        if total < sum - CLOCK_RESOLUTION {
            return Err(InstrumentError::NegativeUnaccounted { total, sum });
        }
        Ok(StageBreakdown {
            seconds,
            counts,
            unaccounted: (total - sum).max(0.0),
            total,
        })
    }

    /// Reconstructs a breakdown from externally reported per-stage seconds and
    /// a grand total, e.g. a published benchmark table column.
    pub fn from_parts(seconds: [f64; N_STAGES], total: f64) -> Result<Self, InstrumentError> {
        Self::build(seconds, [0; N_STAGES], total)
    }

    pub fn stage_seconds(&self, stage: StageId) -> f64 {
        self.seconds[stage.index()]
    }

    /// Coarse view: binning stages merge into "Tiling / Sorting", the image
    /// copy and loss merge into "Loss". Sum over rows is preserved.
    pub fn grouped(&self) -> Vec<(&'static str, f64)> {
        let s = |id: StageId| self.stage_seconds(id);
        vec![
            ("Projection Forward", s(StageId::ProjectionForward)),
            (
                "Tiling / Sorting",
                s(StageId::IndexOffset) + s(StageId::GenerateKeys) + s(StageId::Sorting) + s(StageId::TileRanges),
            ),
            ("Rasterization Forward", s(StageId::RasterizationForward)),
            ("Loss", s(StageId::CopyImageToDevice) + s(StageId::LossGradient)),
            ("Rasterization Backward", s(StageId::RasterizationBackward)),
            ("Proj Bwd + Optimizer", s(StageId::ProjBwdOptimizer)),
            ("Densification", s(StageId::Densification)),
            ("Unaccounted", self.unaccounted),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,seconds\n");
        for stage in StageId::ALL {
            out.push_str(&format!("{},{}\n", stage.label(), self.stage_seconds(stage)));
        }
        out.push_str(&format!("Unaccounted,{}\n", self.unaccounted));
        out.push_str(&format!("Total,{}\n", self.total));
        out
    }
}
