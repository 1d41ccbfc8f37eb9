//! Buffer-arena accounting with the reporting semantics of a GPU trainer:
//! total = sum of live buffer capacities, peak = maximum instantaneous
//! footprint including the window during a grow-resize where the old and new
//! allocations coexist. A polling simulator reproduces what a sampled external
//! monitor would have observed on the same trace.

use std::sync::Arc;

use thiserror::Error;

use crate::instrument::Clock;

#[derive(Debug, Error, PartialEq)]
pub enum MemError {
    #[error("request of {requested} bytes exceeds the preallocation budget ({budget} bytes, {in_use} in use)")]
    BudgetExceeded { requested: u64, budget: u64, in_use: u64 },
    #[error("handle is not live")]
    StaleHandle,
    #[error("buffer already freed")]
    DoubleFree,
    #[error("total must be positive")]
    ZeroTotal,
}

#[derive(Debug, Clone, Copy)]
pub enum Policy {
    /// Buffers grow geometrically; a grow-resize models a copy window during
    /// which old and new capacity coexist.
    Grow { factor: f64, copy_window: f64 },
    /// Fixed budget reserved up front; nothing may grow past its capacity, so
    /// no spike can ever occur.
    Preallocate { budget_bytes: u64 },
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Grow { factor: 1.5, copy_window: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handle(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Alloc,
    Resize,
    Free,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Alloc => "alloc",
            EventKind::Resize => "resize",
            EventKind::Free => "free",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: EventKind,
    pub name: String,
    pub old_capacity: u64,
    pub new_capacity: u64,
    /// Sum of live capacities after the event.
    pub total: u64,
    /// Running peak after the event, spike included.
    pub peak: u64,
    /// Duration of the modeled copy for grow-resizes, else 0.
    pub copy_window: f64,
}

#[derive(Debug)]
struct Buffer {
    name: String,
    #[allow(dead_code)]
    size: u64,
    capacity: u64,
}

pub struct Arena {
    policy: Policy,
    clock: Arc<dyn Clock>,
    buffers: Vec<Option<Buffer>>,
    total: u64,
    peak: u64,
    trace: Vec<TraceEvent>,
}

impl Arena {
    pub fn new(policy: Policy, clock: Arc<dyn Clock>) -> Self {
        Arena {
            policy,
            clock,
            buffers: Vec::new(),
            total: 0,
            peak: 0,
            trace: Vec::new(),
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.total
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn alloc(&mut self, name: &str, size: u64) -> Result<Handle, MemError> {
        if let Policy::Preallocate { budget_bytes } = self.policy {
            if self.total + size > budget_bytes {
                return Err(MemError::BudgetExceeded {
                    requested: size,
                    budget: budget_bytes,
                    in_use: self.total,
                });
            }
        }
        self.buffers.push(Some(Buffer { name: name.to_string(), size, capacity: size }));
        self.total += size;
        self.peak = self.peak.max(self.total);
        self.push_event(EventKind::Alloc, name.to_string(), 0, size, 0.0);
        Ok(Handle(self.buffers.len() - 1))
    }

    pub fn resize(&mut self, handle: Handle, new_size: u64) -> Result<(), MemError> {
        let slot = self.buffers.get(handle.0).ok_or(MemError::StaleHandle)?;
        let buf = slot.as_ref().ok_or(MemError::StaleHandle)?;
        if new_size <= buf.capacity {
            let buf = self.buffers[handle.0].as_mut().unwrap();
            buf.size = new_size;
            return Ok(());
        }
        let (old_capacity, name) = (buf.capacity, buf.name.clone());
        let (new_capacity, copy_window) = match self.policy {
            Policy::Grow { factor, copy_window } => {
                let grown = (old_capacity as f64 * factor).ceil() as u64;
                (new_size.max(grown), copy_window)
            }
            Policy::Preallocate { budget_bytes } => {
                return Err(MemError::BudgetExceeded {
                    requested: new_size,
                    budget: budget_bytes,
                    in_use: self.total,
                });
            }
        };
        // Old and new allocations coexist while the contents are copied.
        self.peak = self.peak.max(self.total + new_capacity);
        self.total = self.total - old_capacity + new_capacity;
        let buf = self.buffers[handle.0].as_mut().unwrap();
        buf.size = new_size;
        buf.capacity = new_capacity;
        self.push_event(EventKind::Resize, name, old_capacity, new_capacity, copy_window);
        Ok(())
    }

    pub fn free(&mut self, handle: Handle) -> Result<(), MemError> {
        let slot = self.buffers.get_mut(handle.0).ok_or(MemError::StaleHandle)?;
        let buf = slot.take().ok_or(MemError::DoubleFree)?;
        self.total -= buf.capacity;
        self.push_event(EventKind::Free, buf.name, buf.capacity, 0, 0.0);
        Ok(())
    }

    fn push_event(&mut self, kind: EventKind, name: String, old_capacity: u64, new_capacity: u64, copy_window: f64) {
        self.trace.push(TraceEvent {
            t: self.clock.now(),
            kind,
            name,
            old_capacity,
            new_capacity,
            total: self.total,
            peak: self.peak,
            copy_window,
        });
    }
}

pub fn trace_to_csv(trace: &[TraceEvent]) -> String {
    let mut out = String::from("t_seconds,event,name,old_capacity,new_capacity,total,peak\n");
    for e in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.t,
            e.kind.label(),
            e.name,
            e.old_capacity,
            e.new_capacity,
            e.total,
            e.peak
        ));
    }
    out
}

/// What an external monitor sampling at `rate_hz` would have reported as the
/// maximum footprint: the trace is replayed into a step function (grow-resize
/// spikes add the released old capacity for the duration of their copy
/// window), evaluated at t = 0, 1/rate, 2/rate, ... After the last event the
/// footprint is constant, so the unbounded sample sequence reduces to the
/// samples inside the trace plus the settled final total.
pub fn poll_simulate(trace: &[TraceEvent], rate_hz: f64) -> u64 {
    assert!(rate_hz > 0.0);
    if trace.is_empty() {
        return 0;
    }
    debug_assert!(trace.windows(2).all(|w| w[0].t <= w[1].t));
    let end = trace.last().unwrap().t + max_copy_window(trace);
    let mut max_seen = footprint_at(trace, 0.0);
    let mut k = 1u64;
    loop {
        let t = k as f64 / rate_hz;
        if t > end {
            break;
        }
        max_seen = max_seen.max(footprint_at(trace, t));
        k += 1;
    }
    max_seen.max(trace.last().unwrap().total)
}

fn max_copy_window(trace: &[TraceEvent]) -> f64 {
    trace.iter().map(|e| e.copy_window).fold(0.0, f64::max)
}

fn footprint_at(trace: &[TraceEvent], t: f64) -> u64 {
    // Base footprint: total after the last event at or before t.
    let mut base = 0;
    for e in trace {
        if e.t <= t {
            base = e.total;
        } else {
            break;
        }
    }
    // Spikes: during [e.t, e.t + copy_window) the old capacity still exists on
    // top of the post-event total.
    let mut spike = 0;
    for e in trace {
        if e.kind == EventKind::Resize && e.copy_window > 0.0 && e.t <= t && t < e.t + e.copy_window {
            spike += e.old_capacity;
        }
    }
    base + spike
}

/// Rounded percentage by which `peak` exceeds `total`.
pub fn overhead_percent(peak: f64, total: f64) -> Result<i64, MemError> {
    if !(total > 0.0) {
        return Err(MemError::ZeroTotal);
    }
    Ok(((peak / total - 1.0) * 100.0).round() as i64)
}
