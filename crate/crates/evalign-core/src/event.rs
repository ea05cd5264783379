//! Event streams and the normalized single-frame representation.
//!
//! Raw (x, y, t, p) events are aggregated over time and polarity into a
//! per-pixel count grid, optionally clamped, and normalized into a grayscale
//! frame with values in [0, 1). Coordinates follow the (x = column, y = row)
//! convention with row-major storage.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One sensor event. `t` is a timestamp in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    /// Column index.
    pub x: u16,
    /// Row index.
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    /// Polarity: +1 brightness increase, -1 decrease.
    pub p: i8,
}

/// Raw asynchronous events plus the sensor geometry.
///
/// Invariants are enforced at construction: coordinates in bounds,
/// timestamps non-decreasing, polarity exactly +1 or -1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<EventRecord>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<EventRecord>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("event stream dimensions must be nonzero".into()));
        }
        let mut prev_t = 0u64;
        for (i, ev) in events.iter().enumerate() {
            if ev.x >= width || ev.y >= height {
                return Err(Error::Data(format!(
                    "event {i} at ({}, {}) outside coordinate range {width}x{height}",
                    ev.x, ev.y
                )));
            }
            if ev.t < prev_t {
                return Err(Error::Data(format!(
                    "event {i} timestamp {} decreases (previous {prev_t})",
                    ev.t
                )));
            }
            if ev.p != 1 && ev.p != -1 {
                return Err(Error::Data(format!("event {i} polarity {} not in {{-1, +1}}", ev.p)));
            }
            prev_t = ev.t;
        }
        Ok(Self { width, height, events })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-pixel event counts, shape (height, width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    counts: Array2<u32>,
}

impl CountGrid {
    pub fn from_counts(counts: Array2<u32>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &Array2<u32> {
        &self.counts
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Normalized single-frame representation: values in [0, 1), zero exactly
/// where no events occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    values: Array2<f64>,
}

impl EventFrame {
    /// Wraps raw values, checking the frame invariants.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        for &v in values.iter() {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Data(format!("frame value {v} outside [0, 1)")));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.values.dim();
        (s.0, s.1)
    }
}

/// Counts every event at its pixel, ignoring polarity sign: each event
/// contributes +1 to its (y, x) cell.
pub fn aggregate_events(stream: &EventStream) -> CountGrid {
    let mut counts = Array2::<u32>::zeros((stream.height() as usize, stream.width() as usize));
    for ev in stream.events() {
        counts[(ev.y as usize, ev.x as usize)] += 1;
    }
    CountGrid { counts }
}

/// Caps every per-pixel count at `cap`. Idempotent.
pub fn clamp_counts(grid: &CountGrid, cap: u32) -> Result<CountGrid> {
    if cap == 0 {
        return Err(Error::Config("clamp cap must be a positive integer".into()));
    }
    Ok(CountGrid { counts: grid.counts.mapv(|c| c.min(cap)) })
}

/// Normalizes counts to values = counts / (max(counts) + 1).
///
/// The +1 in the denominator keeps every value strictly below 1 and maps the
/// all-zero grid to the all-zero frame.
pub fn normalize_grid(grid: &CountGrid) -> EventFrame {
    let denom = f64::from(grid.max()) + 1.0;
    EventFrame { values: grid.counts.mapv(|c| f64::from(c) / denom) }
}
