// SPDX-License-Identifier: Apache-2.0

//! Events, clocks and the execution-time model shared by every task.
//!
//! All timestamps and durations are integer milliseconds. A device clock is
//! the reference timeline shifted by a constant skew; tasks only ever see
//! their own device's readings.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds, used for both timestamps and durations.
pub type Millis = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CameraId(pub u32);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A device clock: reference time plus a constant signed skew.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockDomain {
    pub device_id: String,
    pub skew_ms: Millis,
}

impl ClockDomain {
    pub fn new(device_id: impl Into<String>, skew_ms: Millis) -> Self {
        ClockDomain {
            device_id: device_id.into(),
            skew_ms,
        }
    }

    pub fn synchronized(device_id: impl Into<String>) -> Self {
        Self::new(device_id, 0)
    }

    /// Local reading at reference time `reference`.
    pub fn read(&self, reference: Millis) -> Millis {
        reference + self.skew_ms
    }

    /// Reference time at which this clock shows `local`.
    pub fn to_reference(&self, local: Millis) -> Millis {
        local - self.skew_ms
    }
}

/// Upstream time of an event corrected for the skew of the receiving device.
///
/// Negative results are legal; they indicate a skew mis-configuration.
pub fn skew_corrected_upstream_time(arrival: Millis, source_arrival: Millis, skew: Millis) -> Millis {
    (arrival - skew) - source_arrival
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventHeader {
    /// Assigned once at the source task and never rewritten.
    pub source_id: EventId,
    /// Arrival at the source task, on the source clock.
    pub source_arrival: Millis,
    /// Sum of batch execution durations charged so far.
    pub sum_exec: Millis,
    /// Sum of queuing durations so far.
    pub sum_queue: Millis,
    pub avoid_drop: bool,
    pub probe: bool,
}

impl EventHeader {
    pub fn new(source_id: EventId, source_arrival: Millis) -> Self {
        EventHeader {
            source_id,
            source_arrival,
            sum_exec: 0,
            sum_queue: 0,
            avoid_drop: false,
            probe: false,
        }
    }

    /// Probe and avoid-drop events bypass every drop point.
    pub fn is_exempt(&self) -> bool {
        self.avoid_drop || self.probe
    }
}

/// Keyed event. The payload is opaque to the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub header: EventHeader,
    pub key: String,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn new(header: EventHeader, key: impl Into<String>, payload: P) -> Self {
        Event {
            header,
            key: key.into(),
            payload,
        }
    }

    pub fn id(&self) -> EventId {
        self.header.source_id
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("batch size {batch} outside 1..={max}")]
    BatchOutOfRange { batch: usize, max: usize },
    #[error("execution-time model must be strictly increasing (b={batch}: {prev} ms then {next} ms)")]
    NotMonotone { batch: usize, prev: Millis, next: Millis },
    #[error("execution-time model needs m_max >= 1")]
    EmptyRange,
    #[error("empirical table must cover batch sizes 1 and {0}")]
    TableCoverage(usize),
}

/// How an execution-time model was specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExecTimeKind {
    /// `base + per_item * b` milliseconds.
    Affine { base_ms: f64, per_item_ms: f64 },
    /// Measured points `(b, ms)`, linearly interpolated in between.
    Empirical(Vec<(usize, f64)>),
}

/// Estimated execution duration of a batch, `xi(b)` for `1 <= b <= m_max`.
///
/// Values are materialized as whole milliseconds at construction, so
/// evaluation is a lookup and strict monotonicity is checked once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecTimeModel {
    kind: ExecTimeKind,
    table: Vec<Millis>,
}

impl ExecTimeModel {
    pub fn affine(base_ms: f64, per_item_ms: f64, m_max: usize) -> Result<Self, ModelError> {
        let kind = ExecTimeKind::Affine {
            base_ms,
            per_item_ms,
        };
        let table = (1..=m_max)
            .map(|b| (base_ms + per_item_ms * b as f64).round() as Millis)
            .collect();
        Self::from_parts(kind, table)
    }

    pub fn empirical(mut points: Vec<(usize, f64)>, m_max: usize) -> Result<Self, ModelError> {
        points.sort_by_key(|p| p.0);
        points.dedup_by_key(|p| p.0);
        let covers = points.first().map(|p| p.0) == Some(1) && points.last().map(|p| p.0) >= Some(m_max);
        if m_max == 0 {
            return Err(ModelError::EmptyRange);
        }
        if !covers {
            return Err(ModelError::TableCoverage(m_max));
        }
        let table = (1..=m_max).map(|b| interpolate(&points, b).round() as Millis).collect();
        Self::from_parts(ExecTimeKind::Empirical(points), table)
    }

    fn from_parts(kind: ExecTimeKind, table: Vec<Millis>) -> Result<Self, ModelError> {
        if table.is_empty() {
            return Err(ModelError::EmptyRange);
        }
        for (i, pair) in table.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(ModelError::NotMonotone {
                    batch: i + 1,
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        Ok(ExecTimeModel { kind, table })
    }

    pub fn kind(&self) -> &ExecTimeKind {
        &self.kind
    }

    pub fn m_max(&self) -> usize {
        self.table.len()
    }

    pub fn eval(&self, batch: usize) -> Result<Millis, ModelError> {
        if batch == 0 || batch > self.table.len() {
            return Err(ModelError::BatchOutOfRange {
                batch,
                max: self.table.len(),
            });
        }
        Ok(self.table[batch - 1])
    }

    /// `xi(b)` with `b` clamped into `1..=m_max`.
    pub fn at(&self, batch: usize) -> Millis {
        self.table[batch.clamp(1, self.table.len()) - 1]
    }

    /// The same model truncated or extended to a different maximum batch size.
    pub fn with_m_max(&self, m_max: usize) -> Result<Self, ModelError> {
        match &self.kind {
            ExecTimeKind::Affine {
                base_ms,
                per_item_ms,
            } => Self::affine(*base_ms, *per_item_ms, m_max),
            ExecTimeKind::Empirical(points) => Self::empirical(points.clone(), m_max),
        }
    }
}

fn interpolate(points: &[(usize, f64)], b: usize) -> f64 {
    match points.binary_search_by_key(&b, |p| p.0) {
        Ok(i) => points[i].1,
        Err(i) => {
            let (b0, y0) = points[i - 1];
            let (b1, y1) = points[i];
            y0 + (y1 - y0) * (b - b0) as f64 / (b1 - b0) as f64
        }
    }
}

/// Online estimate of `xi(b)`: a per-batch-size exponential moving average
/// kept strictly increasing by clamping neighbours after every update.
#[derive(Clone, Debug)]
pub struct OnlineExecTime {
    estimates: Vec<f64>,
    smoothing: f64,
}

impl OnlineExecTime {
    pub const DEFAULT_SMOOTHING: f64 = 0.2;

    pub fn new(prior: &ExecTimeModel) -> Self {
        OnlineExecTime {
            estimates: (1..=prior.m_max()).map(|b| prior.at(b) as f64).collect(),
            smoothing: Self::DEFAULT_SMOOTHING,
        }
    }

    pub fn observe(&mut self, batch: usize, measured: Millis) {
        if batch == 0 || batch > self.estimates.len() {
            return;
        }
        let i = batch - 1;
        let est = &mut self.estimates[i];
        *est += self.smoothing * (measured as f64 - *est);
        if self.estimates[i] < 1.0 + i as f64 {
            self.estimates[i] = 1.0 + i as f64;
        }
        // Isotonic clamp: keep a gap of at least 1 ms on both sides.
        for j in (0..i).rev() {
            let cap = self.estimates[j + 1] - 1.0;
            if self.estimates[j] > cap {
                self.estimates[j] = cap;
            }
        }
        for j in i + 1..self.estimates.len() {
            let floor = self.estimates[j - 1] + 1.0;
            if self.estimates[j] < floor {
                self.estimates[j] = floor;
            }
        }
    }

    pub fn model(&self) -> ExecTimeModel {
        let points = self.estimates.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
        ExecTimeModel::empirical(points, self.estimates.len())
            .unwrap_or_else(|_| snap_monotone(&self.estimates))
    }
}

// Rounding can collapse neighbours that differ by < 1 ms; re-separate them.
fn snap_monotone(estimates: &[f64]) -> ExecTimeModel {
    let mut prev = 0;
    let points = estimates
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ms = (v.round() as Millis).max(prev + 1);
            prev = ms;
            (i + 1, ms as f64)
        })
        .collect();
    ExecTimeModel::empirical(points, estimates.len()).expect("separated table is monotone")
}
