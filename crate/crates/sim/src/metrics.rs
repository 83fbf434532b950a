// SPDX-License-Identifier: Apache-2.0

//! Run outputs: per-event log, per-second timeline and summary.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spotlight_core::engine::DropPoint;
use spotlight_core::{EventId, Millis};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Delivered,
    Delayed,
    Dropped { task: String, point: &'static str },
    InFlight,
}

impl Status {
    pub fn dropped(task: &str, point: DropPoint) -> Self {
        Status::Dropped {
            task: task.to_string(),
            point: point.label(),
        }
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, Status::Dropped { .. })
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Delivered => f.write_str("delivered"),
            Status::Delayed => f.write_str("delayed"),
            Status::Dropped { task, point } => write!(f, "dropped@{task}@{point}"),
            Status::InFlight => f.write_str("in_flight"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub id: EventId,
    pub camera: u32,
    pub t_source: Millis,
    /// Sink completion time.
    pub t_sink: Option<Millis>,
    /// When the event left the system (delivery or drop).
    pub t_end: Option<Millis>,
    pub status: Status,
    pub latency: Option<Millis>,
    /// Executed batch size at FC, VA, CR and UV.
    pub batch: [Option<usize>; 4],
    /// Exempt from drops by user logic.
    pub flagged: bool,
    pub probe: bool,
    pub contains_entity: bool,
}

impl EventRecord {
    pub fn new(id: EventId, camera: u32, t_source: Millis, contains_entity: bool) -> Self {
        EventRecord {
            id,
            camera,
            t_source,
            t_sink: None,
            t_end: None,
            status: Status::InFlight,
            latency: None,
            batch: [None; 4],
            flagged: false,
            probe: false,
            contains_entity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    /// Start of the second, ms.
    pub t: Millis,
    pub active_cameras: usize,
    pub mean_latency_ms: Option<f64>,
    pub events_in: u64,
    pub events_dropped: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropCounts {
    pub queue: u64,
    pub exec: u64,
    pub transmit: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub arrived: u64,
    pub batches: u64,
    pub executed: u64,
    pub mean_batch: f64,
    pub busy_ms: Millis,
    pub dropped: u64,
    pub would_drop: u64,
    pub rejects_sent: u64,
    pub accepts_sent: u64,
    pub signals_applied: u64,
    pub signals_ignored: u64,
    /// Mean of the final per-downstream budgets over the stage's instances.
    pub mean_budget_ms: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delivered: u64,
    pub delayed: u64,
    pub dropped: u64,
    pub peak_active_cameras: usize,
    pub median_latency_ms: Option<f64>,
    pub p99_latency_ms: Option<f64>,
    pub generated: u64,
    pub in_flight: u64,
    pub delayed_flagged: u64,
    pub probes: u64,
    pub mean_latency_ms: Option<f64>,
    pub max_latency_ms: Option<Millis>,
    pub drops_by_point: DropCounts,
    pub tl_rounds: u64,
    pub tl_positive_rounds: u64,
    pub bytes_sent: u64,
    pub duration_ms: Millis,
    pub fc: StageStats,
    pub va: StageStats,
    pub cr: StageStats,
    pub uv: StageStats,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[Millis], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1] as f64)
}

pub fn median(sorted: &[Millis]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_events_csv<W: Write>(out: W, events: &[EventRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "event_id", "camera_id", "t_source", "t_sink", "status", "latency_ms", "batch_fc", "batch_va", "batch_cr",
        "batch_uv", "flagged", "probe",
    ])?;
    for e in events {
        w.write_record([
            e.id.0.to_string(),
            e.camera.to_string(),
            e.t_source.to_string(),
            opt(e.t_sink),
            e.status.to_string(),
            opt(e.latency),
            opt(e.batch[0]),
            opt(e.batch[1]),
            opt(e.batch[2]),
            opt(e.batch[3]),
            e.flagged.to_string(),
            e.probe.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeline_csv<W: Write>(out: W, rows: &[TimelineRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "active_cameras", "mean_latency_ms", "events_in", "events_dropped"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.active_cameras.to_string(),
            r.mean_latency_ms.map(|m| format!("{m:.1}")).unwrap_or_default(),
            r.events_in.to_string(),
            r.events_dropped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `events.csv`, `timeline.csv` and `summary.json` into `dir`.
pub fn write_all(
    dir: &Path,
    events: &[EventRecord],
    timeline: &[TimelineRow],
    summary: &Summary,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_events_csv(BufWriter::new(File::create(dir.join("events.csv"))?), events)?;
    write_timeline_csv(BufWriter::new(File::create(dir.join("timeline.csv"))?), timeline)?;
    let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, summary)?;
    writeln!(f)?;
    f.flush()
}
