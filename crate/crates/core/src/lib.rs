// SPDX-License-Identifier: Apache-2.0

//! Deadline-aware stream processing for camera-network tracking.
//!
//! Tasks batch events against per-event deadlines derived from completion
//! budgets, shed events that cannot meet them, and adjust the budgets from
//! reject and accept signals sent back up the pipeline.

pub mod analytics;
pub mod bounds;
pub mod budget;
pub mod engine;
pub mod model;
pub mod tracking;

pub use model::{CameraId, ClockDomain, Event, EventHeader, EventId, ExecTimeModel, Millis, TaskId, VertexId};
