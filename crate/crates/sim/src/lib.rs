// SPDX-License-Identifier: Apache-2.0

//! Scenario simulation for camera-network tracking: synthetic road networks,
//! entity walks, link models and a discrete-event run of the analytics
//! pipeline.

pub mod bench;
pub mod config;
pub mod des;
pub mod graph;
pub mod metrics;
pub mod network;
pub mod walk;

pub use config::{BatchingSpec, ConfigError, ScenarioConfig, TlKind};
pub use des::{run, run_in, run_with, RunMode, RunResult, SimError, World};
pub use metrics::{EventRecord, Status, Summary, TimelineRow};
