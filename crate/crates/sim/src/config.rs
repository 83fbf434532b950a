// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration, read from flat TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotlight_core::engine::BatchingMode;
use spotlight_core::{ExecTimeModel, Millis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TlKind {
    Base,
    Bfs,
    Wbfs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XiMode {
    Exact,
    Online,
}

/// Batching policy for the analytics stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchingSpec {
    Streaming,
    Static(usize),
    Dynamic,
    Nob,
}

impl BatchingSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "streaming" => Ok(BatchingSpec::Streaming),
            "dynamic" => Ok(BatchingSpec::Dynamic),
            "nob" => Ok(BatchingSpec::Nob),
            _ => match s.strip_prefix("static:").map(str::parse::<usize>) {
                Some(Ok(b)) if b > 0 => Ok(BatchingSpec::Static(b)),
                _ => Err(invalid(format!(
                    "batching `{s}`: expected streaming, dynamic, nob or static:<b>"
                ))),
            },
        }
    }

    pub fn engine_mode(self, table: impl FnOnce() -> BatchingMode) -> BatchingMode {
        match self {
            BatchingSpec::Streaming => BatchingMode::Streaming,
            BatchingSpec::Static(b) => BatchingMode::Static(b),
            BatchingSpec::Dynamic => BatchingMode::Dynamic,
            BatchingSpec::Nob => table(),
        }
    }
}

/// Step change of link properties; unset fields keep their value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkChange {
    /// Seconds of virtual time.
    pub time: f64,
    /// `*` for every link, `compute` for links between compute nodes, or
    /// `a-b` for one pair of nodes (`head`, `node0`, `node1`, ...).
    pub link: String,
    /// Bytes per second.
    pub bandwidth: Option<f64>,
    /// Milliseconds.
    pub latency: Option<f64>,
}

/// Temporary execution slowdown of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slowdown {
    /// Seconds.
    pub start: f64,
    /// Seconds.
    pub end: f64,
    pub factor: f64,
    /// `fc`, `va`, `cr`, `uv` or `all`.
    #[serde(default = "default_slowdown_stage")]
    pub stage: String,
}

fn default_slowdown_stage() -> String {
    "cr".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Road network edge list; a synthetic network is generated when absent.
    pub graph_file: Option<PathBuf>,
    pub placement_file: Option<PathBuf>,
    pub graph_vertices: usize,
    pub graph_edges: usize,
    pub mean_edge_m: f64,
    pub area_km2: f64,
    pub camera_count: usize,
    pub fps: f64,
    /// m/s.
    pub entity_speed: f64,
    /// Distance from a camera's vertex within which it sees the entity.
    pub fov_m: f64,
    pub start_vertex: Option<u32>,
    pub tl_kind: TlKind,
    /// Assumed peak entity speed, m/s.
    pub tl_peak_speed: f64,
    /// Road length assumed by the hop-count spotlight; the network mean when unset.
    pub fixed_edge_m: Option<f64>,
    /// Tolerable end-to-end latency, ms.
    pub gamma: Millis,
    pub batching: String,
    pub m_max: usize,
    pub drops_enabled: bool,
    pub epsilon_max: Millis,
    pub probe_k: u64,
    pub va_instances: usize,
    pub cr_instances: usize,
    pub compute_nodes: usize,
    pub frame_bytes: u64,
    pub detection_bytes: u64,
    pub control_bytes: u64,
    /// Bytes per second.
    pub link_bandwidth: f64,
    /// Milliseconds.
    pub link_latency: f64,
    pub link_schedule: Vec<LinkChange>,
    /// Clock offset in ms per device (`head`, `node<n>`, `node<n>-fc`).
    pub skew_map: BTreeMap<String, Millis>,
    pub seed: u64,
    /// Seconds of virtual time.
    pub duration: f64,
    /// Affine execution-time parameters `[base_ms, per_item_ms]`.
    pub fc_xi: [f64; 2],
    pub va_xi: [f64; 2],
    pub cr_xi: [f64; 2],
    pub uv_xi: [f64; 2],
    pub cr_true_positive: f64,
    pub cr_false_positive: f64,
    pub avoid_drop_matches: bool,
    pub history_capacity: usize,
    pub xi_mode: XiMode,
    pub slowdown: Vec<Slowdown>,
    pub nob_window_ms: Millis,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            graph_file: None,
            placement_file: None,
            graph_vertices: 1000,
            graph_edges: 2817,
            mean_edge_m: 84.5,
            area_km2: 7.0,
            camera_count: 1000,
            fps: 1.0,
            entity_speed: 1.0,
            fov_m: 1.5,
            start_vertex: None,
            tl_kind: TlKind::Bfs,
            tl_peak_speed: 4.0,
            fixed_edge_m: None,
            gamma: 15_000,
            batching: "dynamic".into(),
            m_max: 25,
            drops_enabled: true,
            epsilon_max: 1000,
            probe_k: 100,
            va_instances: 10,
            cr_instances: 10,
            compute_nodes: 10,
            frame_bytes: 2900,
            detection_bytes: 128,
            control_bytes: 64,
            link_bandwidth: 125e6,
            link_latency: 0.5,
            link_schedule: Vec::new(),
            skew_map: BTreeMap::new(),
            seed: 1,
            duration: 600.0,
            fc_xi: [1.0, 1.0],
            va_xi: [5.0, 10.0],
            cr_xi: [54.0, 67.0],
            uv_xi: [1.0, 1.0],
            cr_true_positive: 1.0,
            cr_false_positive: 0.0,
            avoid_drop_matches: false,
            history_capacity: 100_000,
            xi_mode: XiMode::Exact,
            slowdown: Vec::new(),
            nob_window_ms: 5000,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative graph and placement paths resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.graph_file, &mut cfg.placement_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn batching_spec(&self) -> Result<BatchingSpec, ConfigError> {
        BatchingSpec::parse(&self.batching)
    }

    pub fn duration_ms(&self) -> Millis {
        (self.duration * 1000.0).round() as Millis
    }

    pub fn xi(&self, params: [f64; 2]) -> Result<ExecTimeModel, ConfigError> {
        ExecTimeModel::affine(params[0], params[1], self.m_max).map_err(|e| invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.batching_spec()?;
        if self.m_max == 0 {
            return Err(invalid("m_max must be at least 1"));
        }
        for (name, p) in [("fc_xi", self.fc_xi), ("va_xi", self.va_xi), ("cr_xi", self.cr_xi), ("uv_xi", self.uv_xi)] {
            self.xi(p).map_err(|e| invalid(format!("{name}: {e}")))?;
        }
        let cr1 = self.xi(self.cr_xi)?.at(1);
        if self.gamma <= cr1 {
            return Err(invalid(format!("gamma {} ms must exceed the CR single-event time {cr1} ms", self.gamma)));
        }
        if self.camera_count == 0 {
            return Err(invalid("camera_count must be positive"));
        }
        if !(self.fps > 0.0 && self.fps <= 1000.0) {
            return Err(invalid("fps must be in (0, 1000]"));
        }
        if !(self.duration > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if self.va_instances == 0 || self.cr_instances == 0 || self.compute_nodes == 0 {
            return Err(invalid("instance and node counts must be positive"));
        }
        if !(self.link_bandwidth > 0.0) || self.link_latency < 0.0 {
            return Err(invalid("link bandwidth must be positive and latency non-negative"));
        }
        if self.entity_speed <= 0.0 || self.tl_peak_speed < 0.0 || self.fov_m < 0.0 {
            return Err(invalid("speeds must be positive and fov_m non-negative"));
        }
        if self.graph_file.is_none() && (self.graph_vertices < 2 || self.graph_edges + 1 < self.graph_vertices) {
            return Err(invalid("synthetic network needs >= 2 vertices and >= vertices - 1 edges"));
        }
        if !(0.0..=1.0).contains(&self.cr_true_positive) || !(0.0..=1.0).contains(&self.cr_false_positive) {
            return Err(invalid("detector rates must be in [0, 1]"));
        }
        for c in &self.link_schedule {
            if c.time < 0.0 || c.time > self.duration {
                return Err(invalid(format!("link change at {} s is outside the run", c.time)));
            }
            if c.bandwidth.is_some_and(|b| !(b > 0.0)) || c.latency.is_some_and(|l| l < 0.0) {
                return Err(invalid("link change with non-positive bandwidth or negative latency"));
            }
        }
        for s in &self.slowdown {
            if !(s.factor > 0.0) || s.end < s.start {
                return Err(invalid("slowdown needs factor > 0 and end >= start"));
            }
            if !matches!(s.stage.as_str(), "fc" | "va" | "cr" | "uv" | "all") {
                return Err(invalid(format!("unknown slowdown stage `{}`", s.stage)));
            }
        }
        for (device, skew) in &self.skew_map {
            let worker = device
                .strip_prefix("node")
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n < self.compute_nodes);
            let source_or_sink = device == "head"
                || device
                    .strip_prefix("node")
                    .and_then(|n| n.strip_suffix("-fc"))
                    .and_then(|n| n.parse::<usize>().ok())
                    .is_some();
            if source_or_sink {
                if *skew != 0 {
                    return Err(invalid(format!("device {device} hosts a source or sink task and must not be skewed")));
                }
            } else if !worker {
                return Err(invalid(format!("unknown device `{device}` in skew_map")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_batching() {
        assert_eq!(BatchingSpec::parse("static:20").unwrap(), BatchingSpec::Static(20));
        assert_eq!(BatchingSpec::parse("Dynamic").unwrap(), BatchingSpec::Dynamic);
        assert!(BatchingSpec::parse("static:0").is_err());
        assert!(BatchingSpec::parse("fast").is_err());
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg.gamma, 15_000);
        assert_eq!(cfg.camera_count, 1000);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_toml("gamma = 100").is_err());
        assert!(ScenarioConfig::from_toml("no_such_key = 1").is_err());
        assert!(ScenarioConfig::from_toml("[skew_map]\nhead = 5").is_err());
        assert!(ScenarioConfig::from_toml("[skew_map]\nnode3-fc = 5").is_err());
        assert!(ScenarioConfig::from_toml("[skew_map]\nnode3 = 30000").is_ok());
        assert!(ScenarioConfig::from_toml("[skew_map]\nnode99 = 1").is_err());
    }

    #[test]
    fn link_schedule_table() {
        let cfg = ScenarioConfig::from_toml(
            "duration = 600\n[[link_schedule]]\ntime = 300\nlink = \"*\"\nbandwidth = 3.75e6\n",
        )
        .unwrap();
        assert_eq!(cfg.link_schedule.len(), 1);
        assert_eq!(cfg.link_schedule[0].latency, None);
    }
}
