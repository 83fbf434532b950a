// SPDX-License-Identifier: Apache-2.0

//! Road network, camera placement and the spotlight tracker that decides
//! which cameras to keep active while following one entity.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{CameraId, Millis, VertexId};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("edge {0}-{1} has non-positive length {2}")]
    BadLength(VertexId, VertexId, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected graph with edge lengths in metres.
#[derive(Clone, Debug, Default)]
pub struct RoadNetwork {
    ids: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    adj: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, id: VertexId) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id);
        self.index.insert(id, i);
        self.adj.push(Vec::new());
        i
    }

    pub fn add_edge(&mut self, a: VertexId, b: VertexId, length: f64) -> Result<(), TrackingError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(TrackingError::BadLength(a, b, length));
        }
        let (i, j) = (self.add_vertex(a), self.add_vertex(b));
        self.adj[i].push((j, length));
        if i != j {
            self.adj[j].push((i, length));
        }
        self.edges.push((i, j, length));
        Ok(())
    }

    /// Parses `src dst length_m` lines; blank lines and `#` comments are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self, TrackingError> {
        let mut net = RoadNetwork::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| TrackingError::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected `src dst length_m`"));
            }
            let a = f[0].parse::<u32>().map_err(|_| err("bad source vertex"))?;
            let b = f[1].parse::<u32>().map_err(|_| err("bad destination vertex"))?;
            let len = f[2].parse::<f64>().map_err(|_| err("bad length"))?;
            net.add_edge(VertexId(a), VertexId(b), len)?;
        }
        Ok(net)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self, TrackingError> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for &(i, j, len) in &self.edges {
            let _ = writeln!(s, "{} {} {}", self.ids[i], self.ids[j], len);
        }
        s
    }

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn index_of(&self, v: VertexId) -> Result<usize, TrackingError> {
        self.index.get(&v).copied().ok_or(TrackingError::UnknownVertex(v))
    }

    pub fn id_of(&self, i: usize) -> VertexId {
        self.ids[i]
    }

    pub fn neighbors(&self, v: VertexId) -> Result<impl Iterator<Item = (VertexId, f64)> + '_, TrackingError> {
        let i = self.index_of(v)?;
        Ok(self.adj[i].iter().map(|&(j, len)| (self.ids[j], len)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId, f64)> + '_ {
        self.edges.iter().map(|&(i, j, l)| (self.ids[i], self.ids[j], l))
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            0.0
        } else {
            self.total_length() / self.edges.len() as f64
        }
    }

    /// Vertices reachable from `start`.
    pub fn component_size(&self, start: VertexId) -> Result<usize, TrackingError> {
        Ok(self.distances(start, f64::INFINITY, None)?.len())
    }

    /// Shortest-path distances from `src` up to `cutoff`. With `fixed_len`,
    /// every edge counts as that length instead of its own.
    pub fn distances(
        &self,
        src: VertexId,
        cutoff: f64,
        fixed_len: Option<f64>,
    ) -> Result<HashMap<VertexId, f64>, TrackingError> {
        let s = self.index_of(src)?;
        let mut best = vec![f64::INFINITY; self.ids.len()];
        let mut heap = BinaryHeap::new();
        best[s] = 0.0;
        heap.push(Frontier { dist: 0.0, v: s });
        while let Some(Frontier { dist, v }) = heap.pop() {
            if dist > best[v] {
                continue;
            }
            for &(w, len) in &self.adj[v] {
                let nd = dist + fixed_len.unwrap_or(len);
                if nd <= cutoff && nd < best[w] {
                    best[w] = nd;
                    heap.push(Frontier { dist: nd, v: w });
                }
            }
        }
        Ok(best
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .map(|(i, d)| (self.ids[i], *d))
            .collect())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    v: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.v.cmp(&self.v))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Which camera sits on which vertex.
#[derive(Clone, Debug, Default)]
pub struct CameraPlacement {
    by_camera: BTreeMap<CameraId, VertexId>,
    by_vertex: HashMap<VertexId, Vec<CameraId>>,
}

impl CameraPlacement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn place(&mut self, camera: CameraId, vertex: VertexId) {
        if let Some(old) = self.by_camera.insert(camera, vertex) {
            if let Some(list) = self.by_vertex.get_mut(&old) {
                list.retain(|c| *c != camera);
            }
        }
        let list = self.by_vertex.entry(vertex).or_default();
        list.push(camera);
        list.sort();
    }

    /// Parses `camera_id vertex_id` lines.
    pub fn parse(text: &str) -> Result<Self, TrackingError> {
        let mut p = CameraPlacement::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| TrackingError::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(err("expected `camera_id vertex_id`"));
            }
            let c = f[0].parse::<u32>().map_err(|_| err("bad camera id"))?;
            let v = f[1].parse::<u32>().map_err(|_| err("bad vertex id"))?;
            p.place(CameraId(c), VertexId(v));
        }
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self, TrackingError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, v) in &self.by_camera {
            let _ = writeln!(s, "{} {}", c.0, v.0);
        }
        s
    }

    /// Every camera must sit on a vertex of `net`.
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), TrackingError> {
        match self.by_camera.values().find(|v| !net.contains(**v)) {
            Some(v) => Err(TrackingError::UnknownVertex(*v)),
            None => Ok(()),
        }
    }

    pub fn vertex_of(&self, camera: CameraId) -> Result<VertexId, TrackingError> {
        self.by_camera
            .get(&camera)
            .copied()
            .ok_or(TrackingError::UnknownCamera(camera))
    }

    pub fn cameras_at(&self, vertex: VertexId) -> &[CameraId] {
        self.by_vertex.get(&vertex).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cameras(&self) -> impl Iterator<Item = (CameraId, VertexId)> + '_ {
        self.by_camera.iter().map(|(c, v)| (*c, *v))
    }

    pub fn len(&self) -> usize {
        self.by_camera.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_camera.is_empty()
    }
}

/// Metres the entity may have covered since it was last seen.
pub fn spotlight_radius(lst: Millis, now: Millis, peak_speed: f64) -> f64 {
    peak_speed * (now - lst).max(0) as f64 / 1000.0
}

fn cameras_within(
    net: &RoadNetwork,
    lsl: VertexId,
    radius: f64,
    fixed_len: Option<f64>,
    placement: &CameraPlacement,
) -> Result<BTreeSet<CameraId>, TrackingError> {
    let dist = net.distances(lsl, radius, fixed_len)?;
    Ok(dist.keys().flat_map(|v| placement.cameras_at(*v).iter().copied()).collect())
}

/// Cameras on vertices within `radius` metres of `lsl` by road distance.
pub fn weighted_bfs(
    net: &RoadNetwork,
    lsl: VertexId,
    radius: f64,
    placement: &CameraPlacement,
) -> Result<BTreeSet<CameraId>, TrackingError> {
    cameras_within(net, lsl, radius, None, placement)
}

/// As [`weighted_bfs`] with every road assumed `fixed_len` metres long.
pub fn unweighted_bfs(
    net: &RoadNetwork,
    lsl: VertexId,
    radius: f64,
    fixed_len: f64,
    placement: &CameraPlacement,
) -> Result<BTreeSet<CameraId>, TrackingError> {
    cameras_within(net, lsl, radius, Some(fixed_len), placement)
}

/// Picks the cameras to activate. Implementations must be deterministic.
pub trait SpotlightStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Active set after the entity was just seen by `camera`.
    fn on_positive(
        &self,
        _net: &RoadNetwork,
        _placement: &CameraPlacement,
        camera: CameraId,
    ) -> Result<BTreeSet<CameraId>, TrackingError> {
        Ok(BTreeSet::from([camera]))
    }

    /// Active set while the entity is lost.
    fn expand(
        &self,
        net: &RoadNetwork,
        placement: &CameraPlacement,
        lsl: VertexId,
        radius: f64,
    ) -> Result<BTreeSet<CameraId>, TrackingError>;
}

/// Keeps every camera on.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllCameras;

impl SpotlightStrategy for AllCameras {
    fn name(&self) -> &'static str {
        "base"
    }

    fn on_positive(
        &self,
        _net: &RoadNetwork,
        placement: &CameraPlacement,
        _camera: CameraId,
    ) -> Result<BTreeSet<CameraId>, TrackingError> {
        Ok(placement.cameras().map(|(c, _)| c).collect())
    }

    fn expand(
        &self,
        _net: &RoadNetwork,
        placement: &CameraPlacement,
        _lsl: VertexId,
        _radius: f64,
    ) -> Result<BTreeSet<CameraId>, TrackingError> {
        Ok(placement.cameras().map(|(c, _)| c).collect())
    }
}

/// Hop-count spotlight over roads of an assumed common length.
#[derive(Clone, Copy, Debug)]
pub struct HopBfs {
    pub fixed_len: f64,
}

impl SpotlightStrategy for HopBfs {
    fn name(&self) -> &'static str {
        "bfs"
    }

    fn expand(
        &self,
        net: &RoadNetwork,
        placement: &CameraPlacement,
        lsl: VertexId,
        radius: f64,
    ) -> Result<BTreeSet<CameraId>, TrackingError> {
        unweighted_bfs(net, lsl, radius, self.fixed_len, placement)
    }
}

/// Road-distance spotlight.
#[derive(Clone, Copy, Debug, Default)]
pub struct WeightedBfs;

impl SpotlightStrategy for WeightedBfs {
    fn name(&self) -> &'static str {
        "wbfs"
    }

    fn expand(
        &self,
        net: &RoadNetwork,
        placement: &CameraPlacement,
        lsl: VertexId,
        radius: f64,
    ) -> Result<BTreeSet<CameraId>, TrackingError> {
        weighted_bfs(net, lsl, radius, placement)
    }
}

/// One detection result as seen by the tracker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectionReport {
    pub camera: CameraId,
    pub frame_ts: Millis,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub lsl: VertexId,
    pub lst: Millis,
    /// Latest frame time observed since the last positive detection.
    pub horizon: Millis,
    pub active: BTreeSet<CameraId>,
    pub peak_speed: f64,
}

/// Activation changes for the filter-control instances.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Commands {
    pub activate: Vec<CameraId>,
    pub deactivate: Vec<CameraId>,
}

impl Commands {
    pub fn is_empty(&self) -> bool {
        self.activate.is_empty() && self.deactivate.is_empty()
    }

    fn between(old: &BTreeSet<CameraId>, new: &BTreeSet<CameraId>) -> Self {
        Commands {
            activate: new.difference(old).copied().collect(),
            deactivate: old.difference(new).copied().collect(),
        }
    }
}

pub struct Tracker {
    net: Arc<RoadNetwork>,
    placement: Arc<CameraPlacement>,
    strategy: Box<dyn SpotlightStrategy>,
    state: TrackState,
}

impl Tracker {
    /// Starts tracking an entity last seen at `start` at time `t0`.
    pub fn new(
        net: Arc<RoadNetwork>,
        placement: Arc<CameraPlacement>,
        strategy: Box<dyn SpotlightStrategy>,
        start: VertexId,
        t0: Millis,
        peak_speed: f64,
    ) -> Result<Self, TrackingError> {
        placement.validate(&net)?;
        let active = strategy.expand(&net, &placement, start, 0.0)?;
        Ok(Tracker {
            state: TrackState {
                lsl: start,
                lst: t0,
                horizon: t0,
                active,
                peak_speed,
            },
            net,
            placement,
            strategy,
        })
    }

    pub fn state(&self) -> &TrackState {
        &self.state
    }

    pub fn strategy_name(&self) -> &'static str {
        self.strategy.name()
    }

    /// Current spotlight radius in metres.
    pub fn radius(&self) -> f64 {
        spotlight_radius(self.state.lst, self.state.horizon, self.state.peak_speed)
    }

    /// Updates the track from one batch of detections and returns the
    /// activation changes.
    pub fn process_detections(&mut self, batch: &[DetectionReport]) -> Result<Commands, TrackingError> {
        if batch.is_empty() {
            return Ok(Commands::default());
        }
        let positive = batch
            .iter()
            .filter(|d| d.matched && d.frame_ts >= self.state.lst)
            .max_by(|a, b| a.frame_ts.cmp(&b.frame_ts).then(b.camera.cmp(&a.camera)));
        let next = match positive {
            Some(hit) => {
                self.state.lsl = self.placement.vertex_of(hit.camera)?;
                self.state.lst = hit.frame_ts;
                self.state.horizon = hit.frame_ts;
                self.strategy.on_positive(&self.net, &self.placement, hit.camera)?
            }
            None => {
                let latest = batch.iter().map(|d| d.frame_ts).max().unwrap_or(self.state.horizon);
                self.state.horizon = self.state.horizon.max(latest);
                let mut grown = self
                    .strategy
                    .expand(&self.net, &self.placement, self.state.lsl, self.radius())?;
                grown.extend(self.state.active.iter().copied());
                grown
            }
        };
        let cmds = Commands::between(&self.state.active, &next);
        self.state.active = next;
        Ok(cmds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_abc() -> (RoadNetwork, CameraPlacement) {
        let net = RoadNetwork::parse_edge_list("0 1 10\n1 2 10\n").unwrap();
        let mut p = CameraPlacement::new();
        for v in 0..3 {
            p.place(CameraId(v), VertexId(v));
        }
        (net, p)
    }

    fn cams(ids: &[u32]) -> BTreeSet<CameraId> {
        ids.iter().map(|&i| CameraId(i)).collect()
    }

    #[test]
    fn radius_examples() {
        assert_eq!(spotlight_radius(5000, 5000, 4.0), 0.0);
        assert_eq!(spotlight_radius(0, 10_000, 4.0), 40.0);
        assert!((spotlight_radius(0, 84_500, 1.0) - 84.5).abs() < 1e-9);
    }

    #[test]
    fn weighted_examples() {
        let (net, p) = path_abc();
        assert_eq!(weighted_bfs(&net, VertexId(0), 0.0, &p).unwrap(), cams(&[0]));
        assert_eq!(weighted_bfs(&net, VertexId(0), 12.0, &p).unwrap(), cams(&[0, 1]));
        assert_eq!(weighted_bfs(&net, VertexId(0), net.total_length(), &p).unwrap(), cams(&[0, 1, 2]));
        assert!(matches!(
            weighted_bfs(&net, VertexId(9), 1.0, &p),
            Err(TrackingError::UnknownVertex(VertexId(9)))
        ));
    }

    #[test]
    fn star_hop_vs_distance() {
        let net = RoadNetwork::parse_edge_list("0 1 10\n0 2 200\n0 3 300\n").unwrap();
        let mut p = CameraPlacement::new();
        for v in 1..4 {
            p.place(CameraId(v), VertexId(v));
        }
        assert_eq!(unweighted_bfs(&net, VertexId(0), 90.0, 84.5, &p).unwrap(), cams(&[1, 2, 3]));
        assert_eq!(weighted_bfs(&net, VertexId(0), 90.0, &p).unwrap(), cams(&[1]));
        assert_eq!(unweighted_bfs(&net, VertexId(0), 84.0, 84.5, &p).unwrap(), cams(&[]));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            RoadNetwork::parse_edge_list("0 1\n"),
            Err(TrackingError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            RoadNetwork::parse_edge_list("# c\n0 1 0\n"),
            Err(TrackingError::BadLength(..))
        ));
        assert!(CameraPlacement::parse("1 2 3").is_err());
        let net = RoadNetwork::parse_edge_list("0 1 5.5\n").unwrap();
        assert_eq!(RoadNetwork::parse_edge_list(&net.to_edge_list()).unwrap().edge_count(), 1);
    }

    #[test]
    fn tracker_positive_then_lost() {
        let (net, p) = path_abc();
        let mut t = Tracker::new(Arc::new(net), Arc::new(p), Box::new(WeightedBfs), VertexId(0), 0, 1.0).unwrap();
        assert_eq!(t.state().active, cams(&[0]));
        let c = t
            .process_detections(&[DetectionReport {
                camera: CameraId(0),
                frame_ts: 2000,
                matched: false,
            }])
            .unwrap();
        assert!(c.is_empty());
        let c = t
            .process_detections(&[DetectionReport {
                camera: CameraId(0),
                frame_ts: 10_000,
                matched: false,
            }])
            .unwrap();
        assert_eq!(c.activate, vec![CameraId(1)]);
        let c = t
            .process_detections(&[
                DetectionReport {
                    camera: CameraId(1),
                    frame_ts: 12_000,
                    matched: true,
                },
                DetectionReport {
                    camera: CameraId(0),
                    frame_ts: 12_000,
                    matched: true,
                },
            ])
            .unwrap();
        assert_eq!(t.state().active, cams(&[0]));
        assert_eq!(t.state().lst, 12_000);
        assert_eq!(c.deactivate, vec![CameraId(1)]);
    }

    #[test]
    fn base_keeps_everything() {
        let (net, p) = path_abc();
        let mut t = Tracker::new(Arc::new(net), Arc::new(p), Box::new(AllCameras), VertexId(0), 0, 1.0).unwrap();
        assert_eq!(t.state().active.len(), 3);
        let c = t
            .process_detections(&[DetectionReport {
                camera: CameraId(2),
                frame_ts: 1000,
                matched: true,
            }])
            .unwrap();
        assert!(c.is_empty());
        assert_eq!(t.state().active.len(), 3);
    }
}
