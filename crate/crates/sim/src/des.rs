// SPDX-License-Identifier: Apache-2.0

//! Discrete-event run of the tracking pipeline FC -> VA -> CR -> UV, with
//! the tracker on the CR control fork sending activation commands back to
//! the FC instances.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use spotlight_core::analytics::{
    camera_key, CrLogic, DetectorProfile, FcLogic, FrameRecord, Payload, UvLogic, VaLogic,
};
use spotlight_core::bounds::{default_rate_grid, nob_table};
use spotlight_core::budget::{AcceptSignal, ProtocolParams, RejectSignal};
use spotlight_core::engine::{Action, BatchingMode, ExecOutcome, Task, TaskConfig, UserLogic};
use spotlight_core::tracking::{
    AllCameras, CameraPlacement, DetectionReport, HopBfs, RoadNetwork, SpotlightStrategy, Tracker, WeightedBfs,
};
use spotlight_core::{CameraId, Event, EventHeader, EventId, Millis, TaskId, VertexId};
use thiserror::Error;

use crate::config::{BatchingSpec, ConfigError, ScenarioConfig, TlKind, XiMode};
use crate::graph::{central_vertex, generate_network, place_cameras, NetworkSpec};
use crate::metrics::{
    median, percentile, DropCounts, EventRecord, StageStats, Status, Summary, TimelineRow,
};
use crate::network::{compute_node, Links, NodeId, HEAD};
use crate::walk::{frame_times, generate_walk, WalkError, WalkTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("road network: {0}")]
    Network(#[from] spotlight_core::tracking::TrackingError),
    #[error("walk: {0}")]
    Walk(#[from] WalkError),
    #[error("task setup: {0}")]
    Engine(#[from] spotlight_core::engine::EngineError),
}

fn config_error(msg: impl Into<String>) -> SimError {
    SimError::Config(ConfigError::Invalid(msg.into()))
}

/// How virtual time relates to wall-clock time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RunMode {
    /// As fast as possible.
    Des,
    /// Each step waits until its virtual time, divided by `speedup`, has
    /// elapsed on the wall clock.
    Realtime { speedup: f64 },
}

/// Road network, cameras and walk of a scenario.
pub struct World {
    pub net: Arc<RoadNetwork>,
    pub placement: Arc<CameraPlacement>,
    pub start: VertexId,
    pub walk: WalkTrace,
    pub fixed_edge_m: f64,
}

impl World {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let (net, default_start) = match &cfg.graph_file {
            Some(path) => {
                let net = RoadNetwork::read_edge_list(path)?;
                let first = *net.vertices().first().ok_or_else(|| config_error("empty road network"))?;
                (net, first)
            }
            None => {
                let g = generate_network(&NetworkSpec {
                    vertices: cfg.graph_vertices,
                    edges: cfg.graph_edges,
                    mean_edge_m: cfg.mean_edge_m,
                    area_km2: cfg.area_km2,
                    seed: cfg.seed,
                });
                let start = central_vertex(&g.coords);
                (g.net, start)
            }
        };
        let start = cfg.start_vertex.map(VertexId).unwrap_or(default_start);
        if !net.contains(start) {
            return Err(config_error(format!("start vertex {start} is not in the network")));
        }
        let placement = match &cfg.placement_file {
            Some(path) => CameraPlacement::read(path)?,
            None => place_cameras(&net, start, cfg.camera_count)?,
        };
        placement.validate(&net)?;
        if placement.is_empty() {
            return Err(config_error("no cameras placed"));
        }
        let walk = generate_walk(
            &net,
            start,
            cfg.entity_speed,
            cfg.seed.wrapping_add(0x5eed),
            cfg.duration_ms(),
        )?;
        let fixed_edge_m = cfg.fixed_edge_m.unwrap_or_else(|| net.mean_edge_length());
        Ok(World {
            net: Arc::new(net),
            placement: Arc::new(placement),
            start,
            walk,
            fixed_edge_m,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Fc,
    Va,
    Cr,
    Uv,
}

impl Stage {
    fn index(self) -> usize {
        self as usize
    }
}

enum Logic {
    Fc(FcLogic),
    Va(VaLogic),
    Cr(CrLogic),
    Uv(UvLogic),
}

impl UserLogic<Payload> for Logic {
    fn admit(&mut self, event: &Event<Payload>, now: Millis) -> bool {
        match self {
            Logic::Fc(l) => l.admit(event, now),
            _ => true,
        }
    }

    fn execute(&mut self, task: TaskId, inputs: &[Event<Payload>], now: Millis) -> ExecOutcome<Payload> {
        match self {
            Logic::Fc(l) => l.execute(task, inputs, now),
            Logic::Va(l) => l.execute(task, inputs, now),
            Logic::Cr(l) => l.execute(task, inputs, now),
            Logic::Uv(l) => l.execute(task, inputs, now),
        }
    }
}

struct Slot {
    task: Task<Payload, Logic>,
    stage: Stage,
    name: String,
    node: NodeId,
    skew: Millis,
}

/// One tracker decision.
#[derive(Clone, Debug, PartialEq)]
pub struct TlDecision {
    pub t: Millis,
    pub positive: bool,
    pub active_after: usize,
}

/// Budget of one task toward one downstream task, sampled once a second.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSample {
    pub t: Millis,
    pub task: String,
    pub dest: TaskId,
    pub budget: Millis,
}

pub struct RunResult {
    pub events: Vec<EventRecord>,
    pub timeline: Vec<TimelineRow>,
    pub summary: Summary,
    pub tl_log: Vec<TlDecision>,
    pub budgets: Vec<BudgetSample>,
}

#[derive(Debug)]
enum Item {
    Frame,
    Arrive { task: usize, event: Event<Payload> },
    ExecDone { task: usize },
    Flush { task: usize, token: u64 },
    Kick { task: usize },
    Reject { task: usize, sig: RejectSignal },
    Accept { task: usize, sig: AcceptSignal },
    Detection(DetectionReport),
    TlKick,
    Command { camera: usize, active: bool },
    Tick,
    LinkChange(usize),
    Slow { stage: String, factor: f64 },
}

struct Entry {
    time: Millis,
    class: u8,
    seq: u64,
    item: Item,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.class, other.seq).cmp(&(self.time, self.class, self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const CLASS_CONTROL: u8 = 0;
const CLASS_NORMAL: u8 = 1;
const CLASS_KICK: u8 = 2;

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    world: &'a World,
    slots: Vec<Slot>,
    cameras: usize,
    va_base: usize,
    cr_base: usize,
    uv: usize,
    tracker: Tracker,
    tl_pending: Vec<DetectionReport>,
    tl_kick: bool,
    tl_log: Vec<TlDecision>,
    links: Links,
    heap: BinaryHeap<Entry>,
    seq: u64,
    now: Millis,
    records: Vec<EventRecord>,
    index: HashMap<EventId, usize>,
    paths: Vec<[usize; 3]>,
    frame_iter: Box<dyn Iterator<Item = Millis>>,
    frame_index: u64,
    active_count: usize,
    peak_active: usize,
    active_samples: Vec<usize>,
    budgets: Vec<BudgetSample>,
    duration: Millis,
}

/// Runs a scenario in virtual time.
pub fn run(cfg: &ScenarioConfig) -> Result<RunResult, SimError> {
    run_with(cfg, RunMode::Des)
}

pub fn run_with(cfg: &ScenarioConfig, mode: RunMode) -> Result<RunResult, SimError> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    run_in(cfg, &world, mode)
}

/// Runs a scenario over an already built world.
pub fn run_in(cfg: &ScenarioConfig, world: &World, mode: RunMode) -> Result<RunResult, SimError> {
    let mut sim = Sim::new(cfg, world)?;
    sim.execute(mode);
    Ok(sim.finish())
}

fn strategy(cfg: &ScenarioConfig, world: &World) -> Box<dyn SpotlightStrategy> {
    match cfg.tl_kind {
        TlKind::Base => Box::new(AllCameras),
        TlKind::Bfs => Box::new(HopBfs {
            fixed_len: world.fixed_edge_m,
        }),
        TlKind::Wbfs => Box::new(WeightedBfs),
    }
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, world: &'a World) -> Result<Self, SimError> {
        let spec = cfg.batching_spec()?;
        let cameras = world
            .placement
            .cameras()
            .map(|(c, _)| c.0 as usize + 1)
            .max()
            .unwrap_or(0);
        let (va_n, cr_n, nodes) = (cfg.va_instances, cfg.cr_instances, cfg.compute_nodes);
        let va_base = cameras;
        let cr_base = va_base + va_n;
        let uv = cr_base + cr_n;
        let tl_fork = TaskId(uv as u32 + 1);
        let protocol = ProtocolParams {
            epsilon_max: cfg.epsilon_max,
            probe_every: cfg.probe_k,
        };
        let fc_xi = cfg.xi(cfg.fc_xi)?;
        let va_xi = cfg.xi(cfg.va_xi)?;
        let cr_xi = cfg.xi(cfg.cr_xi)?;
        let uv_xi = cfg.xi(cfg.uv_xi)?;
        let nob = |xi: &spotlight_core::ExecTimeModel| -> Result<BatchingMode, SimError> {
            Ok(BatchingMode::Nob(nob_table(xi, cfg.gamma, &default_rate_grid())?))
        };
        let va_mode = match spec {
            BatchingSpec::Nob => nob(&va_xi)?,
            s => s.engine_mode(|| BatchingMode::Dynamic),
        };
        let cr_mode = match spec {
            BatchingSpec::Nob => nob(&cr_xi)?,
            s => s.engine_mode(|| BatchingMode::Dynamic),
        };
        let fc_mode = match spec {
            BatchingSpec::Dynamic => BatchingMode::Dynamic,
            _ => BatchingMode::Streaming,
        };
        let skew_of = |device: &str| cfg.skew_map.get(device).copied().unwrap_or(0);
        let base_cfg = |id: usize, xi: &spotlight_core::ExecTimeModel, mode: BatchingMode| {
            let mut t = TaskConfig::new(TaskId(id as u32), xi.clone(), mode);
            t.drops_enabled = cfg.drops_enabled;
            t.protocol = protocol;
            t.history_capacity = cfg.history_capacity;
            t.online_xi = cfg.xi_mode == XiMode::Online;
            t.rate_window = cfg.nob_window_ms;
            t
        };
        let va_ids: Vec<TaskId> = (0..va_n).map(|j| TaskId((va_base + j) as u32)).collect();
        let cr_ids: Vec<TaskId> = (0..cr_n).map(|j| TaskId((cr_base + j) as u32)).collect();

        let mut slots = Vec::with_capacity(uv + 1);
        for c in 0..cameras {
            let mut t = base_cfg(c, &fc_xi, fc_mode.clone());
            t.downstream = va_ids.clone();
            let n = c % nodes;
            slots.push(Slot {
                task: Task::new(t, Logic::Fc(FcLogic::new(fc_xi.clone())))?,
                stage: Stage::Fc,
                name: format!("fc{c}"),
                node: compute_node(n),
                skew: skew_of(&format!("node{n}-fc")),
            });
        }
        for j in 0..va_n {
            let mut t = base_cfg(va_base + j, &va_xi, va_mode.clone());
            t.downstream = cr_ids.clone();
            let n = j % nodes;
            let profile = DetectorProfile::oracle(va_xi.clone(), cfg.seed);
            slots.push(Slot {
                task: Task::new(t, Logic::Va(VaLogic { profile }))?,
                stage: Stage::Va,
                name: format!("va{j}"),
                node: compute_node(n),
                skew: skew_of(&format!("node{n}")),
            });
        }
        for j in 0..cr_n {
            let mut t = base_cfg(cr_base + j, &cr_xi, cr_mode.clone());
            t.downstream = vec![TaskId(uv as u32)];
            t.fork = Some(tl_fork);
            let n = j % nodes;
            let profile =
                DetectorProfile::new(cr_xi.clone(), cfg.cr_true_positive, cfg.cr_false_positive, cfg.seed)
                    .map_err(|e| config_error(e.to_string()))?;
            slots.push(Slot {
                task: Task::new(
                    t,
                    Logic::Cr(CrLogic {
                        profile,
                        avoid_drop_matches: cfg.avoid_drop_matches,
                    }),
                )?,
                stage: Stage::Cr,
                name: format!("cr{j}"),
                node: compute_node(n),
                skew: skew_of(&format!("node{n}")),
            });
        }
        let mut t = base_cfg(uv, &uv_xi, BatchingMode::Drain);
        t.sink_gamma = Some(cfg.gamma);
        slots.push(Slot {
            task: Task::new(t, Logic::Uv(UvLogic { cost: uv_xi.clone() }))?,
            stage: Stage::Uv,
            name: "uv".into(),
            node: HEAD,
            skew: 0,
        });

        let tracker = Tracker::new(
            world.net.clone(),
            world.placement.clone(),
            strategy(cfg, world),
            world.start,
            0,
            cfg.tl_peak_speed,
        )?;
        // The initial spotlight is in place before the first frame.
        let mut active_count = 0;
        for (c, slot) in slots.iter_mut().enumerate().take(cameras) {
            let on = tracker.state().active.contains(&CameraId(c as u32));
            if let Logic::Fc(l) = slot.task.logic_mut() {
                l.active = on;
            }
            active_count += usize::from(on);
        }

        let duration = cfg.duration_ms();
        let mut sim = Sim {
            cfg,
            world,
            slots,
            cameras,
            va_base,
            cr_base,
            uv,
            tracker,
            tl_pending: Vec::new(),
            tl_kick: false,
            tl_log: Vec::new(),
            links: Links::new(nodes + 1, cfg.link_bandwidth, cfg.link_latency),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            records: Vec::new(),
            index: HashMap::new(),
            paths: Vec::new(),
            frame_iter: Box::new(frame_times(cfg.fps, duration)),
            frame_index: 0,
            active_count,
            peak_active: active_count,
            active_samples: Vec::new(),
            budgets: Vec::new(),
            duration,
        };
        sim.schedule_next_frame();
        let mut t = 0;
        while t < duration {
            sim.push(t, CLASS_CONTROL, Item::Tick);
            t += 1000;
        }
        for (i, c) in cfg.link_schedule.iter().enumerate() {
            sim.push((c.time * 1000.0).round() as Millis, CLASS_CONTROL, Item::LinkChange(i));
        }
        for s in &cfg.slowdown {
            sim.push(
                (s.start * 1000.0).round() as Millis,
                CLASS_CONTROL,
                Item::Slow {
                    stage: s.stage.clone(),
                    factor: s.factor,
                },
            );
            sim.push(
                (s.end * 1000.0).round() as Millis,
                CLASS_CONTROL,
                Item::Slow {
                    stage: s.stage.clone(),
                    factor: 1.0,
                },
            );
        }
        Ok(sim)
    }

    fn push(&mut self, time: Millis, class: u8, item: Item) {
        self.seq += 1;
        self.heap.push(Entry {
            time,
            class,
            seq: self.seq,
            item,
        });
    }

    fn schedule_next_frame(&mut self) {
        if let Some(t) = self.frame_iter.next() {
            self.push(t, CLASS_NORMAL, Item::Frame);
        }
    }

    fn execute(&mut self, mode: RunMode) {
        let wall = Instant::now();
        while let Some(e) = self.heap.pop() {
            if e.time >= self.duration {
                break;
            }
            if let RunMode::Realtime { speedup } = mode {
                let due = Duration::from_secs_f64(e.time.max(0) as f64 / 1000.0 / speedup.max(1e-9));
                if let Some(wait) = due.checked_sub(wall.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            self.now = e.time;
            self.dispatch(e.item);
        }
    }

    fn local(&self, task: usize) -> Millis {
        self.now + self.slots[task].skew
    }

    fn reference(&self, task: usize, local: Millis) -> Millis {
        (local - self.slots[task].skew).max(self.now)
    }

    fn dispatch(&mut self, item: Item) {
        match item {
            Item::Frame => self.on_frame(),
            Item::Arrive { task, event } => {
                let now = self.local(task);
                let acts = self.slots[task].task.on_event(now, event);
                self.apply(task, acts);
            }
            Item::ExecDone { task } => {
                let now = self.local(task);
                let acts = self.slots[task].task.on_exec_done(now);
                self.apply(task, acts);
            }
            Item::Flush { task, token } => {
                let now = self.local(task);
                let acts = self.slots[task].task.on_flush(now, token);
                self.apply(task, acts);
            }
            Item::Kick { task } => {
                let now = self.local(task);
                let acts = self.slots[task].task.on_kick(now);
                self.apply(task, acts);
            }
            Item::Reject { task, sig } => {
                self.slots[task].task.on_reject(&sig);
            }
            Item::Accept { task, sig } => {
                self.slots[task].task.on_accept(&sig);
            }
            Item::Detection(d) => {
                self.tl_pending.push(d);
                if !self.tl_kick {
                    self.tl_kick = true;
                    self.push(self.now, CLASS_KICK, Item::TlKick);
                }
            }
            Item::TlKick => self.on_tl_kick(),
            Item::Command { camera, active } => {
                if let Logic::Fc(l) = self.slots[camera].task.logic_mut() {
                    if l.active != active {
                        l.active = active;
                        if active {
                            self.active_count += 1;
                        } else {
                            self.active_count -= 1;
                        }
                    }
                }
                self.peak_active = self.peak_active.max(self.active_count);
            }
            Item::Tick => self.on_tick(),
            Item::LinkChange(i) => {
                self.links.apply(&self.cfg.link_schedule[i]);
            }
            Item::Slow { stage, factor } => {
                for s in &mut self.slots {
                    let hit = match s.stage {
                        Stage::Fc => stage == "fc",
                        Stage::Va => stage == "va",
                        Stage::Cr => stage == "cr",
                        Stage::Uv => stage == "uv",
                    };
                    if hit || stage == "all" {
                        s.task.set_cost_multiplier(factor);
                    }
                }
            }
        }
    }

    fn on_frame(&mut self) {
        let t = self.now;
        let k = self.frame_index;
        self.frame_index += 1;
        let seen: Vec<VertexId> = self.world.walk.near_vertices(t, self.cfg.fov_m);
        for c in 0..self.cameras {
            let active = matches!(self.slots[c].task.logic(), Logic::Fc(l) if l.active);
            if !active {
                continue;
            }
            let Ok(vertex) = self.world.placement.vertex_of(CameraId(c as u32)) else {
                continue;
            };
            let truth = seen.contains(&vertex);
            let id = EventId(((c as u64) << 32) | k);
            let local = self.local(c);
            let frame = FrameRecord {
                camera: CameraId(c as u32),
                frame_ts: t,
                contains_entity: truth,
                payload_size: self.cfg.frame_bytes.max(1),
            };
            let event = Event::new(EventHeader::new(id, local), camera_key(frame.camera), Payload::Frame(frame));
            self.index.insert(id, self.records.len());
            self.records.push(EventRecord::new(id, c as u32, t, truth));
            self.paths.push([c, usize::MAX, usize::MAX]);
            let acts = self.slots[c].task.on_event(local, event);
            self.apply(c, acts);
        }
        self.schedule_next_frame();
    }

    fn on_tick(&mut self) {
        self.active_samples.push(self.active_count);
        let t = self.now;
        for i in self.cameras..self.uv {
            let now = self.local(i);
            let acts = self.slots[i].task.on_tick(now);
            self.apply(i, acts);
            let s = &self.slots[i];
            for (dest, b) in s.task.budgets().iter() {
                self.budgets.push(BudgetSample {
                    t,
                    task: s.name.clone(),
                    dest,
                    budget: b - s.skew,
                });
            }
        }
    }

    fn on_tl_kick(&mut self) {
        self.tl_kick = false;
        let batch = std::mem::take(&mut self.tl_pending);
        let positive = batch.iter().any(|d| d.matched && d.frame_ts >= self.tracker.state().lst);
        let Ok(cmds) = self.tracker.process_detections(&batch) else {
            return;
        };
        self.tl_log.push(TlDecision {
            t: self.now,
            positive,
            active_after: self.tracker.state().active.len(),
        });
        let sends: Vec<(usize, bool)> = cmds
            .activate
            .iter()
            .map(|c| (c.0 as usize, true))
            .chain(cmds.deactivate.iter().map(|c| (c.0 as usize, false)))
            .collect();
        for (camera, active) in sends {
            if camera >= self.cameras {
                continue;
            }
            let at = self.links.send(self.now, HEAD, self.slots[camera].node, self.cfg.control_bytes);
            self.push(at, CLASS_NORMAL, Item::Command { camera, active });
        }
    }

    fn record(&mut self, id: EventId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    fn apply(&mut self, task: usize, actions: Vec<Action<Payload>>) {
        for a in actions {
            self.apply_one(task, a);
        }
    }

    fn upstream_of(&self, rec: usize, stage: Stage) -> Vec<usize> {
        self.paths[rec][..stage.index().min(3)]
            .iter()
            .copied()
            .filter(|&t| t != usize::MAX)
            .collect()
    }

    fn apply_one(&mut self, task: usize, action: Action<Payload>) {
        let stage = self.slots[task].stage;
        match action {
            Action::Filtered { .. } | Action::Consumed { .. } => {}
            Action::Started { events, until, .. } => {
                let size = events.len();
                for id in events {
                    if let Some(r) = self.record(id) {
                        self.records[r].batch[stage.index()] = Some(size);
                    }
                }
                let at = self.reference(task, until);
                self.push(at, CLASS_NORMAL, Item::ExecDone { task });
            }
            Action::ScheduleFlush { at, token } => {
                let at = self.reference(task, at);
                self.push(at, CLASS_NORMAL, Item::Flush { task, token });
            }
            Action::ScheduleKick => self.push(self.now, CLASS_KICK, Item::Kick { task }),
            Action::Forward { dest, event } => {
                let dest = dest.0 as usize;
                if let Some(r) = self.record(event.id()) {
                    let next = self.slots[dest].stage.index();
                    if next < 3 {
                        self.paths[r][next] = dest;
                    }
                }
                let at = self
                    .links
                    .send(self.now, self.slots[task].node, self.slots[dest].node, self.cfg.frame_bytes);
                self.push(at, CLASS_NORMAL, Item::Arrive { task: dest, event });
            }
            Action::Fork { event, .. } => {
                if let Payload::Detection(d) = &event.payload {
                    let report = DetectionReport {
                        camera: d.camera,
                        frame_ts: d.frame_ts,
                        matched: d.matched,
                    };
                    let at = self.links.send(self.now, self.slots[task].node, HEAD, self.cfg.detection_bytes);
                    self.push(at, CLASS_NORMAL, Item::Detection(report));
                }
            }
            Action::Dropped { event, point, .. } => {
                if let Some(r) = self.record(event.id()) {
                    let rec = &mut self.records[r];
                    rec.status = Status::dropped(&self.slots[task].name, point);
                    rec.t_end = Some(self.now);
                }
            }
            Action::Probe { event, point } => {
                if let Some(r) = self.record(event) {
                    let rec = &mut self.records[r];
                    rec.status = Status::dropped(&self.slots[task].name, point);
                    rec.t_end = Some(self.now);
                    rec.probe = true;
                }
            }
            Action::Reject(sig) => {
                let Some(r) = self.record(sig.event) else { return };
                for up in self.upstream_of(r, stage) {
                    let at = self
                        .links
                        .send(self.now, self.slots[task].node, self.slots[up].node, self.cfg.control_bytes);
                    self.push(
                        at,
                        CLASS_NORMAL,
                        Item::Reject {
                            task: up,
                            sig: sig.clone(),
                        },
                    );
                }
            }
            Action::Accept(sig) => {
                let Some(r) = self.record(sig.event) else { return };
                for up in self.upstream_of(r, Stage::Uv) {
                    let at = self
                        .links
                        .send(self.now, self.slots[task].node, self.slots[up].node, self.cfg.control_bytes);
                    self.push(
                        at,
                        CLASS_NORMAL,
                        Item::Accept {
                            task: up,
                            sig: sig.clone(),
                        },
                    );
                }
            }
            Action::Deliver {
                event, latency, late, ..
            } => {
                let Some(r) = self.record(event.id()) else { return };
                let rec = &mut self.records[r];
                rec.t_sink = Some(self.now);
                rec.latency = Some(latency);
                rec.flagged = event.header.avoid_drop;
                if !rec.probe {
                    rec.status = if late { Status::Delayed } else { Status::Delivered };
                    rec.t_end = Some(self.now);
                }
            }
        }
    }

    fn stage_stats(&self, stage: Stage) -> StageStats {
        let mut s = StageStats::default();
        let mut budget_sum = 0.0;
        let mut budget_n = 0usize;
        for slot in self.slots.iter().filter(|x| x.stage == stage) {
            let st = slot.task.stats();
            s.arrived += st.arrived;
            s.batches += st.batches;
            s.executed += st.executed;
            s.busy_ms += st.busy_ms;
            s.dropped += st.dropped.iter().sum::<u64>();
            s.would_drop += st.would_drop.iter().sum::<u64>();
            s.rejects_sent += st.rejects_sent;
            s.accepts_sent += st.accepts_sent;
            s.signals_applied += st.signals_applied;
            s.signals_ignored += st.signals_ignored;
            for (_, b) in slot.task.budgets().iter() {
                budget_sum += (b - slot.skew) as f64;
                budget_n += 1;
            }
        }
        if s.batches > 0 {
            s.mean_batch = s.executed as f64 / s.batches as f64;
        }
        if budget_n > 0 {
            s.mean_budget_ms = Some(budget_sum / budget_n as f64);
        }
        s
    }

    fn finish(self) -> RunResult {
        let seconds = ((self.duration + 999) / 1000) as usize;
        let mut timeline: Vec<TimelineRow> = (0..seconds)
            .map(|s| TimelineRow {
                t: s as Millis * 1000,
                active_cameras: self.active_samples.get(s).copied().unwrap_or(0),
                mean_latency_ms: None,
                events_in: 0,
                events_dropped: 0,
            })
            .collect();
        let mut lat_sum = vec![(0i64, 0u64); seconds];
        let mut latencies = Vec::new();
        let mut summary = Summary {
            duration_ms: self.duration,
            peak_active_cameras: self.peak_active,
            ..Summary::default()
        };
        let bucket = |t: Millis| ((t / 1000) as usize).min(seconds.saturating_sub(1));
        for e in &self.records {
            summary.generated += 1;
            if seconds > 0 {
                timeline[bucket(e.t_source)].events_in += 1;
            }
            if e.probe {
                summary.probes += 1;
            }
            match &e.status {
                Status::Delivered | Status::Delayed => {
                    if matches!(e.status, Status::Delivered) {
                        summary.delivered += 1;
                    } else {
                        summary.delayed += 1;
                        if e.flagged {
                            summary.delayed_flagged += 1;
                        }
                    }
                    if let (Some(l), Some(t)) = (e.latency, e.t_sink) {
                        latencies.push(l);
                        if seconds > 0 {
                            let b = &mut lat_sum[bucket(t)];
                            b.0 += l;
                            b.1 += 1;
                        }
                    }
                }
                Status::Dropped { point, .. } => {
                    summary.dropped += 1;
                    match *point {
                        "queue" => summary.drops_by_point.queue += 1,
                        "exec" => summary.drops_by_point.exec += 1,
                        _ => summary.drops_by_point.transmit += 1,
                    }
                    if let (Some(t), true) = (e.t_end, seconds > 0) {
                        timeline[bucket(t)].events_dropped += 1;
                    }
                }
                Status::InFlight => summary.in_flight += 1,
            }
        }
        for (row, (sum, n)) in timeline.iter_mut().zip(lat_sum) {
            if n > 0 {
                row.mean_latency_ms = Some(sum as f64 / n as f64);
            }
        }
        latencies.sort_unstable();
        summary.median_latency_ms = median(&latencies);
        summary.p99_latency_ms = percentile(&latencies, 99.0);
        summary.max_latency_ms = latencies.last().copied();
        if !latencies.is_empty() {
            summary.mean_latency_ms = Some(latencies.iter().sum::<Millis>() as f64 / latencies.len() as f64);
        }
        summary.tl_rounds = self.tl_log.len() as u64;
        summary.tl_positive_rounds = self.tl_log.iter().filter(|d| d.positive).count() as u64;
        summary.bytes_sent = self.links.bytes_sent;
        summary.fc = self.stage_stats(Stage::Fc);
        summary.va = self.stage_stats(Stage::Va);
        summary.cr = self.stage_stats(Stage::Cr);
        summary.uv = self.stage_stats(Stage::Uv);
        let _ = (self.va_base, self.cr_base, DropCounts::default());
        RunResult {
            events: self.records,
            timeline,
            summary,
            tl_log: self.tl_log,
            budgets: self.budgets,
        }
    }
}
