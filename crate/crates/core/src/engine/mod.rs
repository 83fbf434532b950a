// SPDX-License-Identifier: Apache-2.0

//! Per-task execution loop.
//!
//! A [`Task`] is a passive state machine. The driver (the simulator, or a
//! wall-clock runtime) feeds it arrivals, timer firings, execution
//! completions and signals, always with the task's local clock reading, and
//! carries out the returned [`Action`]s.

pub mod batch;
pub mod drop;
pub mod partition;

use std::collections::VecDeque;

use thiserror::Error;

use crate::budget::{
    AcceptSignal, Budgets, DepartureRecord, History, ProbeCounter, ProtocolParams, RejectSignal, SinkCompletion,
};
use crate::model::{Event, EventId, ExecTimeModel, Millis, OnlineExecTime, TaskId};

pub use batch::{select_batch_size_nob, select_batch_size_static, Batch, BatchingMode, NobTable, Queued, RateMeter};
pub use drop::{drop_before_exec, drop_before_queuing, drop_before_transmit, split_before_exec, DropPoint, Verdict};
pub use partition::{fnv1a, partition, route};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("empty batch-size table")]
    EmptyTable,
    #[error("no downstream task to route to")]
    NoDownstream,
    #[error("unknown destination {0}")]
    UnknownDestination(TaskId),
    #[error("invalid task configuration: {0}")]
    Config(String),
}

/// One result slot of a batch execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Output<P> {
    pub key: String,
    pub payload: P,
    pub avoid_drop: bool,
    /// Extra copy sent to the task's control fork, if it has one.
    pub fork: Option<P>,
}

impl<P> Output<P> {
    pub fn new(key: impl Into<String>, payload: P) -> Self {
        Output {
            key: key.into(),
            payload,
            avoid_drop: false,
            fork: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecOutcome<P> {
    /// One slot per input, in input order; `None` filters the event out.
    pub outputs: Vec<Option<Output<P>>>,
    /// Execution time charged for the whole batch.
    pub cost: Millis,
}

/// Application code run by a task.
pub trait UserLogic<P> {
    /// Cheap admission check on arrival; rejected events never enter the task.
    fn admit(&mut self, _event: &Event<P>, _now: Millis) -> bool {
        true
    }

    fn execute(&mut self, task: TaskId, inputs: &[Event<P>], now: Millis) -> ExecOutcome<P>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub id: TaskId,
    pub xi: ExecTimeModel,
    pub batching: BatchingMode,
    pub drops_enabled: bool,
    pub protocol: ProtocolParams,
    pub downstream: Vec<TaskId>,
    pub fork: Option<TaskId>,
    /// Tolerable latency when this task is the sink; its budget is fixed to it.
    pub sink_gamma: Option<Millis>,
    pub history_capacity: usize,
    /// Skew of this task's clock relative to the source clock, when known.
    pub known_skew: Millis,
    /// Refine the execution-time model from measured batch durations.
    pub online_xi: bool,
    /// Window of the input-rate estimate used by lookup-table batching.
    pub rate_window: Millis,
}

impl TaskConfig {
    pub fn new(id: TaskId, xi: ExecTimeModel, batching: BatchingMode) -> Self {
        TaskConfig {
            id,
            xi,
            batching,
            drops_enabled: true,
            protocol: ProtocolParams::default(),
            downstream: Vec::new(),
            fork: None,
            sink_gamma: None,
            history_capacity: History::DEFAULT_CAPACITY,
            known_skew: 0,
            online_xi: false,
            rate_window: 5000,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        match (&self.sink_gamma, self.downstream.is_empty()) {
            (Some(_), false) => return Err(EngineError::Config(format!("sink {} has downstream tasks", self.id))),
            (None, true) => return Err(EngineError::NoDownstream),
            _ => {}
        }
        if let BatchingMode::Static(0) = self.batching {
            return Err(EngineError::Config("static batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the driver must do on the task's behalf. Times are local.
#[derive(Clone, Debug, PartialEq)]
pub enum Action<P> {
    /// The logic rejected the event on arrival.
    Filtered { event: EventId },
    /// A batch started executing and finishes at `until`.
    Started {
        events: Vec<EventId>,
        formed: usize,
        start: Millis,
        until: Millis,
    },
    /// Call [`Task::on_flush`] with `token` at `at`.
    ScheduleFlush { at: Millis, token: u64 },
    /// Call [`Task::on_kick`] once every arrival at the current instant is in.
    ScheduleKick,
    Forward { dest: TaskId, event: Event<P> },
    Fork { dest: TaskId, event: Event<P> },
    Dropped { event: Event<P>, point: DropPoint, excess: Millis },
    /// A dropped event kept going as a probe.
    Probe { event: EventId, point: DropPoint },
    /// Route to every task upstream of the event.
    Reject(RejectSignal),
    /// Route to every task upstream of the event (sink only).
    Accept(AcceptSignal),
    /// Sink completion of an event.
    Deliver {
        event: Event<P>,
        output: Option<P>,
        /// Upstream time when the event reached the sink.
        latency: Millis,
        late: bool,
    },
    /// Execution produced no output for the event.
    Consumed { event: EventId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaskStats {
    pub arrived: u64,
    pub filtered: u64,
    pub dropped: [u64; 3],
    pub would_drop: [u64; 3],
    pub probes: u64,
    pub batches: u64,
    pub executed: u64,
    pub busy_ms: Millis,
    pub rejects_sent: u64,
    pub accepts_sent: u64,
    pub signals_applied: u64,
    pub signals_ignored: u64,
}

#[derive(Debug)]
struct Running<P> {
    members: Vec<Queued<P>>,
    start: Millis,
    cost: Millis,
    outputs: Vec<Option<Output<P>>>,
}

pub struct Task<P, L> {
    cfg: TaskConfig,
    logic: L,
    xi: ExecTimeModel,
    online: Option<OnlineExecTime>,
    budgets: Budgets,
    history: History,
    probes: ProbeCounter,
    current: Batch<P>,
    ready: VecDeque<Batch<P>>,
    running: Option<Running<P>>,
    flush_token: u64,
    kick_pending: bool,
    rate: RateMeter,
    cost_multiplier: f64,
    stats: TaskStats,
}

impl<P: Clone, L: UserLogic<P>> Task<P, L> {
    pub fn new(cfg: TaskConfig, logic: L) -> Result<Self, EngineError> {
        cfg.validate()?;
        let online = cfg.online_xi.then(|| OnlineExecTime::new(&cfg.xi));
        Ok(Task {
            xi: cfg.xi.clone(),
            online,
            budgets: Budgets::new(),
            history: History::new(cfg.history_capacity),
            probes: ProbeCounter::default(),
            current: Batch::new(),
            ready: VecDeque::new(),
            running: None,
            flush_token: 0,
            kick_pending: false,
            rate: RateMeter::new(cfg.rate_window),
            cost_multiplier: 1.0,
            stats: TaskStats::default(),
            logic,
            cfg,
        })
    }

    pub fn id(&self) -> TaskId {
        self.cfg.id
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn logic(&self) -> &L {
        &self.logic
    }

    pub fn logic_mut(&mut self) -> &mut L {
        &mut self.logic
    }

    pub fn budgets(&self) -> &Budgets {
        &self.budgets
    }

    pub fn budgets_mut(&mut self) -> &mut Budgets {
        &mut self.budgets
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn stats(&self) -> &TaskStats {
        &self.stats
    }

    pub fn xi(&self) -> &ExecTimeModel {
        &self.xi
    }

    pub fn is_busy(&self) -> bool {
        self.running.is_some()
    }

    /// Events waiting at the task, excluding the running batch.
    pub fn queued(&self) -> usize {
        self.current.len() + self.ready.iter().map(Batch::len).sum::<usize>()
    }

    /// Scales the cost of future executions (1.0 = nominal).
    pub fn set_cost_multiplier(&mut self, factor: f64) {
        self.cost_multiplier = factor.max(0.0);
    }

    fn is_sink(&self) -> bool {
        self.cfg.sink_gamma.is_some()
    }

    /// Budget used before the destination is known.
    pub fn effective_budget(&self) -> Option<Millis> {
        self.cfg.sink_gamma.or_else(|| self.budgets.effective())
    }

    fn upstream_time(&self, event: &Event<P>, arrival: Millis) -> Millis {
        arrival - self.cfg.known_skew - event.header.source_arrival
    }

    /// Handles a drop or would-drop. Returns the event if it continues,
    /// either as a probe or because drops are disabled.
    fn on_drop_verdict(
        &mut self,
        mut q: Queued<P>,
        point: DropPoint,
        excess: Millis,
        sum_queue: Millis,
        out: &mut Vec<Action<P>>,
    ) -> Option<Queued<P>> {
        if !q.rejected {
            q.rejected = true;
            self.stats.rejects_sent += 1;
            out.push(Action::Reject(RejectSignal {
                event: q.event.id(),
                epsilon: excess,
                sum_queue,
            }));
        }
        if !self.cfg.drops_enabled {
            self.stats.would_drop[point.index()] += 1;
            return Some(q);
        }
        if self.probes.on_drop(self.cfg.protocol.probe_every) {
            self.stats.probes += 1;
            q.event.header.probe = true;
            out.push(Action::Probe {
                event: q.event.id(),
                point,
            });
            return Some(q);
        }
        self.stats.dropped[point.index()] += 1;
        out.push(Action::Dropped {
            event: q.event,
            point,
            excess,
        });
        None
    }

    /// An event arrives at local time `now`.
    pub fn on_event(&mut self, now: Millis, event: Event<P>) -> Vec<Action<P>> {
        let mut out = Vec::new();
        if !self.logic.admit(&event, now) {
            self.stats.filtered += 1;
            out.push(Action::Filtered { event: event.id() });
            return out;
        }
        self.stats.arrived += 1;
        let upstream = self.upstream_time(&event, now);
        let budget = self.effective_budget();
        let deadline_budget = budget.map(|b| b + self.cfg.known_skew);
        let mut q = Queued::new(event, now, upstream, deadline_budget);
        let verdict = match self.cfg.sink_gamma {
            // The sink's budget bounds arrival; its own processing is not charged.
            Some(gamma) if upstream > gamma && !q.event.header.is_exempt() => Verdict::Drop {
                excess: upstream - gamma,
            },
            Some(_) => Verdict::Keep,
            None => drop_before_queuing(&q.event.header, upstream, &self.xi, budget),
        };
        if let Verdict::Drop { excess } = verdict {
            let sum_queue = q.event.header.sum_queue;
            match self.on_drop_verdict(q, DropPoint::BeforeQueue, excess, sum_queue, &mut out) {
                Some(kept) => q = kept,
                None => return out,
            }
        }
        self.enqueue(now, q, &mut out);
        self.try_start(now, &mut out);
        out
    }

    fn enqueue(&mut self, now: Millis, q: Queued<P>, out: &mut Vec<Action<P>>) {
        match self.cfg.batching.clone() {
            BatchingMode::Streaming => {
                self.current.push(q);
                self.submit_current();
            }
            BatchingMode::Static(b) => {
                self.current.push(q);
                if self.current.len() >= select_batch_size_static(b) {
                    self.submit_current();
                }
            }
            BatchingMode::Nob(table) => {
                self.rate.record(now);
                self.current.push(q);
                let target = select_batch_size_nob(self.rate.rate(now), &table);
                if self.current.len() >= target {
                    self.submit_current();
                }
            }
            BatchingMode::Drain => {
                self.current.push(q);
                if self.running.is_none() && !self.kick_pending {
                    self.kick_pending = true;
                    out.push(Action::ScheduleKick);
                }
            }
            BatchingMode::Dynamic => {
                if q.deadline.is_none() {
                    // nothing to batch against until a budget is assigned
                    self.submit_current();
                    self.current.push(q);
                    self.submit_current();
                    return;
                }
                if let Some(closed) = self.current.try_extend(q, now, &self.xi) {
                    self.ready.push_back(closed);
                }
                self.check_flush(now, out);
            }
        }
    }

    fn check_flush(&mut self, now: Millis, out: &mut Vec<Action<P>>) {
        if self.current.is_empty() {
            return;
        }
        match self.current.flush_at(&self.xi) {
            Some(at) if at > now && self.current.len() < self.xi.m_max() => {
                self.flush_token += 1;
                out.push(Action::ScheduleFlush {
                    at,
                    token: self.flush_token,
                });
            }
            _ => self.submit_current(),
        }
    }

    fn submit_current(&mut self) {
        if !self.current.is_empty() {
            self.flush_token += 1;
            let b = self.current.take();
            self.ready.push_back(b);
        }
    }

    /// A flush timer fires.
    pub fn on_flush(&mut self, now: Millis, token: u64) -> Vec<Action<P>> {
        let mut out = Vec::new();
        if token == self.flush_token && self.current.deadline_flush(now, &self.xi) {
            self.submit_current();
            self.try_start(now, &mut out);
        }
        out
    }

    /// The kick requested by [`Action::ScheduleKick`].
    pub fn on_kick(&mut self, now: Millis) -> Vec<Action<P>> {
        self.kick_pending = false;
        let mut out = Vec::new();
        self.try_start(now, &mut out);
        out
    }

    /// Periodic tick; re-evaluates the lookup-table batch size.
    pub fn on_tick(&mut self, now: Millis) -> Vec<Action<P>> {
        let mut out = Vec::new();
        if let BatchingMode::Nob(table) = &self.cfg.batching {
            let target = select_batch_size_nob(self.rate.rate(now), table);
            if !self.current.is_empty() && self.current.len() >= target {
                self.submit_current();
                self.try_start(now, &mut out);
            }
        }
        out
    }

    fn try_start(&mut self, now: Millis, out: &mut Vec<Action<P>>) {
        while self.running.is_none() {
            if self.ready.is_empty() && matches!(self.cfg.batching, BatchingMode::Drain) {
                let mut members = self.current.take().into_members();
                let m_max = self.xi.m_max();
                while members.len() > m_max {
                    let rest = members.split_off(m_max);
                    self.ready.push_back(Batch::from_members(members));
                    members = rest;
                }
                if !members.is_empty() {
                    self.ready.push_back(Batch::from_members(members));
                }
            }
            let Some(batch) = self.ready.pop_front() else {
                return;
            };
            let formed = batch.len();
            let budget = if self.is_sink() { None } else { self.effective_budget() };
            let (kept, dropped) = split_before_exec(batch, now, &self.xi, budget);
            let mut members = kept.into_members();
            for (q, excess) in dropped {
                let sum_queue = q.event.header.sum_queue + (now - q.arrival);
                if let Some(q) = self.on_drop_verdict(q, DropPoint::BeforeExec, excess, sum_queue, out) {
                    members.push(q);
                }
            }
            if members.is_empty() {
                continue;
            }
            members.sort_by_key(|q| q.arrival);
            self.start(now, members, formed, out);
        }
    }

    fn start(&mut self, now: Millis, members: Vec<Queued<P>>, formed: usize, out: &mut Vec<Action<P>>) {
        let inputs: Vec<Event<P>> = members.iter().map(|q| q.event.clone()).collect();
        let outcome = self.logic.execute(self.cfg.id, &inputs, now);
        let cost = ((outcome.cost.max(0) as f64) * self.cost_multiplier).round() as Millis;
        self.stats.batches += 1;
        self.stats.executed += members.len() as u64;
        self.stats.busy_ms += cost;
        out.push(Action::Started {
            events: inputs.iter().map(Event::id).collect(),
            formed,
            start: now,
            until: now + cost,
        });
        let mut outputs = outcome.outputs;
        outputs.resize_with(members.len(), || None);
        self.running = Some(Running {
            members,
            start: now,
            cost,
            outputs,
        });
    }

    /// The running batch completes at local time `now`.
    pub fn on_exec_done(&mut self, now: Millis) -> Vec<Action<P>> {
        let mut out = Vec::new();
        let Some(run) = self.running.take() else {
            return out;
        };
        let size = run.members.len();
        if let Some(online) = &mut self.online {
            online.observe(size, now - run.start);
            self.xi = online.model();
        }
        if self.is_sink() {
            self.complete_sink(run, &mut out);
        } else {
            self.complete(now, run, size, &mut out);
        }
        self.try_start(now, &mut out);
        out
    }

    fn complete(&mut self, now: Millis, run: Running<P>, size: usize, out: &mut Vec<Action<P>>) {
        for (q, slot) in run.members.into_iter().zip(run.outputs) {
            let Some(output) = slot else {
                out.push(Action::Consumed { event: q.event.id() });
                continue;
            };
            let queue = run.start - q.arrival;
            let processing = now - q.arrival;
            let mut header = q.event.header.clone();
            header.sum_queue += queue;
            header.sum_exec += run.cost;
            header.avoid_drop |= output.avoid_drop;
            if let (Some(fork), Some(payload)) = (self.cfg.fork, output.fork) {
                let mut h = header.clone();
                h.avoid_drop = true;
                out.push(Action::Fork {
                    dest: fork,
                    event: Event::new(h, output.key.clone(), payload),
                });
            }
            let dest = match route(&output.key, &self.cfg.downstream) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let event = Event::new(header, output.key, output.payload);
            let mut next = Queued {
                event,
                arrival: q.arrival,
                upstream: q.upstream,
                deadline: q.deadline,
                rejected: q.rejected,
            };
            let verdict = drop_before_transmit(
                &next.event.header,
                q.upstream,
                processing,
                &self.budgets,
                &self.cfg.downstream,
                dest,
            )
            .unwrap_or(Verdict::Keep);
            if let Verdict::Drop { excess } = verdict {
                let sum_queue = next.event.header.sum_queue;
                match self.on_drop_verdict(next, DropPoint::BeforeTransmit, excess, sum_queue, out) {
                    Some(kept) => next = kept,
                    None => continue,
                }
            }
            self.history.insert(
                next.event.id(),
                DepartureRecord {
                    departure: q.upstream + processing,
                    queue,
                    batch: size,
                    dest,
                    exec: run.cost,
                },
            );
            out.push(Action::Forward {
                dest,
                event: next.event,
            });
        }
    }

    fn complete_sink(&mut self, run: Running<P>, out: &mut Vec<Action<P>>) {
        let gamma = self.cfg.sink_gamma.unwrap_or(Millis::MAX);
        let mut completions = Vec::new();
        for (q, slot) in run.members.into_iter().zip(run.outputs) {
            completions.push(SinkCompletion {
                event: q.event.id(),
                upstream: q.upstream,
                sum_exec: q.event.header.sum_exec,
            });
            let queue = run.start - q.arrival;
            let latency = q.upstream;
            let mut next = q;
            next.event.header.sum_queue += queue;
            next.event.header.sum_exec += run.cost;
            let late = latency > gamma;
            out.push(Action::Deliver {
                event: next.event,
                output: slot.map(|o| o.payload),
                latency,
                late,
            });
        }
        if let Some(accept) = crate::budget::sink_evaluate(&completions, gamma, self.cfg.protocol.epsilon_max) {
            self.stats.accepts_sent += 1;
            out.push(Action::Accept(accept));
        }
    }

    /// A reject for an event this task forwarded. Returns true if applied.
    pub fn on_reject(&mut self, signal: &RejectSignal) -> bool {
        match self.history.take(signal.event) {
            Some(record) => {
                self.budgets.apply_reject(&record, signal, &self.xi);
                self.stats.signals_applied += 1;
                true
            }
            None => {
                self.stats.signals_ignored += 1;
                false
            }
        }
    }

    /// An accept for an event this task forwarded. Returns true if applied.
    pub fn on_accept(&mut self, signal: &AcceptSignal) -> bool {
        match self.history.take(signal.event) {
            Some(record) => {
                self.budgets.apply_accept(&record, signal, &self.xi);
                self.stats.signals_applied += 1;
                true
            }
            None => {
                self.stats.signals_ignored += 1;
                false
            }
        }
    }
}
