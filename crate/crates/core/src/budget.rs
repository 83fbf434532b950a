// SPDX-License-Identifier: Apache-2.0

//! Completion budgets and the signals that move them.
//!
//! A budget is a duration measured from the event's source arrival: an event
//! must leave the task by `source_arrival + budget`. Rejects shrink budgets
//! after a downstream drop, accepts grow them after an early arrival at the
//! sink, and probes let a collapsed pipeline find out it has recovered.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{EventId, ExecTimeModel, Millis, TaskId};

/// Sent upstream by a task that dropped (or would have dropped) an event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectSignal {
    pub event: EventId,
    /// Excess of the projected departure over the budget; always > 0.
    pub epsilon: Millis,
    /// Queuing accumulated up to and including the dropping task.
    pub sum_queue: Millis,
}

/// Sent by the sink to every upstream task when the slowest event of a batch
/// arrived well before the tolerable latency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptSignal {
    pub event: EventId,
    /// `gamma - u` at the sink.
    pub epsilon: Millis,
    /// Execution time summed over every task before the sink.
    pub sum_exec: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    Reject(RejectSignal),
    Accept(AcceptSignal),
}

impl Signal {
    pub fn event(&self) -> EventId {
        match self {
            Signal::Reject(r) => r.event,
            Signal::Accept(a) => a.event,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Minimum early-arrival slack at the sink before an accept is sent.
    pub epsilon_max: Millis,
    /// Every `probe_every`-th drop at a task is forwarded as a probe; 0 disables probes.
    pub probe_every: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            epsilon_max: 1000,
            probe_every: 100,
        }
    }
}

/// Budget reduction at an upstream task for a reject.
///
/// The share of the excess proportional to this task's queuing, capped so the
/// task can still stream events with a batch of one.
pub fn reduce_lambda(
    epsilon: Millis,
    own_queue: Millis,
    sum_queue: Millis,
    xi: &ExecTimeModel,
    batch: usize,
) -> Millis {
    if sum_queue <= 0 || own_queue <= 0 || epsilon <= 0 {
        return 0;
    }
    let share = (epsilon as i128 * own_queue as i128 / sum_queue as i128) as Millis;
    let cap = xi.at(batch) - xi.at(1);
    share.min(cap).max(0)
}

/// Budget increase at an upstream task for an accept.
///
/// The share of the slack proportional to this task's execution time, capped
/// by the time needed to fill and run a batch of `m_max`.
pub fn increase_lambda(
    epsilon: Millis,
    own_exec: Millis,
    sum_exec: Millis,
    own_queue: Millis,
    batch: usize,
    xi: &ExecTimeModel,
) -> Millis {
    if sum_exec <= 0 || epsilon <= 0 || batch == 0 {
        return 0;
    }
    let m_max = xi.m_max();
    let batch = batch.min(m_max);
    let share = (epsilon as i128 * own_exec as i128 / sum_exec as i128) as Millis;
    let headroom = (m_max - batch) as i128 * own_queue.max(0) as i128 / batch as i128;
    let cap = headroom as Millis + xi.at(m_max) - xi.at(batch);
    share.min(cap).max(0)
}

/// What a task remembers about an event it forwarded, until a signal
/// acknowledges it or it is evicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartureRecord {
    /// Upstream time plus processing duration at this task.
    pub departure: Millis,
    pub queue: Millis,
    pub batch: usize,
    pub dest: TaskId,
    pub exec: Millis,
}

/// Bounded store of departure records with oldest-first eviction.
#[derive(Clone, Debug)]
pub struct History {
    records: HashMap<EventId, DepartureRecord>,
    order: VecDeque<EventId>,
    capacity: usize,
    evicted: u64,
}

impl History {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> Self {
        History {
            records: HashMap::new(),
            order: VecDeque::new(),
            capacity: capacity.max(1),
            evicted: 0,
        }
    }

    pub fn insert(&mut self, event: EventId, record: DepartureRecord) {
        if self.records.insert(event, record).is_none() {
            self.order.push_back(event);
        }
        while self.records.len() > self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    if self.records.remove(&old).is_some() {
                        self.evicted += 1;
                    }
                }
                None => break,
            }
        }
        // Acknowledged ids leave stale entries in `order`; trim them lazily.
        if self.order.len() > 2 * self.capacity {
            let records = &self.records;
            self.order.retain(|id| records.contains_key(id));
        }
    }

    pub fn get(&self, event: EventId) -> Option<&DepartureRecord> {
        self.records.get(&event)
    }

    pub fn take(&mut self, event: EventId) -> Option<DepartureRecord> {
        self.records.remove(&event)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }
}

/// Per-downstream completion budgets. A missing entry is unset and behaves
/// as an infinite budget.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    by_dest: BTreeMap<TaskId, Millis>,
}

impl Budgets {
    pub fn new() -> Self {
        Budgets::default()
    }

    pub fn get(&self, dest: TaskId) -> Option<Millis> {
        self.by_dest.get(&dest).copied()
    }

    pub fn set(&mut self, dest: TaskId, budget: Millis) {
        self.by_dest.insert(dest, budget);
    }

    /// Budget consulted before the destination is known: the most permissive
    /// of the assigned budgets, or unset if none has been assigned yet.
    pub fn effective(&self) -> Option<Millis> {
        self.by_dest.values().copied().max()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskId, Millis)> + '_ {
        self.by_dest.iter().map(|(k, v)| (*k, *v))
    }

    /// `min(departure - lambda, old)`, or `departure - lambda` when unset.
    pub fn apply_reject(
        &mut self,
        record: &DepartureRecord,
        signal: &RejectSignal,
        xi: &ExecTimeModel,
    ) -> Millis {
        let lambda = reduce_lambda(signal.epsilon, record.queue, signal.sum_queue, xi, record.batch);
        let proposed = record.departure - lambda;
        let next = match self.get(record.dest) {
            Some(old) => proposed.min(old),
            None => proposed,
        };
        self.set(record.dest, next);
        next
    }

    /// `max(departure + lambda, old)`, or `departure + lambda` when unset.
    pub fn apply_accept(
        &mut self,
        record: &DepartureRecord,
        signal: &AcceptSignal,
        xi: &ExecTimeModel,
    ) -> Millis {
        let lambda = increase_lambda(
            signal.epsilon,
            record.exec,
            signal.sum_exec,
            record.queue,
            record.batch,
            xi,
        );
        let proposed = record.departure + lambda;
        let next = match self.get(record.dest) {
            Some(old) => proposed.max(old),
            None => proposed,
        };
        self.set(record.dest, next);
        next
    }
}

/// One event of a batch that completed at the sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SinkCompletion {
    pub event: EventId,
    /// Upstream time on arrival at the sink.
    pub upstream: Millis,
    pub sum_exec: Millis,
}

/// Accept decision for a batch completed at the sink, keyed on its slowest event.
pub fn sink_evaluate(batch: &[SinkCompletion], gamma: Millis, epsilon_max: Millis) -> Option<AcceptSignal> {
    let slowest = batch
        .iter()
        .max_by(|a, b| a.upstream.cmp(&b.upstream).then(b.event.cmp(&a.event)))?;
    let epsilon = gamma - slowest.upstream;
    (epsilon > epsilon_max).then_some(AcceptSignal {
        event: slowest.event,
        epsilon,
        sum_exec: slowest.sum_exec,
    })
}

/// Counts drops at one task and says which of them become probes.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProbeCounter {
    drops: u64,
}

impl ProbeCounter {
    /// Registers a drop; true if this one should be forwarded as a probe.
    pub fn on_drop(&mut self, every: u64) -> bool {
        self.drops += 1;
        every > 0 && self.drops.is_multiple_of(every)
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xi(base: f64, per: f64, m_max: usize) -> ExecTimeModel {
        ExecTimeModel::affine(base, per, m_max).unwrap()
    }

    #[test]
    fn reduce_lambda_examples() {
        // xi(m) - xi(1) = 500 with affine(100, 50) at m = 11
        let model = xi(100.0, 50.0, 20);
        assert_eq!(model.at(11) - model.at(1), 500);
        assert_eq!(reduce_lambda(100, 300, 600, &model, 11), 50);
        assert_eq!(reduce_lambda(100, 0, 600, &model, 11), 0);
        // cap of 200 = xi(5) - xi(1)
        assert_eq!(reduce_lambda(1000, 600, 600, &model, 5), 200);
        assert_eq!(reduce_lambda(100, 300, 0, &model, 5), 0);
    }

    #[test]
    fn increase_lambda_examples() {
        let model = xi(100.0, 50.0, 10);
        assert_eq!(increase_lambda(2000, 300, 600, 250, 5, &model), 500);
        assert_eq!(increase_lambda(2000, 300, 600, 250, 10, &model), 0);
        assert_eq!(increase_lambda(100, 300, 600, 250, 5, &model), 50);
    }

    fn record(departure: Millis, queue: Millis, batch: usize) -> DepartureRecord {
        DepartureRecord {
            departure,
            queue,
            batch,
            dest: TaskId(9),
            exec: 300,
        }
    }

    #[test]
    fn apply_reject_examples() {
        // lambda = 50: eps 100, q 300 of 600, generous cap
        let model = xi(100.0, 50.0, 20);
        let sig = RejectSignal {
            event: EventId(1),
            epsilon: 100,
            sum_queue: 600,
        };
        let mut b = Budgets::new();
        b.set(TaskId(9), 3200);
        assert_eq!(b.apply_reject(&record(3000, 300, 11), &sig, &model), 2950);
        let mut b = Budgets::new();
        b.set(TaskId(9), 2900);
        assert_eq!(b.apply_reject(&record(3000, 300, 11), &sig, &model), 2900);
        let mut b = Budgets::new();
        assert_eq!(b.apply_reject(&record(3000, 300, 11), &sig, &model), 2950);
    }

    #[test]
    fn apply_accept_examples() {
        // lambda = 500 from the increase_lambda example
        let model = xi(100.0, 50.0, 10);
        let big = AcceptSignal {
            event: EventId(1),
            epsilon: 2000,
            sum_exec: 600,
        };
        let small = AcceptSignal {
            epsilon: 100,
            ..big.clone()
        };
        let rec = record(3000, 250, 5);
        let mut b = Budgets::new();
        b.set(TaskId(9), 3200);
        assert_eq!(b.apply_accept(&rec, &big, &model), 3500);
        let mut b = Budgets::new();
        b.set(TaskId(9), 3200);
        assert_eq!(b.apply_accept(&rec, &small, &model), 3200);
        let mut b = Budgets::new();
        assert_eq!(b.apply_accept(&rec, &big, &model), 3500);
    }

    #[test]
    fn sink_evaluate_examples() {
        let done = |id, u| SinkCompletion {
            event: EventId(id),
            upstream: u,
            sum_exec: 400,
        };
        let accept = sink_evaluate(&[done(1, 3000), done(2, 10_000), done(3, 9000)], 15_000, 2000).unwrap();
        assert_eq!(accept.event, EventId(2));
        assert_eq!(accept.epsilon, 5000);
        assert_eq!(sink_evaluate(&[done(1, 14_000)], 15_000, 2000), None);
        assert_eq!(sink_evaluate(&[done(7, 1000)], 15_000, 2000).unwrap().event, EventId(7));
        assert_eq!(sink_evaluate(&[], 15_000, 2000), None);
    }

    #[test]
    fn probe_every_hundredth_drop() {
        let mut c = ProbeCounter::default();
        for _ in 1..100 {
            assert!(!c.on_drop(100));
        }
        assert!(c.on_drop(100));
        assert!(!c.on_drop(0));
    }

    #[test]
    fn effective_budget_ignores_unset_routes() {
        let mut b = Budgets::new();
        assert_eq!(b.effective(), None);
        b.set(TaskId(1), 3000);
        b.set(TaskId(2), 4000);
        assert_eq!(b.effective(), Some(4000));
        assert_eq!(b.get(TaskId(3)), None);
    }

    #[test]
    fn history_evicts_oldest() {
        let mut h = History::new(2);
        h.insert(EventId(1), record(1, 0, 1));
        h.insert(EventId(2), record(2, 0, 1));
        h.insert(EventId(3), record(3, 0, 1));
        assert!(h.get(EventId(1)).is_none());
        assert!(h.get(EventId(3)).is_some());
        assert_eq!(h.evicted(), 1);
        assert!(h.take(EventId(2)).is_some());
        h.insert(EventId(4), record(4, 0, 1));
        assert_eq!(h.len(), 2);
    }
}
