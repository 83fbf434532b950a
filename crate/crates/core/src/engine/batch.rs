// SPDX-License-Identifier: Apache-2.0

//! Batch formation: deadline-driven dynamic batching plus the fixed-size and
//! lookup-table baselines.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::EngineError;
use crate::model::{Event, ExecTimeModel, Millis};

/// An event waiting at a task, with the timing facts the drop points need.
#[derive(Clone, Debug, PartialEq)]
pub struct Queued<P> {
    pub event: Event<P>,
    /// Arrival on the task's local clock.
    pub arrival: Millis,
    /// Upstream time on arrival.
    pub upstream: Millis,
    /// Event deadline `budget + source_arrival`; `None` while the budget is unset.
    pub deadline: Option<Millis>,
    /// A reject has already been sent for this event by this task.
    pub rejected: bool,
}

impl<P> Queued<P> {
    pub fn new(event: Event<P>, arrival: Millis, upstream: Millis, budget: Option<Millis>) -> Self {
        let deadline = budget.map(|b| b + event.header.source_arrival);
        Queued {
            event,
            arrival,
            upstream,
            deadline,
            rejected: false,
        }
    }
}

fn earliest(a: Option<Millis>, b: Option<Millis>) -> Option<Millis> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Events grouped for one execution, with the earliest member deadline.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<P> {
    members: Vec<Queued<P>>,
    deadline: Option<Millis>,
}

impl<P> Default for Batch<P> {
    fn default() -> Self {
        Batch {
            members: Vec::new(),
            deadline: None,
        }
    }
}

impl<P> Batch<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(head: Queued<P>) -> Self {
        let mut b = Batch::new();
        b.push(head);
        b
    }

    pub fn from_members(members: Vec<Queued<P>>) -> Self {
        let mut b = Batch::new();
        for m in members {
            b.push(m);
        }
        b
    }

    pub fn push(&mut self, q: Queued<P>) {
        self.deadline = if self.members.is_empty() {
            q.deadline
        } else {
            earliest(self.deadline, q.deadline)
        };
        self.members.push(q);
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Batch deadline: the earliest member deadline.
    pub fn deadline(&self) -> Option<Millis> {
        self.deadline
    }

    pub fn members(&self) -> &[Queued<P>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Queued<P>> {
        self.members
    }

    pub fn take(&mut self) -> Batch<P> {
        std::mem::take(self)
    }

    /// Tries to add the queue head to this batch at local time `now`.
    ///
    /// The head joins if `now + xi(m + 1)` meets both the batch deadline and
    /// its own deadline and the batch is below `m_max`. Otherwise this batch
    /// is closed and returned for execution, and the head starts a new batch
    /// in its place. An empty batch always accepts the head.
    pub fn try_extend(&mut self, head: Queued<P>, now: Millis, xi: &ExecTimeModel) -> Option<Batch<P>> {
        if self.members.is_empty() {
            self.push(head);
            return None;
        }
        let next = self.members.len() + 1;
        let fits = next <= xi.m_max()
            && match earliest(self.deadline, head.deadline) {
                Some(limit) => now + xi.at(next) <= limit,
                None => true,
            };
        if fits {
            self.push(head);
            None
        } else {
            let closed = std::mem::replace(self, Batch::single(head));
            Some(closed)
        }
    }

    /// Local time at which the batch must be submitted: `deadline - xi(m)`.
    pub fn flush_at(&self, xi: &ExecTimeModel) -> Option<Millis> {
        if self.members.is_empty() {
            return None;
        }
        self.deadline.map(|d| d - xi.at(self.members.len()))
    }

    /// True when the batch must be submitted at `now` even if more events
    /// could still join.
    pub fn deadline_flush(&self, now: Millis, xi: &ExecTimeModel) -> bool {
        self.flush_at(xi).is_some_and(|t| now >= t)
    }
}

/// How a task groups queued events into batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BatchingMode {
    /// One event per batch.
    Streaming,
    /// Fixed-size cut with no timeout.
    Static(usize),
    /// Deadline-driven batches bounded by the task's `m_max`.
    Dynamic,
    /// Fixed-size cut whose size follows the measured input rate.
    Nob(NobTable),
    /// Everything waiting when the executor frees up, up to `m_max`.
    Drain,
}

impl BatchingMode {
    pub fn label(&self) -> String {
        match self {
            BatchingMode::Streaming => "streaming".into(),
            BatchingMode::Static(b) => format!("static:{b}"),
            BatchingMode::Dynamic => "dynamic".into(),
            BatchingMode::Nob(_) => "nob".into(),
            BatchingMode::Drain => "drain".into(),
        }
    }
}

pub fn select_batch_size_static(size: usize) -> usize {
    size.max(1)
}

/// Offline rate-to-batch-size lookup used by the near-optimal baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NobTable {
    entries: Vec<(f64, usize)>,
}

impl NobTable {
    pub fn new(mut entries: Vec<(f64, usize)>) -> Result<Self, EngineError> {
        if entries.is_empty() {
            return Err(EngineError::EmptyTable);
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(NobTable { entries })
    }

    pub fn entries(&self) -> &[(f64, usize)] {
        &self.entries
    }

    /// Entry for the nearest tabulated rate not below `rate`; the last entry
    /// when `rate` exceeds the table.
    pub fn lookup(&self, rate: f64) -> usize {
        self.entries
            .iter()
            .find(|(r, _)| *r >= rate)
            .or(self.entries.last())
            .map(|e| e.1.max(1))
            .unwrap_or(1)
    }
}

pub fn select_batch_size_nob(rate: f64, table: &NobTable) -> usize {
    table.lookup(rate)
}

/// Sliding-window arrival-rate estimate in events per second.
#[derive(Clone, Debug)]
pub struct RateMeter {
    window: Millis,
    arrivals: VecDeque<Millis>,
}

impl RateMeter {
    pub fn new(window: Millis) -> Self {
        RateMeter {
            window: window.max(1),
            arrivals: VecDeque::new(),
        }
    }

    pub fn record(&mut self, now: Millis) {
        self.arrivals.push_back(now);
        self.expire(now);
    }

    pub fn rate(&mut self, now: Millis) -> f64 {
        self.expire(now);
        self.arrivals.len() as f64 * 1000.0 / self.window as f64
    }

    fn expire(&mut self, now: Millis) {
        while self.arrivals.front().is_some_and(|&t| t <= now - self.window) {
            self.arrivals.pop_front();
        }
    }
}
