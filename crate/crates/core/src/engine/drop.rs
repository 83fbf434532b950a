// SPDX-License-Identifier: Apache-2.0

//! The three drop points. Each compares a projected departure against a
//! budget; exempt events and unset budgets always pass.

use serde::{Deserialize, Serialize};

use crate::budget::Budgets;
use crate::engine::batch::{Batch, Queued};
use crate::engine::EngineError;
use crate::model::{EventHeader, ExecTimeModel, Millis, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropPoint {
    BeforeQueue,
    BeforeExec,
    BeforeTransmit,
}

impl DropPoint {
    pub fn label(self) -> &'static str {
        match self {
            DropPoint::BeforeQueue => "queue",
            DropPoint::BeforeExec => "exec",
            DropPoint::BeforeTransmit => "transmit",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    /// Projected departure exceeds the budget by `excess` (> 0).
    Drop { excess: Millis },
}

impl Verdict {
    fn check(header: &EventHeader, projected: Millis, budget: Option<Millis>) -> Verdict {
        match budget {
            Some(b) if !header.is_exempt() && projected > b => Verdict::Drop { excess: projected - b },
            _ => Verdict::Keep,
        }
    }

    pub fn is_drop(self) -> bool {
        matches!(self, Verdict::Drop { .. })
    }
}

/// On arrival: `upstream + xi(1) > budget`.
pub fn drop_before_queuing(
    header: &EventHeader,
    upstream: Millis,
    xi: &ExecTimeModel,
    budget: Option<Millis>,
) -> Verdict {
    Verdict::check(header, upstream + xi.at(1), budget)
}

/// At execution start: `upstream + queuing + xi(m) > budget`, with `m` the
/// size the batch was formed at.
pub fn drop_before_exec<P>(
    queued: &Queued<P>,
    start: Millis,
    formed: usize,
    xi: &ExecTimeModel,
    budget: Option<Millis>,
) -> Verdict {
    let projected = queued.upstream + (start - queued.arrival) + xi.at(formed);
    Verdict::check(&queued.event.header, projected, budget)
}

/// Splits a batch at execution start into retained members and dropped
/// members with their excess.
pub fn split_before_exec<P>(
    batch: Batch<P>,
    start: Millis,
    xi: &ExecTimeModel,
    budget: Option<Millis>,
) -> (Batch<P>, Vec<(Queued<P>, Millis)>) {
    let formed = batch.len();
    let mut kept = Batch::new();
    let mut dropped = Vec::new();
    for q in batch.into_members() {
        match drop_before_exec(&q, start, formed, xi, budget) {
            Verdict::Keep => kept.push(q),
            Verdict::Drop { excess } => dropped.push((q, excess)),
        }
    }
    (kept, dropped)
}

/// After execution: `upstream + processing > budget(dest)`.
pub fn drop_before_transmit(
    header: &EventHeader,
    upstream: Millis,
    processing: Millis,
    budgets: &Budgets,
    downstream: &[TaskId],
    dest: TaskId,
) -> Result<Verdict, EngineError> {
    if !downstream.contains(&dest) {
        return Err(EngineError::UnknownDestination(dest));
    }
    Ok(Verdict::check(header, upstream + processing, budgets.get(dest)))
}
