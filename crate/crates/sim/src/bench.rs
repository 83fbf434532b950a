// SPDX-License-Identifier: Apache-2.0

//! Single-stage harness: one task with a fixed budget fed at a constant
//! rate, used to compare measured batching and throughput with the bounds.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use spotlight_core::engine::{Action, BatchingMode, EngineError, ExecOutcome, Output, Task, TaskConfig, UserLogic};
use spotlight_core::{Event, EventHeader, EventId, ExecTimeModel, Millis, TaskId};

#[derive(Clone, Debug, PartialEq)]
pub struct StageBench {
    /// Events per second.
    pub rate: f64,
    pub xi: ExecTimeModel,
    /// Fixed budget toward the sink, ms.
    pub budget: Millis,
    pub duration: Millis,
    /// Batches and deliveries before this time are not measured.
    pub warmup: Millis,
    pub drops_enabled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    /// Executed batch size histogram over the measured window.
    pub batch_sizes: BTreeMap<usize, u64>,
    /// Size batches had when they were closed, before drops at execution start.
    pub formed_sizes: BTreeMap<usize, u64>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Delivered with latency above the budget.
    pub late: u64,
    /// Deliveries per second over the measured window.
    pub throughput: f64,
    /// Drops per second over the measured window.
    pub drop_rate: f64,
    pub max_latency: Millis,
}

impl BenchReport {
    /// Most frequent batch size; the larger size wins ties.
    pub fn modal_batch(&self) -> Option<usize> {
        self.batch_sizes
            .iter()
            .max_by_key(|(m, n)| (**n, **m))
            .map(|(m, _)| *m)
    }
}

struct Passthrough {
    xi: ExecTimeModel,
}

impl UserLogic<()> for Passthrough {
    fn execute(&mut self, _task: TaskId, inputs: &[Event<()>], _now: Millis) -> ExecOutcome<()> {
        ExecOutcome {
            outputs: inputs.iter().map(|e| Some(Output::new(e.key.clone(), ()))).collect(),
            cost: self.xi.at(inputs.len()),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Arrive(u64),
    Done,
    Flush(u64),
    Kick,
}

const SINK: TaskId = TaskId(1);

pub fn run_stage(b: &StageBench) -> Result<BenchReport, EngineError> {
    let mut cfg = TaskConfig::new(TaskId(0), b.xi.clone(), BatchingMode::Dynamic);
    cfg.downstream = vec![SINK];
    cfg.drops_enabled = b.drops_enabled;
    let mut task = Task::new(cfg, Passthrough { xi: b.xi.clone() })?;
    task.budgets_mut().set(SINK, b.budget);

    let mut heap: BinaryHeap<Reverse<(Millis, u8, u64, Step)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<_>, t: Millis, class: u8, s: Step| {
        seq += 1;
        heap.push(Reverse((t, class, seq, s)));
    };
    let mut k = 0u64;
    let arrival = |k: u64| (k as f64 * 1000.0 / b.rate).round() as Millis;
    push(&mut heap, 0, 1, Step::Arrive(0));

    let mut r = BenchReport::default();
    while let Some(Reverse((now, _, _, step))) = heap.pop() {
        if now >= b.duration {
            break;
        }
        let acts = match step {
            Step::Arrive(id) => {
                r.generated += 1;
                k += 1;
                push(&mut heap, arrival(k), 1, Step::Arrive(k));
                task.on_event(now, Event::new(EventHeader::new(EventId(id), now), id.to_string(), ()))
            }
            Step::Done => task.on_exec_done(now),
            Step::Flush(token) => task.on_flush(now, token),
            Step::Kick => task.on_kick(now),
        };
        let measured = now >= b.warmup;
        for a in acts {
            match a {
                Action::Started {
                    events, formed, until, ..
                } => {
                    if measured {
                        *r.batch_sizes.entry(events.len()).or_default() += 1;
                        *r.formed_sizes.entry(formed).or_default() += 1;
                    }
                    push(&mut heap, until, 1, Step::Done);
                }
                Action::ScheduleFlush { at, token } => push(&mut heap, at, 1, Step::Flush(token)),
                Action::ScheduleKick => push(&mut heap, now, 2, Step::Kick),
                Action::Forward { event, .. } if measured && !event.header.probe => {
                    let latency = now - event.header.source_arrival;
                    r.delivered += 1;
                    r.late += u64::from(latency > b.budget);
                    r.max_latency = r.max_latency.max(latency);
                }
                Action::Dropped { .. } if measured => r.dropped += 1,
                _ => {}
            }
        }
    }
    let window = (b.duration - b.warmup).max(1) as f64 / 1000.0;
    r.throughput = r.delivered as f64 / window;
    r.drop_rate = r.dropped as f64 / window;
    Ok(r)
}
