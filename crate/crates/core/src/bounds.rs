// SPDX-License-Identifier: Apache-2.0

//! Fixed-condition bounds on batch size, sustainable rate and the latency
//! cost of batching. Rates are events per second, durations milliseconds.

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, NobTable};
use crate::model::{ExecTimeModel, Millis};

/// Queuing plus execution fits in the headroom `budget - upstream`.
pub fn fits_headroom(queuing: Millis, exec: Millis, headroom: Millis) -> bool {
    queuing + exec <= headroom
}

/// Time to collect `m` events at `rate`, counted from the first arrival.
fn fill_time(m: usize, rate: f64) -> f64 {
    (m as f64 - 1.0) * 1000.0 / rate
}

fn within_headroom(m: usize, rate: f64, xi: &ExecTimeModel, headroom: Millis) -> bool {
    let exec = xi.at(m) as f64;
    fill_time(m, rate) + exec <= headroom as f64 && 2.0 * exec <= headroom as f64
}

fn keeps_up(m: usize, rate: f64, xi: &ExecTimeModel) -> bool {
    rate * xi.at(m) as f64 <= 1000.0 * m as f64
}

/// Largest batch size whose fill and execution time fit the headroom, with
/// execution taking at most half of it.
pub fn max_stable_batch(rate: f64, xi: &ExecTimeModel, headroom: Millis) -> Option<usize> {
    if rate <= 0.0 {
        return None;
    }
    (1..=xi.m_max()).rev().find(|&m| within_headroom(m, rate, xi, headroom))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SustainableRate {
    /// Events per second; infinite when nothing bounds it.
    pub rate: f64,
    /// Batch size achieving the rate; 0 when no event can meet the headroom.
    pub batch: usize,
}

impl SustainableRate {
    /// Events per second that must be dropped at input rate `rate`.
    pub fn drop_rate(&self, rate: f64) -> f64 {
        (rate - self.rate).max(0.0)
    }
}

/// Highest input rate a task can absorb within the headroom, requiring the
/// batch service rate `m / xi(m)` to keep up with the input.
pub fn max_sustainable_rate(xi: &ExecTimeModel, headroom: Millis) -> SustainableRate {
    let x1 = xi.at(1);
    if headroom < 2 * x1 {
        return if x1 <= headroom {
            SustainableRate {
                rate: 1000.0 / x1 as f64,
                batch: 1,
            }
        } else {
            SustainableRate { rate: 0.0, batch: 0 }
        };
    }
    let mut best = SustainableRate { rate: 0.0, batch: 0 };
    for m in 1..=xi.m_max() {
        let exec = xi.at(m);
        if 2 * exec > headroom {
            break;
        }
        let rate = 1000.0 * m as f64 / exec as f64;
        if within_headroom(m, rate, xi, headroom) && rate >= best.rate {
            best = SustainableRate { rate, batch: m };
        }
    }
    best
}

/// The same maximisation using only the two headroom constraints. The fill
/// term shrinks as the rate grows, so the rate is unbounded whenever any
/// batch size satisfies the execution constraint.
pub fn max_sustainable_rate_headroom_only(xi: &ExecTimeModel, headroom: Millis) -> SustainableRate {
    match (1..=xi.m_max()).rev().find(|&m| 2 * xi.at(m) <= headroom) {
        Some(m) => SustainableRate {
            rate: f64::INFINITY,
            batch: m,
        },
        None => SustainableRate { rate: 0.0, batch: 0 },
    }
}

/// Mean extra latency per event from batching `m` events instead of
/// streaming, in milliseconds.
pub fn avg_latency_increase(rate: f64, xi: &ExecTimeModel, m: usize) -> f64 {
    fill_time(m, rate) / 2.0 + (xi.at(m) - xi.at(1)) as f64
}

/// Smallest batch size that keeps up with `rate` within the headroom, or
/// `m_max` when none does.
pub fn smallest_sufficient_batch(rate: f64, xi: &ExecTimeModel, headroom: Millis) -> usize {
    (1..=xi.m_max())
        .find(|&m| keeps_up(m, rate, xi) && within_headroom(m, rate, xi, headroom))
        .unwrap_or(xi.m_max())
}

/// Rates 1, 10, 20, ..., 1000.
pub fn default_rate_grid() -> Vec<f64> {
    std::iter::once(1.0).chain((1..=100).map(|k| 10.0 * k as f64)).collect()
}

pub fn nob_table(xi: &ExecTimeModel, headroom: Millis, rates: &[f64]) -> Result<NobTable, EngineError> {
    NobTable::new(
        rates
            .iter()
            .map(|&r| (r, smallest_sufficient_batch(r, xi, headroom)))
            .collect(),
    )
}
