// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use spotlight_core::budget::{
    increase_lambda, reduce_lambda, sink_evaluate, AcceptSignal, Budgets, DepartureRecord, History, RejectSignal,
    SinkCompletion,
};
use spotlight_core::{EventId, ExecTimeModel, Millis, TaskId};

fn affine(c0: u32, c1: u32, m_max: usize) -> ExecTimeModel {
    ExecTimeModel::affine(c0 as f64, c1 as f64, m_max).unwrap()
}

// Reference formulas, written against plain integers.
fn reduce_oracle(eps: i64, q: i64, sum_q: i64, c1: i64, m: i64) -> i64 {
    if eps <= 0 || q <= 0 || sum_q <= 0 {
        return 0;
    }
    (eps * q / sum_q).min(c1 * (m - 1))
}

fn increase_oracle(eps: i64, e: i64, sum_e: i64, q: i64, m: i64, m_max: i64, c1: i64) -> i64 {
    if eps <= 0 || sum_e <= 0 {
        return 0;
    }
    let fill = (m_max - m) * q.max(0) / m;
    (eps * e / sum_e).min(fill + c1 * (m_max - m)).max(0)
}

#[derive(Clone, Debug)]
struct Case {
    dest: u32,
    departure: Millis,
    queue: Millis,
    batch: usize,
    epsilon: Millis,
    extra: Millis,
}

fn case(m_max: usize) -> impl Strategy<Value = Case> {
    (0u32..3, 0i64..30_000, 0i64..5_000, 1..=m_max, 1i64..15_000, 0i64..8_000).prop_map(
        |(dest, departure, queue, batch, epsilon, extra)| Case {
            dest,
            departure,
            queue,
            batch,
            epsilon,
            extra,
        },
    )
}

fn record(c: &Case, xi: &ExecTimeModel) -> DepartureRecord {
    DepartureRecord {
        departure: c.departure,
        queue: c.queue,
        batch: c.batch,
        dest: TaskId(c.dest),
        exec: xi.at(c.batch),
    }
}

fn reject(c: &Case, k: u64) -> RejectSignal {
    RejectSignal {
        event: EventId(k),
        epsilon: c.epsilon,
        sum_queue: c.queue + c.extra,
    }
}

fn accept(c: &Case, xi: &ExecTimeModel, k: u64) -> AcceptSignal {
    AcceptSignal {
        event: EventId(k),
        epsilon: c.epsilon,
        sum_exec: xi.at(c.batch) + c.extra,
    }
}

/// Applies the cases in order; dests in `rejecting` get rejects, others accepts.
fn replay(cases: &[Case], rejecting: &[bool; 3], xi: &ExecTimeModel, start: &Budgets) -> Budgets {
    let mut b = start.clone();
    for (k, c) in cases.iter().enumerate() {
        let rec = record(c, xi);
        if rejecting[c.dest as usize] {
            b.apply_reject(&rec, &reject(c, k as u64), xi);
        } else {
            b.apply_accept(&rec, &accept(c, xi, k as u64), xi);
        }
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn reduction_matches_reference(
        c0 in 1u32..300, c1 in 1u32..150, m_max in 1usize..30,
        eps in -100i64..20_000, q in -10i64..5_000, extra in 0i64..5_000, m in 1usize..30,
    ) {
        let xi = affine(c0, c1, m_max);
        let m = m.min(m_max);
        let got = reduce_lambda(eps, q, q + extra, &xi, m);
        prop_assert_eq!(got, reduce_oracle(eps, q, q + extra, c1 as i64, m as i64));
        prop_assert!(got <= xi.at(m) - xi.at(1));
        prop_assert!(got >= 0);
    }

    #[test]
    fn increase_matches_reference(
        c0 in 1u32..300, c1 in 1u32..150, m_max in 1usize..30,
        eps in -100i64..20_000, extra in 0i64..5_000, q in 0i64..5_000, m in 1usize..30,
    ) {
        let xi = affine(c0, c1, m_max);
        let m = m.min(m_max);
        let e = xi.at(m);
        let got = increase_lambda(eps, e, e + extra, q, m, &xi);
        prop_assert_eq!(got, increase_oracle(eps, e, e + extra, q, m as i64, m_max as i64, c1 as i64));
        prop_assert_eq!(increase_lambda(eps, e, e + extra, q, m_max, &xi), 0);
    }

    #[test]
    fn rejects_never_raise_and_accepts_never_lower(
        cases in prop::collection::vec(case(25), 1..30),
        kinds in prop::collection::vec(any::<bool>(), 30),
        init in prop::option::of(0i64..30_000),
    ) {
        let xi = affine(100, 40, 25);
        let mut b = Budgets::new();
        if let Some(v) = init {
            for d in 0..3 {
                b.set(TaskId(d), v);
            }
        }
        for (k, (c, is_reject)) in cases.iter().zip(kinds).enumerate() {
            let rec = record(c, &xi);
            let before = b.get(rec.dest);
            if is_reject {
                let after = b.apply_reject(&rec, &reject(c, k as u64), &xi);
                prop_assert!(before.is_none_or(|v| after <= v));
                prop_assert!(after <= rec.departure);
            } else {
                let after = b.apply_accept(&rec, &accept(c, &xi, k as u64), &xi);
                prop_assert!(before.is_none_or(|v| after >= v));
                prop_assert!(after >= rec.departure);
            }
        }
    }

    #[test]
    fn homogeneous_multisets_commute(
        cases in prop::collection::vec(case(20), 1..25),
        rejecting in any::<[bool; 3]>(),
        init in prop::collection::vec(prop::option::of(0i64..30_000), 3),
        order in any::<prop::sample::Index>(),
    ) {
        let xi = affine(80, 30, 20);
        let mut start = Budgets::new();
        for (d, v) in init.iter().enumerate() {
            if let Some(v) = v {
                start.set(TaskId(d as u32), *v);
            }
        }
        let forward = replay(&cases, &rejecting, &xi, &start);
        let mut rotated = cases.clone();
        rotated.rotate_left(order.index(cases.len()));
        rotated.reverse();
        prop_assert_eq!(forward, replay(&rotated, &rejecting, &xi, &start));
    }

    #[test]
    fn sink_accepts_on_slowest_event(
        ups in prop::collection::vec((0i64..20_000, 0i64..5_000), 1..20),
        gamma in 1_000i64..20_000,
        eps_max in 0i64..3_000,
    ) {
        let batch: Vec<SinkCompletion> = ups
            .iter()
            .enumerate()
            .map(|(k, (u, s))| SinkCompletion { event: EventId(k as u64), upstream: *u, sum_exec: *s })
            .collect();
        let slowest = ups.iter().map(|(u, _)| *u).max().unwrap();
        match sink_evaluate(&batch, gamma, eps_max) {
            Some(a) => {
                prop_assert!(gamma - slowest > eps_max);
                prop_assert_eq!(a.epsilon, gamma - slowest);
                prop_assert_eq!(batch[a.event.0 as usize].upstream, slowest);
            }
            None => prop_assert!(gamma - slowest <= eps_max),
        }
    }

    #[test]
    fn history_is_bounded_and_keeps_newest(cap in 1usize..50, n in 0u64..200) {
        let mut h = History::new(cap);
        let rec = DepartureRecord { departure: 0, queue: 0, batch: 1, dest: TaskId(0), exec: 1 };
        for k in 0..n {
            h.insert(EventId(k), rec);
        }
        prop_assert_eq!(h.len(), (n as usize).min(cap));
        prop_assert_eq!(h.evicted(), n.saturating_sub(cap as u64));
        if n > 0 {
            prop_assert!(h.get(EventId(n - 1)).is_some());
        }
    }
}

#[test]
fn mixed_reject_and_accept_depend_on_order() {
    let xi = affine(100, 100, 25);
    let dest = TaskId(0);
    let rec = |departure| DepartureRecord {
        departure,
        queue: 0,
        batch: 1,
        dest,
        exec: 100,
    };
    let r = RejectSignal {
        event: EventId(1),
        epsilon: 10,
        sum_queue: 0,
    };
    let a = AcceptSignal {
        event: EventId(2),
        epsilon: 0,
        sum_exec: 100,
    };
    let mut first = Budgets::new();
    first.set(dest, 6000);
    let mut second = first.clone();
    first.apply_reject(&rec(5000), &r, &xi);
    first.apply_accept(&rec(8000), &a, &xi);
    second.apply_accept(&rec(8000), &a, &xi);
    second.apply_reject(&rec(5000), &r, &xi);
    assert_eq!(first.get(dest), Some(8000));
    assert_eq!(second.get(dest), Some(5000));
}

#[test]
fn unset_budget_takes_first_proposal() {
    let xi = affine(100, 100, 25);
    let rec = DepartureRecord {
        departure: 4000,
        queue: 600,
        batch: 5,
        dest: TaskId(3),
        exec: 600,
    };
    let mut b = Budgets::new();
    // share 900 * 600 / 1200 = 450, cap xi(5) - xi(1) = 400
    let got = b.apply_reject(
        &rec,
        &RejectSignal {
            event: EventId(0),
            epsilon: 900,
            sum_queue: 1200,
        },
        &xi,
    );
    assert_eq!(got, 3600);
    assert_eq!(b.effective(), Some(3600));
}
