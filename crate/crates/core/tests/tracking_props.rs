// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use spotlight_core::tracking::{
    spotlight_radius, unweighted_bfs, weighted_bfs, CameraPlacement, DetectionReport, HopBfs, RoadNetwork, Tracker,
    WeightedBfs,
};
use spotlight_core::{CameraId, VertexId};

type Edges = Vec<(u32, u32, f64)>;

/// Random connected graph: a tree plus extra edges, lengths 1..200 m.
fn graph() -> impl Strategy<Value = (u32, Edges)> {
    (2u32..40).prop_flat_map(|n| {
        let tree = prop::collection::vec((any::<prop::sample::Index>(), 1u32..200), (n - 1) as usize);
        let extra = prop::collection::vec((0..n, 0..n, 1u32..200), 0..(n as usize));
        (Just(n), tree, extra).prop_map(|(n, tree, extra)| {
            let mut edges: Edges = tree
                .into_iter()
                .enumerate()
                .map(|(k, (parent, len))| (parent.index(k + 1) as u32, k as u32 + 1, len as f64))
                .collect();
            edges.extend(extra.into_iter().filter(|(a, b, _)| a != b).map(|(a, b, l)| (a, b, l as f64)));
            (n, edges)
        })
    })
}

fn build(edges: &Edges) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    net.add_vertex(VertexId(0));
    for &(a, b, l) in edges {
        net.add_edge(VertexId(a), VertexId(b), l).unwrap();
    }
    net
}

fn one_per_vertex(n: u32) -> CameraPlacement {
    let mut p = CameraPlacement::new();
    for v in 0..n {
        p.place(CameraId(v), VertexId(v));
    }
    p
}

/// Bellman-Ford shortest distances; `hop` replaces every length.
fn reference_distances(n: u32, edges: &Edges, src: u32, hop: Option<f64>) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n as usize];
    d[src as usize] = 0.0;
    for _ in 0..n {
        for &(a, b, l) in edges {
            let l = hop.unwrap_or(l);
            let (a, b) = (a as usize, b as usize);
            if d[a] + l < d[b] {
                d[b] = d[a] + l;
            }
            if d[b] + l < d[a] {
                d[a] = d[b] + l;
            }
        }
    }
    d
}

fn within(d: &[f64], radius: f64) -> BTreeSet<CameraId> {
    (0..d.len())
        .filter(|&v| d[v] <= radius)
        .map(|v| CameraId(v as u32))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn spotlights_match_shortest_paths(
        (n, edges) in graph(), src in any::<prop::sample::Index>(), radius in 0.0f64..800.0, hop in 1.0f64..150.0,
    ) {
        let net = build(&edges);
        let p = one_per_vertex(n);
        let src = src.index(n as usize) as u32;
        let road = weighted_bfs(&net, VertexId(src), radius, &p).unwrap();
        prop_assert_eq!(road, within(&reference_distances(n, &edges, src, None), radius));
        let hops = unweighted_bfs(&net, VertexId(src), radius, hop, &p).unwrap();
        prop_assert_eq!(hops, within(&reference_distances(n, &edges, src, Some(hop)), radius));
    }

    #[test]
    fn lost_entity_spotlight_only_grows(
        (n, edges) in graph(),
        steps in prop::collection::vec((1i64..5_000, any::<prop::sample::Index>(), prop::bool::weighted(0.1)), 1..60),
        speed in 0.5f64..10.0,
    ) {
        let net = Arc::new(build(&edges));
        let p = Arc::new(one_per_vertex(n));
        let mut tr = Tracker::new(net, p, Box::new(WeightedBfs), VertexId(0), 0, speed).unwrap();
        prop_assert_eq!(tr.state().active.len(), 1);
        let mut t = 0;
        for (gap, cam, hit) in steps {
            t += gap;
            let camera = CameraId(cam.index(n as usize) as u32);
            let before = tr.state().active.clone();
            let cmds = tr.process_detections(&[DetectionReport { camera, frame_ts: t, matched: hit }]).unwrap();
            let after = &tr.state().active;
            if hit {
                prop_assert_eq!(after, &BTreeSet::from([camera]));
                prop_assert_eq!(tr.state().lst, t);
            } else {
                prop_assert!(after.is_superset(&before));
                prop_assert!(cmds.deactivate.is_empty());
            }
        }
    }

    #[test]
    fn hop_and_road_agree_on_uniform_lengths(
        (n, edges) in graph(),
        len in 1u32..200,
        steps in prop::collection::vec((1i64..4_000, any::<prop::sample::Index>(), prop::bool::weighted(0.1)), 1..40),
        speed in 0.5f64..10.0,
    ) {
        let len = len as f64;
        let uniform: Edges = edges.iter().map(|&(a, b, _)| (a, b, len)).collect();
        let net = Arc::new(build(&uniform));
        let p = Arc::new(one_per_vertex(n));
        let mut hop = Tracker::new(net.clone(), p.clone(), Box::new(HopBfs { fixed_len: len }), VertexId(0), 0, speed).unwrap();
        let mut road = Tracker::new(net, p, Box::new(WeightedBfs), VertexId(0), 0, speed).unwrap();
        let mut t = 0;
        for (gap, cam, hit) in steps {
            t += gap;
            let d = [DetectionReport { camera: CameraId(cam.index(n as usize) as u32), frame_ts: t, matched: hit }];
            hop.process_detections(&d).unwrap();
            road.process_detections(&d).unwrap();
            prop_assert_eq!(&hop.state().active, &road.state().active);
        }
    }
}

#[test]
fn radius_is_speed_times_elapsed() {
    assert_eq!(spotlight_radius(1000, 11_000, 4.0), 40.0);
    assert_eq!(spotlight_radius(5000, 1000, 4.0), 0.0);
}

#[test]
fn stale_positive_is_ignored() {
    let net = Arc::new(RoadNetwork::parse_edge_list("0 1 10\n1 2 10\n").unwrap());
    let p = Arc::new(one_per_vertex(3));
    let mut tr = Tracker::new(net, p, Box::new(WeightedBfs), VertexId(1), 5000, 1.0).unwrap();
    let old = DetectionReport {
        camera: CameraId(2),
        frame_ts: 4000,
        matched: true,
    };
    tr.process_detections(&[old]).unwrap();
    assert_eq!(tr.state().lsl, VertexId(1));
    // the stale report still advances the horizon: 0 m at t=5000, so only vertex 1
    assert_eq!(tr.state().active, BTreeSet::from([CameraId(1)]));
}
