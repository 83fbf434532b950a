// SPDX-License-Identifier: Apache-2.0

//! Synthetic road networks and camera placement.

use std::collections::HashSet;

use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotlight_core::tracking::{CameraPlacement, RoadNetwork, TrackingError};
use spotlight_core::{CameraId, VertexId};

/// Parameters of a random planar-ish road network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkSpec {
    pub vertices: usize,
    pub edges: usize,
    /// Edge lengths are rescaled to this mean, metres.
    pub mean_edge_m: f64,
    pub area_km2: f64,
    pub seed: u64,
}

/// A generated network with the vertex coordinates it was built from.
#[derive(Clone, Debug)]
pub struct SyntheticNetwork {
    pub net: RoadNetwork,
    pub coords: Vec<(f64, f64)>,
}

const NEIGHBOURS: usize = 10;

/// Random points in a disc joined by a Euclidean spanning tree over
/// nearest-neighbour candidates, then topped up with the shortest candidates
/// that cross no existing road until the edge count is reached.
pub fn generate_network(spec: &NetworkSpec) -> SyntheticNetwork {
    let n = spec.vertices.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = (spec.area_km2 * 1e6 / std::f64::consts::PI).sqrt();
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let r = radius * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let dist = |i: usize, j: usize| {
        let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
        (dx * dx + dy * dy).sqrt().max(1e-6)
    };

    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for i in 0..n {
        let mut near: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        near.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in near.iter().take(NEIGHBOURS) {
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                candidates.push((dist(i, j), key.0, key.1));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut uf = UnionFind::<usize>::new(n);
    let mut chosen = vec![false; candidates.len()];
    let mut edges = Vec::new();
    for (k, &(d, i, j)) in candidates.iter().enumerate() {
        if uf.union(i, j) {
            chosen[k] = true;
            edges.push((i, j, d));
        }
    }
    // Join any components the candidate set left apart.
    loop {
        let root = uf.find(0);
        let Some(out) = (0..n).find(|&v| uf.find(v) != root) else {
            break;
        };
        let best = (0..n)
            .filter(|&v| uf.find(v) == root)
            .map(|v| (dist(v, out), v))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("component is non-empty");
        uf.union(best.1, out);
        edges.push((best.1.min(out), best.1.max(out), best.0));
    }
    for (k, &(d, i, j)) in candidates.iter().enumerate() {
        if edges.len() >= spec.edges {
            break;
        }
        if !chosen[k] && !edges.iter().any(|&(a, b, _)| crosses(&coords, (i, j), (a, b))) {
            edges.push((i, j, d));
        }
    }
    // A dense request can exceed what stays planar.
    for (k, &(d, i, j)) in candidates.iter().enumerate() {
        if edges.len() >= spec.edges {
            break;
        }
        if !chosen[k] && !edges.iter().any(|&(a, b, _)| (a, b) == (i, j)) {
            edges.push((i, j, d));
        }
    }

    let mean = edges.iter().map(|e| e.2).sum::<f64>() / edges.len() as f64;
    let scale = if mean > 0.0 { spec.mean_edge_m / mean } else { 1.0 };
    let mut net = RoadNetwork::new();
    for v in 0..n {
        net.add_vertex(VertexId(v as u32));
    }
    for (i, j, d) in edges {
        net.add_edge(VertexId(i as u32), VertexId(j as u32), d * scale)
            .expect("scaled lengths are positive");
    }
    SyntheticNetwork { net, coords }
}

fn crosses(c: &[(f64, f64)], (a, b): (usize, usize), (p, q): (usize, usize)) -> bool {
    if a == p || a == q || b == p || b == q {
        return false;
    }
    let orient = |o: usize, x: usize, y: usize| {
        let v = (c[x].0 - c[o].0) * (c[y].1 - c[o].1) - (c[x].1 - c[o].1) * (c[y].0 - c[o].0);
        v.partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal) as i8
    };
    orient(a, b, p) * orient(a, b, q) < 0 && orient(p, q, a) * orient(p, q, b) < 0
}

/// Vertex closest to the centroid of `coords`.
pub fn central_vertex(coords: &[(f64, f64)]) -> VertexId {
    let n = coords.len().max(1) as f64;
    let cx = coords.iter().map(|c| c.0).sum::<f64>() / n;
    let cy = coords.iter().map(|c| c.1).sum::<f64>() / n;
    let best = coords
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 .0 - cx).powi(2) + (a.1 .1 - cy).powi(2);
            let db = (b.1 .0 - cx).powi(2) + (b.1 .1 - cy).powi(2);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    VertexId(best as u32)
}

/// One camera on each of the `count` vertices nearest `start` by road
/// distance; camera ids follow that order.
pub fn place_cameras(net: &RoadNetwork, start: VertexId, count: usize) -> Result<CameraPlacement, TrackingError> {
    let dist = net.distances(start, f64::INFINITY, None)?;
    let mut order: Vec<(VertexId, f64)> = dist.into_iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut p = CameraPlacement::new();
    for (i, (v, _)) in order.into_iter().take(count).enumerate() {
        p.place(CameraId(i as u32), v);
    }
    Ok(p)
}
