// SPDX-License-Identifier: Apache-2.0

//! Entity random walk over the road network and the camera feeds it induces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotlight_core::analytics::FrameRecord;
use spotlight_core::tracking::{RoadNetwork, TrackingError};
use spotlight_core::{CameraId, Millis, VertexId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("start vertex {0} has no roads")]
    Isolated(VertexId),
    #[error(transparent)]
    Network(#[from] TrackingError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    /// Virtual time the entity leaves `from`, ms.
    pub start: f64,
    pub from: VertexId,
    pub to: VertexId,
    pub length: f64,
}

/// Where the entity is: `offset` metres from `from` towards `to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub from: VertexId,
    pub to: VertexId,
    pub offset: f64,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct WalkTrace {
    speed: f64,
    segments: Vec<Segment>,
}

/// Seeded walk: at every vertex the next road is drawn uniformly from the
/// incident roads, and the entity moves at constant `speed` m/s.
pub fn generate_walk(
    net: &RoadNetwork,
    start: VertexId,
    speed: f64,
    seed: u64,
    duration: Millis,
) -> Result<WalkTrace, WalkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut at = start;
    let mut t = 0.0;
    loop {
        let roads: Vec<(VertexId, f64)> = net.neighbors(at)?.collect();
        if roads.is_empty() {
            return Err(WalkError::Isolated(at));
        }
        let (to, length) = roads[rng.gen_range(0..roads.len())];
        segments.push(Segment {
            start: t,
            from: at,
            to,
            length,
        });
        t += length / speed * 1000.0;
        at = to;
        if t > duration as f64 {
            break;
        }
    }
    Ok(WalkTrace { speed, segments })
}

impl WalkTrace {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn position(&self, t: Millis) -> Position {
        let t = t as f64;
        let i = self.segments.partition_point(|s| s.start <= t).saturating_sub(1);
        let s = &self.segments[i];
        let offset = ((t - s.start) * self.speed / 1000.0).clamp(0.0, s.length);
        Position {
            from: s.from,
            to: s.to,
            offset,
            length: s.length,
        }
    }

    /// Vertices within `fov_m` metres of the entity along its road.
    pub fn near_vertices(&self, t: Millis, fov_m: f64) -> Vec<VertexId> {
        let p = self.position(t);
        let mut out = Vec::with_capacity(2);
        if p.offset <= fov_m {
            out.push(p.from);
        }
        if p.length - p.offset <= fov_m && !out.contains(&p.to) {
            out.push(p.to);
        }
        out
    }
}

/// Frame capture times `k * 1000 / fps` before `duration`.
pub fn frame_times(fps: f64, duration: Millis) -> impl Iterator<Item = Millis> {
    (0u64..)
        .map(move |k| (k as f64 * 1000.0 / fps).round() as Millis)
        .take_while(move |&t| t < duration)
}

/// Frames of one camera, labelled with ground truth from the walk.
pub fn generate_feed(
    camera: CameraId,
    vertex: VertexId,
    walk: &WalkTrace,
    fps: f64,
    fov_m: f64,
    frame_bytes: u64,
    duration: Millis,
) -> Vec<FrameRecord> {
    frame_times(fps, duration)
        .map(|t| FrameRecord {
            camera,
            frame_ts: t,
            contains_entity: walk.near_vertices(t, fov_m).contains(&vertex),
            payload_size: frame_bytes.max(1),
        })
        .collect()
}
