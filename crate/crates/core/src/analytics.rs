// SPDX-License-Identifier: Apache-2.0

//! Ground-truth stand-ins for the per-task logic of the tracking pipeline:
//! filter control, video analytics, contention resolution, fusion and the
//! user-visible sink.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ExecOutcome, Output, UserLogic};
use crate::model::{CameraId, Event, EventId, ExecTimeModel, Millis, TaskId};

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("{0} rate {1} outside [0, 1]")]
    Rate(&'static str, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub camera: CameraId,
    pub frame_ts: Millis,
    /// Ground truth: the entity is in this camera's view.
    pub contains_entity: bool,
    pub payload_size: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub camera: CameraId,
    pub frame_ts: Millis,
    pub matched: bool,
    pub confidence: f64,
    pub contains_entity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Frame(FrameRecord),
    /// Video-analytics output: the frame plus its candidate region.
    Candidate(FrameRecord),
    Detection(Detection),
}

impl Payload {
    pub fn camera(&self) -> CameraId {
        match self {
            Payload::Frame(f) | Payload::Candidate(f) => f.camera,
            Payload::Detection(d) => d.camera,
        }
    }

    pub fn frame_ts(&self) -> Millis {
        match self {
            Payload::Frame(f) | Payload::Candidate(f) => f.frame_ts,
            Payload::Detection(d) => d.frame_ts,
        }
    }

    pub fn contains_entity(&self) -> bool {
        match self {
            Payload::Frame(f) | Payload::Candidate(f) => f.contains_entity,
            Payload::Detection(d) => d.contains_entity,
        }
    }
}

pub fn camera_key(camera: CameraId) -> String {
    camera.0.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub cost: ExecTimeModel,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl DetectorProfile {
    pub fn new(cost: ExecTimeModel, tp: f64, fp: f64, seed: u64) -> Result<Self, ProfileError> {
        if !(0.0..=1.0).contains(&tp) {
            return Err(ProfileError::Rate("true positive", tp));
        }
        if !(0.0..=1.0).contains(&fp) {
            return Err(ProfileError::Rate("false positive", fp));
        }
        Ok(DetectorProfile {
            cost,
            true_positive_rate: tp,
            false_positive_rate: fp,
            seed,
        })
    }

    /// Perfect detector.
    pub fn oracle(cost: ExecTimeModel, seed: u64) -> Self {
        DetectorProfile {
            cost,
            true_positive_rate: 1.0,
            false_positive_rate: 0.0,
            seed,
        }
    }

    /// Batch cost; nothing is charged for an empty batch.
    pub fn charge(&self, batch: usize) -> Millis {
        if batch == 0 {
            0
        } else {
            self.cost.at(batch)
        }
    }

    fn rng(&self, event: EventId, task: TaskId) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&event.0.to_le_bytes());
        seed[16..20].copy_from_slice(&task.0.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Detector decision for one frame, reproducible from (seed, event, task).
    pub fn decide(&self, event: EventId, task: TaskId, truth: bool) -> (bool, f64) {
        let mut rng = self.rng(event, task);
        let draw: f64 = rng.gen();
        let matched = if truth {
            draw < self.true_positive_rate
        } else {
            draw < self.false_positive_rate
        };
        let confidence = if matched { 0.5 + draw / 2.0 } else { draw / 2.0 };
        (matched, confidence.clamp(0.0, 1.0))
    }
}

/// Forward iff the camera is active.
pub fn fc_logic(_frame: &FrameRecord, active: bool) -> bool {
    active
}

/// Filter control for one camera feed.
#[derive(Clone, Debug)]
pub struct FcLogic {
    pub active: bool,
    pub cost: ExecTimeModel,
}

impl FcLogic {
    pub fn new(cost: ExecTimeModel) -> Self {
        FcLogic { active: true, cost }
    }
}

impl UserLogic<Payload> for FcLogic {
    fn admit(&mut self, event: &Event<Payload>, _now: Millis) -> bool {
        match &event.payload {
            Payload::Frame(f) => fc_logic(f, self.active),
            _ => false,
        }
    }

    fn execute(&mut self, _task: TaskId, inputs: &[Event<Payload>], _now: Millis) -> ExecOutcome<Payload> {
        let outputs = inputs
            .iter()
            .map(|e| match &e.payload {
                Payload::Frame(f) => Some(Output::new(e.key.clone(), Payload::Frame(f.clone()))),
                _ => None,
            })
            .collect();
        ExecOutcome {
            outputs,
            cost: if inputs.is_empty() { 0 } else { self.cost.at(inputs.len()) },
        }
    }
}

pub fn va_logic(frames: &[FrameRecord], profile: &DetectorProfile) -> (Vec<FrameRecord>, Millis) {
    (frames.to_vec(), profile.charge(frames.len()))
}

/// Per-camera candidate extraction.
#[derive(Clone, Debug)]
pub struct VaLogic {
    pub profile: DetectorProfile,
}

impl UserLogic<Payload> for VaLogic {
    fn execute(&mut self, _task: TaskId, inputs: &[Event<Payload>], _now: Millis) -> ExecOutcome<Payload> {
        let outputs = inputs
            .iter()
            .map(|e| match &e.payload {
                Payload::Frame(f) | Payload::Candidate(f) => {
                    Some(Output::new(e.key.clone(), Payload::Candidate(f.clone())))
                }
                Payload::Detection(_) => None,
            })
            .collect();
        ExecOutcome {
            outputs,
            cost: self.profile.charge(inputs.len()),
        }
    }
}

pub fn cr_logic(
    candidates: &[(EventId, FrameRecord)],
    task: TaskId,
    profile: &DetectorProfile,
) -> (Vec<Detection>, Millis) {
    let detections = candidates
        .iter()
        .map(|(id, f)| {
            let (matched, confidence) = profile.decide(*id, task, f.contains_entity);
            Detection {
                camera: f.camera,
                frame_ts: f.frame_ts,
                matched,
                confidence,
                contains_entity: f.contains_entity,
            }
        })
        .collect();
    (detections, profile.charge(candidates.len()))
}

/// Entity re-identification across cameras. Each detection is also sent to
/// the tracker through the task's control fork.
#[derive(Clone, Debug)]
pub struct CrLogic {
    pub profile: DetectorProfile,
    /// Mark positive detections so no later stage drops them.
    pub avoid_drop_matches: bool,
}

impl UserLogic<Payload> for CrLogic {
    fn execute(&mut self, task: TaskId, inputs: &[Event<Payload>], _now: Millis) -> ExecOutcome<Payload> {
        let candidates: Vec<(EventId, FrameRecord)> = inputs
            .iter()
            .filter_map(|e| match &e.payload {
                Payload::Frame(f) | Payload::Candidate(f) => Some((e.id(), f.clone())),
                Payload::Detection(_) => None,
            })
            .collect();
        let (detections, cost) = cr_logic(&candidates, task, &self.profile);
        let mut found = detections.into_iter();
        let outputs = inputs
            .iter()
            .map(|e| match e.payload {
                Payload::Detection(_) => None,
                _ => found.next().map(|d| {
                    let mut out = Output::new(e.key.clone(), Payload::Detection(d.clone()));
                    out.avoid_drop = self.avoid_drop_matches && d.matched;
                    out.fork = Some(Payload::Detection(d));
                    out
                }),
            })
            .collect();
        ExecOutcome { outputs, cost }
    }
}

/// Multi-camera fusion stage. The default does nothing.
pub trait QueryFusion {
    fn fuse(&mut self, detections: &[Detection]) -> Vec<Detection>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoFusion;

impl QueryFusion for NoFusion {
    fn fuse(&mut self, _detections: &[Detection]) -> Vec<Detection> {
        Vec::new()
    }
}

pub fn qf_logic(fusion: &mut dyn QueryFusion, detections: &[Detection]) -> Vec<Detection> {
    fusion.fuse(detections)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryClass {
    OnTime,
    /// Past the tolerable latency.
    Delayed,
    /// Past the tolerable latency but exempt from drops, so shown anyway.
    LateFlagged,
}

/// Sink classification of one event by its end-to-end latency.
pub fn uv_classify(latency: Millis, gamma: Millis, exempt: bool) -> DeliveryClass {
    match (latency <= gamma, exempt) {
        (true, _) => DeliveryClass::OnTime,
        (false, true) => DeliveryClass::LateFlagged,
        (false, false) => DeliveryClass::Delayed,
    }
}

/// User-visible sink: passes detections through at a small cost.
#[derive(Clone, Debug)]
pub struct UvLogic {
    pub cost: ExecTimeModel,
}

impl UserLogic<Payload> for UvLogic {
    fn execute(&mut self, _task: TaskId, inputs: &[Event<Payload>], _now: Millis) -> ExecOutcome<Payload> {
        ExecOutcome {
            outputs: inputs
                .iter()
                .map(|e| Some(Output::new(e.key.clone(), e.payload.clone())))
                .collect(),
            cost: if inputs.is_empty() { 0 } else { self.cost.at(inputs.len()) },
        }
    }
}
