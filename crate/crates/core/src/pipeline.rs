//! Single-object tracking loop.
//!
//! The Kalman state lives in the coordinates of the current reference frame.
//! Each frame the camera motion since the reference is estimated from
//! background correspondences, the prior is formed and its search window
//! sized in reference coordinates, and both are projected into the frame for
//! the detector. The detection is pulled back into reference coordinates for
//! the update. Every `slice_len` frames the reference moves to the current
//! frame and the state is carried over.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, TrackerConfig};
use crate::detector::{DetectorError, DetectorQuery, MeasurementProvider};
use crate::geometry::{
    apply_homography, project_bbox, project_box, ransac_homography, BBox, GeometryError,
    Homography, Point2,
};
use crate::kalman::{self, Detection, KalmanModel, ObjectState};
use crate::search_region::{adaptive_region, fixed_region, SearchRegion};
use crate::sequence::SequenceRecord;
use crate::FrameId;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("frame {got} given where frame {expected} was expected")]
    OutOfOrder { expected: FrameId, got: FrameId },
    #[error("frame {frame} is relative to reference {got}, tracker reference is {expected}")]
    ReferenceMismatch {
        frame: FrameId,
        expected: FrameId,
        got: FrameId,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid initial detection")]
    InvalidInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    /// State (re)initialized from a given box; nothing was predicted.
    Init,
    Tracked,
    /// Output box had no overlap with ground truth.
    Failure,
    /// Between a failure and re-initialization.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: FrameId,
    pub status: FrameStatus,
    pub predicted_box_camera: BBox,
    /// Prior velocity in reference coordinates (px/frame).
    pub predicted_velocity_ref: [f64; 2],
    /// Predicted displacement of the box center in the image since the
    /// previous output (px/frame).
    pub predicted_velocity_camera: [f64; 2],
    pub search_region_camera: SearchRegion,
    pub output_box_camera: BBox,
    pub updated: bool,
    pub decoupled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSession {
    pub ref_frame_id: FrameId,
    /// Last frame processed.
    pub frame_id: FrameId,
    /// Reference-to-frame map of the last processed frame; `None` when the
    /// frame fell back to camera coordinates.
    pub current_homography: Option<Homography>,
    pub state: ObjectState,
    pub decouple_active: bool,
    /// Output box of the last processed frame, camera coordinates.
    pub last_output: BBox,
}

impl TrackerSession {
    /// Posterior box in the camera coordinates of the last processed frame.
    pub fn camera_box(&self) -> BBox {
        to_camera(self.current_homography.as_ref(), &self.state.bbox())
            .unwrap_or_else(|_| self.state.bbox())
    }
}

fn frame_rng(cfg: &TrackerConfig, frame: FrameId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac.seed);
    rng.set_stream(frame);
    rng
}

/// Camera-motion estimate for a frame, or `None` when decoupling is off or
/// falls back.
fn decouple(frame: &SequenceRecord, cfg: &TrackerConfig) -> Option<Homography> {
    if !cfg.ablation.decouple || frame.correspondences.is_empty() {
        return None;
    }
    let mut rng = frame_rng(cfg, frame.frame_id);
    ransac_homography(&frame.correspondences, &cfg.ransac, &mut rng).homography
}

fn to_camera(h: Option<&Homography>, b: &BBox) -> Result<BBox, GeometryError> {
    match h {
        Some(h) => project_bbox(h, b),
        None => Ok(*b),
    }
}

fn check_reference(
    session_ref: FrameId,
    frame: &SequenceRecord,
    cfg: &TrackerConfig,
) -> Result<(), PipelineError> {
    if cfg.ablation.decouple && frame.ref_frame != session_ref {
        return Err(PipelineError::ReferenceMismatch {
            frame: frame.frame_id,
            expected: session_ref,
            got: frame.ref_frame,
        });
    }
    Ok(())
}

fn region_for(state: &ObjectState, cfg: &TrackerConfig) -> SearchRegion {
    if cfg.ablation.adaptive_region {
        adaptive_region(state, cfg.velocity_threshold)
    } else {
        fixed_region(state, cfg.fixed_k)
    }
}

/// Search region in camera coordinates: projected center, side rescaled by
/// the map's local scale only when that departs from 1 by more than the
/// configured tolerance.
fn region_to_camera(
    h: &Homography,
    region: &SearchRegion,
    tolerance: f64,
) -> Result<SearchRegion, GeometryError> {
    let center = apply_homography(h, region.center)?;
    let scale = h.local_scale(region.center)?;
    let side = if (scale - 1.0).abs() > tolerance {
        region.side * scale
    } else {
        region.side
    };
    Ok(SearchRegion { center, side })
}

/// Projects the prior and its region into the frame. Falls back to camera
/// coordinates (no map) if any key-point cannot be projected.
fn project_prediction(
    h: Option<Homography>,
    prior: &ObjectState,
    region: &SearchRegion,
    cfg: &TrackerConfig,
) -> (Option<Homography>, BBox, SearchRegion) {
    if let Some(h) = h {
        let projected = project_bbox(&h, &prior.bbox())
            .and_then(|b| region_to_camera(&h, region, cfg.region_scale_tolerance).map(|r| (b, r)));
        if let Ok((b, r)) = projected {
            return (Some(h), b, r);
        }
    }
    (None, prior.bbox(), *region)
}

fn detection_to_reference(h: Option<&Homography>, d: &Detection) -> Option<Detection> {
    match h {
        None => Some(*d),
        Some(h) => {
            let inv = h.inverse().ok()?;
            let (c, w, hh) = project_box(&inv, d.center(), d.w, d.h).ok()?;
            Some(Detection::new(c.x, c.y, w, hh, d.confidence))
        }
    }
}

/// Filter model for a frame: the camera-coordinate velocity noise applies
/// whenever the frame is not decoupled.
pub fn motion_model(decoupled: bool, cfg: &TrackerConfig) -> KalmanModel {
    if decoupled {
        KalmanModel::from_params(&cfg.kalman)
    } else {
        KalmanModel::from_params(&cfg.kalman.for_camera_frame())
    }
}

fn zero_velocity(state: &ObjectState) -> ObjectState {
    let mut s = *state;
    s.mean[4] = 0.0;
    s.mean[5] = 0.0;
    s
}

/// Measurement adoption used when prediction is disabled: the output is the
/// detection itself, as for a plain detector-driven tracker.
fn adopt(state: &ObjectState, d: Option<&Detection>, threshold: f64) -> (ObjectState, bool) {
    match d {
        Some(d) if d.confidence > threshold => {
            let mut s = *state;
            s.mean[0] = d.x;
            s.mean[1] = d.y;
            s.mean[2] = d.w;
            s.mean[3] = d.h;
            s.mean[4] = 0.0;
            s.mean[5] = 0.0;
            (s, true)
        }
        _ => (*state, false),
    }
}

/// Processes the frame after the session's last one.
pub fn step(
    session: &TrackerSession,
    frame: &SequenceRecord,
    cfg: &TrackerConfig,
    provider: &dyn MeasurementProvider,
) -> Result<(TrackerSession, FrameResult), PipelineError> {
    let expected = session.frame_id + 1;
    if frame.frame_id != expected {
        return Err(PipelineError::OutOfOrder {
            expected,
            got: frame.frame_id,
        });
    }
    check_reference(session.ref_frame_id, frame, cfg)?;

    let h = decouple(frame, cfg);
    let model = motion_model(h.is_some(), cfg);

    let prior = if cfg.ablation.predict {
        kalman::predict(&session.state, &model)
    } else {
        zero_velocity(&session.state)
    };

    let region_ref = region_for(&prior, cfg);
    let (h, predicted_box, region_cam) = project_prediction(h, &prior, &region_ref, cfg);

    let query = DetectorQuery {
        frame_id: frame.frame_id,
        region: region_cam,
    };
    let detection = provider.detect(&query)?;
    let measured = detection
        .as_ref()
        .and_then(|d| detection_to_reference(h.as_ref(), d));

    let (posterior, updated) = if cfg.ablation.predict {
        match measured.as_ref() {
            Some(d) if d.confidence > cfg.confidence_threshold => {
                match kalman::update(&prior, &model, d) {
                    Ok(s) if s.mean[2] > 0.0 && s.mean[3] > 0.0 => (s, true),
                    _ => (prior, false),
                }
            }
            _ => (prior, false),
        }
    } else {
        adopt(&prior, measured.as_ref(), cfg.confidence_threshold)
    };

    let output = to_camera(h.as_ref(), &posterior.bbox()).unwrap_or_else(|_| posterior.bbox());

    let result = FrameResult {
        frame: frame.frame_id,
        status: FrameStatus::Tracked,
        predicted_box_camera: predicted_box,
        predicted_velocity_ref: [prior.mean[4], prior.mean[5]],
        predicted_velocity_camera: [
            predicted_box.x - session.last_output.x,
            predicted_box.y - session.last_output.y,
        ],
        search_region_camera: region_cam,
        output_box_camera: output,
        updated,
        decoupled: h.is_some(),
    };
    let next = TrackerSession {
        ref_frame_id: session.ref_frame_id,
        frame_id: frame.frame_id,
        current_homography: h,
        state: posterior,
        decouple_active: h.is_some(),
        last_output: output,
    };
    Ok((next, result))
}

/// Moves the reference to the session's current frame.
///
/// Position and size go through the frame's homography like any output box;
/// velocity is carried by mapping the pair `(pos, pos + v)` and differencing.
/// Position and size covariance are kept and the velocity block is inflated.
pub fn advance_reference(session: &TrackerSession, cfg: &TrackerConfig) -> TrackerSession {
    let mut state = session.state;
    if let Some(h) = session.current_homography.as_ref() {
        let pos = state.position();
        let ahead = Point2::new(pos.x + state.mean[4], pos.y + state.mean[5]);
        let mapped = project_box(h, pos, state.mean[2], state.mean[3])
            .and_then(|(c, w, hh)| apply_homography(h, ahead).map(|a| (c, w, hh, a)));
        if let Ok((c, w, hh, a)) = mapped {
            state.mean[0] = c.x;
            state.mean[1] = c.y;
            state.mean[2] = w;
            state.mean[3] = hh;
            state.mean[4] = a.x - c.x;
            state.mean[5] = a.y - c.y;
        }
    }
    let f = cfg.handoff_velocity_inflation;
    for i in 4..6 {
        for j in 4..6 {
            state.cov[(i, j)] *= f;
        }
    }
    TrackerSession {
        ref_frame_id: session.frame_id,
        frame_id: session.frame_id,
        current_homography: Some(Homography::identity()),
        state,
        decouple_active: session.decouple_active,
        last_output: session.last_output,
    }
}

/// Starts (or restarts) tracking at `frame` from a camera-coordinate box.
pub fn init_session(
    frame: &SequenceRecord,
    init: &Detection,
    cfg: &TrackerConfig,
) -> Result<(TrackerSession, FrameResult), PipelineError> {
    if !(init.w > 0.0 && init.h > 0.0 && init.x.is_finite() && init.y.is_finite()) {
        return Err(PipelineError::InvalidInit);
    }
    let h = decouple(frame, cfg);
    let (h, in_ref) = match detection_to_reference(h.as_ref(), init) {
        Some(d) => (h, d),
        None => (None, *init),
    };
    let state = kalman::init_state(&in_ref, cfg);
    let region_ref = region_for(&state, cfg);
    let (h, _, region_cam) = project_prediction(h, &state, &region_ref, cfg);
    let b = init.bbox();
    let session = TrackerSession {
        ref_frame_id: frame.ref_frame,
        frame_id: frame.frame_id,
        current_homography: h,
        state,
        decouple_active: h.is_some(),
        last_output: b,
    };
    let result = FrameResult {
        frame: frame.frame_id,
        status: FrameStatus::Init,
        predicted_box_camera: b,
        predicted_velocity_ref: [0.0, 0.0],
        predicted_velocity_camera: [0.0, 0.0],
        search_region_camera: region_cam,
        output_box_camera: b,
        updated: false,
        decoupled: h.is_some(),
    };
    Ok((session, result))
}

fn maybe_advance(session: TrackerSession, cfg: &TrackerConfig) -> TrackerSession {
    if session.frame_id.is_multiple_of(cfg.slice_len) && session.frame_id != session.ref_frame_id {
        advance_reference(&session, cfg)
    } else {
        session
    }
}

fn skipped(frame: FrameId, last: &FrameResult) -> FrameResult {
    FrameResult {
        frame,
        status: FrameStatus::Skipped,
        predicted_velocity_ref: [0.0, 0.0],
        predicted_velocity_camera: [0.0, 0.0],
        updated: false,
        decoupled: false,
        ..*last
    }
}

/// Tracks a whole sequence from `init` on its first frame.
///
/// With `cfg.evaluate` set and ground truth present, a frame whose output box
/// has zero overlap with the ground truth is a failure: tracking stops and is
/// restarted from ground truth `reinit_skip` frames later.
pub fn run_sequence(
    frames: &[SequenceRecord],
    init: &Detection,
    cfg: &TrackerConfig,
    provider: &dyn MeasurementProvider,
) -> Result<Vec<FrameResult>, PipelineError> {
    cfg.validate()?;
    let first = frames.first().ok_or(PipelineError::EmptySequence)?;
    let mut results = Vec::with_capacity(frames.len());

    let (session, r) = init_session(first, init, cfg)?;
    results.push(r);
    let mut session = maybe_advance(session, cfg);

    let mut i = 1;
    while i < frames.len() {
        let frame = &frames[i];
        let (next, mut r) = step(&session, frame, cfg, provider)?;
        let failed = cfg.evaluate
            && frame
                .ground_truth
                .is_some_and(|gt| r.output_box_camera.iou(&gt.bbox()) <= 0.0);
        if !failed {
            results.push(r);
            session = maybe_advance(next, cfg);
            i += 1;
            continue;
        }

        r.status = FrameStatus::Failure;
        results.push(r);
        let mut j = i + (cfg.reinit_skip.max(1) as usize);
        for f in &frames[i + 1..j.min(frames.len())] {
            results.push(skipped(f.frame_id, &r));
        }
        // restart at the first frame from there on that has ground truth
        while j < frames.len() && frames[j].ground_truth.is_none() {
            results.push(skipped(frames[j].frame_id, &r));
            j += 1;
        }
        let Some(frame) = frames.get(j) else {
            break;
        };
        let gt = frame.ground_truth.expect("checked above");
        let (s, r0) = init_session(frame, &Detection::from_bbox(&gt.bbox(), 1.0), cfg)?;
        results.push(r0);
        session = maybe_advance(s, cfg);
        i = j + 1;
    }
    Ok(results)
}
