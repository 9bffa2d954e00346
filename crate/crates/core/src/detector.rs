//! Measurement providers.
//!
//! A provider answers "what does the detector report inside this window of
//! this frame". The tracker never sees pixels; real detector output enters
//! through [`ReplaySource`] records, synthetic output through
//! [`synthetic_detect`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::kalman::Detection;
use crate::search_region::SearchRegion;
use crate::FrameId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("frame {0} is outside the replay source")]
    MissingFrame(FrameId),
    #[error("detection records out of order at frame {0}")]
    Unordered(FrameId),
    #[error("duplicate detection for object {id} in frame {frame}")]
    Duplicate { frame: FrameId, id: u32 },
    #[error("invalid detection record in frame {0}")]
    InvalidRecord(FrameId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorQuery {
    pub frame_id: FrameId,
    pub region: SearchRegion,
}

pub trait MeasurementProvider {
    fn detect(&self, query: &DetectorQuery) -> Result<Option<Detection>, DetectorError>;
}

/// One line of a detection file. `id` 0 is the tracked target; other ids
/// are look-alike distractors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: FrameId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub id: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl DetectionRecord {
    pub fn new(frame: FrameId, d: &Detection, id: u32) -> Self {
        Self {
            frame,
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
            conf: d.confidence,
            id,
        }
    }

    pub fn detection(&self) -> Detection {
        Detection::new(self.x, self.y, self.w, self.h, self.conf)
    }
}

/// Pre-recorded detections for a contiguous range of frames.
///
/// Inside the range a frame without records means the detector saw
/// nothing. Queries outside the range are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySource {
    by_frame: BTreeMap<FrameId, Vec<DetectionRecord>>,
    first: FrameId,
    last: FrameId,
    frame_size: Option<(f64, f64)>,
}

impl ReplaySource {
    /// Records must be sorted by frame with at most one record per
    /// `(frame, id)`.
    pub fn new(
        records: Vec<DetectionRecord>,
        first: FrameId,
        last: FrameId,
    ) -> Result<Self, DetectorError> {
        let mut by_frame: BTreeMap<FrameId, Vec<DetectionRecord>> = BTreeMap::new();
        let mut prev: Option<FrameId> = None;
        for r in records {
            if prev.is_some_and(|p| r.frame < p) {
                return Err(DetectorError::Unordered(r.frame));
            }
            if !r.detection().is_valid() {
                return Err(DetectorError::InvalidRecord(r.frame));
            }
            prev = Some(r.frame);
            let slot = by_frame.entry(r.frame).or_default();
            if slot.iter().any(|o| o.id == r.id) {
                return Err(DetectorError::Duplicate {
                    frame: r.frame,
                    id: r.id,
                });
            }
            slot.push(r);
        }
        Ok(Self {
            by_frame,
            first,
            last,
            frame_size: None,
        })
    }

    /// Restricts detection to the visible image area `[0, w] x [0, h]`.
    pub fn with_frame_size(mut self, w: f64, h: f64) -> Self {
        self.frame_size = Some((w, h));
        self
    }

    pub fn records(&self, frame: FrameId) -> &[DetectionRecord] {
        self.by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[])
    }

    fn visible(&self, x: f64, y: f64) -> bool {
        match self.frame_size {
            Some((w, h)) => (0.0..=w).contains(&x) && (0.0..=h).contains(&y),
            None => true,
        }
    }
}

impl MeasurementProvider for ReplaySource {
    /// The most confident record whose center lies inside the query region
    /// clipped to the frame. Ties go to the lower object id.
    fn detect(&self, q: &DetectorQuery) -> Result<Option<Detection>, DetectorError> {
        if q.frame_id < self.first || q.frame_id > self.last {
            return Err(DetectorError::MissingFrame(q.frame_id));
        }
        let best = self
            .records(q.frame_id)
            .iter()
            .filter(|r| {
                let c = crate::geometry::Point2::new(r.x, r.y);
                q.region.contains(c) && self.visible(r.x, r.y)
            })
            .fold(None::<&DetectionRecord>, |acc, r| match acc {
                Some(a) if a.conf > r.conf || (a.conf == r.conf && a.id <= r.id) => Some(a),
                _ => Some(r),
            });
        Ok(best.map(DetectionRecord::detection))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionPolicy {
    /// No detection while occluded.
    Absent,
    /// A displaced box with confidence from the low band.
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_position: f64,
    pub sigma_size: f64,
    pub high_confidence: [f64; 2],
    pub low_confidence: [f64; 2],
    pub occlusion_policy: OcclusionPolicy,
    /// Per-frame probability that a visible target goes undetected.
    pub miss_rate: f64,
    /// Per-frame probability of a look-alike object near the target.
    pub distractor_rate: f64,
    /// Range of the distractor's center distance from the target (px).
    pub distractor_offset: [f64; 2],
    pub distractor_confidence: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_position: 0.0,
            sigma_size: 0.0,
            high_confidence: [0.8, 0.95],
            low_confidence: [0.05, 0.3],
            occlusion_policy: OcclusionPolicy::Absent,
            miss_rate: 0.0,
            distractor_rate: 0.0,
            distractor_offset: [30.0, 45.0],
            distractor_confidence: [0.8, 0.95],
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), String> {
        let band = |name: &str, b: [f64; 2]| {
            if (0.0..=1.0).contains(&b[0]) && (0.0..=1.0).contains(&b[1]) && b[0] <= b[1] {
                Ok(())
            } else {
                Err(format!("{name} must be an ordered pair within [0, 1]"))
            }
        };
        band("high_confidence", self.high_confidence)?;
        band("low_confidence", self.low_confidence)?;
        band("distractor_confidence", self.distractor_confidence)?;
        if !(self.sigma_position >= 0.0 && self.sigma_size >= 0.0) {
            return Err("noise sigmas must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err("miss_rate must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err("distractor_rate must lie in [0, 1]".into());
        }
        let [lo, hi] = self.distractor_offset;
        if !(lo >= 0.0 && lo <= hi) {
            return Err("distractor_offset must be an ordered non-negative pair".into());
        }
        Ok(())
    }
}

fn draw_band<R: Rng + ?Sized>(rng: &mut R, band: [f64; 2]) -> f64 {
    if band[1] > band[0] {
        rng.random_range(band[0]..band[1])
    } else {
        band[0]
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Simulated detector response for a ground-truth box.
pub fn synthetic_detect<R: Rng + ?Sized>(
    gt: &BBox,
    noise: &NoiseSpec,
    occluded: bool,
    rng: &mut R,
) -> Option<Detection> {
    if occluded {
        return match noise.occlusion_policy {
            OcclusionPolicy::Absent => None,
            OcclusionPolicy::LowConfidence => {
                let dx = rng.random_range(-1.0..1.0) * gt.w;
                let dy = rng.random_range(-1.0..1.0) * gt.h;
                let conf = draw_band(rng, noise.low_confidence);
                Some(Detection::new(gt.x + dx, gt.y + dy, gt.w, gt.h, conf))
            }
        };
    }
    if noise.miss_rate > 0.0 && rng.random_bool(noise.miss_rate.min(1.0)) {
        return None;
    }
    let x = gt.x + gaussian(rng, noise.sigma_position);
    let y = gt.y + gaussian(rng, noise.sigma_position);
    let w = (gt.w + gaussian(rng, noise.sigma_size)).max(0.05 * gt.w);
    let h = (gt.h + gaussian(rng, noise.sigma_size)).max(0.05 * gt.h);
    let conf = draw_band(rng, noise.high_confidence);
    Some(Detection::new(x, y, w, h, conf))
}

/// With probability `distractor_rate`, a same-sized look-alike at a random
/// bearing and a distance drawn from `distractor_offset`.
pub fn synthetic_distractor<R: Rng + ?Sized>(
    gt: &BBox,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Option<Detection> {
    if noise.distractor_rate <= 0.0 || !rng.random_bool(noise.distractor_rate.min(1.0)) {
        return None;
    }
    let r = draw_band(rng, noise.distractor_offset);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let conf = draw_band(rng, noise.distractor_confidence);
    Some(Detection::new(
        gt.x + r * theta.cos(),
        gt.y + r * theta.sin(),
        gt.w,
        gt.h,
        conf,
    ))
}
