//! Synthetic scenarios.
//!
//! The world is a plane; the camera at frame `t` sees it through
//! `C_t = T(c − o_t) · R(θ_t) · T(−c)` where `c` is the image center, `o_t`
//! the camera offset and `θ_t` its roll. Background correspondences between
//! a reference frame `k` and frame `t` are therefore related exactly by
//! `H = C_t · C_k⁻¹`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    synthetic_detect, synthetic_distractor, DetectionRecord, NoiseSpec, ReplaySource,
};
use crate::geometry::{project_box, CorrespondenceSet, GeometryError, Homography, Point2};
use crate::kalman::Detection;
use crate::sequence::{CorrespondenceRecord, GroundTruth, SequenceRecord};
use crate::FrameId;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("object leaves the valid image plane at frame {frame}: {source}")]
    Geometry {
        frame: FrameId,
        #[source]
        source: GeometryError,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraMotion {
    #[default]
    None,
    Pan {
        velocity: [f64; 2],
    },
    /// `o_t = A (sin ωt, cos ωt − 1)`, `θ_t = rotation · sin ωt`, `ω = 2π/period`.
    Shake {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        rotation: f64,
    },
    /// Offsets and roll angles of the parts add up.
    Composite {
        parts: Vec<CameraMotion>,
    },
}

impl CameraMotion {
    /// Camera offset and roll at frame `t`.
    pub fn pose(&self, t: f64) -> (Point2, f64) {
        match self {
            CameraMotion::None => (Point2::new(0.0, 0.0), 0.0),
            CameraMotion::Pan { velocity } => (Point2::new(velocity[0] * t, velocity[1] * t), 0.0),
            CameraMotion::Shake {
                amplitude,
                period,
                rotation,
            } => {
                let phase = std::f64::consts::TAU * t / period;
                (
                    Point2::new(amplitude * phase.sin(), amplitude * (phase.cos() - 1.0)),
                    rotation * phase.sin(),
                )
            }
            CameraMotion::Composite { parts } => {
                parts
                    .iter()
                    .fold((Point2::new(0.0, 0.0), 0.0), |(o, a), p| {
                        let (po, pa) = p.pose(t);
                        (Point2::new(o.x + po.x, o.y + po.y), a + pa)
                    })
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        match self {
            CameraMotion::None => Ok(()),
            CameraMotion::Pan { velocity } => {
                if velocity.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(invalid("camera.velocity", "must be finite"))
                }
            }
            CameraMotion::Shake {
                amplitude,
                period,
                rotation,
            } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(invalid("camera.amplitude", "must be finite and >= 0"));
                }
                if !(period.is_finite() && *period > 0.0) {
                    return Err(invalid("camera.period", "must be positive"));
                }
                if !(rotation.abs() < std::f64::consts::FRAC_PI_4) {
                    return Err(invalid(
                        "camera.rotation",
                        "must be below pi/4 in magnitude",
                    ));
                }
                Ok(())
            }
            CameraMotion::Composite { parts } => parts.iter().try_for_each(CameraMotion::validate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// Frame at which this segment's velocity stops applying (exclusive).
    pub until: FrameId,
    pub velocity: [f64; 2],
}

/// Object trajectory in world (plane) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "motion", rename_all = "snake_case")]
pub enum ObjectMotion {
    Static,
    ConstantVelocity {
        velocity: [f64; 2],
    },
    /// Velocity of the first segment whose `until` exceeds the frame; the
    /// object stops after the last segment.
    Piecewise {
        segments: Vec<Segment>,
    },
    Accelerating {
        velocity: [f64; 2],
        acceleration: [f64; 2],
    },
    /// Constant velocity with a sudden displacement from frame `at` on.
    Teleport {
        velocity: [f64; 2],
        at: FrameId,
        jump: [f64; 2],
    },
}

impl ObjectMotion {
    /// Displacement from the start position after `t` frames.
    pub fn displacement(&self, t: FrameId) -> Point2 {
        let tf = t as f64;
        match self {
            ObjectMotion::Static => Point2::new(0.0, 0.0),
            ObjectMotion::ConstantVelocity { velocity } => {
                Point2::new(velocity[0] * tf, velocity[1] * tf)
            }
            ObjectMotion::Piecewise { segments } => {
                let (mut x, mut y) = (0.0, 0.0);
                let mut from = 0;
                for s in segments {
                    let steps = s.until.min(t).saturating_sub(from) as f64;
                    x += s.velocity[0] * steps;
                    y += s.velocity[1] * steps;
                    from = from.max(s.until);
                }
                Point2::new(x, y)
            }
            ObjectMotion::Accelerating {
                velocity,
                acceleration,
            } => Point2::new(
                velocity[0] * tf + 0.5 * acceleration[0] * tf * tf,
                velocity[1] * tf + 0.5 * acceleration[1] * tf * tf,
            ),
            ObjectMotion::Teleport { velocity, at, jump } => {
                let j = if t >= *at { 1.0 } else { 0.0 };
                Point2::new(
                    velocity[0] * tf + j * jump[0],
                    velocity[1] * tf + j * jump[1],
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub start: [f64; 2],
    pub size: [f64; 2],
    #[serde(flatten)]
    pub motion: ObjectMotion,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            start: [320.0, 240.0],
            size: [24.0, 24.0],
            motion: ObjectMotion::Static,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondenceSpec {
    pub count: usize,
    /// Standard deviation of the Gaussian noise on destination points (px).
    pub noise: f64,
    pub outlier_fraction: f64,
}

impl Default for CorrespondenceSpec {
    fn default() -> Self {
        Self {
            count: 100,
            noise: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub length: u64,
    pub seed: u64,
    /// Reference slice length; must match the tracker's.
    pub slice_len: u64,
    pub frame_size: [f64; 2],
    pub camera: CameraMotion,
    pub object: ObjectSpec,
    /// Half-open `[start, end)` frame windows during which the target is hidden.
    pub occlusions: Vec<[FrameId; 2]>,
    pub correspondence: CorrespondenceSpec,
    pub detection: NoiseSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            length: 100,
            seed: 0,
            slice_len: 10,
            frame_size: [1280.0, 720.0],
            camera: CameraMotion::None,
            object: ObjectSpec::default(),
            occlusions: Vec::new(),
            correspondence: CorrespondenceSpec::default(),
            detection: NoiseSpec::default(),
        }
    }
}

impl ScenarioSpec {
    /// Shaking camera (8 px, 20-frame period) and a target moving at 3
    /// px/frame under 2 px detection noise, 300 frames.
    pub fn shake(seed: u64) -> Self {
        Self {
            length: 300,
            seed,
            camera: CameraMotion::Shake {
                amplitude: 8.0,
                period: 20.0,
                rotation: 0.0,
            },
            object: ObjectSpec {
                start: [200.0, 150.0],
                size: [24.0, 24.0],
                motion: ObjectMotion::ConstantVelocity {
                    velocity: [2.4, 1.8],
                },
            },
            correspondence: CorrespondenceSpec {
                count: 100,
                noise: 0.5,
                outlier_fraction: 0.2,
            },
            detection: NoiseSpec {
                sigma_position: 2.0,
                sigma_size: 0.5,
                ..NoiseSpec::default()
            },
            ..Self::default()
        }
    }

    /// [`ScenarioSpec::shake`] with a look-alike object, scored like the
    /// target, appearing 30 to 45 px from it in 3% of frames.
    pub fn cluttered_shake(seed: u64) -> Self {
        let mut spec = Self::shake(seed);
        spec.detection.distractor_rate = 0.03;
        spec
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        let spec: ScenarioSpec = toml::from_str(s).map_err(|e| SynthError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.length == 0 {
            return Err(invalid("length", "must be at least 1"));
        }
        if self.slice_len < 2 {
            return Err(invalid("slice_len", "must be at least 2"));
        }
        if !(self.frame_size[0] > 0.0 && self.frame_size[1] > 0.0) {
            return Err(invalid("frame_size", "must be positive"));
        }
        for (i, w) in self.occlusions.iter().enumerate() {
            if !(w[0] < w[1] && w[1] <= self.length) {
                return Err(invalid(
                    format!("occlusions[{i}]"),
                    "window must be non-empty and within [0, length)",
                ));
            }
        }
        let c = &self.correspondence;
        if !(0.0..1.0).contains(&c.outlier_fraction) {
            return Err(invalid(
                "correspondence.outlier_fraction",
                "must lie in [0, 1)",
            ));
        }
        if !(c.noise >= 0.0 && c.noise.is_finite()) {
            return Err(invalid("correspondence.noise", "must be finite and >= 0"));
        }
        let o = &self.object;
        if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
            return Err(invalid("object.size", "must be positive"));
        }
        self.camera.validate()?;
        self.detection
            .validate()
            .map_err(|reason| invalid("detection", reason))
    }

    pub fn occluded(&self, frame: FrameId) -> bool {
        self.occlusions
            .iter()
            .any(|w| (w[0]..w[1]).contains(&frame))
    }

    /// Reference frame the tracker uses for `frame`.
    pub fn ref_frame(&self, frame: FrameId) -> FrameId {
        if frame == 0 {
            0
        } else {
            (frame - 1) / self.slice_len * self.slice_len
        }
    }

    /// World-to-image map at frame `t`.
    pub fn camera_map(&self, t: FrameId) -> Homography {
        let (o, angle) = self.camera.pose(t as f64);
        let c = Point2::new(self.frame_size[0] / 2.0, self.frame_size[1] / 2.0);
        let to_origin = Homography::translation(-c.x, -c.y);
        let back = Homography::translation(c.x - o.x, c.y - o.y);
        let roll = Homography::similarity(angle, 1.0, 0.0, 0.0).expect("rotation is invertible");
        back.compose(&roll.compose(&to_origin).expect("invertible"))
            .expect("invertible")
    }

    /// True map from the reference frame of `frame` into `frame`.
    pub fn true_homography(&self, frame: FrameId) -> Homography {
        let k = self.ref_frame(frame);
        let ck_inv = self
            .camera_map(k)
            .inverse()
            .expect("camera maps are invertible");
        self.camera_map(frame).compose(&ck_inv).expect("invertible")
    }
}

/// A generated scenario: tracker input, detector output and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub frames: Vec<SequenceRecord>,
    pub correspondences: Vec<CorrespondenceRecord>,
    pub detections: Vec<DetectionRecord>,
    pub ground_truth: Vec<GroundTruth>,
    pub homographies: Vec<Homography>,
}

impl Scenario {
    pub fn replay_source(&self) -> ReplaySource {
        ReplaySource::new(self.detections.clone(), 0, self.spec.length - 1)
            .expect("generated records are well formed")
            .with_frame_size(self.spec.frame_size[0], self.spec.frame_size[1])
    }

    /// Ground-truth box of the first frame, full confidence.
    pub fn init_detection(&self) -> Detection {
        Detection::from_bbox(&self.ground_truth[0].bbox(), 1.0)
    }
}

fn correspondences<R: Rng + ?Sized>(
    h: &Homography,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> CorrespondenceSet {
    let c = &spec.correspondence;
    let [fw, fh] = spec.frame_size;
    let noise = Normal::new(0.0, c.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut pairs: Vec<(Point2, Point2)> = Vec::with_capacity(c.count);
    while pairs.len() < c.count {
        let src = Point2::new(rng.random_range(0.0..fw), rng.random_range(0.0..fh));
        // background points are chosen so that they stay in front of the camera
        let Ok(dst) = h.apply(src) else { continue };
        let (nx, ny) = if c.noise > 0.0 {
            (noise.sample(rng), noise.sample(rng))
        } else {
            (0.0, 0.0)
        };
        pairs.push((src, Point2::new(dst.x + nx, dst.y + ny)));
    }
    let outliers = (c.outlier_fraction * c.count as f64).round() as usize;
    if outliers > 0 {
        for i in sample(rng, c.count, outliers).into_iter() {
            pairs[i].1 = Point2::new(rng.random_range(0.0..fw), rng.random_range(0.0..fh));
        }
    }
    CorrespondenceSet::new(pairs)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut corr_rng = stream(spec.seed, 1);
    let mut det_rng = stream(spec.seed, 2);
    let o = &spec.object;

    let mut frames = Vec::with_capacity(spec.length as usize);
    let mut records = Vec::with_capacity(spec.length as usize);
    let mut detections = Vec::new();
    let mut ground_truth: Vec<GroundTruth> = Vec::with_capacity(spec.length as usize);
    let mut homographies = Vec::with_capacity(spec.length as usize);

    for t in 0..spec.length {
        let d = o.motion.displacement(t);
        let world = Point2::new(o.start[0] + d.x, o.start[1] + d.y);
        let (c, w, h) = project_box(&spec.camera_map(t), world, o.size[0], o.size[1])
            .map_err(|source| SynthError::Geometry { frame: t, source })?;
        let (vx, vy) = match ground_truth.last() {
            Some(prev) => (c.x - prev.x, c.y - prev.y),
            None => (0.0, 0.0),
        };
        let gt = GroundTruth {
            frame: t,
            x: c.x,
            y: c.y,
            w,
            h,
            vx,
            vy,
        };

        let hom = spec.true_homography(t);
        let set = correspondences(&hom, spec, &mut corr_rng);
        let ref_frame = spec.ref_frame(t);
        records.push(CorrespondenceRecord::from_set(t, ref_frame, &set));

        let occluded = spec.occluded(t);
        if let Some(det) = synthetic_detect(&gt.bbox(), &spec.detection, occluded, &mut det_rng) {
            detections.push(DetectionRecord::new(t, &det, 0));
        }
        if !occluded {
            if let Some(det) = synthetic_distractor(&gt.bbox(), &spec.detection, &mut det_rng) {
                detections.push(DetectionRecord::new(t, &det, 1));
            }
        }

        frames.push(SequenceRecord {
            frame_id: t,
            ref_frame,
            correspondences: set,
            ground_truth: Some(gt),
        });
        ground_truth.push(gt);
        homographies.push(hom);
    }

    Ok(Scenario {
        spec: spec.clone(),
        frames,
        correspondences: records,
        detections,
        ground_truth,
        homographies,
    })
}
