//! Camera-motion-decoupled single-object tracking.
//!
//! Object state is filtered in the coordinates of a periodically refreshed
//! reference frame, with camera motion removed by a robust per-frame
//! homography. A constant-velocity Kalman filter predicts the next box, a
//! speed-dependent search window is projected into the current frame for the
//! detector, and confident detections update the state.
//!
//! The detector itself is abstract ([`MeasurementProvider`]); the [`synth`]
//! module provides a scenario generator and [`metrics`] the prediction-error
//! evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod geometry;
pub mod kalman;
pub mod metrics;
pub mod pipeline;
pub mod search_region;
pub mod sequence;
pub mod synth;

/// Zero-based frame index within a sequence.
pub type FrameId = u64;

pub use config::{Ablation, ConfigError, TrackerConfig};
pub use detector::{
    DetectionRecord, DetectorError, DetectorQuery, MeasurementProvider, NoiseSpec, OcclusionPolicy,
    ReplaySource,
};
pub use geometry::{
    apply_homography, dlt_homography, project_bbox, project_box, ransac_homography, BBox,
    CorrespondenceSet, GeometryError, Homography, Point2, RansacConfig, RansacReport,
};
pub use kalman::{Detection, KalmanError, KalmanModel, KalmanParams, ObjectState};
pub use metrics::{MetricSet, MetricsError, PredictionLog};
pub use pipeline::{FrameResult, FrameStatus, PipelineError, TrackerSession};
pub use search_region::SearchRegion;
pub use sequence::{CorrespondenceRecord, FormatError, GroundTruth, SequenceRecord};
pub use synth::{Scenario, ScenarioSpec, SynthError};
