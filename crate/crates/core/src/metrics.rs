//! Prediction-error evaluation.
//!
//! Each tracked frame contributes the tracker's prediction for that frame,
//! made before its detection was seen, and the ground truth. Frames that are
//! not regular tracked frames (initialization, failures, the skip window
//! after a failure) are excluded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Ablation, TrackerConfig};
use crate::detector::MeasurementProvider;
use crate::geometry::Point2;
use crate::kalman::Detection;
use crate::pipeline::{run_sequence, FrameResult, FrameStatus, PipelineError};
use crate::sequence::{GroundTruth, SequenceRecord};
use crate::FrameId;

/// Velocities shorter than this (px/frame) have no direction.
pub const COSINE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no frames left to evaluate")]
    Empty,
    #[error("frame alignment: {0}")]
    Alignment(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub frame: FrameId,
    pub predicted_position: Point2,
    pub predicted_velocity: [f64; 2],
    pub gt_position: Point2,
    pub gt_velocity: [f64; 2],
    pub failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub entries: Vec<PredictionEntry>,
}

impl PredictionLog {
    /// Pairs tracker results with ground truth frame by frame.
    pub fn from_results(results: &[FrameResult], gt: &[GroundTruth]) -> Result<Self, MetricsError> {
        if results.len() != gt.len() {
            return Err(MetricsError::Alignment(format!(
                "{} results but {} ground-truth records",
                results.len(),
                gt.len()
            )));
        }
        let entries = results
            .iter()
            .zip(gt)
            .map(|(r, g)| {
                if r.frame != g.frame {
                    return Err(MetricsError::Alignment(format!(
                        "result for frame {} paired with ground truth for frame {}",
                        r.frame, g.frame
                    )));
                }
                Ok(PredictionEntry {
                    frame: r.frame,
                    predicted_position: r.predicted_box_camera.center(),
                    predicted_velocity: r.predicted_velocity_camera,
                    gt_position: g.center(),
                    gt_velocity: [g.vx, g.vy],
                    failure: r.status != FrameStatus::Tracked,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    /// The zero-velocity predictor run on ground truth: each frame is
    /// predicted to sit where the previous one was, with no motion.
    pub fn zero_velocity(gt: &[GroundTruth]) -> Self {
        let entries = gt
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let prev = if i == 0 { g } else { &gt[i - 1] };
                PredictionEntry {
                    frame: g.frame,
                    predicted_position: prev.center(),
                    predicted_velocity: [0.0, 0.0],
                    gt_position: g.center(),
                    gt_velocity: [g.vx, g.vy],
                    failure: i == 0,
                }
            })
            .collect();
        Self { entries }
    }

    fn effective(&self) -> Result<Vec<&PredictionEntry>, MetricsError> {
        let v: Vec<_> = self.entries.iter().filter(|e| !e.failure).collect();
        if v.is_empty() {
            Err(MetricsError::Empty)
        } else {
            Ok(v)
        }
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean Euclidean distance between predicted and true positions.
pub fn position_error(log: &PredictionLog) -> Result<f64, MetricsError> {
    let e = log.effective()?;
    Ok(mean(
        e.iter()
            .map(|e| e.predicted_position.distance(&e.gt_position)),
    )
    .expect("non-empty"))
}

/// Root-mean-square Euclidean position error.
pub fn position_rms(log: &PredictionLog) -> Result<f64, MetricsError> {
    let e = log.effective()?;
    let ms = mean(
        e.iter()
            .map(|e| e.predicted_position.distance(&e.gt_position).powi(2)),
    )
    .expect("non-empty");
    Ok(ms.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityErrors {
    /// Mean Euclidean distance between predicted and true velocity.
    pub mse: f64,
    /// Mean cosine of the angle between them, over frames where both have a
    /// direction; absent when no frame does.
    pub cosine: Option<f64>,
    /// Mean absolute difference of speeds.
    pub magnitude: f64,
}

pub fn velocity_errors(log: &PredictionLog) -> Result<VelocityErrors, MetricsError> {
    let e = log.effective()?;
    let mse = mean(e.iter().map(|e| {
        norm([
            e.predicted_velocity[0] - e.gt_velocity[0],
            e.predicted_velocity[1] - e.gt_velocity[1],
        ])
    }))
    .expect("non-empty");
    let cosine = mean(e.iter().filter_map(|e| {
        let (a, b) = (norm(e.predicted_velocity), norm(e.gt_velocity));
        (a > COSINE_EPS && b > COSINE_EPS).then(|| {
            let dot = e.predicted_velocity[0] * e.gt_velocity[0]
                + e.predicted_velocity[1] * e.gt_velocity[1];
            (dot / (a * b)).clamp(-1.0, 1.0)
        })
    }));
    let magnitude = mean(
        e.iter()
            .map(|e| (norm(e.predicted_velocity) - norm(e.gt_velocity)).abs()),
    )
    .expect("non-empty");
    Ok(VelocityErrors {
        mse,
        cosine,
        magnitude,
    })
}

/// One row of an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub position_error: f64,
    pub position_rms: f64,
    pub velocity_mse: f64,
    pub cosine: Option<f64>,
    pub magnitude: f64,
    /// Frames that entered the means.
    pub frames: usize,
    /// Zero-overlap failures (each followed by a re-initialization).
    pub failures: usize,
}

impl MetricSet {
    pub fn from_log(log: &PredictionLog) -> Result<Self, MetricsError> {
        let v = velocity_errors(log)?;
        Ok(Self {
            position_error: position_error(log)?,
            position_rms: position_rms(log)?,
            velocity_mse: v.mse,
            cosine: v.cosine,
            magnitude: v.magnitude,
            frames: log.entries.iter().filter(|e| !e.failure).count(),
            failures: 0,
        })
    }

    pub fn evaluate(results: &[FrameResult], gt: &[GroundTruth]) -> Result<Self, MetricsError> {
        let mut m = Self::from_log(&PredictionLog::from_results(results, gt)?)?;
        m.failures = count_failures(results);
        Ok(m)
    }
}

pub fn count_failures(results: &[FrameResult]) -> usize {
    results
        .iter()
        .filter(|r| r.status == FrameStatus::Failure)
        .count()
}

/// Mean of per-sequence metric sets. With `weighted`, each sequence counts
/// in proportion to its evaluated frames. Failures are summed.
pub fn aggregate(sets: &[MetricSet], weighted: bool) -> Result<MetricSet, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let weight = |m: &MetricSet| if weighted { m.frames as f64 } else { 1.0 };
    let avg = |f: &dyn Fn(&MetricSet) -> Option<f64>| {
        let (s, w) = sets
            .iter()
            .filter_map(|m| f(m).map(|v| (v * weight(m), weight(m))))
            .fold((0.0, 0.0), |(s, w), (a, b)| (s + a, w + b));
        (w > 0.0).then(|| s / w)
    };
    Ok(MetricSet {
        position_error: avg(&|m| Some(m.position_error)).ok_or(MetricsError::Empty)?,
        position_rms: avg(&|m| Some(m.position_rms)).ok_or(MetricsError::Empty)?,
        velocity_mse: avg(&|m| Some(m.velocity_mse)).ok_or(MetricsError::Empty)?,
        cosine: avg(&|m| m.cosine),
        magnitude: avg(&|m| Some(m.magnitude)).ok_or(MetricsError::Empty)?,
        frames: sets.iter().map(|m| m.frames).sum(),
        failures: sets.iter().map(|m| m.failures).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub pipeline: MetricSet,
    pub baseline: MetricSet,
    /// Pipeline position error over baseline position error; 1 when the
    /// baseline error vanishes.
    pub ratio: f64,
}

pub fn ratio(pipeline: f64, baseline: f64) -> f64 {
    if baseline.abs() < 1e-12 {
        1.0
    } else {
        pipeline / baseline
    }
}

/// Runs the configured pipeline and the zero-velocity, fixed-region,
/// camera-coordinate baseline on the same input.
pub fn compare_baseline(
    frames: &[SequenceRecord],
    init: &Detection,
    cfg: &TrackerConfig,
    provider: &dyn MeasurementProvider,
) -> Result<BaselineComparison, MetricsError> {
    let gt: Vec<GroundTruth> = frames
        .iter()
        .map(|f| {
            f.ground_truth.ok_or_else(|| {
                MetricsError::Alignment(format!("frame {} has no ground truth", f.frame_id))
            })
        })
        .collect::<Result<_, _>>()?;
    let pipeline = MetricSet::evaluate(&run_sequence(frames, init, cfg, provider)?, &gt)?;
    let base_cfg = TrackerConfig {
        ablation: Ablation::BASELINE,
        ..cfg.clone()
    };
    let baseline = MetricSet::evaluate(&run_sequence(frames, init, &base_cfg, provider)?, &gt)?;
    Ok(BaselineComparison {
        pipeline,
        baseline,
        ratio: ratio(pipeline.position_error, baseline.position_error),
    })
}

/// Fixed-width text table with one row per labelled metric set.
pub fn render_table(rows: &[(String, MetricSet)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}  {:>9}  {:>6}  {:>8}\n",
        "Sequence", "Pos Err.", "RMS", "MSE Err.", "Cosine", "Mag", "Frames", "Failures"
    );
    for (name, m) in rows {
        let cosine = m
            .cosine
            .map_or_else(|| "-".to_string(), |c| format!("{c:.3}"));
        out.push_str(&format!(
            "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>7}  {:>9.3}  {:>6}  {:>8}\n",
            name,
            m.position_error,
            m.position_rms,
            m.velocity_mse,
            cosine,
            m.magnitude,
            m.frames,
            m.failures
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(pp: (f64, f64), pv: [f64; 2], gp: (f64, f64), gv: [f64; 2]) -> PredictionEntry {
        PredictionEntry {
            frame: 0,
            predicted_position: Point2::new(pp.0, pp.1),
            predicted_velocity: pv,
            gt_position: Point2::new(gp.0, gp.1),
            gt_velocity: gv,
            failure: false,
        }
    }

    fn log(entries: Vec<PredictionEntry>) -> PredictionLog {
        PredictionLog { entries }
    }

    #[test]
    fn three_four_five() {
        let l = log(vec![entry((0.0, 0.0), [0.0; 2], (3.0, 4.0), [0.0; 2])]);
        assert_eq!(position_error(&l).unwrap(), 5.0);
        assert_eq!(position_rms(&l).unwrap(), 5.0);
    }

    #[test]
    fn exact_prediction_is_zero_error() {
        let l = log(vec![
            entry((1.0, 2.0), [1.0, 1.0], (1.0, 2.0), [1.0, 1.0]),
            entry((2.0, 3.0), [1.0, 1.0], (2.0, 3.0), [1.0, 1.0]),
        ]);
        assert_eq!(position_error(&l).unwrap(), 0.0);
        let v = velocity_errors(&l).unwrap();
        assert_eq!((v.mse, v.magnitude), (0.0, 0.0));
        assert!((v.cosine.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_unit_velocities() {
        let l = log(vec![entry((0.0, 0.0), [1.0, 0.0], (0.0, 0.0), [0.0, 1.0])]);
        let v = velocity_errors(&l).unwrap();
        assert!(v.cosine.unwrap().abs() < 1e-15);
        assert!((v.mse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(v.magnitude, 0.0);
    }

    #[test]
    fn zero_velocity_predictor_has_no_cosine() {
        let gt: Vec<GroundTruth> = (0..10)
            .map(|t| GroundTruth {
                frame: t,
                x: 3.0 * t as f64,
                y: -4.0 * t as f64,
                w: 5.0,
                h: 5.0,
                vx: if t == 0 { 0.0 } else { 3.0 },
                vy: if t == 0 { 0.0 } else { -4.0 },
            })
            .collect();
        let l = PredictionLog::zero_velocity(&gt);
        assert!((position_error(&l).unwrap() - 5.0).abs() < 1e-12);
        let v = velocity_errors(&l).unwrap();
        assert_eq!(v.cosine, None);
        assert!((v.mse - 5.0).abs() < 1e-12);
        assert_eq!(v.mse, v.magnitude);
    }

    #[test]
    fn failures_are_excluded_and_empty_is_an_error() {
        let mut e = entry((0.0, 0.0), [0.0; 2], (3.0, 4.0), [0.0; 2]);
        e.failure = true;
        let l = log(vec![e, entry((1.0, 1.0), [0.0; 2], (1.0, 1.0), [0.0; 2])]);
        assert_eq!(position_error(&l).unwrap(), 0.0);
        assert!(matches!(
            position_error(&log(vec![e])),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn aggregate_weighting() {
        let m = |p: f64, frames| MetricSet {
            position_error: p,
            position_rms: p,
            velocity_mse: p,
            cosine: None,
            magnitude: p,
            frames,
            failures: 1,
        };
        let sets = [m(1.0, 1), m(4.0, 3)];
        assert_eq!(aggregate(&sets, false).unwrap().position_error, 2.5);
        assert_eq!(aggregate(&sets, true).unwrap().position_error, 3.25);
        assert_eq!(aggregate(&sets, false).unwrap().failures, 2);
        assert_eq!(aggregate(&sets, false).unwrap().cosine, None);
    }

    #[test]
    fn table_renders_dash_for_missing_cosine() {
        let m = MetricSet {
            position_error: 1.0,
            position_rms: 1.0,
            velocity_mse: 2.0,
            cosine: None,
            magnitude: 2.0,
            frames: 5,
            failures: 0,
        };
        let t = render_table(&[("baseline".into(), m)]);
        let row = t.lines().nth(1).unwrap();
        assert!(row.split_whitespace().any(|c| c == "-"), "{row}");
    }

    proptest! {
        #[test]
        fn position_error_is_translation_invariant(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0), 1..20),
            dx in -1e3f64..1e3, dy in -1e3f64..1e3,
        ) {
            let a = log(pts.iter().map(|&(a, b, c, d)| entry((a, b), [0.0; 2], (c, d), [0.0; 2])).collect());
            let b = log(pts.iter().map(|&(a, b, c, d)| entry((a + dx, b + dy), [0.0; 2], (c + dx, d + dy), [0.0; 2])).collect());
            prop_assert!((position_error(&a).unwrap() - position_error(&b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn cosine_is_bounded_and_one_when_parallel(
            vs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, 0.1f64..5.0), 1..20),
        ) {
            let l = log(vs.iter().map(|&(a, b, c, d, _)| entry((0.0, 0.0), [a, b], (0.0, 0.0), [c, d])).collect());
            if let Some(c) = velocity_errors(&l).unwrap().cosine {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
            let par = log(vs.iter().filter(|v| v.0.hypot(v.1) > 1e-3).map(|&(a, b, _, _, s)| entry((0.0, 0.0), [a, b], (0.0, 0.0), [s * a, s * b])).collect());
            if !par.entries.is_empty() {
                prop_assert!((velocity_errors(&par).unwrap().cosine.unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_velocity_mse_equals_magnitude(
            vs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
        ) {
            let l = log(vs.iter().map(|&(a, b)| entry((0.0, 0.0), [0.0, 0.0], (0.0, 0.0), [a, b])).collect());
            let v = velocity_errors(&l).unwrap();
            prop_assert!((v.mse - v.magnitude).abs() < 1e-12);
        }
    }
}
