use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RansacConfig;
use crate::kalman::KalmanParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
}

/// Which stages of the pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Motion decoupling through per-frame homographies.
    pub decouple: bool,
    /// Constant-velocity prediction; off means the zero-velocity predictor.
    pub predict: bool,
    /// Speed-dependent search region; off means a fixed `fixed_k`.
    pub adaptive_region: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        decouple: true,
        predict: true,
        adaptive_region: true,
    };
    pub const BASELINE: Ablation = Ablation {
        decouple: false,
        predict: false,
        adaptive_region: false,
    };

    /// The six-row ablation grid, baseline first and full pipeline last.
    pub fn grid() -> [(&'static str, Ablation); 6] {
        let a = |decouple, predict, adaptive_region| Ablation {
            decouple,
            predict,
            adaptive_region,
        };
        [
            ("baseline", a(false, false, false)),
            ("asr", a(false, false, true)),
            ("md+asr", a(true, false, true)),
            ("mp", a(false, true, false)),
            ("md+mp", a(true, true, false)),
            ("md+mp+asr", a(true, true, true)),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.decouple {
            parts.push("md");
        }
        if self.predict {
            parts.push("mp");
        }
        if self.adaptive_region {
            parts.push("asr");
        }
        if parts.is_empty() {
            "baseline".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Frames per reference slice.
    pub slice_len: u64,
    /// Speed (px/frame) at which the search region reaches twice its base size.
    pub velocity_threshold: f64,
    /// Detections must be strictly more confident than this to update state.
    pub confidence_threshold: f64,
    /// Frames between a tracking failure and re-initialization.
    pub reinit_skip: u64,
    /// Region scale used when the adaptive region is disabled.
    pub fixed_k: f64,
    /// Multiplier on the velocity covariance block at reference hand-off.
    pub handoff_velocity_inflation: f64,
    /// The projected region side follows the homography's local scale only
    /// when that scale differs from 1 by more than this.
    pub region_scale_tolerance: f64,
    /// Zero-overlap failure detection and re-initialization from ground truth.
    pub evaluate: bool,
    pub kalman: KalmanParams,
    pub ransac: RansacConfig,
    pub ablation: Ablation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            slice_len: 10,
            velocity_threshold: 5.0,
            confidence_threshold: 0.7,
            reinit_skip: 5,
            fixed_k: 2.0,
            handoff_velocity_inflation: 2.0,
            region_scale_tolerance: 0.1,
            evaluate: true,
            kalman: KalmanParams::default(),
            ransac: RansacConfig::default(),
            ablation: Ablation::FULL,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slice_len < 2 {
            return Err(invalid("slice_len", "must be at least 2"));
        }
        if !self.velocity_threshold.is_finite() {
            return Err(invalid("velocity_threshold", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(invalid("confidence_threshold", "must lie in [0, 1]"));
        }
        if !(self.fixed_k > 0.0 && self.fixed_k.is_finite()) {
            return Err(invalid("fixed_k", "must be positive"));
        }
        if !(self.handoff_velocity_inflation >= 1.0) {
            return Err(invalid("handoff_velocity_inflation", "must be >= 1"));
        }
        if !(self.region_scale_tolerance >= 0.0) {
            return Err(invalid("region_scale_tolerance", "must be >= 0"));
        }
        let k = &self.kalman;
        for (field, v) in [
            ("kalman.process_position", k.process_position),
            ("kalman.process_size", k.process_size),
            ("kalman.process_velocity", k.process_velocity),
            (
                "kalman.camera_process_velocity",
                k.camera_process_velocity.unwrap_or(0.0),
            ),
            ("kalman.measurement_position", k.measurement_position),
            ("kalman.measurement_size", k.measurement_size),
            ("kalman.initial_position", k.initial_position),
            ("kalman.initial_size", k.initial_size),
            ("kalman.initial_velocity", k.initial_velocity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "standard deviation must be finite and >= 0"));
            }
        }
        let r = &self.ransac;
        if r.iterations < 1 {
            return Err(invalid("ransac.iterations", "must be at least 1"));
        }
        if !(r.inlier_threshold > 0.0) {
            return Err(invalid("ransac.inlier_threshold", "must be positive"));
        }
        if !(0.0..=1.0).contains(&r.max_outlier_ratio) {
            return Err(invalid("ransac.max_outlier_ratio", "must lie in [0, 1]"));
        }
        if !(r.confidence > 0.0 && r.confidence <= 1.0) {
            return Err(invalid("ransac.confidence", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: TrackerConfig = toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
