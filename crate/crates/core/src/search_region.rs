//! Square search window around the predicted position, widened for fast
//! objects.

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::kalman::ObjectState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub center: Point2,
    pub side: f64,
}

impl SearchRegion {
    pub fn contains(&self, p: Point2) -> bool {
        let half = self.side / 2.0;
        (p.x - self.center.x).abs() <= half && (p.y - self.center.y).abs() <= half
    }

    /// `(x_min, y_min, x_max, y_max)` of the square.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let half = self.side / 2.0;
        (
            self.center.x - half,
            self.center.y - half,
            self.center.x + half,
            self.center.y + half,
        )
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `k = 1 + 2·sigmoid(‖v‖ − θ_v)`, always in `(1, 3)`.
pub fn region_scale(speed: f64, velocity_threshold: f64) -> f64 {
    1.0 + 2.0 * sigmoid(speed - velocity_threshold)
}

/// `√((w + p)(h + p))` with `p = (w + h) / 2`: the context-padded size of the
/// box before speed scaling.
pub fn base_side(w: f64, h: f64) -> f64 {
    let p = 0.5 * (w + h);
    ((w + p) * (h + p)).sqrt()
}

pub fn adaptive_region(state: &ObjectState, velocity_threshold: f64) -> SearchRegion {
    let k = region_scale(state.speed(), velocity_threshold);
    fixed_region(state, k)
}

/// Region with a constant scale `k`, as used by steady-window trackers.
pub fn fixed_region(state: &ObjectState, k: f64) -> SearchRegion {
    SearchRegion {
        center: state.position(),
        side: k * base_side(state.mean[2], state.mean[3]),
    }
}
