//! Constant-velocity Kalman filter over `(x, y, w, h, vx, vy)`.
//!
//! Position moves by one frame of velocity per step; size is a random walk.
//! Only `(x, y, w, h)` is observed.

use nalgebra::{Matrix4, Matrix4x6, Matrix6, SMatrix, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrackerConfig;
use crate::geometry::{BBox, Point2};

pub type StateVector = Vector6<f64>;
pub type Covariance = Matrix6<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KalmanError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub mean: StateVector,
    pub cov: Covariance,
}

impl ObjectState {
    pub fn new(mean: StateVector, cov: Covariance) -> Self {
        Self { mean, cov }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[4], self.mean[5])
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn speed(&self) -> f64 {
        self.mean[4].hypot(self.mean[5])
    }
}

/// Noise standard deviations, in pixels (or pixels/frame for velocity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    pub process_position: f64,
    pub process_size: f64,
    pub process_velocity: f64,
    /// Velocity process noise for frames filtered in camera coordinates,
    /// where the state also absorbs camera acceleration. Unset means
    /// `process_velocity` is used everywhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_process_velocity: Option<f64>,
    pub measurement_position: f64,
    pub measurement_size: f64,
    pub initial_position: f64,
    pub initial_size: f64,
    pub initial_velocity: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_position: 1.0,
            process_size: 1.0,
            process_velocity: 0.25,
            camera_process_velocity: None,
            measurement_position: 4.0,
            measurement_size: 4.0,
            initial_position: 10.0,
            initial_size: 10.0,
            initial_velocity: 10.0,
        }
    }
}

impl KalmanParams {
    /// The same parameters with the camera-coordinate velocity noise, if set.
    pub fn for_camera_frame(&self) -> KalmanParams {
        KalmanParams {
            process_velocity: self
                .camera_process_velocity
                .unwrap_or(self.process_velocity),
            ..*self
        }
    }

    pub fn initial_covariance(&self) -> Covariance {
        let (p, s, v) = (
            self.initial_position.powi(2),
            self.initial_size.powi(2),
            self.initial_velocity.powi(2),
        );
        Covariance::from_diagonal(&Vector6::new(p, p, s, s, v, v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    pub transition: Matrix6<f64>,
    /// Control input matrix. The control input is always zero.
    pub control: SMatrix<f64, 6, 1>,
    pub process_noise: Matrix6<f64>,
    pub observation: Matrix4x6<f64>,
    pub measurement_noise: Matrix4<f64>,
}

impl KalmanModel {
    pub fn constant_velocity(process_noise: Matrix6<f64>, measurement_noise: Matrix4<f64>) -> Self {
        let mut transition = Matrix6::identity();
        transition[(0, 4)] = 1.0;
        transition[(1, 5)] = 1.0;
        let mut observation = Matrix4x6::zeros();
        for i in 0..4 {
            observation[(i, i)] = 1.0;
        }
        Self {
            transition,
            control: SMatrix::zeros(),
            process_noise,
            observation,
            measurement_noise,
        }
    }

    pub fn from_params(p: &KalmanParams) -> Self {
        let q = Matrix6::from_diagonal(&Vector6::new(
            p.process_position.powi(2),
            p.process_position.powi(2),
            p.process_size.powi(2),
            p.process_size.powi(2),
            p.process_velocity.powi(2),
            p.process_velocity.powi(2),
        ));
        let r = Matrix4::from_diagonal(&Vector4::new(
            p.measurement_position.powi(2),
            p.measurement_position.powi(2),
            p.measurement_size.powi(2),
            p.measurement_size.powi(2),
        ));
        Self::constant_velocity(q, r)
    }
}

/// Measured box in camera coordinates with detector confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn new(x: f64, y: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            confidence,
        }
    }

    pub fn from_bbox(b: &BBox, confidence: f64) -> Self {
        Self::new(b.x, b.y, b.w, b.h, confidence)
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w > 0.0
            && self.h > 0.0
            && (0.0..=1.0).contains(&self.confidence)
    }

    fn measurement(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.w, self.h)
    }
}

fn symmetrize(m: &Covariance) -> Covariance {
    (m + m.transpose()) * 0.5
}

/// Prior for the next frame: `s' = F s`, `V' = F V Fᵀ + Q`.
pub fn predict(state: &ObjectState, model: &KalmanModel) -> ObjectState {
    let f = &model.transition;
    ObjectState {
        mean: f * state.mean,
        cov: symmetrize(&(f * state.cov * f.transpose() + model.process_noise)),
    }
}

/// Measurement update with the optimal gain `K = V Oᵀ (O V Oᵀ + R)⁻¹`.
pub fn update(
    state: &ObjectState,
    model: &KalmanModel,
    d: &Detection,
) -> Result<ObjectState, KalmanError> {
    let o = &model.observation;
    let innovation_cov = o * state.cov * o.transpose() + model.measurement_noise;
    let inv = innovation_cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(KalmanError::SingularInnovation)?;
    let gain = state.cov * o.transpose() * inv;
    let residual = d.measurement() - o * state.mean;
    let mean = state.mean + gain * residual;
    let cov = symmetrize(&((Covariance::identity() - gain * o) * state.cov));
    Ok(ObjectState { mean, cov })
}

/// Applies [`update`] only for detections strictly more confident than
/// `threshold`; otherwise the prior is returned untouched.
pub fn gated_update(
    state: &ObjectState,
    model: &KalmanModel,
    d: Option<&Detection>,
    threshold: f64,
) -> Result<ObjectState, KalmanError> {
    match d {
        Some(d) if d.confidence > threshold => update(state, model, d),
        _ => Ok(*state),
    }
}

pub fn init_state(d: &Detection, cfg: &TrackerConfig) -> ObjectState {
    ObjectState {
        mean: Vector6::new(d.x, d.y, d.w, d.h, 0.0, 0.0),
        cov: cfg.kalman.initial_covariance(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_noise_model() -> KalmanModel {
        KalmanModel::constant_velocity(Matrix6::zeros(), Matrix4::identity() * 16.0)
    }

    fn state(s: [f64; 6]) -> ObjectState {
        ObjectState::new(Vector6::from_row_slice(&s), Covariance::identity())
    }

    #[test]
    fn predict_static_object() {
        let p = predict(
            &state([10.0, 10.0, 4.0, 4.0, 0.0, 0.0]),
            &zero_noise_model(),
        );
        assert_eq!(p.mean, Vector6::new(10.0, 10.0, 4.0, 4.0, 0.0, 0.0));
    }

    #[test]
    fn predict_constant_velocity_step() {
        let p = predict(
            &state([10.0, 10.0, 4.0, 4.0, 2.0, -1.0]),
            &zero_noise_model(),
        );
        assert_eq!(p.mean, Vector6::new(12.0, 9.0, 4.0, 4.0, 2.0, -1.0));
    }

    #[test]
    fn predict_covariance_matches_elementwise_product() {
        let model = KalmanModel::from_params(&KalmanParams::default());
        let a = Matrix6::from_fn(|r, c| ((r * 7 + c * 3) % 5) as f64 * 0.3 - 0.4);
        let v = a * a.transpose() + Matrix6::identity();
        let s = ObjectState::new(Vector6::new(1.0, 2.0, 3.0, 4.0, 0.5, -0.5), v);
        let p = predict(&s, &model);
        let f = model.transition;
        for i in 0..6 {
            for j in 0..6 {
                let mut acc = model.process_noise[(i, j)];
                for k in 0..6 {
                    for l in 0..6 {
                        acc += f[(i, k)] * v[(k, l)] * f[(j, l)];
                    }
                }
                assert!((p.cov[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vanishing_measurement_noise_forces_measurement() {
        let model = KalmanModel::constant_velocity(Matrix6::zeros(), Matrix4::identity() * 1e-12);
        let prior = state([10.0, 10.0, 4.0, 4.0, 1.0, 1.0]);
        let d = Detection::new(20.0, 20.0, 5.0, 5.0, 0.9);
        let post = update(&prior, &model, &d).unwrap();
        for (i, want) in [20.0, 20.0, 5.0, 5.0].into_iter().enumerate() {
            assert!((post.mean[i] - want).abs() < 1e-4);
        }
    }

    #[test]
    fn certain_prior_ignores_measurement() {
        let model = zero_noise_model();
        let prior = ObjectState::new(
            Vector6::new(10.0, 10.0, 4.0, 4.0, 1.0, 1.0),
            Covariance::zeros(),
        );
        let post = update(&prior, &model, &Detection::new(50.0, -3.0, 9.0, 2.0, 1.0)).unwrap();
        assert_eq!(post.mean, prior.mean);
        assert_eq!(post.cov, prior.cov);
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let model = KalmanModel::constant_velocity(Matrix6::zeros(), Matrix4::zeros());
        let prior = ObjectState::new(
            Vector6::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0),
            Covariance::zeros(),
        );
        assert_eq!(
            update(&prior, &model, &Detection::new(1.0, 1.0, 1.0, 1.0, 1.0)),
            Err(KalmanError::SingularInnovation)
        );
    }

    #[test]
    fn gate_closed_open_and_absent() {
        let model = zero_noise_model();
        let prior = state([10.0, 10.0, 4.0, 4.0, 1.0, 1.0]);
        let weak = Detection::new(30.0, 30.0, 4.0, 4.0, 0.1);
        let strong = Detection::new(30.0, 30.0, 4.0, 4.0, 0.9);
        assert_eq!(
            gated_update(&prior, &model, Some(&weak), 0.5).unwrap(),
            prior
        );
        assert_eq!(gated_update(&prior, &model, None, 0.5).unwrap(), prior);
        assert_eq!(
            gated_update(&prior, &model, Some(&strong), 0.5).unwrap(),
            update(&prior, &model, &strong).unwrap()
        );
        // equality does not open the gate
        let edge = Detection::new(30.0, 30.0, 4.0, 4.0, 0.5);
        assert_eq!(
            gated_update(&prior, &model, Some(&edge), 0.5).unwrap(),
            prior
        );
    }

    #[test]
    fn init_state_from_detection() {
        let cfg = TrackerConfig::default();
        let s = init_state(&Detection::new(5.0, 5.0, 2.0, 2.0, 1.0), &cfg);
        assert_eq!(s.mean, Vector6::new(5.0, 5.0, 2.0, 2.0, 0.0, 0.0));
        assert_eq!(s.velocity(), (0.0, 0.0));
        assert_eq!(s.cov, cfg.kalman.initial_covariance());
        assert_eq!(s.cov[(0, 0)], 100.0);
        assert_eq!(s.cov[(4, 4)], 100.0);
    }

    #[test]
    fn converges_on_noise_free_constant_velocity() {
        let model = KalmanModel::constant_velocity(Matrix6::zeros(), Matrix4::identity() * 1e-12);
        let mut s = init_state(
            &Detection::new(0.0, 0.0, 10.0, 10.0, 1.0),
            &TrackerConfig::default(),
        );
        let (vx, vy) = (3.0, -1.5);
        let mut last_err = f64::INFINITY;
        for t in 1..=10 {
            s = predict(&s, &model);
            let d = Detection::new(vx * t as f64, vy * t as f64, 10.0, 10.0, 1.0);
            s = update(&s, &model, &d).unwrap();
            let p = predict(&s, &model);
            last_err = (p.mean[0] - vx * (t + 1) as f64).hypot(p.mean[1] - vy * (t + 1) as f64);
        }
        assert!(last_err < 1e-6, "error {last_err}");
    }

    fn psd_min_eig(m: &Covariance) -> f64 {
        m.symmetric_eigen().eigenvalues.min()
    }

    proptest! {
        #[test]
        fn update_never_increases_uncertainty(
            seed in proptest::collection::vec(-1.0f64..1.0, 36),
            dx in -20.0f64..20.0, dy in -20.0f64..20.0,
        ) {
            let a = Matrix6::from_row_slice(&seed);
            let v = a * a.transpose() * 10.0 + Matrix6::identity() * 0.1;
            let model = KalmanModel::from_params(&KalmanParams::default());
            let prior = ObjectState::new(Vector6::new(50.0, 50.0, 20.0, 20.0, 1.0, 1.0), v);
            let post = update(&prior, &model, &Detection::new(50.0 + dx, 50.0 + dy, 22.0, 18.0, 1.0)).unwrap();
            let diff = prior.cov - post.cov;
            prop_assert!(psd_min_eig(&symmetrize(&diff)) >= -1e-9 * prior.cov.trace());
            prop_assert!(psd_min_eig(&post.cov) >= -1e-9 * post.cov.trace());
        }

        #[test]
        fn symmetry_preserved(
            meas in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::ANY), 1..40),
        ) {
            let model = KalmanModel::from_params(&KalmanParams::default());
            let mut s = init_state(&Detection::new(0.0, 0.0, 10.0, 10.0, 1.0), &TrackerConfig::default());
            for (t, (nx, ny, observe)) in meas.into_iter().enumerate() {
                s = predict(&s, &model);
                if observe {
                    let d = Detection::new(2.0 * t as f64 + nx, ny, 10.0, 10.0, 1.0);
                    s = update(&s, &model, &d).unwrap();
                }
                let asym = (s.cov - s.cov.transpose()).amax();
                prop_assert!(asym < 1e-9 * s.cov.trace());
            }
        }
    }
}
