//! Seven-state constant-velocity Kalman filter over `[x, y, s, r, vx, vy, vs]`.
//!
//! The transition advances center and area by their velocities; the aspect
//! ratio has no velocity term. The observation picks the first four
//! components. One step is one frame.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ObsVector;

pub type StateVector = SVector<f64, 7>;
pub type StateMatrix = SMatrix<f64, 7, 7>;
pub type ObsMatrix = SMatrix<f64, 4, 4>;
pub type ObservationModel = SMatrix<f64, 4, 7>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is not positive definite; measurement noise must be positive definite")]
    SingularInnovation,
    #[error("invalid Kalman configuration: {0}")]
    Config(String),
    #[error("observation contains non-finite values")]
    NonFiniteObservation,
}

/// State transition matrix.
pub fn transition_matrix() -> StateMatrix {
    #[rustfmt::skip]
    let f = StateMatrix::from_row_slice(&[
        1., 0., 0., 0., 1., 0., 0.,
        0., 1., 0., 0., 0., 1., 0.,
        0., 0., 1., 0., 0., 0., 1.,
        0., 0., 0., 1., 0., 0., 0.,
        0., 0., 0., 0., 1., 0., 0.,
        0., 0., 0., 0., 0., 1., 0.,
        0., 0., 0., 0., 0., 0., 1.,
    ]);
    f
}

/// Observation matrix.
pub fn observation_matrix() -> ObservationModel {
    #[rustfmt::skip]
    let h = ObservationModel::from_row_slice(&[
        1., 0., 0., 0., 0., 0., 0.,
        0., 1., 0., 0., 0., 0., 0.,
        0., 0., 1., 0., 0., 0., 0.,
        0., 0., 0., 1., 0., 0., 0.,
    ]);
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl KalmanState {
    /// The `(x, y, s, r)` part of the mean.
    pub fn observation(&self) -> ObsVector {
        ObsVector {
            x: self.mean[0],
            y: self.mean[1],
            s: self.mean[2],
            r: self.mean[3],
        }
    }
}

/// Noise covariances. All three are stored as full matrices; the serde
/// form is the diagonal, which is all the CLI and config file expose.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub process_noise: StateMatrix,
    pub measurement_noise: ObsMatrix,
    pub initial_covariance: StateMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanDiagonals {
    pub process_noise: [f64; 7],
    pub measurement_noise: [f64; 4],
    pub initial_covariance: [f64; 7],
}

impl Default for KalmanDiagonals {
    fn default() -> Self {
        Self {
            process_noise: [1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 1e-4],
            measurement_noise: [1.0, 1.0, 10.0, 0.01],
            initial_covariance: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
        }
    }
}

impl KalmanConfig {
    pub fn from_diagonals(d: &KalmanDiagonals) -> Result<Self, KalmanError> {
        if d.process_noise.iter().chain(&d.initial_covariance).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(KalmanError::Config(
                "process noise and initial covariance must be finite and non-negative".into(),
            ));
        }
        if d.measurement_noise.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(KalmanError::Config("measurement noise must be positive".into()));
        }
        Ok(Self {
            process_noise: StateMatrix::from_diagonal(&StateVector::from(d.process_noise)),
            measurement_noise: ObsMatrix::from_diagonal(&SVector::<f64, 4>::from(d.measurement_noise)),
            initial_covariance: StateMatrix::from_diagonal(&StateVector::from(d.initial_covariance)),
        })
    }
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self::from_diagonals(&KalmanDiagonals::default()).expect("default diagonals are valid")
    }
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// New state from a first observation, velocities zero.
pub fn init_state(obs: &ObsVector, cfg: &KalmanConfig) -> KalmanState {
    KalmanState {
        mean: StateVector::from([obs.x, obs.y, obs.s, obs.r, 0.0, 0.0, 0.0]),
        covariance: cfg.initial_covariance,
    }
}

pub fn predict(st: &KalmanState, cfg: &KalmanConfig) -> KalmanState {
    let f = transition_matrix();
    KalmanState {
        mean: f * st.mean,
        covariance: symmetrize(&(f * st.covariance * f.transpose() + cfg.process_noise)),
    }
}

/// Measurement correction in Joseph form. The gain comes from a Cholesky
/// solve of the 4x4 innovation covariance, not an explicit inverse.
pub fn update(st: &KalmanState, obs: &ObsVector, cfg: &KalmanConfig) -> Result<KalmanState, KalmanError> {
    let z = SVector::<f64, 4>::from([obs.x, obs.y, obs.s, obs.r]);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(KalmanError::NonFiniteObservation);
    }
    let h = observation_matrix();
    let p = &st.covariance;
    let innovation = z - h * st.mean;
    let s = symmetrize(&(h * p * h.transpose() + cfg.measurement_noise));
    let chol = s.cholesky().ok_or(KalmanError::SingularInnovation)?;
    // K = P H^T S^-1  <=>  S K^T = H P
    let gain = chol.solve(&(h * p)).transpose();
    let mean = st.mean + gain * innovation;
    let i_kh = StateMatrix::identity() - gain * h;
    let covariance = i_kh * p * i_kh.transpose() + gain * cfg.measurement_noise * gain.transpose();
    Ok(KalmanState {
        mean,
        covariance: symmetrize(&covariance),
    })
}
