//! Kalman interpolation of missing detection frames.
//!
//! The filter state augments the 8 corner coordinates with 8 corner
//! velocities; the transition matrix moves corners by their velocities each
//! frame and the observation extracts the corner block. Process and
//! observation covariances are isotropic with configurable scales.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type CornerVec = SVector<f64, 8>;
type StateVec = SVector<f64, 16>;
type StateMat = SMatrix<f64, 16, 16>;
type ObsMat = SMatrix<f64, 8, 16>;
type InnovMat = SMatrix<f64, 8, 8>;

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// [corners, corner velocities].
    pub state: StateVec,
    pub covariance: StateMat,
    pub q_scale: f64,
    pub r_scale: f64,
}

fn transition(dt: f64) -> StateMat {
    let mut f = StateMat::identity();
    for i in 0..8 {
        f[(i, i + 8)] = dt;
    }
    f
}

fn observation() -> ObsMat {
    let mut h = ObsMat::zeros();
    for i in 0..8 {
        h[(i, i)] = 1.0;
    }
    h
}

impl KalmanState {
    /// Initialize from corners with zero velocity.
    pub fn from_corners(corners: &[f64; 8], q_scale: f64, r_scale: f64) -> Self {
        let mut state = StateVec::zeros();
        for i in 0..8 {
            state[i] = corners[i];
        }
        Self { state, covariance: StateMat::identity() * 1e-2, q_scale, r_scale }
    }

    /// Initialize from two consecutive observations; the velocity block is
    /// their first difference, so exactly linear tracks predict exactly.
    pub fn from_pair(oldest: &[f64; 8], next: &[f64; 8], q_scale: f64, r_scale: f64) -> Self {
        let mut state = StateVec::zeros();
        for i in 0..8 {
            state[i] = next[i];
            state[i + 8] = next[i] - oldest[i];
        }
        Self { state, covariance: StateMat::identity() * 1e-2, q_scale, r_scale }
    }

    pub fn corners(&self) -> [f64; 8] {
        std::array::from_fn(|i| self.state[i])
    }
}

/// Predict `dt` frames ahead: linear transition plus isotropic process
/// noise added once per call.
pub fn kf_predict(ks: &KalmanState, dt: f64) -> KalmanState {
    let f = transition(dt);
    let state = f * ks.state;
    let mut covariance = f * ks.covariance * f.transpose();
    if ks.q_scale > 0.0 {
        covariance += StateMat::identity() * ks.q_scale;
    }
    covariance = (covariance + covariance.transpose()) * 0.5;
    KalmanState { state, covariance, ..*ks }
}

/// Standard measurement update with the corner observation; the posterior
/// covariance is re-symmetrized after the Joseph-free update.
pub fn kf_update(ks: &KalmanState, z: &[f64; 8]) -> Result<KalmanState, KalmanError> {
    let h = observation();
    let r = InnovMat::identity() * ks.r_scale;
    let innovation_cov = h * ks.covariance * h.transpose() + r;
    let inv = innovation_cov.try_inverse().ok_or(KalmanError::SingularInnovation)?;
    let gain = ks.covariance * h.transpose() * inv;
    let z_vec = CornerVec::from_row_slice(z);
    let residual = z_vec - h * ks.state;
    let state = ks.state + gain * residual;
    let mut covariance = (StateMat::identity() - gain * h) * ks.covariance;
    covariance = (covariance + covariance.transpose()) * 0.5;
    Ok(KalmanState { state, covariance, ..*ks })
}
