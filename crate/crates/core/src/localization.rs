//! Extended Kalman filter fusing low-rate GPS-like pose fixes with
//! high-rate encoder speed and IMU yaw rate.
//!
//! Motion model over one step `dt`, with `phi = theta + dt * yaw_rate`:
//!
//! ```text
//! x'     = x + dt * v * cos(phi)
//! y'     = y + dt * v * sin(phi)
//! theta' = phi
//! ```
//!
//! The measurement is the full pose (`H = I`). When the fix carries no
//! heading only the position rows are used.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap, Pose2D, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuInput {
    /// Encoder longitudinal speed, m/s.
    pub v: f64,
    /// IMU yaw rate, rad/s.
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub x: f64,
    pub y: f64,
    /// `None` when the vehicle has not moved enough to define a heading.
    pub theta: Option<f64>,
    pub timestamp: SimTime,
}

/// Filter noise setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Diagonal of the process noise covariance W.
    pub process_noise: [f64; 3],
    /// Diagonal of the measurement noise covariance V.
    pub measurement_noise: [f64; 3],
    /// Diagonal of the initial error covariance.
    pub initial_covariance: [f64; 3],
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            process_noise: [0.01, 0.01, 0.001],
            measurement_noise: [0.0, 0.0, 0.01],
            initial_covariance: [0.01, 0.01, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x_hat: Vector3<f64>,
    pub p: Matrix3<f64>,
    pub w: Matrix3<f64>,
    pub v: Matrix3<f64>,
    pub h: Matrix3<f64>,
}

impl EkfState {
    pub fn new(initial: Pose2D, cfg: &EkfConfig) -> Self {
        Self {
            x_hat: Vector3::new(initial.x, initial.y, initial.theta),
            p: Matrix3::from_diagonal(&Vector3::from(cfg.initial_covariance)),
            w: Matrix3::from_diagonal(&Vector3::from(cfg.process_noise)),
            v: Matrix3::from_diagonal(&Vector3::from(cfg.measurement_noise)),
            h: Matrix3::identity(),
        }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x_hat[0], self.x_hat[1], self.x_hat[2])
    }
}

/// Motion model without covariance.
pub fn motion(x: &Vector3<f64>, u: &ImuInput, dt: f64) -> Vector3<f64> {
    let phi = x[2] + dt * u.yaw_rate;
    Vector3::new(
        x[0] + dt * u.v * phi.cos(),
        x[1] + dt * u.v * phi.sin(),
        phi,
    )
}

/// Jacobian of [`motion`] with respect to the state.
pub fn jacobian(x: &Vector3<f64>, u: &ImuInput, dt: f64) -> Matrix3<f64> {
    let phi = x[2] + dt * u.yaw_rate;
    let mut a = Matrix3::identity();
    a[(0, 2)] = -u.v * dt * phi.sin();
    a[(1, 2)] = u.v * dt * phi.cos();
    a
}

/// Motion update; this is the whole step when no fix arrives.
pub fn predict(state: &EkfState, u: &ImuInput, dt: f64) -> EkfState {
    let a = jacobian(&state.x_hat, u, dt);
    let mut x = motion(&state.x_hat, u, dt);
    x[2] = wrap(x[2]);
    let p = symmetrize(a * state.p * a.transpose() + state.w);
    EkfState {
        x_hat: x,
        p,
        ..state.clone()
    }
}

/// Measurement update with a fix, applied to the predicted state.
pub fn correct(state: &EkfState, z: &GpsFix) -> Result<EkfState> {
    match z.theta {
        Some(theta) => {
            let meas = Vector3::new(z.x, z.y, theta);
            update::<3>(state, state.h, state.v, meas, Some(2))
        }
        None => {
            let h = state.h.fixed_rows::<2>(0).into_owned();
            let v = state.v.fixed_view::<2, 2>(0, 0).into_owned();
            update::<2>(state, h, v, SVector::<f64, 2>::new(z.x, z.y), None)
        }
    }
}

fn update<const D: usize>(
    state: &EkfState,
    h: SMatrix<f64, D, 3>,
    v: SMatrix<f64, D, D>,
    z: SVector<f64, D>,
    heading_row: Option<usize>,
) -> Result<EkfState> {
    let s = h * state.p * h.transpose() + v;
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    if s_inv.iter().any(|e| !e.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let k = state.p * h.transpose() * s_inv;
    let mut innov = z - h * state.x_hat;
    if let Some(r) = heading_row {
        innov[r] = wrap(innov[r]);
    }
    let mut x = state.x_hat + k * innov;
    x[2] = wrap(x[2]);
    let p = symmetrize((Matrix3::identity() - k * h) * state.p);
    Ok(EkfState {
        x_hat: x,
        p,
        ..state.clone()
    })
}

fn symmetrize(p: Matrix3<f64>) -> Matrix3<f64> {
    (p + p.transpose()) * 0.5
}

/// One filter per vehicle.
#[derive(Debug, Clone)]
pub struct Localizer {
    state: EkfState,
    dt: f64,
}

impl Localizer {
    pub fn new(initial: Pose2D, cfg: &EkfConfig, dt: f64) -> Self {
        Self {
            state: EkfState::new(initial, cfg),
            dt,
        }
    }

    /// Predict, then correct if a fix arrived this step.
    pub fn step(&mut self, u: &ImuInput, fix: Option<&GpsFix>) -> Result<Pose2D> {
        let predicted = predict(&self.state, u, self.dt);
        self.state = match fix {
            Some(z) => correct(&predicted, z)?,
            None => predicted,
        };
        Ok(self.state.pose())
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn pose(&self) -> Pose2D {
        self.state.pose()
    }
}
