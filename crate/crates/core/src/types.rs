//! Shared value types: planar poses, the tick clock, and vehicle parameters.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base simulation step (the IMU/EKF rate).
pub const DT_BASE: f64 = 0.01;
/// Comms period in base steps (20 Hz).
pub const COMMS_PERIOD_TICKS: u64 = 5;
/// GPS period in base steps (2 Hz).
pub const GPS_PERIOD_TICKS: u64 = 50;

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::InvalidArgument(format!("angle is not finite: {a}")));
    }
    Ok(wrap(a))
}

/// Infallible wrap for angles already known to be finite.
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can land on -π after the shift only through rounding
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Planar pose: position in meters, heading in radians CCW from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point `d` meters along the heading (negative is behind).
    pub fn offset_along(&self, d: f64) -> [f64; 2] {
        [self.x + d * self.theta.cos(), self.y + d * self.theta.sin()]
    }
}

/// Integer tick clock. All module rates divide the base step exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime {
    pub tick: u64,
}

impl SimTime {
    pub const ZERO: SimTime = SimTime { tick: 0 };

    pub fn from_tick(tick: u64) -> Self {
        Self { tick }
    }

    pub fn seconds(&self) -> f64 {
        self.tick as f64 * DT_BASE
    }

    pub fn is_comms_tick(&self) -> bool {
        self.tick.is_multiple_of(COMMS_PERIOD_TICKS)
    }

    pub fn is_gps_tick(&self) -> bool {
        self.tick.is_multiple_of(GPS_PERIOD_TICKS)
    }

    pub fn next(&self) -> Self {
        Self {
            tick: self.tick + 1,
        }
    }

    /// Seconds elapsed since `earlier` (zero if `earlier` is in the future).
    pub fn since(&self, earlier: SimTime) -> f64 {
        self.tick.saturating_sub(earlier.tick) as f64 * DT_BASE
    }
}

/// Converts a duration in seconds to a whole number of base steps.
pub fn seconds_to_ticks(seconds: f64) -> Result<u64> {
    if !seconds.is_finite() || seconds < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "duration must be finite and non-negative, got {seconds}"
        )));
    }
    Ok((seconds / DT_BASE).round() as u64)
}

/// Longitudinal plant and spacing parameters of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// First-order time constant of the velocity loop, s.
    #[serde(default = "VehicleParams::default_tau")]
    pub tau: f64,
    /// Actuation delay, s. Must be a whole number of base steps.
    #[serde(default = "VehicleParams::default_tau_d")]
    pub tau_d: f64,
    /// Body length, m.
    #[serde(default = "VehicleParams::default_body_length")]
    pub body_length: f64,
    /// Time gap, s.
    #[serde(default = "VehicleParams::default_h")]
    pub h: f64,
    /// Standstill distance, m.
    #[serde(default = "VehicleParams::default_l0")]
    pub l0: f64,
}

impl VehicleParams {
    fn default_tau() -> f64 {
        0.0661
    }
    fn default_tau_d() -> f64 {
        0.04
    }
    fn default_body_length() -> f64 {
        0.2
    }
    fn default_h() -> f64 {
        0.8
    }
    fn default_l0() -> f64 {
        0.2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.tau_d >= 0.0) {
            return bad("tau_d must be >= 0");
        }
        if !(self.body_length > 0.0) {
            return bad("body_length must be > 0");
        }
        if !(self.h > 0.0) {
            return bad("h must be > 0");
        }
        if !(self.l0 >= 0.0) {
            return bad("l0 must be >= 0");
        }
        let steps = self.tau_d / DT_BASE;
        if (steps - steps.round()).abs() > 1e-9 {
            return bad("tau_d must be an integer multiple of the base step");
        }
        Ok(())
    }

    /// Length of the actuation delay line in base steps.
    pub fn delay_steps(&self) -> usize {
        (self.tau_d / DT_BASE).round() as usize
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            tau: Self::default_tau(),
            tau_d: Self::default_tau_d(),
            body_length: Self::default_body_length(),
            h: Self::default_h(),
            l0: Self::default_l0(),
        }
    }
}
