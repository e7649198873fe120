//! Longitudinal plant: delayed first-order velocity lag, exactly discretized
//! under zero-order hold, with an optional acceleration-command integrator in
//! front of it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::types::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalState {
    /// Actual velocity, m/s.
    pub v: f64,
    /// Traversed arc distance, m.
    pub s: f64,
    /// Desired-velocity integrator used by acceleration mode, m/s.
    pub v_des: f64,
    /// Pending desired-velocity commands, oldest first.
    pub v_cmd_buffer: VecDeque<f64>,
}

impl LongitudinalState {
    /// Steady state at speed `v` with the delay line filled with `v`.
    pub fn new(params: &VehicleParams, v: f64, s: f64) -> Self {
        let v = v.max(0.0);
        Self {
            v,
            s,
            v_des: v,
            v_cmd_buffer: std::iter::repeat_n(v, params.delay_steps()).collect(),
        }
    }

    pub fn at_rest(params: &VehicleParams) -> Self {
        Self::new(params, 0.0, 0.0)
    }
}

/// Velocity-command plant of one vehicle.
#[derive(Debug, Clone)]
pub struct Longitudinal {
    params: VehicleParams,
    /// 1 - exp(-dt/tau)
    alpha: f64,
    dt: f64,
}

impl Longitudinal {
    pub fn new(params: VehicleParams, dt: f64) -> Self {
        Self {
            params,
            alpha: 1.0 - (-dt / params.tau).exp(),
            dt,
        }
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step of the delayed first-order lag driven by desired velocity.
    pub fn step_velocity_mode(&self, state: &LongitudinalState, v_des: f64) -> LongitudinalState {
        let mut next = state.clone();
        let delayed = push_delay(&mut next.v_cmd_buffer, v_des);
        let v_new = (state.v + self.alpha * (delayed - state.v)).max(0.0);
        next.s = state.s + self.dt * (state.v + v_new) * 0.5;
        next.v = v_new;
        next
    }

    /// One step driven by commanded acceleration. The command is integrated
    /// into the desired velocity; the lag sees the mean desired velocity over
    /// the step so a ramp is tracked with the continuous-time lag.
    pub fn step_accel_mode(&self, state: &LongitudinalState, u: f64) -> LongitudinalState {
        let v_des_new = (state.v_des + u * self.dt).max(0.0);
        let held = 0.5 * (state.v_des + v_des_new);
        let mut next = self.step_velocity_mode(state, held);
        next.v_des = v_des_new;
        next
    }
}

/// Pushes `cmd` and returns the command leaving the line. A zero-length line
/// passes the command straight through.
fn push_delay(line: &mut VecDeque<f64>, cmd: f64) -> f64 {
    if line.is_empty() {
        return cmd;
    }
    line.push_back(cmd);
    line.pop_front().unwrap_or(cmd)
}
