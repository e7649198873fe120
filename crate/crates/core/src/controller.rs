//! Longitudinal CACC controller and the gap-source supervisor.
//!
//! The commanded acceleration is `u = u_fb + u_ff`:
//!
//! * `u_fb = kp * e + kd * e_dot` with the gap-keeping error
//!   `e = gap - (h * v + l0)`;
//! * `u_ff` is the predecessor's commanded acceleration passed through
//!   `(tau s + 1) / (h s + 1)`, the inverse of the plant's lag and of the
//!   spacing policy. The plant's dead time is not inverted.
//!
//! The supervisor picks the gap from the range sensor when it reports a
//! plausible value and from the map-based approximation otherwise. If both
//! are unavailable the last gap is held for a while and then the vehicle
//! falls back to cruise control (constant speed).

use serde::{Deserialize, Serialize};

use crate::comms::V2VMessage;
use crate::error::{Error, Result};
use crate::sensors::RangeReading;
use crate::types::{SimTime, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// Proportional gain, 1/s^2.
    pub kp: f64,
    /// Derivative gain, 1/s.
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub ff_enabled: bool,
    /// Time constant of the filtered differentiators, s.
    pub derivative_filter: f64,
    /// How long a received predecessor acceleration stays valid, s.
    pub ff_hold: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: 2.0,
            kd: 2.8,
            u_min: -2.0,
            u_max: 2.0,
            ff_enabled: true,
            derivative_filter: 0.05,
            ff_hold: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kp: f64,
    pub kd: f64,
    /// Time gap, s.
    pub h: f64,
    /// Standstill distance, m.
    pub l0: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub ff_enabled: bool,
    /// Plant time constant inverted by the feedforward filter, s.
    pub tau: f64,
    pub derivative_filter: f64,
    pub ff_hold: f64,
}

impl ControllerConfig {
    pub fn new(gains: &ControllerGains, params: &VehicleParams) -> Self {
        Self {
            kp: gains.kp,
            kd: gains.kd,
            h: params.h,
            l0: params.l0,
            u_min: gains.u_min,
            u_max: gains.u_max,
            ff_enabled: gains.ff_enabled,
            tau: params.tau,
            derivative_filter: gains.derivative_filter,
            ff_hold: gains.ff_hold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.kp > 0.0 && self.kd > 0.0) {
            return bad("kp and kd must be > 0");
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return bad("need u_min < 0 < u_max");
        }
        if !(self.h > 0.0) {
            return bad("h must be > 0");
        }
        if !(self.derivative_filter > 0.0) {
            return bad("derivative_filter must be > 0");
        }
        Ok(())
    }

    fn saturate(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// Gap-keeping error: measured gap minus the desired `h * v + l0`.
pub fn gap_error(gap: f64, v_follower: f64, cfg: &ControllerConfig) -> f64 {
    gap - (cfg.h * v_follower + cfg.l0)
}

/// Saturated PD feedback.
pub fn feedback_accel(e: f64, e_dot: f64, cfg: &ControllerConfig) -> f64 {
    cfg.saturate(cfg.kp * e + cfg.kd * e_dot)
}

/// Discrete `(tau s + 1) / (h s + 1)`, step-invariant: its response to a step
/// equals the continuous response at every sample instant.
///
/// The filter splits into a direct term `tau / h` plus `(1 - tau / h)` times a
/// first-order lag whose exact sampled form is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedforwardFilter {
    direct: f64,
    decay: f64,
    lag: f64,
}

impl FeedforwardFilter {
    pub fn new(tau: f64, h: f64, dt: f64) -> Self {
        Self {
            direct: tau / h,
            decay: (-dt / h).exp(),
            lag: 0.0,
        }
    }

    pub fn step(&mut self, input: f64) -> f64 {
        let out = self.direct * input + (1.0 - self.direct) * self.lag;
        self.lag = self.decay * self.lag + (1.0 - self.decay) * input;
        out
    }

    pub fn reset(&mut self) {
        self.lag = 0.0;
    }
}

/// Free-function form of one feedforward step.
pub fn feedforward_accel(ff_state: &mut FeedforwardFilter, u_leader: f64) -> f64 {
    ff_state.step(u_leader)
}

/// First-order filtered differentiator `s / (T s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredDerivative {
    time_constant: f64,
    decay: f64,
    // weight of the latest increment under a linear-interpolation input
    ramp_gain: f64,
    // (previous input, smoothed value)
    state: Option<(f64, f64)>,
}

impl FilteredDerivative {
    pub fn new(time_constant: f64, dt: f64) -> Self {
        let decay = (-dt / time_constant).exp();
        Self {
            time_constant,
            decay,
            ramp_gain: 1.0 - time_constant * (1.0 - decay) / dt,
            state: None,
        }
    }

    /// Feeds one sample and returns the derivative estimate. Exact for
    /// inputs that are linear between samples.
    pub fn step(&mut self, x: f64) -> f64 {
        let (prev, s) = self.state.unwrap_or((x, x));
        let s = self.decay * s + (1.0 - self.decay) * prev + self.ramp_gain * (x - prev);
        self.state = Some((x, s));
        (x - s) / self.time_constant
    }

    /// Restarts from `x` with zero derivative.
    pub fn reseed(&mut self, x: f64) {
        self.state = Some((x, x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapSource {
    RangeSensor,
    Approximation,
    None,
}

impl GapSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapSource::RangeSensor => "range_sensor",
            GapSource::Approximation => "approximation",
            GapSource::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "range_sensor" => Some(GapSource::RangeSensor),
            "approximation" => Some(GapSource::Approximation),
            "none" => Some(GapSource::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchConfig {
    /// Range readings outside `[lo, hi]` are treated as erroneous.
    pub validity_band: Option<(f64, f64)>,
    /// How long the last gap is held when no source is available, s.
    pub hold_timeout: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            validity_band: None,
            hold_timeout: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSwitch {
    pub at: SimTime,
    pub from: GapSource,
    pub to: GapSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSourceState {
    pub active_source: GapSource,
    pub last_valid_gap: Option<f64>,
    last_valid_at: Option<SimTime>,
}

impl Default for GapSourceState {
    fn default() -> Self {
        Self {
            active_source: GapSource::None,
            last_valid_gap: None,
            last_valid_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSelection {
    /// Gap handed to the controller; `None` means cruise-control fallback.
    pub gap: Option<f64>,
    pub source: GapSource,
    /// True while a held value stands in for a missing source.
    pub holding: bool,
    pub switched: Option<SourceSwitch>,
}

/// Chooses the controller's gap for this tick.
///
/// `approx` is the approximated bumper-to-bumper gap, `None` if the
/// approximation failed this tick.
pub fn select_gap(
    range: &RangeReading,
    approx: Option<f64>,
    state: &mut GapSourceState,
    cfg: &SwitchConfig,
    now: SimTime,
) -> GapSelection {
    let range_ok = range.distance.filter(|&d| match cfg.validity_band {
        Some((lo, hi)) => d >= lo && d <= hi,
        None => true,
    });
    let (gap, source, holding) = match (range_ok, approx) {
        (Some(d), _) => (Some(d), GapSource::RangeSensor, false),
        (None, Some(a)) => (Some(a), GapSource::Approximation, false),
        (None, None) => match (state.last_valid_gap, state.last_valid_at) {
            (Some(g), Some(at)) if now.since(at) <= cfg.hold_timeout => {
                (Some(g), state.active_source, true)
            }
            _ => (None, GapSource::None, false),
        },
    };
    if !holding {
        if let Some(g) = gap {
            state.last_valid_gap = Some(g);
            state.last_valid_at = Some(now);
        }
    }
    let switched = (source != state.active_source).then_some(SourceSwitch {
        at: now,
        from: state.active_source,
        to: source,
    });
    state.active_source = source;
    GapSelection {
        gap,
        source,
        holding,
        switched,
    }
}

/// Outputs of one controller step, kept for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    pub u: f64,
    pub u_fb: f64,
    pub u_ff: f64,
    /// Gap-keeping error, absent in cruise-control fallback.
    pub e: Option<f64>,
}

/// Per-vehicle CACC state.
#[derive(Debug, Clone)]
pub struct CaccController {
    cfg: ControllerConfig,
    ff: FeedforwardFilter,
    gap_rate: FilteredDerivative,
    accel: FilteredDerivative,
    last_leader: Option<V2VMessage>,
    last_source: GapSource,
}

impl CaccController {
    pub fn new(cfg: ControllerConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ff: FeedforwardFilter::new(cfg.tau, cfg.h, dt),
            gap_rate: FilteredDerivative::new(cfg.derivative_filter, dt),
            accel: FilteredDerivative::new(cfg.derivative_filter, dt),
            cfg,
            last_leader: None,
            last_source: GapSource::None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// Most recent predecessor message seen.
    pub fn last_leader(&self) -> Option<&V2VMessage> {
        self.last_leader.as_ref()
    }

    /// One control step.
    ///
    /// `selection` comes from [`select_gap`]; `leader_msg` is a newly
    /// received predecessor message, if any; `v_self` is the measured speed.
    pub fn step(
        &mut self,
        selection: &GapSelection,
        leader_msg: Option<&V2VMessage>,
        v_self: f64,
        now: SimTime,
    ) -> ControlOutput {
        if let Some(m) = leader_msg {
            self.last_leader = Some(*m);
        }
        let a_self = self.accel.step(v_self);

        let ff_input = match self.last_leader {
            Some(m) if self.cfg.ff_enabled && now.since(m.sent_at) <= self.cfg.ff_hold => {
                m.target_accel
            }
            _ => 0.0,
        };
        let u_ff_raw = self.ff.step(ff_input);

        let Some(gap) = selection.gap else {
            // cruise control: hold speed
            self.last_source = GapSource::None;
            self.ff.reset();
            return ControlOutput::default();
        };
        if selection.source != self.last_source {
            self.gap_rate.reseed(gap);
            self.last_source = selection.source;
        }
        let gap_dot = self.gap_rate.step(gap);
        let e = gap_error(gap, v_self, &self.cfg);
        let e_dot = gap_dot - self.cfg.h * a_self;
        let u_fb = feedback_accel(e, e_dot, &self.cfg);
        let u_ff = if self.cfg.ff_enabled { u_ff_raw } else { 0.0 };
        ControlOutput {
            u: self.cfg.saturate(u_fb + u_ff),
            u_fb,
            u_ff,
            e: Some(e),
        }
    }
}

/// Bumper-to-bumper gap from the arc distance between two reference points.
///
/// Reference points sit `*_offset` meters behind each vehicle's front
/// bumper.
pub fn bumper_gap_from_arc(
    arc: f64,
    leader_body_length: f64,
    leader_offset: f64,
    follower_offset: f64,
) -> f64 {
    arc + leader_offset - follower_offset - leader_body_length
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Pose2D, DT_BASE};

    fn cfg() -> ControllerConfig {
        ControllerConfig::new(&ControllerGains::default(), &VehicleParams::default())
    }

    #[test]
    fn gap_error_examples() {
        let c = cfg();
        assert!(gap_error(0.6, 0.5, &c).abs() < 1e-15);
        assert_eq!(gap_error(c.l0, 0.0, &c), 0.0);
        assert!((gap_error(0.7, 0.5, &c) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn feedback_examples() {
        let c = ControllerConfig {
            kp: 1.0,
            kd: 0.5,
            ..cfg()
        };
        assert_eq!(feedback_accel(0.0, 0.0, &c), 0.0);
        assert!((feedback_accel(0.1, -0.05, &c) - 0.075).abs() < 1e-15);
        assert_eq!(feedback_accel(1e6, 0.0, &c), c.u_max);
        assert_eq!(feedback_accel(-1e6, 0.0, &c), c.u_min);
    }

    #[test]
    fn feedforward_zero_in_zero_out() {
        let mut f = FeedforwardFilter::new(0.0661, 0.8, DT_BASE);
        for _ in 0..100 {
            assert_eq!(feedforward_accel(&mut f, 0.0), 0.0);
        }
    }

    #[test]
    fn feedforward_step_matches_transfer_function() {
        let (tau, h, a) = (0.0661, 0.8, 0.3);
        let mut f = FeedforwardFilter::new(tau, h, DT_BASE);
        for n in 0..2000 {
            let t = n as f64 * DT_BASE;
            let analytic = a * (tau / h + (1.0 - tau / h) * (1.0 - (-t / h).exp()));
            let y = f.step(a);
            assert!(
                (y - analytic).abs() <= 0.01 * analytic.abs() + 1e-15,
                "n={n}"
            );
        }
        assert!((f.step(a) - a).abs() < 1e-6);
    }

    #[test]
    fn filtered_derivative_of_ramp() {
        let mut d = FilteredDerivative::new(0.05, DT_BASE);
        let mut last = 0.0;
        for n in 0..200 {
            last = d.step(0.3 * n as f64 * DT_BASE);
        }
        assert!((last - 0.3).abs() < 1e-9);
        d.reseed(5.0);
        assert_eq!(d.step(5.0), 0.0);
    }

    fn reading(d: f64) -> RangeReading {
        RangeReading { distance: Some(d) }
    }

    #[test]
    fn select_with_band() {
        let sw = SwitchConfig {
            validity_band: Some((0.55, 0.65)),
            ..SwitchConfig::default()
        };
        let mut st = GapSourceState::default();
        let s = select_gap(&reading(0.60), Some(0.61), &mut st, &sw, SimTime::ZERO);
        assert_eq!((s.gap, s.source), (Some(0.60), GapSource::RangeSensor));
        let s = select_gap(
            &reading(0.70),
            Some(0.61),
            &mut st,
            &sw,
            SimTime::from_tick(1),
        );
        assert_eq!((s.gap, s.source), (Some(0.61), GapSource::Approximation));
        assert_eq!(
            s.switched,
            Some(SourceSwitch {
                at: SimTime::from_tick(1),
                from: GapSource::RangeSensor,
                to: GapSource::Approximation
            })
        );
        let s = select_gap(
            &RangeReading::LOST,
            Some(0.62),
            &mut st,
            &sw,
            SimTime::from_tick(2),
        );
        assert_eq!(s.source, GapSource::Approximation);
        assert_eq!(s.switched, None);
    }

    #[test]
    fn hold_then_cruise_control() {
        let sw = SwitchConfig::default();
        let mut st = GapSourceState::default();
        select_gap(&RangeReading::LOST, Some(0.6), &mut st, &sw, SimTime::ZERO);
        let held = select_gap(
            &RangeReading::LOST,
            None,
            &mut st,
            &sw,
            SimTime::from_tick(50),
        );
        assert_eq!(held.gap, Some(0.6));
        assert!(held.holding);
        let cc = select_gap(
            &RangeReading::LOST,
            None,
            &mut st,
            &sw,
            SimTime::from_tick(101),
        );
        assert_eq!(cc.gap, None);
        assert_eq!(cc.source, GapSource::None);
        assert!(cc.switched.is_some());
    }

    fn leader(accel: f64, tick: u64) -> V2VMessage {
        V2VMessage {
            sender_id: 0,
            pose: Pose2D::default(),
            target_accel: accel,
            velocity: 0.5,
            sent_at: SimTime::from_tick(tick),
        }
    }

    fn sel(gap: f64) -> GapSelection {
        GapSelection {
            gap: Some(gap),
            source: GapSource::Approximation,
            holding: false,
            switched: None,
        }
    }

    #[test]
    fn equilibrium_gives_zero_command() {
        let mut c = CaccController::new(cfg(), DT_BASE).unwrap();
        let mut out = ControlOutput::default();
        for n in 0..500 {
            let msg = leader(0.0, n);
            out = c.step(
                &sel(0.6),
                (n % 5 == 0).then_some(&msg),
                0.5,
                SimTime::from_tick(n),
            );
        }
        assert!(out.u.abs() < 1e-12);
        assert!(out.e.unwrap().abs() < 1e-12);
    }

    #[test]
    fn leader_acceleration_acts_before_error_grows() {
        let mut c = CaccController::new(cfg(), DT_BASE).unwrap();
        for n in 0..100 {
            c.step(&sel(0.6), Some(&leader(0.0, n)), 0.5, SimTime::from_tick(n));
        }
        let out = c.step(
            &sel(0.6),
            Some(&leader(0.5, 100)),
            0.5,
            SimTime::from_tick(100),
        );
        assert!(out.e.unwrap().abs() < 1e-12);
        assert!(out.u > 0.0);
        let mut acc = CaccController::new(
            ControllerConfig {
                ff_enabled: false,
                ..cfg()
            },
            DT_BASE,
        )
        .unwrap();
        let out = acc.step(&sel(0.6), Some(&leader(0.5, 0)), 0.5, SimTime::ZERO);
        assert!(out.u.abs() < 1e-12);
    }

    #[test]
    fn stale_leader_accel_decays() {
        let mut c = CaccController::new(cfg(), DT_BASE).unwrap();
        c.step(&sel(0.6), Some(&leader(0.5, 0)), 0.5, SimTime::ZERO);
        let mut ff = 0.0;
        for n in 1..=25 {
            ff = c.step(&sel(0.6), None, 0.5, SimTime::from_tick(n)).u_ff;
        }
        assert!(ff > 0.0);
        let at_hold = ff;
        for n in 26..400 {
            ff = c.step(&sel(0.6), None, 0.5, SimTime::from_tick(n)).u_ff;
        }
        assert!(ff < 0.05 * at_hold);
    }

    #[test]
    fn cruise_control_outputs_zero() {
        let mut c = CaccController::new(cfg(), DT_BASE).unwrap();
        let none = GapSelection {
            gap: None,
            source: GapSource::None,
            holding: false,
            switched: None,
        };
        let out = c.step(&none, Some(&leader(0.7, 0)), 0.5, SimTime::ZERO);
        assert_eq!(out, ControlOutput::default());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = ControllerConfig { kp: 0.0, ..cfg() };
        assert!(CaccController::new(bad, DT_BASE).is_err());
        let bad = ControllerConfig {
            u_min: 0.1,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bumper_gap_offsets() {
        assert!((bumper_gap_from_arc(0.8, 0.2, 0.0, 0.0) - 0.6).abs() < 1e-15);
        assert!((bumper_gap_from_arc(0.8, 0.2, 0.05, 0.03) - 0.62).abs() < 1e-15);
    }
}
