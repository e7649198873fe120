//! Scenario files: a versioned TOML document describing the map, the
//! vehicles, the leader's speed profile and every sensor, channel and
//! controller setting of one run.
//!
//! ```toml
//! format = "scenario v1"
//! name = "straight"
//! map = "straight.lanemap"   # relative to the scenario file
//! duration = 20.0
//! seed = 1
//!
//! [leader]
//! profile = [[0.0, 0.5], [20.0, 0.5]]
//!
//! [[vehicles]]
//! initial_arc = 1.0
//! initial_speed = 0.5
//!
//! [[vehicles]]
//! initial_arc = 0.4
//! initial_speed = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comms::ChannelConfig;
use crate::controller::{ControllerGains, SwitchConfig};
use crate::error::{Error, Result};
use crate::gap::GapConfig;
use crate::lane_map::LaneMap;
use crate::lateral::PursuitConfig;
use crate::localization::EkfConfig;
use crate::sensors::{RangeSensorConfig, SensorNoise};
use crate::types::{seconds_to_ticks, VehicleParams};

pub const FORMAT_TAG: &str = "scenario v1";

/// Piecewise-linear leader speed reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderProfile {
    /// `(t, v)` breakpoints in s and m/s, strictly increasing in `t`.
    pub profile: Vec<(f64, f64)>,
    /// Multiplies every profile speed.
    #[serde(default = "one")]
    pub speed_scale: f64,
    /// Proportional speed-tracking gain of the leader, 1/s.
    #[serde(default = "default_speed_gain")]
    pub speed_gain: f64,
}

fn one() -> f64 {
    1.0
}

fn default_speed_gain() -> f64 {
    2.0
}

impl LeaderProfile {
    /// Reference speed and its slope at time `t`. Outside the breakpoints the
    /// end values hold with zero slope.
    pub fn reference(&self, t: f64) -> (f64, f64) {
        let p = &self.profile;
        let k = self.speed_scale;
        if t <= p[0].0 {
            return (k * p[0].1, 0.0);
        }
        for w in p.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t < t1 {
                let slope = (v1 - v0) / (t1 - t0);
                return (k * (v0 + slope * (t - t0)), k * slope);
            }
        }
        (k * p[p.len() - 1].1, 0.0)
    }

    fn validate(&self) -> Result<()> {
        if self.profile.is_empty() {
            return Err(Error::Scenario("leader profile is empty".into()));
        }
        for &(t, v) in &self.profile {
            if !t.is_finite() || !v.is_finite() || v < 0.0 {
                return Err(Error::Scenario(format!("bad profile point ({t}, {v})")));
            }
        }
        if self.profile.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Scenario(
                "profile times must be strictly increasing".into(),
            ));
        }
        if !(self.speed_scale >= 0.0 && self.speed_scale.is_finite()) {
            return Err(Error::Scenario(
                "speed_scale must be finite and >= 0".into(),
            ));
        }
        if !(self.speed_gain > 0.0) {
            return Err(Error::Scenario("speed_gain must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    #[serde(default)]
    pub params: VehicleParams,
    /// Front-bumper arc position on the map at t = 0, m.
    pub initial_arc: f64,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default)]
    pub gains: ControllerGains,
    /// Distance of the localized reference point behind the front bumper, m.
    #[serde(default)]
    pub antenna_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub range: RangeSensorConfig,
    pub noise: SensorNoise,
}

/// Channel settings; the channel seed is derived from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub rate: f64,
    pub loss_prob: f64,
    pub latency: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelConfig::default();
        Self {
            rate: c.rate,
            loss_prob: c.loss_prob,
            latency: c.latency,
        }
    }
}

impl ChannelSection {
    pub fn with_seed(&self, rng_seed: u64) -> ChannelConfig {
        ChannelConfig {
            rate: self.rate,
            loss_prob: self.loss_prob,
            latency: self.latency,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    /// Ignore the range sensor.
    ApproximationOnly,
    /// Never use the approximation for control.
    RangeOnly,
    /// Range sensor when valid, approximation otherwise.
    Switching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchingSection {
    pub mode: SwitchMode,
    pub validity_band: Option<(f64, f64)>,
    pub hold_timeout: f64,
    /// Dead-reckon the received leader pose forward by its age before
    /// approximating the gap.
    pub extrapolate_leader: bool,
}

impl Default for SwitchingSection {
    fn default() -> Self {
        let s = SwitchConfig::default();
        Self {
            mode: SwitchMode::Switching,
            validity_band: s.validity_band,
            hold_timeout: s.hold_timeout,
            extrapolate_leader: false,
        }
    }
}

impl SwitchingSection {
    pub fn switch_config(&self) -> SwitchConfig {
        SwitchConfig {
            validity_band: self.validity_band,
            hold_timeout: self.hold_timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub trace: String,
    pub summary: String,
    pub messages: String,
    /// Statistics ignore samples before this time, s.
    pub steady_start: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            trace: "trace.csv".into(),
            summary: "summary.json".into(),
            messages: "messages.jsonl".into(),
            steady_start: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: String,
    pub name: String,
    /// Lane map path. Relative paths are resolved against the scenario file.
    pub map: PathBuf,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub leader: LeaderProfile,
    /// Vehicle 0 leads; each later vehicle follows the one before it.
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub sensors: SensorSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub switching: SwitchingSection,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub ekf: EkfConfig,
    #[serde(default)]
    pub pursuit: PursuitConfig,
    #[serde(default)]
    pub output: OutputSection,
}

impl Scenario {
    /// Parses scenario text. `base_dir` anchors a relative map path.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        Self::from_value(value, base_dir)
    }

    /// Builds a scenario from an already parsed TOML document, as the sweep
    /// command does after editing parameters.
    pub fn from_value(value: toml::Value, base_dir: Option<&Path>) -> Result<Self> {
        let mut sc: Scenario = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Scenario(e.to_string()))?;
        if let Some(dir) = base_dir {
            if sc.map.is_relative() {
                sc.map = dir.join(&sc.map);
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn load_map(&self) -> Result<LaneMap> {
        LaneMap::load_file(&self.map)
    }

    pub fn ticks(&self) -> u64 {
        seconds_to_ticks(self.duration).unwrap_or(0)
    }

    /// Checks everything that does not need the map.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_TAG {
            return Err(Error::Scenario(format!(
                "unsupported format {:?}, expected {FORMAT_TAG:?}",
                self.format
            )));
        }
        seconds_to_ticks(self.duration).map_err(|e| Error::Scenario(e.to_string()))?;
        self.leader.validate()?;
        if self.vehicles.is_empty() {
            return Err(Error::Scenario("at least one vehicle is required".into()));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let ctx = |e: Error| Error::Scenario(format!("vehicle {i}: {e}"));
            v.params.validate().map_err(ctx)?;
            crate::controller::ControllerConfig::new(&v.gains, &v.params)
                .validate()
                .map_err(ctx)?;
            if !(v.initial_speed >= 0.0 && v.initial_speed.is_finite()) {
                return Err(Error::Scenario(format!(
                    "vehicle {i}: initial_speed must be >= 0"
                )));
            }
            if !v.initial_arc.is_finite() || !v.antenna_offset.is_finite() {
                return Err(Error::Scenario(format!("vehicle {i}: non-finite position")));
            }
        }
        for (i, w) in self.vehicles.windows(2).enumerate() {
            if w[1].initial_arc >= w[0].initial_arc {
                return Err(Error::Scenario(format!(
                    "vehicle {} must start behind vehicle {i}",
                    i + 1
                )));
            }
        }
        self.channel
            .with_seed(0)
            .validate()
            .map_err(|e| Error::Scenario(format!("channel: {e}")))?;
        if let Some((lo, hi)) = self.switching.validity_band {
            if !(lo < hi) {
                return Err(Error::Scenario("validity_band must satisfy lo < hi".into()));
            }
        }
        if !(self.switching.hold_timeout >= 0.0) {
            return Err(Error::Scenario("hold_timeout must be >= 0".into()));
        }
        self.pursuit
            .validate()
            .map_err(|e| Error::Scenario(format!("pursuit: {e}")))?;
        if !(self.gap.margin > 0.0 && self.gap.margin_growth >= 1.0) {
            return Err(Error::Scenario(
                "gap margin must be > 0 and growth >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Checks the vehicle placement against the map.
    pub fn validate_against(&self, map: &LaneMap) -> Result<()> {
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.initial_arc < 0.0 || v.initial_arc > map.length() {
                return Err(Error::Scenario(format!(
                    "vehicle {i}: initial_arc {} outside [0, {}]",
                    v.initial_arc,
                    map.length()
                )));
            }
        }
        Ok(())
    }
}
