//! Simulated sensors. Every model reads ground truth and draws noise from an
//! explicitly passed generator.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::localization::{GpsFix, ImuInput};
use crate::types::{wrap, Pose2D, SimTime};

/// GPS headings need at least this much displacement between fixes, m.
pub const MIN_HEADING_DISPLACEMENT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeReading {
    /// `None` when the target is not detected.
    pub distance: Option<f64>,
}

impl RangeReading {
    pub const LOST: RangeReading = RangeReading { distance: None };

    pub fn valid(&self) -> bool {
        self.distance.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeSensorConfig {
    pub enabled: bool,
    /// Half field of view, degrees.
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    pub noise_std: f64,
}

impl Default for RangeSensorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fov_half_angle_deg: 15.0,
            max_range: 1.5,
            noise_std: 0.002,
        }
    }
}

impl RangeSensorConfig {
    pub fn fov_half_angle(&self) -> f64 {
        self.fov_half_angle_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoise {
    /// Encoder speed noise, m/s.
    pub encoder_std: f64,
    /// IMU yaw-rate noise, rad/s.
    pub yaw_rate_std: f64,
    /// GPS position noise per axis, m.
    pub gps_std: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            encoder_std: 0.005,
            yaw_rate_std: 0.01,
            gps_std: 0.0,
        }
    }
}

impl SensorNoise {
    pub const NONE: SensorNoise = SensorNoise {
        encoder_std: 0.0,
        yaw_rate_std: 0.0,
        gps_std: 0.0,
    };
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    // always draw so the stream position does not depend on the noise level
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    z * std
}

/// Bearing of `target` from `ego`, relative to the ego heading.
pub fn bearing(ego: &Pose2D, target: [f64; 2]) -> f64 {
    wrap((target[1] - ego.y).atan2(target[0] - ego.x) - ego.theta)
}

/// Range sensor mounted at the ego pose looking along its heading. Detects
/// `target` when it is within `max_range` and inside the field of view.
pub fn range_sensor<R: Rng + ?Sized>(
    ego: &Pose2D,
    target: [f64; 2],
    cfg: &RangeSensorConfig,
    rng: &mut R,
) -> RangeReading {
    let noise = gaussian(rng, cfg.noise_std);
    if !cfg.enabled {
        return RangeReading::LOST;
    }
    let d = (target[0] - ego.x).hypot(target[1] - ego.y);
    if d > cfg.max_range || bearing(ego, target).abs() > cfg.fov_half_angle() {
        return RangeReading::LOST;
    }
    RangeReading {
        distance: Some((d + noise).max(0.0)),
    }
}

/// Emulated GPS fix. The heading is the direction from the previous fix
/// position to this one and is absent below [`MIN_HEADING_DISPLACEMENT`].
pub fn emulated_gps<R: Rng + ?Sized>(
    true_position: [f64; 2],
    prev_fix: Option<[f64; 2]>,
    noise_std_pos: f64,
    timestamp: SimTime,
    rng: &mut R,
) -> GpsFix {
    let x = true_position[0] + gaussian(rng, noise_std_pos);
    let y = true_position[1] + gaussian(rng, noise_std_pos);
    let theta = prev_fix.and_then(|p| {
        let (dx, dy) = (x - p[0], y - p[1]);
        (dx.hypot(dy) >= MIN_HEADING_DISPLACEMENT).then(|| dy.atan2(dx))
    });
    GpsFix {
        x,
        y,
        theta,
        timestamp,
    }
}

/// Encoder speed and IMU yaw rate with additive Gaussian noise.
pub fn imu_reading<R: Rng + ?Sized>(
    true_v: f64,
    true_yaw_rate: f64,
    noise: &SensorNoise,
    rng: &mut R,
) -> ImuInput {
    let v = true_v + gaussian(rng, noise.encoder_std);
    let yaw_rate = true_yaw_rate + gaussian(rng, noise.yaw_rate_std);
    ImuInput { v, yaw_rate }
}
