//! Deterministic platooning simulator for cooperative adaptive cruise control
//! with a map-based inter-vehicular distance fallback.
//!
//! A follower normally measures the gap to its predecessor with a range
//! sensor. When the sensor loses the target, the gap is approximated from the
//! two vehicles' localized positions and a lane-center map: the lane points
//! around both vehicles are fitted with a quadratic, both positions are
//! projected onto it, and the arc length between the projections is the gap.
//!
//! Module map:
//! - [`types`]: poses, the tick clock, vehicle parameters
//! - [`dynamics`]: delayed first-order longitudinal plant
//! - [`lateral`]: pure pursuit and the kinematic pose update
//! - [`lane_map`]: the lane-center polyline and its file format
//! - [`gap`]: the distance approximation pipeline
//! - [`localization`]: GPS/IMU extended Kalman filter
//! - [`sensors`], [`comms`]: range sensor, emulated GPS, IMU, V2V channel
//! - [`controller`]: CACC feedback/feedforward and gap-source switching
//! - [`scenario`], [`sim`], [`trace`]: scenario files, tick loop, outputs

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comms;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gap;
pub mod lane_map;
pub mod lateral;
pub mod localization;
pub mod scenario;
pub mod sensors;
pub mod sim;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
pub use types::{normalize_angle, Pose2D, SimTime, VehicleParams, DT_BASE};
