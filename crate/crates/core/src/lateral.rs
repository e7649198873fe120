//! Pure-pursuit lane keeping on the map polyline, and the unicycle pose
//! update shared by every vehicle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane_map::LaneMap;
use crate::types::{wrap, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PursuitConfig {
    /// Arc distance from the vehicle's map projection to the look-ahead
    /// point, m.
    pub lookahead: f64,
    /// Extra curvature fraction; positive values cut inside curves.
    pub understeer_bias: f64,
    /// Farthest the vehicle may be from the path before it is lost, m.
    pub search_window: f64,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.4,
            understeer_bias: 0.0,
            search_window: 1.0,
        }
    }
}

impl PursuitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead > 0.0) {
            return Err(Error::InvalidArgument("lookahead must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.understeer_bias) {
            return Err(Error::InvalidArgument(
                "understeer_bias must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Curvature of the arc through the vehicle, tangent to its heading, that
/// passes through the look-ahead point. Positive turns left.
pub fn pursuit_curvature(pose: &Pose2D, path: &LaneMap, cfg: &PursuitConfig) -> Result<f64> {
    let proj = path.project(pose.position());
    let offset = (proj.point[0] - pose.x).hypot(proj.point[1] - pose.y);
    if offset > cfg.search_window {
        return Err(Error::PathLost {
            window: cfg.search_window,
        });
    }
    let target_arc = proj.arc + cfg.lookahead;
    if !path.is_closed() && target_arc > path.length() {
        return Err(Error::PathLost {
            window: cfg.search_window,
        });
    }
    let (target, _) = path.point_at_arc(target_arc);
    let dx = target[0] - pose.x;
    let dy = target[1] - pose.y;
    let (s, c) = pose.theta.sin_cos();
    let lateral = -s * dx + c * dy;
    let dist2 = dx * dx + dy * dy;
    if dist2 == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * lateral / dist2 * (1.0 + cfg.understeer_bias))
}

/// Advances the pose along a circular arc of the given curvature.
pub fn kinematic_step(pose: &Pose2D, v: f64, curvature: f64, dt: f64) -> Pose2D {
    let ds = v * dt;
    let dtheta = ds * curvature;
    let theta = pose.theta;
    let (x, y) = if dtheta.abs() < 1e-12 {
        let mid = theta + 0.5 * dtheta;
        (pose.x + ds * mid.cos(), pose.y + ds * mid.sin())
    } else {
        let t1 = theta + dtheta;
        (
            pose.x + (t1.sin() - theta.sin()) / curvature,
            pose.y - (t1.cos() - theta.cos()) / curvature,
        )
    };
    Pose2D {
        x,
        y,
        theta: wrap(theta + dtheta),
    }
}
