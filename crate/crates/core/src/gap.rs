//! Inter-vehicular distance approximation from localized positions and the
//! lane map.
//!
//! Pipeline: a bounding box with equal margins around both positions selects
//! a run of lane-center points; a quadratic `y = a x^2 + b x + c` is fitted to
//! them; each position is projected onto the quadratic along the line through
//! it perpendicular to its two nearest lane points; the gap is the arc length
//! of the quadratic between the projections.
//!
//! The quadratic is fitted in a local frame whose x-axis runs along the chord
//! from the first to the last selected point, so sections of road with a
//! vertical world tangent fit as well as horizontal ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane_map::{LaneMap, Rect};

/// Below this |a| the arc length is computed as a straight segment.
const LINEAR_A: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    /// Initial bounding-box margin, m.
    pub margin: f64,
    /// Grow the margin when the box holds fewer points than this.
    pub min_fit_points: usize,
    /// Margin growth factor per attempt.
    pub margin_growth: f64,
    /// Maximum number of margin growths.
    pub max_growth_attempts: u32,
    /// Oldest acceptable leader pose, s.
    pub max_staleness: f64,
    /// Fits with a larger RMS residual are flagged degenerate, m.
    pub degenerate_rms: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            min_fit_points: 5,
            margin_growth: 1.5,
            max_growth_attempts: 3,
            max_staleness: 0.5,
            degenerate_rms: 0.05,
        }
    }
}

/// Rigid transform between world coordinates and a fit frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitFrame {
    pub origin: [f64; 2],
    /// Rotation of the frame's x-axis in world coordinates, rad.
    pub angle: f64,
}

impl FitFrame {
    pub const IDENTITY: FitFrame = FitFrame {
        origin: [0.0, 0.0],
        angle: 0.0,
    };

    /// Frame centred on the chord midpoint with x along the chord.
    pub fn along_chord(first: [f64; 2], last: [f64; 2]) -> Self {
        let dx = last[0] - first[0];
        let dy = last[1] - first[1];
        Self {
            origin: [(first[0] + last[0]) / 2.0, (first[1] + last[1]) / 2.0],
            angle: if dx == 0.0 && dy == 0.0 {
                0.0
            } else {
                dy.atan2(dx)
            },
        }
    }

    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            self.origin[0] + c * q[0] - s * q[1],
            self.origin[1] + s * q[0] + c * q[1],
        ]
    }

    /// Rotates a direction into the frame.
    pub fn dir_to_local(&self, d: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub frame: FitFrame,
    pub n_points: usize,
    pub residual_rms: f64,
    /// Local x range covered by the fitted points.
    pub x_span: (f64, f64),
}

impl QuadraticFit {
    pub fn y_at(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    pub fn is_degenerate(&self, rms_limit: f64) -> bool {
        self.residual_rms > rms_limit
    }
}

/// How a projection point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionKind {
    /// Nearest of the perpendicular line's intersections with the curve.
    Intersection,
    /// Both intersections equally far; the lower line parameter was taken.
    TiedRoots,
    /// The line misses the curve; nearest point on the curve instead.
    NearestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub world: [f64; 2],
    /// Fit-frame x coordinate.
    pub local_x: f64,
    pub kind: ProjectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Arc length between the projections, m.
    pub distance: f64,
    pub proj_leader: Projection,
    pub proj_follower: Projection,
    pub fit: QuadraticFit,
    /// Age of the leader pose used, s.
    pub staleness: f64,
    /// Bounding-box margin after growth, m.
    pub margin: f64,
}

/// Axis-aligned box around both positions whose nearest side is exactly
/// `margin` away from each position.
pub fn bounding_box(p1: [f64; 2], p2: [f64; 2], margin: f64) -> Result<Rect> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be > 0, got {margin}"
        )));
    }
    Rect::new(
        p1[0].min(p2[0]) - margin,
        p1[1].min(p2[1]) - margin,
        p1[0].max(p2[0]) + margin,
        p1[1].max(p2[1]) + margin,
    )
}

/// Least-squares quadratic in the chord frame of `points`.
pub fn fit_quadratic(points: &[[f64; 2]]) -> Result<QuadraticFit> {
    if points.len() < 3 {
        return Err(Error::FitFailure(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let frame = FitFrame::along_chord(points[0], points[points.len() - 1]);
    fit_quadratic_in(points, frame)
}

/// Least-squares quadratic in a caller-chosen frame.
pub fn fit_quadratic_in(points: &[[f64; 2]], frame: FitFrame) -> Result<QuadraticFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::FitFailure(format!(
            "need at least 3 points, got {n}"
        )));
    }
    let local: Vec<[f64; 2]> = points.iter().map(|&p| frame.to_local(p)).collect();
    let design = DMatrix::from_fn(n, 3, |r, c| {
        let x = local[r][0];
        match c {
            0 => x * x,
            1 => x,
            _ => 1.0,
        }
    });
    let rhs = DVector::from_iterator(n, local.iter().map(|q| q[1]));
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(Error::FitFailure(format!(
            "design matrix is rank deficient (condition {:e})",
            smax / smin
        )));
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::FitFailure(e.to_string()))?;
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    let sse: f64 = local
        .iter()
        .map(|q| (q[1] - ((a * q[0] + b) * q[0] + c)).powi(2))
        .sum();
    let (lo, hi) = local
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
            (lo.min(q[0]), hi.max(q[0]))
        });
    let fit = QuadraticFit {
        a,
        b,
        c,
        frame,
        n_points: n,
        residual_rms: (sse / n as f64).sqrt(),
        x_span: (lo, hi),
    };
    if !(fit.a.is_finite()
        && fit.b.is_finite()
        && fit.c.is_finite()
        && fit.residual_rms.is_finite())
    {
        return Err(Error::FitFailure("non-finite coefficients".into()));
    }
    Ok(fit)
}

/// Projects `p` onto the fitted curve along the line through `p` that is
/// perpendicular to the segment joining its two nearest points of `slice`.
pub fn project_onto_curve(
    fit: &QuadraticFit,
    p: [f64; 2],
    slice: &[[f64; 2]],
) -> Result<Projection> {
    if slice.len() < 2 {
        return Err(Error::InvalidArgument(
            "slice needs at least two points".into(),
        ));
    }
    let (ia, ib) = nearest_two(slice, p);
    let (pa, pb) = (slice[ia], slice[ib]);
    let seg = [pb[0] - pa[0], pb[1] - pa[1]];
    let norm = seg[0].hypot(seg[1]);
    let dir = fit.frame.dir_to_local([-seg[1] / norm, seg[0] / norm]);
    let pl = fit.frame.to_local(p);
    Ok(project_local(fit, pl, dir))
}

fn project_local(fit: &QuadraticFit, pl: [f64; 2], dir: [f64; 2]) -> Projection {
    let (a, b, c) = (fit.a, fit.b, fit.c);
    let (px, py) = (pl[0], pl[1]);
    let (dx, dy) = (dir[0], dir[1]);
    // a (px + t dx)^2 + b (px + t dx) + c - (py + t dy) = 0
    let qa = a * dx * dx;
    let qb = 2.0 * a * px * dx + b * dx - dy;
    let qc = (a * px + b) * px + c - py;

    let finish = |x: f64, kind| {
        let local = [x, fit.y_at(x)];
        Projection {
            world: fit.frame.to_world(local),
            local_x: x,
            kind,
        }
    };

    let scale = qb.abs().max(qc.abs()).max(1.0);
    if qa.abs() <= 1e-14 * scale {
        if qb != 0.0 {
            let t = -qc / qb;
            return finish(px + t * dx, ProjectionKind::Intersection);
        }
        return finish(nearest_x_on_curve(fit, pl), ProjectionKind::NearestPoint);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return finish(nearest_x_on_curve(fit, pl), ProjectionKind::NearestPoint);
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    let (t1, t2) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / qa, qc / q)
    };
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let (t, kind) = if lo.abs() < hi.abs() {
        (lo, ProjectionKind::Intersection)
    } else if hi.abs() < lo.abs() {
        (hi, ProjectionKind::Intersection)
    } else if lo == hi {
        (lo, ProjectionKind::Intersection)
    } else {
        (lo, ProjectionKind::TiedRoots)
    };
    finish(px + t * dx, kind)
}

/// Local x of the curve point nearest to `pl`: roots of the stationarity
/// cubic, refined by Newton from a coarse scan.
fn nearest_x_on_curve(fit: &QuadraticFit, pl: [f64; 2]) -> f64 {
    let d2 = |x: f64| (x - pl[0]).powi(2) + (fit.y_at(x) - pl[1]).powi(2);
    let (lo, hi) = fit.x_span;
    let width = (hi - lo).max(1e-3);
    let (lo, hi) = (lo.min(pl[0]) - width, hi.max(pl[0]) + width);
    let steps = 400;
    let mut best = pl[0];
    for k in 0..=steps {
        let x = lo + (hi - lo) * k as f64 / steps as f64;
        if d2(x) < d2(best) {
            best = x;
        }
    }
    // g(x) = (x - px) + (y(x) - py) y'(x) = 0
    let (a, b) = (fit.a, fit.b);
    let mut x = best;
    for _ in 0..50 {
        let y = fit.y_at(x);
        let yp = 2.0 * a * x + b;
        let g = (x - pl[0]) + (y - pl[1]) * yp;
        let gp = 1.0 + yp * yp + (y - pl[1]) * 2.0 * a;
        if gp <= 0.0 {
            break;
        }
        let step = g / gp;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    if d2(x) <= d2(best) {
        x
    } else {
        best
    }
}

/// Length of the quadratic between two fit-frame abscissae:
/// the integral of sqrt(4a^2 x^2 + 4ab x + b^2 + 1), always non-negative.
pub fn arc_length(fit: &QuadraticFit, x_from: f64, x_to: f64) -> f64 {
    parabola_arc_length(fit.a, fit.b, x_from, x_to)
}

/// Closed-form arc length of `y = a x^2 + b x + c` on `[x_from, x_to]`
/// (order irrelevant).
///
/// With `u = 2 a x + b` the integrand is `sqrt(1 + u^2)` and the
/// antiderivative is `(u sqrt(1 + u^2) + asinh u) / (4 a)`. Differences of
/// both terms are rewritten so the `1 / a` cancels analytically, which keeps
/// the result accurate as `a` approaches zero.
pub fn parabola_arc_length(a: f64, b: f64, x_from: f64, x_to: f64) -> f64 {
    let (x1, x2) = if x_from <= x_to {
        (x_from, x_to)
    } else {
        (x_to, x_from)
    };
    let dx = x2 - x1;
    if dx == 0.0 {
        return 0.0;
    }
    if a.abs() < LINEAR_A {
        return dx * (1.0 + b * b).sqrt();
    }
    let u1 = 2.0 * a * x1 + b;
    let u2 = 2.0 * a * x2 + b;
    let r1 = (1.0 + u1 * u1).sqrt();
    let r2 = (1.0 + u2 * u2).sqrt();
    let (poly, asinh_diff) = if u1 * u2 > 0.0 {
        // same sign: u2 r2 - u1 r1 = du (u1 + u2)(1 + u1^2 + u2^2) / (u1 r1 + u2 r2)
        let du_over_a = 2.0 * dx;
        let sum = u1 + u2;
        let poly = du_over_a * sum * (1.0 + u1 * u1 + u2 * u2) / (u1 * r1 + u2 * r2);
        // asinh u2 - asinh u1 = asinh(u2 r1 - u1 r2), with
        // u2 r1 - u1 r2 = du (u1 + u2) / (u2 r1 + u1 r2)
        let z = 2.0 * a * dx * sum / (u2 * r1 + u1 * r2);
        (poly, z.asinh() / a)
    } else {
        ((u2 * r2 - u1 * r1) / a, (u2.asinh() - u1.asinh()) / a)
    };
    (0.25 * (poly + asinh_diff)).abs().max(dx)
}

/// Full approximation pipeline for one follower/leader pair.
///
/// `leader_age` is the age of the leader position in seconds; older than
/// `cfg.max_staleness` is an error.
pub fn approximate_gap(
    p_follower: [f64; 2],
    p_leader: [f64; 2],
    leader_age: f64,
    map: &LaneMap,
    cfg: &GapConfig,
) -> Result<GapEstimate> {
    if leader_age > cfg.max_staleness {
        return Err(Error::StalePose {
            age: leader_age,
            limit: cfg.max_staleness,
        });
    }
    let mut margin = cfg.margin;
    let mut indices = map.points_in_box(&bounding_box(p_follower, p_leader, margin)?)?;
    let mut attempts = 0;
    while indices.len() < cfg.min_fit_points && attempts < cfg.max_growth_attempts {
        margin *= cfg.margin_growth;
        indices = map.points_in_box(&bounding_box(p_follower, p_leader, margin)?)?;
        attempts += 1;
    }
    let slice: Vec<[f64; 2]> = indices.iter().map(|&k| map.points()[k]).collect();
    let fit = fit_quadratic(&slice)?;
    let proj_follower = project_onto_curve(&fit, p_follower, &slice)?;
    let proj_leader = project_onto_curve(&fit, p_leader, &slice)?;
    Ok(GapEstimate {
        distance: arc_length(&fit, proj_follower.local_x, proj_leader.local_x),
        proj_leader,
        proj_follower,
        fit,
        staleness: leader_age.max(0.0),
        margin,
    })
}

fn nearest_two(points: &[[f64; 2]], p: [f64; 2]) -> (usize, usize) {
    let d = |k: usize| (points[k][0] - p[0]).powi(2) + (points[k][1] - p[1]).powi(2);
    let mut best = (0, d(0));
    let mut second = (usize::MAX, f64::INFINITY);
    for k in 1..points.len() {
        let dk = d(k);
        if dk < best.1 {
            second = best;
            best = (k, dk);
        } else if dk < second.1 {
            second = (k, dk);
        }
    }
    (best.0, second.0)
}
