//! Lane-center digital map.
//!
//! The map is an ordered polyline of lane-center points, optionally closed
//! into a loop. The on-disk format is plain text:
//!
//! ```text
//! lanemap v1 closed
//! 0 -1.5
//! 0.15 -1.5
//! ...
//! ```
//!
//! one `x y` pair per line in meters. Blank lines and `#` comments are
//! skipped on load; [`LaneMap::save`] writes the canonical form without them.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SPACING: f64 = 0.01;
pub const MAX_SPACING: f64 = 1.0;

const HEADER: &str = "lanemap v1";

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        if !(min_x <= max_x && min_y <= max_y) {
            return Err(Error::InvalidArgument(format!(
                "malformed rectangle [{min_x}, {max_x}] x [{min_y}, {max_y}]"
            )));
        }
        Ok(Self {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn grow(&self, by: f64) -> Rect {
        Rect {
            min_x: self.min_x - by,
            min_y: self.min_y - by,
            max_x: self.max_x + by,
            max_y: self.max_y + by,
        }
    }
}

/// Nearest point on the polyline to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Arc position of the foot point, m.
    pub arc: f64,
    /// Foot point.
    pub point: [f64; 2],
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    /// Segment start index.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneMap {
    points: Vec<[f64; 2]>,
    closed: bool,
    cumulative_arc: Vec<f64>,
    length: f64,
}

impl LaneMap {
    pub fn new(points: Vec<[f64; 2]>, closed: bool) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidMap(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        if let Some(k) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::InvalidMap(format!("point {k} is not finite")));
        }
        let n = points.len();
        let seg_count = if closed { n } else { n - 1 };
        let mut cumulative_arc = Vec::with_capacity(n);
        cumulative_arc.push(0.0);
        let mut acc = 0.0;
        for k in 0..seg_count {
            let a = points[k];
            let b = points[(k + 1) % n];
            let d = dist(a, b);
            if d == 0.0 {
                return Err(Error::InvalidMap(format!(
                    "duplicate consecutive points at index {k}"
                )));
            }
            if !(MIN_SPACING..=MAX_SPACING).contains(&d) {
                return Err(Error::InvalidMap(format!(
                    "spacing {d:.4} m between points {k} and {} outside [{MIN_SPACING}, {MAX_SPACING}]",
                    (k + 1) % n
                )));
            }
            acc += d;
            if k + 1 < n {
                cumulative_arc.push(acc);
            }
        }
        Ok(Self {
            points,
            closed,
            cumulative_arc,
            length: acc,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn cumulative_arc(&self) -> &[f64] {
        &self.cumulative_arc
    }

    /// Total path length; includes the closing segment for loops.
    pub fn length(&self) -> f64 {
        self.length
    }

    fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }

    /// Indices of the two lane points nearest to `p`, nearest first. Ties go
    /// to the lower index.
    pub fn two_closest_points(&self, p: [f64; 2]) -> (usize, usize) {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = (usize::MAX, f64::INFINITY);
        for (k, q) in self.points.iter().enumerate() {
            let d = dist2(p, *q);
            if d < best.1 {
                second = best;
                best = (k, d);
            } else if d < second.1 {
                second = (k, d);
            }
        }
        (best.0, second.0)
    }

    /// Points inside `rect`, in path order, as one contiguous run.
    pub fn points_in_box(&self, rect: &Rect) -> Result<Vec<usize>> {
        Rect::new(rect.min_x, rect.min_y, rect.max_x, rect.max_y)?;
        let n = self.points.len();
        let inside: Vec<usize> = (0..n).filter(|&k| rect.contains(self.points[k])).collect();
        if inside.is_empty() {
            return Ok(inside);
        }
        // run starts: indices whose predecessor (along the path) is outside
        let is_in = |k: usize| rect.contains(self.points[k]);
        let starts: Vec<usize> = inside
            .iter()
            .copied()
            .filter(|&k| {
                if k == 0 {
                    !(self.closed && is_in(n - 1))
                } else {
                    !is_in(k - 1)
                }
            })
            .collect();
        match starts.len() {
            // a closed loop fully inside the box
            0 => Ok((0..n).collect()),
            1 => {
                let start = starts[0];
                Ok((0..inside.len()).map(|j| (start + j) % n).collect())
            }
            runs => Err(Error::AmbiguousSegment { runs }),
        }
    }

    /// Position and tangent heading at arc position `s`. Loops wrap; open
    /// maps clamp to their ends.
    pub fn point_at_arc(&self, s: f64) -> ([f64; 2], f64) {
        let s = self.wrap_arc(s);
        let seg = self.segment_at_arc(s);
        let (a, b) = self.segment(seg);
        let t = ((s - self.cumulative_arc[seg]) / dist(a, b)).clamp(0.0, 1.0);
        (
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
            (b[1] - a[1]).atan2(b[0] - a[0]),
        )
    }

    /// Wraps arc positions into [0, length) on loops, clamps on open maps.
    pub fn wrap_arc(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.length)
        } else {
            s.clamp(0.0, self.length)
        }
    }

    /// Forward arc distance from `from` to `to` (wrapped on loops).
    pub fn arc_ahead(&self, from: f64, to: f64) -> f64 {
        if self.closed {
            (to - from).rem_euclid(self.length)
        } else {
            to - from
        }
    }

    fn segment(&self, seg: usize) -> ([f64; 2], [f64; 2]) {
        let n = self.points.len();
        (self.points[seg], self.points[(seg + 1) % n])
    }

    fn segment_at_arc(&self, s: f64) -> usize {
        let idx = self.cumulative_arc.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(self.segment_count() - 1)
    }

    /// Nearest point on the polyline.
    pub fn project(&self, p: [f64; 2]) -> PolylineProjection {
        let mut best: Option<(f64, PolylineProjection)> = None;
        for seg in 0..self.segment_count() {
            let (a, b) = self.segment(seg);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
            let foot = [a[0] + t * d[0], a[1] + t * d[1]];
            let dd = dist2(p, foot);
            if best.as_ref().is_none_or(|(bd, _)| dd < *bd) {
                let len = len2.sqrt();
                let cross = (d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])) / len;
                best = Some((
                    dd,
                    PolylineProjection {
                        arc: self.cumulative_arc[seg] + t * len,
                        point: foot,
                        lateral: cross,
                        segment: seg,
                    },
                ));
            }
        }
        best.expect("map has at least two segments").1
    }

    /// Parses the `lanemap v1` text format.
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::MapParse {
            line: 1,
            msg: "empty map file".into(),
        })?;
        let closed = match header.strip_prefix(HEADER).map(str::trim) {
            Some("closed") => true,
            Some("open") => false,
            _ => {
                return Err(Error::MapParse {
                    line: hline,
                    msg: format!("expected `{HEADER} closed|open`, got `{header}`"),
                })
            }
        };
        let mut points = Vec::new();
        for (line, l) in lines {
            let mut it = l.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.ok_or_else(|| Error::MapParse {
                    line,
                    msg: "expected two coordinates".into(),
                })?
                .parse::<f64>()
                .map_err(|e| Error::MapParse {
                    line,
                    msg: e.to_string(),
                })
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::MapParse {
                    line,
                    msg: "trailing fields".into(),
                });
            }
            points.push([x, y]);
        }
        Self::new(points, closed)
    }

    pub fn save(&self) -> String {
        let mut out = format!("{HEADER} {}\n", if self.closed { "closed" } else { "open" });
        for p in &self.points {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
        out
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::load(&text)
    }
}

/// Layout of the reference oval: two straights joined by two semicircles,
/// travelled counter-clockwise starting at the left end of the bottom
/// straight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvalLayout {
    pub straight: f64,
    pub radius: f64,
    pub spacing: f64,
}

impl OvalLayout {
    /// Desk-scale track used by the shipped scenarios.
    pub const REFERENCE: OvalLayout = OvalLayout {
        straight: 3.0,
        radius: 1.5,
        spacing: 0.15,
    };

    fn counts(&self) -> (usize, usize) {
        let ns = (self.straight / self.spacing).round().max(1.0) as usize;
        let nc = (PI * self.radius / self.spacing).round().max(2.0) as usize;
        (ns, nc)
    }

    pub fn build(&self) -> Result<LaneMap> {
        let (ns, nc) = self.counts();
        let half = self.straight / 2.0;
        let r = self.radius;
        let mut pts = Vec::with_capacity(2 * (ns + nc));
        for k in 0..ns {
            pts.push([-half + self.straight * k as f64 / ns as f64, -r]);
        }
        for k in 0..nc {
            let a = -PI / 2.0 + PI * k as f64 / nc as f64;
            pts.push([half + r * a.cos(), r * a.sin()]);
        }
        for k in 0..ns {
            pts.push([half - self.straight * k as f64 / ns as f64, r]);
        }
        for k in 0..nc {
            let a = PI / 2.0 + PI * k as f64 / nc as f64;
            pts.push([-half + r * a.cos(), r * a.sin()]);
        }
        LaneMap::new(pts, true)
    }

    /// Map-arc intervals `[start, end)` of the two curves, given the map
    /// built by [`OvalLayout::build`].
    pub fn curve_intervals(&self, map: &LaneMap) -> [(f64, f64); 2] {
        let (ns, nc) = self.counts();
        let c = map.cumulative_arc();
        [(c[ns], c[ns + nc]), (c[2 * ns + nc], map.length())]
    }

    /// Arc distance from `s` to the nearest curve, zero when on a curve.
    pub fn distance_to_curve(&self, map: &LaneMap, s: f64) -> f64 {
        let s = map.wrap_arc(s);
        let len = map.length();
        self.curve_intervals(map)
            .iter()
            .map(|&(a, b)| {
                if s >= a && s < b {
                    0.0
                } else {
                    let d1 = (a - s).rem_euclid(len);
                    let d2 = (s - b).rem_euclid(len);
                    d1.min(d2)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
