//! Run outputs: the per-tick CSV trace, the run summary (text and JSON) and
//! the V2V message log (JSON lines).
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a written trace returns the same bits, and absent values are empty fields.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comms::V2VMessage;
use crate::controller::GapSource;
use crate::error::{Error, Result};

/// Per-vehicle column suffixes, in order.
pub const VEHICLE_COLUMNS: [&str; 14] = [
    "x",
    "y",
    "theta",
    "ekf_x",
    "ekf_y",
    "ekf_theta",
    "v",
    "u",
    "gap_range",
    "gap_approx",
    "gap_used",
    "source",
    "e",
    "time_gap",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub ekf_x: f64,
    pub ekf_y: f64,
    pub ekf_theta: f64,
    pub v: f64,
    pub u: f64,
    /// Raw range reading, absent when the target is not detected.
    pub gap_range: Option<f64>,
    pub gap_approx: Option<f64>,
    /// Gap handed to the controller; absent in cruise-control fallback.
    pub gap_used: Option<f64>,
    /// Absent for the leader.
    pub source: Option<GapSource>,
    pub e: Option<f64>,
    /// `(gap_used - l0) / v`, absent when v <= 0.01 m/s.
    pub time_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub time: f64,
    pub vehicles: Vec<VehicleRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub n_vehicles: usize,
    pub records: Vec<TraceRecord>,
}

/// Speeds at or below this have no defined time gap, m/s.
pub const MIN_TIME_GAP_SPEED: f64 = 0.01;

pub fn time_gap(gap_used: Option<f64>, l0: f64, v: f64) -> Option<f64> {
    gap_used
        .filter(|_| v > MIN_TIME_GAP_SPEED)
        .map(|g| (g - l0) / v)
}

impl Trace {
    pub fn new(n_vehicles: usize) -> Self {
        Self {
            n_vehicles,
            records: Vec::new(),
        }
    }

    pub fn header(n_vehicles: usize) -> Vec<String> {
        let mut h = vec!["tick".to_string(), "time".to_string()];
        for i in 0..n_vehicles {
            h.extend(VEHICLE_COLUMNS.iter().map(|c| format!("v{i}_{c}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::TraceParse(e.to_string());
        out.write_record(Self::header(self.n_vehicles))
            .map_err(to_err)?;
        for r in &self.records {
            let mut row = vec![r.tick.to_string(), r.time.to_string()];
            for v in &r.vehicles {
                row.extend(
                    [v.x, v.y, v.theta, v.ekf_x, v.ekf_y, v.ekf_theta, v.v, v.u]
                        .map(|f| f.to_string()),
                );
                row.push(opt(v.gap_range));
                row.push(opt(v.gap_approx));
                row.push(opt(v.gap_used));
                row.push(v.source.map(|s| s.as_str().to_string()).unwrap_or_default());
                row.push(opt(v.e));
                row.push(opt(v.time_gap));
            }
            out.write_record(&row).map_err(to_err)?;
        }
        out.flush().map_err(|e| Error::TraceParse(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::TraceParse(format!("{}: {e}", path.display())))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd
            .headers()
            .map_err(|e| Error::TraceParse(e.to_string()))?
            .clone();
        let cols = header.len();
        if cols < 2 || (cols - 2) % VEHICLE_COLUMNS.len() != 0 {
            return Err(Error::TraceParse(format!("unexpected column count {cols}")));
        }
        let n = (cols - 2) / VEHICLE_COLUMNS.len();
        if header.iter().ne(Self::header(n).iter().map(String::as_str)) {
            return Err(Error::TraceParse("header does not match".into()));
        }
        let mut trace = Trace::new(n);
        for (line, row) in rd.records().enumerate() {
            let row = row.map_err(|e| Error::TraceParse(e.to_string()))?;
            let ctx = |col: usize, msg: String| {
                Error::TraceParse(format!("row {}: {}: {msg}", line + 1, &header[col]))
            };
            let num = |col: usize| -> Result<f64> {
                row[col].parse::<f64>().map_err(|e| ctx(col, e.to_string()))
            };
            let opt_num = |col: usize| -> Result<Option<f64>> {
                if row[col].is_empty() {
                    Ok(None)
                } else {
                    num(col).map(Some)
                }
            };
            let tick = row[0].parse::<u64>().map_err(|e| ctx(0, e.to_string()))?;
            let mut vehicles = Vec::with_capacity(n);
            for i in 0..n {
                let b = 2 + i * VEHICLE_COLUMNS.len();
                let source = match &row[b + 11] {
                    "" => None,
                    s => Some(
                        GapSource::parse(s)
                            .ok_or_else(|| ctx(b + 11, format!("unknown source {s:?}")))?,
                    ),
                };
                vehicles.push(VehicleRecord {
                    x: num(b)?,
                    y: num(b + 1)?,
                    theta: num(b + 2)?,
                    ekf_x: num(b + 3)?,
                    ekf_y: num(b + 4)?,
                    ekf_theta: num(b + 5)?,
                    v: num(b + 6)?,
                    u: num(b + 7)?,
                    gap_range: opt_num(b + 8)?,
                    gap_approx: opt_num(b + 9)?,
                    gap_used: opt_num(b + 10)?,
                    source,
                    e: opt_num(b + 12)?,
                    time_gap: opt_num(b + 13)?,
                });
            }
            trace.records.push(TraceRecord {
                tick,
                time: num(1)?,
                vehicles,
            });
        }
        Ok(trace)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|f| f.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: GapSource,
    pub to: GapSource,
    /// Follower's true map arc position at the switch, m.
    pub arc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FollowerSummary {
    pub vehicle: usize,
    pub time_gap_mean: Option<f64>,
    pub time_gap_std: Option<f64>,
    pub time_gap_samples: usize,
    /// Largest |e| in the steady window, m.
    pub max_abs_e: Option<f64>,
    pub switches: Vec<SwitchEvent>,
    /// `[start, end)` times spent in cruise-control fallback, s.
    pub cc_fallback: Vec<(f64, f64)>,
    /// |approximation - range| over ticks where both were usable, m.
    pub approx_range_max_diff: Option<f64>,
    pub approx_range_mean_diff: Option<f64>,
    pub approx_range_samples: usize,
    /// Ticks where the approximation returned an error.
    pub approx_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub ticks: u64,
    pub duration: f64,
    pub steady_start: f64,
    pub followers: Vec<FollowerSummary>,
    /// RMS distance between EKF and true position, per vehicle, m.
    pub ekf_rms: Vec<f64>,
    pub messages_sent: u64,
    pub messages_delivered: u64,
}

impl Summary {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "name: {}", self.name);
        let _ = writeln!(s, "ticks: {}", self.ticks);
        let _ = writeln!(s, "duration: {}", self.duration);
        let _ = writeln!(s, "steady_start: {}", self.steady_start);
        let _ = writeln!(s, "messages_sent: {}", self.messages_sent);
        let _ = writeln!(s, "messages_delivered: {}", self.messages_delivered);
        for (i, r) in self.ekf_rms.iter().enumerate() {
            let _ = writeln!(s, "v{i}.ekf_rms: {r:.6}");
        }
        for fs in &self.followers {
            let p = format!("v{}", fs.vehicle);
            let _ = writeln!(s, "{p}.time_gap_mean: {}", f(fs.time_gap_mean));
            let _ = writeln!(s, "{p}.time_gap_std: {}", f(fs.time_gap_std));
            let _ = writeln!(s, "{p}.time_gap_samples: {}", fs.time_gap_samples);
            let _ = writeln!(s, "{p}.max_abs_e: {}", f(fs.max_abs_e));
            let _ = writeln!(s, "{p}.switches: {}", fs.switches.len());
            for sw in &fs.switches {
                let _ = writeln!(
                    s,
                    "{p}.switch: t={:.2} {} -> {} arc={:.3}",
                    sw.time,
                    sw.from.as_str(),
                    sw.to.as_str(),
                    sw.arc
                );
            }
            for (a, b) in &fs.cc_fallback {
                let _ = writeln!(s, "{p}.cc_fallback: {a:.2}..{b:.2}");
            }
            let _ = writeln!(
                s,
                "{p}.approx_range_max_diff: {}",
                f(fs.approx_range_max_diff)
            );
            let _ = writeln!(
                s,
                "{p}.approx_range_mean_diff: {}",
                f(fs.approx_range_mean_diff)
            );
            let _ = writeln!(s, "{p}.approx_failures: {}", fs.approx_failures);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// One JSON object per line.
pub fn messages_to_jsonl(messages: &[V2VMessage]) -> String {
    let mut s = String::new();
    for m in messages {
        s.push_str(&m.to_json_line());
        s.push('\n');
    }
    s
}

pub fn messages_from_jsonl(text: &str) -> Result<Vec<V2VMessage>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(V2VMessage::from_json_line)
        .collect()
}

/// Writes `contents` to `path`, attaching the path to any I/O error.
pub fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
