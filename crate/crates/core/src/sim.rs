//! The phased tick loop. Every tick runs, for all vehicles in order:
//! sense (IMU, EKF, GPS, range sensor), communicate (V2V send and poll on
//! comms ticks), control (gap source selection, CACC, pure pursuit) and
//! integrate (longitudinal plant and pose update).
//!
//! Vehicle 0 tracks the leader speed profile; vehicle `i > 0` follows
//! vehicle `i - 1`. Lane keeping steers from the true pose, standing in for
//! a camera that sees the real lane.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comms::{Channel, V2VMessage};
use crate::controller::{
    bumper_gap_from_arc, select_gap, CaccController, ControlOutput, ControllerConfig, GapSelection,
    GapSource, GapSourceState,
};
use crate::dynamics::{Longitudinal, LongitudinalState};
use crate::error::Result;
use crate::gap::approximate_gap;
use crate::lane_map::LaneMap;
use crate::lateral::{kinematic_step, pursuit_curvature};
use crate::localization::{GpsFix, Localizer};
use crate::scenario::{Scenario, SwitchMode, VehicleSpec};
use crate::sensors::{emulated_gps, imu_reading, range_sensor, RangeReading};
use crate::trace::{
    time_gap, FollowerSummary, Summary, SwitchEvent, Trace, TraceRecord, VehicleRecord,
};
use crate::types::{Pose2D, SimTime, DT_BASE};

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    pub summary: Summary,
    /// Delivered V2V messages in delivery order.
    pub messages: Vec<V2VMessage>,
}

/// Independent generator for one consumer of randomness.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const CHANNEL_STREAM: u64 = 1;

fn vehicle_stream(index: usize, kind: u64) -> u64 {
    16 * (index as u64 + 1) + kind
}

struct Follower {
    ctrl: CaccController,
    gap_state: GapSourceState,
    leader_msg: Option<V2VMessage>,
    stats: FollowerStats,
}

#[derive(Default)]
struct FollowerStats {
    time_gaps: Vec<f64>,
    max_abs_e: Option<f64>,
    switches: Vec<SwitchEvent>,
    cc_fallback: Vec<(f64, f64)>,
    cc_since: Option<f64>,
    diffs: Vec<f64>,
    approx_failures: u64,
}

struct Vehicle {
    spec: VehicleSpec,
    plant: Longitudinal,
    long: LongitudinalState,
    /// True front-bumper pose.
    pose: Pose2D,
    localizer: Localizer,
    prev_fix: Option<[f64; 2]>,
    /// True speed and yaw rate over the previous step.
    step_v: f64,
    step_yaw_rate: f64,
    u: f64,
    imu_rng: ChaCha8Rng,
    gps_rng: ChaCha8Rng,
    range_rng: ChaCha8Rng,
    follower: Option<Follower>,
    ekf_sq_err: f64,
}

impl Vehicle {
    fn antenna(&self) -> [f64; 2] {
        self.pose.offset_along(-self.spec.antenna_offset)
    }
}

/// Loads the scenario's map and runs it.
pub fn run_scenario(sc: &Scenario) -> Result<SimOutput> {
    let map = sc.load_map()?;
    simulate(sc, &map)
}

/// Runs `sc` on an already loaded map.
pub fn simulate(sc: &Scenario, map: &LaneMap) -> Result<SimOutput> {
    sc.validate()?;
    sc.validate_against(map)?;
    let mut channel = Channel::new(
        sc.channel
            .with_seed(substream(sc.seed, CHANNEL_STREAM).next_u64()),
    )?;
    let switch_cfg = sc.switching.switch_config();
    let n = sc.vehicles.len();

    let mut vehicles = Vec::with_capacity(n);
    for (i, spec) in sc.vehicles.iter().enumerate() {
        let (p, heading) = map.point_at_arc(spec.initial_arc);
        let pose = Pose2D::new(p[0], p[1], heading);
        let antenna = pose.offset_along(-spec.antenna_offset);
        let ekf_start = Pose2D::new(antenna[0], antenna[1], heading);
        let follower = if i == 0 {
            None
        } else {
            Some(Follower {
                ctrl: CaccController::new(
                    ControllerConfig::new(&spec.gains, &spec.params),
                    DT_BASE,
                )?,
                gap_state: GapSourceState::default(),
                leader_msg: None,
                stats: FollowerStats::default(),
            })
        };
        vehicles.push(Vehicle {
            spec: *spec,
            plant: Longitudinal::new(spec.params, DT_BASE),
            long: LongitudinalState::new(&spec.params, spec.initial_speed, 0.0),
            pose,
            localizer: Localizer::new(ekf_start, &sc.ekf, DT_BASE),
            prev_fix: None,
            step_v: spec.initial_speed,
            step_yaw_rate: 0.0,
            u: 0.0,
            imu_rng: substream(sc.seed, vehicle_stream(i, 0)),
            gps_rng: substream(sc.seed, vehicle_stream(i, 1)),
            range_rng: substream(sc.seed, vehicle_stream(i, 2)),
            follower,
            ekf_sq_err: 0.0,
        });
    }

    let ticks = sc.ticks();
    let mut trace = Trace::new(n);
    let mut messages = Vec::new();
    for tick in 0..ticks {
        let now = SimTime::from_tick(tick);
        let t = now.seconds();

        // sense
        let mut imu = Vec::with_capacity(n);
        let mut ranges = Vec::with_capacity(n);
        for i in 0..n {
            let reading = imu_reading(
                vehicles[i].step_v,
                vehicles[i].step_yaw_rate,
                &sc.sensors.noise,
                &mut vehicles[i].imu_rng,
            );
            let range = if i > 0 {
                let (ahead, this) = vehicles.split_at_mut(i);
                let lead = &ahead[i - 1];
                let target = lead.pose.offset_along(-lead.spec.params.body_length);
                range_sensor(
                    &this[0].pose,
                    target,
                    &sc.sensors.range,
                    &mut this[0].range_rng,
                )
            } else {
                RangeReading::LOST
            };
            let veh = &mut vehicles[i];
            let fix: Option<GpsFix> = now.is_gps_tick().then(|| {
                let f = emulated_gps(
                    veh.antenna(),
                    veh.prev_fix,
                    sc.sensors.noise.gps_std,
                    now,
                    &mut veh.gps_rng,
                );
                veh.prev_fix = Some([f.x, f.y]);
                f
            });
            if tick > 0 {
                veh.localizer.step(&reading, fix.as_ref())?;
            }
            imu.push(reading);
            ranges.push(range);
        }

        // communicate
        if now.is_comms_tick() {
            for (i, veh) in vehicles.iter().enumerate() {
                channel.send(V2VMessage {
                    sender_id: i as u32,
                    pose: veh.localizer.pose(),
                    target_accel: veh.u,
                    velocity: imu[i].v,
                    sent_at: now,
                });
            }
        }
        let delivered = channel.poll(now);
        let mut fresh: Vec<Option<V2VMessage>> = vec![None; n];
        for m in &delivered {
            let to = m.sender_id as usize + 1;
            if to < n {
                fresh[to] = Some(*m);
            }
        }
        messages.extend(delivered);

        // control
        let mut rows = Vec::with_capacity(n);
        let mut curvatures = Vec::with_capacity(n);
        for i in 0..n {
            let ekf_pose = vehicles[i].localizer.pose();
            let mut row = VehicleRecord {
                ekf_x: ekf_pose.x,
                ekf_y: ekf_pose.y,
                ekf_theta: ekf_pose.theta,
                ..VehicleRecord::default()
            };
            let u = if i == 0 {
                let veh = &vehicles[0];
                let (v_ref, slope) = sc.leader.reference(t);
                let g = &veh.spec.gains;
                (slope + sc.leader.speed_gain * (v_ref - imu[0].v)).clamp(g.u_min, g.u_max)
            } else {
                let (ahead, this) = vehicles.split_at_mut(i);
                let lead_spec = ahead[i - 1].spec;
                let veh = &mut this[0];
                let antenna_offset = veh.spec.antenna_offset;
                let f = veh
                    .follower
                    .as_mut()
                    .expect("vehicles after the first follow");
                if let Some(m) = fresh[i] {
                    f.leader_msg = Some(m);
                }
                let approx = f.leader_msg.and_then(|m| {
                    let age = now.since(m.sent_at);
                    let lead_pos = if sc.switching.extrapolate_leader {
                        m.pose.offset_along(m.velocity * age)
                    } else {
                        m.pose.position()
                    };
                    match approximate_gap(ekf_pose.position(), lead_pos, age, map, &sc.gap) {
                        Ok(est) => Some(bumper_gap_from_arc(
                            est.distance,
                            lead_spec.params.body_length,
                            lead_spec.antenna_offset,
                            antenna_offset,
                        )),
                        Err(_) => {
                            f.stats.approx_failures += 1;
                            None
                        }
                    }
                });
                let range = ranges[i];
                let (range_in, approx_in) = match sc.switching.mode {
                    SwitchMode::ApproximationOnly => (RangeReading::LOST, approx),
                    SwitchMode::RangeOnly => (range, None),
                    SwitchMode::Switching => (range, approx),
                };
                let sel = select_gap(&range_in, approx_in, &mut f.gap_state, &switch_cfg, now);
                let out = f.ctrl.step(&sel, fresh[i].as_ref(), imu[i].v, now);
                row.gap_range = range.distance;
                row.gap_approx = approx;
                row.gap_used = sel.gap;
                row.source = Some(sel.source);
                row.e = out.e;
                row.time_gap = time_gap(sel.gap, veh.spec.params.l0, veh.long.v);
                let arc = map.project(veh.pose.position()).arc;
                record_stats(&mut f.stats, sc, &sel, &out, &row, range, arc, t, tick);
                out.u
            };
            let veh = &mut vehicles[i];
            veh.u = u;
            curvatures.push(pursuit_curvature(&veh.pose, map, &sc.pursuit)?);
            row.x = veh.pose.x;
            row.y = veh.pose.y;
            row.theta = veh.pose.theta;
            row.v = veh.long.v;
            row.u = u;
            let a = veh.antenna();
            veh.ekf_sq_err += (ekf_pose.x - a[0]).powi(2) + (ekf_pose.y - a[1]).powi(2);
            rows.push(row);
        }
        trace.records.push(TraceRecord {
            tick,
            time: t,
            vehicles: rows,
        });

        // integrate
        for (veh, &kappa) in vehicles.iter_mut().zip(&curvatures) {
            let next = veh.plant.step_accel_mode(&veh.long, veh.u);
            let ds = next.s - veh.long.s;
            veh.pose = kinematic_step(&veh.pose, ds / DT_BASE, kappa, DT_BASE);
            veh.step_v = ds / DT_BASE;
            veh.step_yaw_rate = ds * kappa / DT_BASE;
            veh.long = next;
        }
    }

    let end = SimTime::from_tick(ticks).seconds();
    let followers = vehicles
        .iter_mut()
        .enumerate()
        .filter_map(|(i, v)| {
            v.follower
                .as_mut()
                .map(|f| finish_stats(i, &mut f.stats, end))
        })
        .collect();
    let summary = Summary {
        name: sc.name.clone(),
        ticks,
        duration: end,
        steady_start: sc.output.steady_start,
        followers,
        ekf_rms: vehicles
            .iter()
            .map(|v| {
                if ticks == 0 {
                    0.0
                } else {
                    (v.ekf_sq_err / ticks as f64).sqrt()
                }
            })
            .collect(),
        messages_sent: channel.sent_count(),
        messages_delivered: channel.delivered_count(),
    };
    Ok(SimOutput {
        trace,
        summary,
        messages,
    })
}

#[allow(clippy::too_many_arguments)]
fn record_stats(
    st: &mut FollowerStats,
    sc: &Scenario,
    sel: &GapSelection,
    out: &ControlOutput,
    row: &VehicleRecord,
    range: RangeReading,
    arc: f64,
    t: f64,
    tick: u64,
) {
    if let Some(sw) = sel.switched.filter(|_| tick > 0) {
        st.switches.push(SwitchEvent {
            time: t,
            from: sw.from,
            to: sw.to,
            arc,
        });
    }
    match (sel.source, st.cc_since) {
        (GapSource::None, None) => st.cc_since = Some(t),
        (GapSource::None, Some(_)) => {}
        (_, Some(start)) => {
            st.cc_fallback.push((start, t));
            st.cc_since = None;
        }
        (_, None) => {}
    }
    let in_band = |d: f64| match sc.switching.validity_band {
        Some((lo, hi)) => d >= lo && d <= hi,
        None => true,
    };
    if let (Some(d), Some(a)) = (range.distance.filter(|&d| in_band(d)), row.gap_approx) {
        st.diffs.push((a - d).abs());
    }
    if t >= sc.output.steady_start {
        if let Some(tg) = row.time_gap {
            st.time_gaps.push(tg);
        }
        if let Some(e) = out.e {
            st.max_abs_e = Some(st.max_abs_e.map_or(e.abs(), |m: f64| m.max(e.abs())));
        }
    }
}

fn finish_stats(vehicle: usize, st: &mut FollowerStats, end: f64) -> FollowerSummary {
    if let Some(start) = st.cc_since.take() {
        st.cc_fallback.push((start, end));
    }
    let (mean, std) = mean_std(&st.time_gaps);
    let (diff_mean, _) = mean_std(&st.diffs);
    FollowerSummary {
        vehicle,
        time_gap_mean: mean,
        time_gap_std: std,
        time_gap_samples: st.time_gaps.len(),
        max_abs_e: st.max_abs_e,
        switches: std::mem::take(&mut st.switches),
        cc_fallback: std::mem::take(&mut st.cc_fallback),
        approx_range_max_diff: st.diffs.iter().copied().reduce(f64::max),
        approx_range_mean_diff: diff_mean,
        approx_range_samples: st.diffs.len(),
        approx_failures: st.approx_failures,
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}
