//! V2V message channel: per-sender rate limiting, fixed latency, and
//! independent seeded packet loss. Loss is silent, as with UDP.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{seconds_to_ticks, Pose2D, SimTime, DT_BASE};

pub type VehicleId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V2VMessage {
    pub sender_id: VehicleId,
    /// Sender's localized pose at send time.
    pub pose: Pose2D,
    /// Sender's commanded acceleration, m/s^2.
    pub target_accel: f64,
    pub velocity: f64,
    /// Send tick.
    pub sent_at: SimTime,
}

impl V2VMessage {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::TraceParse(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Maximum send rate per sender, Hz.
    pub rate: f64,
    pub loss_prob: f64,
    /// Delivery latency, s.
    pub latency: f64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            rate: 20.0,
            loss_prob: 0.05,
            latency: 0.0,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0 / DT_BASE) {
            return Err(Error::InvalidArgument(format!(
                "channel rate must be in (0, {}] Hz",
                1.0 / DT_BASE
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::InvalidArgument("loss_prob must be in [0, 1]".into()));
        }
        seconds_to_ticks(self.latency)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    /// Handed to the channel (it may still be lost in transit).
    Accepted,
    /// Sent sooner than the rate allows; not transmitted.
    RateLimited,
}

#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    min_interval: u64,
    latency: u64,
    last_sent: BTreeMap<VehicleId, u64>,
    in_flight: VecDeque<(u64, V2VMessage)>,
    sent: u64,
    delivered: u64,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            min_interval: ((1.0 / cfg.rate) / DT_BASE).round().max(1.0) as u64,
            latency: seconds_to_ticks(cfg.latency)?,
            cfg,
            last_sent: BTreeMap::new(),
            in_flight: VecDeque::new(),
            sent: 0,
            delivered: 0,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn send(&mut self, msg: V2VMessage) -> SendOutcome {
        let tick = msg.sent_at.tick;
        if let Some(&last) = self.last_sent.get(&msg.sender_id) {
            if tick < last + self.min_interval {
                return SendOutcome::RateLimited;
            }
        }
        self.last_sent.insert(msg.sender_id, tick);
        self.sent += 1;
        let lost = self.rng.random::<f64>() < self.cfg.loss_prob;
        if !lost {
            self.in_flight.push_back((tick + self.latency, msg));
        }
        SendOutcome::Accepted
    }

    /// Messages due at or before `now`, each returned once, in send order.
    pub fn poll(&mut self, now: SimTime) -> Vec<V2VMessage> {
        let mut out = Vec::new();
        while let Some(&(due, msg)) = self.in_flight.front() {
            if due > now.tick {
                break;
            }
            self.in_flight.pop_front();
            out.push(msg);
        }
        self.delivered += out.len() as u64;
        out
    }

    /// Messages accepted for transmission so far.
    pub fn sent_count(&self) -> u64 {
        self.sent
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(sender: VehicleId, tick: u64) -> V2VMessage {
        V2VMessage {
            sender_id: sender,
            pose: Pose2D::new(tick as f64 * 0.01, 0.0, 0.0),
            target_accel: 0.1,
            velocity: 0.5,
            sent_at: SimTime::from_tick(tick),
        }
    }

    fn cfg(loss: f64, latency: f64, seed: u64) -> ChannelConfig {
        ChannelConfig {
            rate: 20.0,
            loss_prob: loss,
            latency,
            rng_seed: seed,
        }
    }

    #[test]
    fn lossless_same_tick_delivery() {
        let mut ch = Channel::new(cfg(0.0, 0.0, 1)).unwrap();
        for k in 0..100 {
            let t = k * 5;
            assert_eq!(ch.send(msg(0, t)), SendOutcome::Accepted);
            let got = ch.poll(SimTime::from_tick(t));
            assert_eq!(got, vec![msg(0, t)]);
        }
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut ch = Channel::new(cfg(1.0, 0.0, 1)).unwrap();
        for k in 0..100 {
            ch.send(msg(0, k * 5));
        }
        assert!(ch.poll(SimTime::from_tick(10_000)).is_empty());
    }

    #[test]
    fn rate_limiter_rejects_early_sends() {
        let mut ch = Channel::new(cfg(0.0, 0.0, 1)).unwrap();
        assert_eq!(ch.send(msg(0, 0)), SendOutcome::Accepted);
        assert_eq!(ch.send(msg(0, 3)), SendOutcome::RateLimited);
        assert_eq!(ch.send(msg(1, 3)), SendOutcome::Accepted);
        assert_eq!(ch.send(msg(0, 5)), SendOutcome::Accepted);
        assert_eq!(ch.poll(SimTime::from_tick(5)).len(), 3);
    }

    #[test]
    fn latency_delays_delivery_and_keeps_order() {
        let mut ch = Channel::new(cfg(0.0, 0.1, 1)).unwrap();
        ch.send(msg(0, 0));
        ch.send(msg(1, 0));
        ch.send(msg(0, 5));
        assert!(ch.poll(SimTime::from_tick(9)).is_empty());
        let got = ch.poll(SimTime::from_tick(10));
        assert_eq!(got, vec![msg(0, 0), msg(1, 0)]);
        assert!(ch.poll(SimTime::from_tick(10)).is_empty());
        assert_eq!(ch.poll(SimTime::from_tick(15)), vec![msg(0, 5)]);
    }

    #[test]
    fn loss_statistics_and_replay() {
        let run = |seed| {
            let mut ch = Channel::new(cfg(0.05, 0.0, seed)).unwrap();
            let mut trace = Vec::new();
            for k in 0..10_000u64 {
                ch.send(msg(0, k * 5));
                trace.extend(
                    ch.poll(SimTime::from_tick(k * 5))
                        .iter()
                        .map(|m| m.sent_at.tick),
                );
            }
            trace
        };
        let a = run(42);
        let sigma = (10_000.0f64 * 0.05 * 0.95).sqrt();
        assert!(
            (a.len() as f64 - 9_500.0).abs() < 3.0 * sigma,
            "{}",
            a.len()
        );
        assert_eq!(a, run(42));
        assert_ne!(a, run(43));
    }

    #[test]
    fn json_line_round_trip() {
        let m = msg(3, 125);
        let line = m.to_json_line();
        assert!(!line.contains('\n'));
        assert!(line.contains("\"sent_at\":{\"tick\":125}"));
        assert_eq!(V2VMessage::from_json_line(&line).unwrap(), m);
        assert!(V2VMessage::from_json_line("{").is_err());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(Channel::new(cfg(1.5, 0.0, 0)).is_err());
        assert!(Channel::new(ChannelConfig {
            rate: 0.0,
            ..cfg(0.0, 0.0, 0)
        })
        .is_err());
        assert!(Channel::new(cfg(0.0, -1.0, 0)).is_err());
    }
}
