//! Scripted leaders and the radar / connectivity sensor models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LeaderSpec, SensingConfig};

/// A leader replaying a piecewise-linear speed profile. Position is the exact
/// integral of the speed; the last speed is held after the profile ends.
#[derive(Debug, Clone)]
pub struct Leader {
    s0: f64,
    times: Vec<f64>,
    speeds: Vec<f64>,
    /// Distance covered from `times[0]` to `times[i]`.
    cum: Vec<f64>,
    pub connected: bool,
}

impl Leader {
    /// `ego_s0` is the ego position at `t = 0`.
    pub fn new(spec: &LeaderSpec, ego_s0: f64) -> Self {
        let times: Vec<f64> = spec.profile.iter().map(|p| p.0).collect();
        let speeds: Vec<f64> = spec.profile.iter().map(|p| p.1).collect();
        let mut cum = vec![0.0; times.len()];
        for i in 1..times.len() {
            cum[i] = cum[i - 1] + 0.5 * (times[i] - times[i - 1]) * (speeds[i] + speeds[i - 1]);
        }
        let mut leader = Self {
            s0: 0.0,
            times,
            speeds,
            cum,
            connected: spec.connected,
        };
        leader.s0 = ego_s0 + spec.gap - leader.travelled(0.0);
        leader
    }

    pub fn speed(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            self.speeds[0]
        } else if i == self.times.len() {
            self.speeds[i - 1]
        } else {
            let (t0, t1) = (self.times[i - 1], self.times[i]);
            let (v0, v1) = (self.speeds[i - 1], self.speeds[i]);
            v0 + (t - t0) / (t1 - t0) * (v1 - v0)
        }
    }

    fn travelled(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            self.speeds[0] * (t - self.times[0])
        } else {
            let t0 = self.times[i - 1];
            self.cum[i - 1] + 0.5 * (t - t0) * (self.speeds[i - 1] + self.speed(t))
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        self.s0 + self.travelled(t)
    }
}

/// One headway/speed reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub h: f64,
    pub v1: f64,
}

/// Radar plus a zero-order-hold connectivity link.
#[derive(Debug, Clone)]
pub struct Sensors {
    config: SensingConfig,
    next_packet: f64,
    /// Last received `(s1, v1)` broadcast.
    packet: Option<(f64, f64)>,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Sensors {
    pub fn new(config: SensingConfig) -> Self {
        let noise = (config.noise_std > 0.0).then(|| {
            (
                Normal::new(0.0, config.noise_std).expect("validated noise level"),
                ChaCha8Rng::seed_from_u64(config.seed),
            )
        });
        Self {
            config,
            next_packet: 0.0,
            packet: None,
            noise,
        }
    }

    fn jitter(&mut self) -> f64 {
        match &mut self.noise {
            Some((dist, rng)) => dist.sample(rng),
            None => 0.0,
        }
    }

    /// Nearest leader within radar range.
    pub fn radar(&mut self, leaders: &[Leader], t: f64, s: f64) -> Option<Reading> {
        let nearest = leaders
            .iter()
            .map(|l| (l.position(t) - s, l.speed(t)))
            .filter(|&(h, _)| h <= self.config.radar_range)
            .min_by(|a, b| a.0.total_cmp(&b.0))?;
        let h = nearest.0 + self.jitter();
        let v1 = (nearest.1 + self.jitter()).max(0.0);
        Some(Reading { h, v1 })
    }

    /// Headway to the connected leader from its most recent broadcast.
    pub fn comms(&mut self, leaders: &[Leader], t: f64, s: f64) -> Option<Reading> {
        let cv = leaders.iter().find(|l| l.connected)?;
        if t + 1e-9 >= self.next_packet {
            let s1 = cv.position(t);
            self.packet = if s1 - s <= self.config.comms_range {
                let s1 = s1 + self.jitter();
                let v1 = (cv.speed(t) + self.jitter()).max(0.0);
                Some((s1, v1))
            } else {
                None
            };
            while self.next_packet <= t + 1e-9 {
                self.next_packet += 1.0 / self.config.comms_rate;
            }
        }
        self.packet.map(|(s1, v1)| Reading { h: s1 - s, v1 })
    }
}
