//! High-level longitudinal controllers and the min-rule safety filter that
//! integrates them.
//!
//! The safety-oriented controller combines a range policy `V(h)`, a speed
//! policy `W(v1)` and headway-scheduled gains `A(h)`, `B(h)`:
//!
//! ```text
//! u = A(h) (V(h) - v) + B(h) (W(v1) - v)
//! ```
//!
//! Fed by radar it is the ACC, fed by connectivity it is the CCC. The
//! performance controller (PCC) tracks an energy-optimal speed profile, and
//! [`safety_filter`] passes the smallest of the enabled commands.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("safety filter needs at least one candidate")]
    NoCandidates,
    #[error("non-finite candidate at index {0}")]
    NonFinite(usize),
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
}

/// Range-policy, speed-policy and gain parameters of the cruise controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccParams {
    /// Stopping distance [m].
    pub h_st: f64,
    /// Range-policy gradient [1/s].
    pub kappa: f64,
    /// Taper length `h_CC - h_go` [m].
    pub delta: f64,
    /// Range-policy gain [1/s].
    pub alpha: f64,
    /// Relative-speed gain [1/s].
    pub beta: f64,
    /// Cruise gain above `h_CC` [1/s].
    pub alpha_cc: f64,
    /// Speed limit [m/s].
    pub v_max: f64,
}

impl CccParams {
    /// Parameters of the closed-track runs.
    pub fn on_track() -> Self {
        Self {
            h_st: 5.0,
            kappa: 0.6,
            delta: 20.0,
            alpha: 0.4,
            beta: 0.5,
            alpha_cc: 0.9,
            v_max: 20.0,
        }
    }

    /// Parameters of the highway runs.
    pub fn highway() -> Self {
        Self {
            h_st: 5.0,
            kappa: 0.8,
            delta: 20.0,
            alpha: 0.2,
            beta: 0.5,
            alpha_cc: 0.7,
            v_max: 32.0,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let positive = [
            ("h_st", self.h_st),
            ("kappa", self.kappa),
            ("delta", self.delta),
            ("alpha", self.alpha),
            ("alpha_cc", self.alpha_cc),
            ("v_max", self.v_max),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControlError::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ControlError::InvalidParams(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Headway above which the range policy saturates at `v_max`.
    pub fn h_go(&self) -> f64 {
        self.h_st + self.v_max / self.kappa
    }

    /// Headway above which the controller becomes a pure cruise controller.
    pub fn h_cc(&self) -> f64 {
        self.h_go() + self.delta
    }

    /// Range policy `V(h)`.
    pub fn range_policy(&self, h: f64) -> f64 {
        if h <= self.h_st {
            0.0
        } else if h < self.h_go() {
            self.kappa * (h - self.h_st)
        } else {
            self.v_max
        }
    }

    /// Speed policy `W(v1) = min(v1, v_max)`.
    pub fn speed_policy(&self, v1: f64) -> f64 {
        v1.min(self.v_max)
    }

    /// Gain on the range-policy error.
    pub fn gain_a(&self, h: f64) -> f64 {
        if h <= self.h_cc() {
            self.alpha
        } else {
            self.alpha_cc
        }
    }

    /// Gain on the relative-speed error, tapering linearly to zero between
    /// `h_go` and `h_CC`.
    pub fn gain_b(&self, h: f64) -> f64 {
        let (h_go, h_cc) = (self.h_go(), self.h_cc());
        if h <= h_go {
            self.beta
        } else if h < h_cc {
            self.beta * (h_cc - h) / (h_cc - h_go)
        } else {
            0.0
        }
    }

    /// Desired acceleration of the safety-oriented controller.
    pub fn accel(&self, state: FollowState) -> f64 {
        let FollowState { h, v, v1 } = state;
        self.gain_a(h) * (self.range_policy(h) - v) + self.gain_b(h) * (self.speed_policy(v1) - v)
    }

    /// Cruise command used when no preceding vehicle is sensed
    /// (the `h -> infinity` limit of [`Self::accel`]).
    pub fn cruise(&self, v: f64) -> f64 {
        self.alpha_cc * (self.v_max - v)
    }
}

/// Car-following state: headway, ego speed and preceding-vehicle speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FollowState {
    /// Bumper-to-bumper headway [m]; `h <= 0` is a collision.
    pub h: f64,
    /// Ego speed [m/s].
    pub v: f64,
    /// Preceding-vehicle speed [m/s].
    pub v1: f64,
}

impl FollowState {
    pub fn new(h: f64, v: f64, v1: f64) -> Self {
        Self { h, v, v1 }
    }
}

pub fn range_policy(params: &CccParams, h: f64) -> f64 {
    params.range_policy(h)
}

pub fn speed_policy(params: &CccParams, v1: f64) -> f64 {
    params.speed_policy(v1)
}

pub fn gain_a(params: &CccParams, h: f64) -> f64 {
    params.gain_a(h)
}

pub fn gain_b(params: &CccParams, h: f64) -> f64 {
    params.gain_b(h)
}

pub fn ccc_accel(params: &CccParams, state: FollowState) -> f64 {
    params.accel(state)
}

/// Variable-speed cruise controller tracking the optimal profile.
pub fn pcc_feedback(alpha_cc: f64, v_pcc: f64, v: f64) -> f64 {
    alpha_cc * (v_pcc - v)
}

/// Which controller produced a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Acc,
    Ccc,
    Pcc,
    /// Fallback speed-limit cruise when no other command is available.
    Cruise,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Acc => "acc",
            Self::Ccc => "ccc",
            Self::Pcc => "pcc",
            Self::Cruise => "cruise",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(Self::Acc),
            "ccc" => Ok(Self::Ccc),
            "pcc" => Ok(Self::Pcc),
            "cruise" => Ok(Self::Cruise),
            other => Err(format!("unknown controller {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub u: f64,
    /// Index of the minimizing candidate; ties go to the lowest index.
    pub active: usize,
}

/// Min-of-controllers safety filter.
pub fn safety_filter(candidates: &[f64]) -> Result<FilterOutput, ControlError> {
    let mut best: Option<FilterOutput> = None;
    for (i, &u) in candidates.iter().enumerate() {
        if !u.is_finite() {
            return Err(ControlError::NonFinite(i));
        }
        if best.is_none_or(|b| u < b.u) {
            best = Some(FilterOutput { u, active: i });
        }
    }
    best.ok_or(ControlError::NoCandidates)
}

/// [`safety_filter`] over labelled commands, returning the active label.
pub fn filter_labelled(
    candidates: &[(ControllerKind, f64)],
) -> Result<(f64, ControllerKind), ControlError> {
    let values: Vec<f64> = candidates.iter().map(|&(_, u)| u).collect();
    let out = safety_filter(&values)?;
    Ok((out.u, candidates[out.active].0))
}
