//! Control barrier function machinery for car following.
//!
//! The safe set is `{ h - rho(v, v1) >= 0 }` for the car-following model
//! `h' = v1 - v`, `v' = u`, `v1' = a1`. With a critical distance that
//! strictly increases in ego speed, `Lg b = -d(rho)/dv < 0`, so the min-norm
//! QP safety filter collapses to `min(u_nom, u_safe)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::FollowState;

#[derive(Debug, Error, PartialEq)]
pub enum CbfError {
    #[error("degenerate barrier: Lg b = 0 and the CBF condition cannot be met")]
    DegenerateBarrier,
    #[error("invalid critical distance: {0}")]
    InvalidCriticalDistance(String),
}

/// Minimum admissible headway as a function of ego and leader speed.
pub trait CriticalDistanceFn {
    fn rho(&self, v: f64, v1: f64) -> f64;
}

/// Affine time-headway critical distance `rho_0 + tau * v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalDistance {
    /// Standstill offset [m].
    pub rho_0: f64,
    /// Time headway [s].
    pub tau: f64,
}

impl Default for CriticalDistance {
    fn default() -> Self {
        Self { rho_0: 5.0, tau: 1.5 }
    }
}

impl CriticalDistance {
    pub fn new(rho_0: f64, tau: f64) -> Result<Self, CbfError> {
        let rho = Self { rho_0, tau };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<(), CbfError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CbfError::InvalidCriticalDistance(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.rho_0 >= 0.0 && self.rho_0.is_finite()) {
            return Err(CbfError::InvalidCriticalDistance(format!(
                "rho_0 must be non-negative, got {}",
                self.rho_0
            )));
        }
        Ok(())
    }
}

impl CriticalDistanceFn for CriticalDistance {
    fn rho(&self, v: f64, _v1: f64) -> f64 {
        self.rho_0 + self.tau * v
    }
}

/// Barrier value and Lie derivatives at a car-following state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierState {
    pub x: FollowState,
    /// `h - rho(v, v1)` [m].
    pub b: f64,
    /// Drift derivative `Lf b` [m/s].
    pub lfb: f64,
    /// Input derivative `Lg b` [s].
    pub lgb: f64,
}

pub fn barrier_eval(rho: &CriticalDistance, x: FollowState) -> BarrierState {
    BarrierState {
        x,
        b: x.h - rho.rho(x.v, x.v1),
        // d(rho)/d(v1) = 0, so the leader acceleration does not enter.
        lfb: x.v1 - x.v,
        lgb: -rho.tau,
    }
}

/// CBF condition `Lf b + Lg b u >= -alpha_e b` with linear class-K function.
pub fn cbf_condition_holds(bs: &BarrierState, u: f64, alpha_e: f64) -> bool {
    bs.lfb + bs.lgb * u >= -alpha_e * bs.b
}

/// Input that puts the CBF condition on its boundary,
/// `-(Lf b + alpha_e b) / Lg b`.
pub fn u_safe(bs: &BarrierState, alpha_e: f64) -> Result<f64, CbfError> {
    if bs.lgb == 0.0 {
        return Err(CbfError::DegenerateBarrier);
    }
    Ok(-(bs.lfb + alpha_e * bs.b) / bs.lgb)
}

/// Closed-form minimizer of `(u - u_nom)^2 / 2` subject to the CBF condition.
pub fn qp_filter(bs: &BarrierState, u_nom: f64, alpha_e: f64) -> Result<f64, CbfError> {
    if bs.lgb == 0.0 {
        // The constraint does not involve u: either every input is safe or none is.
        return if bs.lfb + alpha_e * bs.b >= 0.0 {
            Ok(u_nom)
        } else {
            Err(CbfError::DegenerateBarrier)
        };
    }
    let safe = u_safe(bs, alpha_e)?;
    Ok(if bs.lgb < 0.0 { u_nom.min(safe) } else { u_nom.max(safe) })
}

/// Checks that `rho` strictly increases in `v` at every grid point, using a
/// central finite difference.
pub fn rho_increases_with_speed<R: CriticalDistanceFn + ?Sized>(rho: &R, v_grid: &[f64], v1_grid: &[f64]) -> bool {
    const EPS: f64 = 1e-4;
    if v_grid.is_empty() || v1_grid.is_empty() {
        return false;
    }
    v_grid.iter().all(|&v| {
        v1_grid
            .iter()
            .all(|&v1| (rho.rho(v + EPS, v1) - rho.rho(v - EPS, v1)) / (2.0 * EPS) > 0.0)
    })
}

/// Right-hand side of the car-following model.
fn follow_rhs(x: FollowState, u: f64, a1: f64) -> (f64, f64, f64) {
    (x.v1 - x.v, u, a1)
}

/// One RK4 step of the car-following model where the input is a state
/// feedback `control(x)` re-evaluated at every stage and the leader
/// acceleration `a1` is constant over the step.
pub fn follow_step<F: Fn(FollowState) -> f64>(x: FollowState, control: F, a1: f64, dt: f64) -> FollowState {
    let add = |x: FollowState, k: (f64, f64, f64), h: f64| {
        FollowState::new(x.h + h * k.0, x.v + h * k.1, x.v1 + h * k.2)
    };
    let f = |x: FollowState| follow_rhs(x, control(x), a1);
    let k1 = f(x);
    let k2 = f(add(x, k1, dt / 2.0));
    let k3 = f(add(x, k2, dt / 2.0));
    let k4 = f(add(x, k3, dt));
    FollowState::new(
        x.h + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        x.v + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        x.v1 + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
    )
}
