//! Safe integration of longitudinal controllers for automated trucks.
//!
//! * [`road`]: elevation ingestion, slope extraction and speed limits.
//! * [`plant`]: truck dynamics and the torque-level inversion.
//! * [`controllers`]: range/speed policies, the cruise controllers and the
//!   min-rule safety filter.
//! * [`cbf`]: control barrier functions for car following.
//! * [`pcc`]: energy-optimal speed planning and energy bookkeeping.
//! * [`sim`]: closed-loop scenarios, sensing and run logs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbf;
pub mod controllers;
pub mod pcc;
pub mod plant;
pub mod road;
pub mod sim;

pub use cbf::{barrier_eval, qp_filter, u_safe, BarrierState, CbfError, CriticalDistance};
pub use controllers::{safety_filter, CccParams, ControlError, ControllerKind, FollowState};
pub use pcc::{energy, solve, OcpSpec, OptimalProfile, PccError, SolverSettings, TrajectorySample};
pub use plant::{PlantMode, TruckParams, VehicleState};
pub use road::{RoadConfig, RoadError, RoadProfile, SpeedLimits};
pub use sim::{RunLog, RunSummary, Scenario, ScenarioConfig, SimError};
