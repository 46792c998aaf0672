//! Closed-loop simulation of the truck behind scripted leaders.

pub mod config;
pub mod log;
pub mod sensing;

use std::path::Path;

use thiserror::Error;

pub use config::{
    load_scenario, CbfSection, ControllerPreset, ControllerSection, LeaderSpec, PccSection, RoadSection,
    ScenarioConfig, SensingConfig,
};
pub use log::{saving_pct, summarize, RunLog, RunSummary, StepRecord, LOG_HEADER};
pub use sensing::{Leader, Reading, Sensors};

use crate::cbf::CbfError;
use crate::controllers::{filter_labelled, pcc_feedback, ControlError, ControllerKind, FollowState};
use crate::pcc::{self, u_dr_from_accel, EnergyIntegrator, OcpSpec, OptimalProfile, PccError, TrajectorySample};
use crate::plant::{self, acceleration, PlantMode, VehicleState};
use crate::road::{RoadError, RoadProfile};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error(transparent)]
    Pcc(#[from] PccError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated scenario with its road built and its profile solved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub road: RoadProfile,
    pub profile: Option<OptimalProfile>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig, base_dir: Option<&Path>) -> Result<Self, SimError> {
        config.validate()?;
        let road = config.road.build(base_dir)?;
        let profile = match config.pcc {
            Some(p) if p.enabled => Some(pcc::solve(&OcpSpec {
                road: &road,
                params: &config.truck,
                v0: p.v0,
                vf: p.vf,
                t_f_max: p.t_f_max,
                settings: p.solver,
            })?),
            _ => None,
        };
        Ok(Self { config, road, profile })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let (config, dir) = load_scenario(path)?;
        Self::build(config, dir.as_deref())
    }

    /// Same world with a different controller set.
    pub fn with_controllers(&self, set: &[ControllerKind]) -> Result<Self, SimError> {
        let mut out = self.clone();
        out.config.controller_set = set.to_vec();
        out.config.validate()?;
        Ok(out)
    }

    /// Same world with different leaders.
    pub fn with_leaders(&self, leaders: Vec<LeaderSpec>) -> Result<Self, SimError> {
        let mut out = self.clone();
        out.config.leaders = leaders;
        out.config.validate()?;
        Ok(out)
    }

    /// Runs until the end of the road or `t_max`. A collision is flagged but
    /// does not stop the run.
    pub fn run(&self) -> Result<RunLog, SimError> {
        let cfg = &self.config;
        let truck = &cfg.truck;
        let road = &self.road;
        let ccc = cfg.controllers.ccc_params();
        let pcc_gain = cfg.controllers.pcc_gain();
        let slope = |s: f64| road.slope_clamped(s);
        let s_f = road.length();

        let mut state = VehicleState::new(0.0, cfg.initial_speed());
        let leaders: Vec<Leader> = cfg.leaders.iter().map(|l| Leader::new(l, state.s)).collect();
        let mut sensors = Sensors::new(cfg.sensing);
        let mut work = EnergyIntegrator::new();
        let mut log = RunLog::default();
        let n_max = (cfg.t_max / cfg.dt).ceil() as usize;

        for k in 0..=n_max {
            let t = k as f64 * cfg.dt;
            for leader in &leaders {
                let gap = leader.position(t) - state.s;
                log.min_gap = Some(log.min_gap.map_or(gap, |m: f64| m.min(gap)));
                log.collision |= gap <= 0.0;
            }
            let radar = sensors.radar(&leaders, t, state.s);
            let comms = sensors.comms(&leaders, t, state.s);
            let follow = |r: Option<Reading>| r.map(|r| ccc.accel(FollowState::new(r.h, state.v, r.v1)));
            let u_acc = cfg.is_enabled(ControllerKind::Acc).then(|| follow(radar)).flatten();
            let u_ccc = cfg.is_enabled(ControllerKind::Ccc).then(|| follow(comms)).flatten();
            let u_pcc = match &self.profile {
                Some(p) if cfg.is_enabled(ControllerKind::Pcc) => {
                    Some(pcc_feedback(pcc_gain, p.v_at(state.s), state.v))
                }
                _ => None,
            };

            let candidates: Vec<(ControllerKind, f64)> = [
                (ControllerKind::Acc, u_acc),
                (ControllerKind::Ccc, u_ccc),
                (ControllerKind::Pcc, u_pcc),
            ]
            .into_iter()
            .filter_map(|(kind, u)| u.map(|u| (kind, u)))
            .collect();
            let (u, active) = if candidates.is_empty() {
                (ccc.cruise(state.v), ControllerKind::Cruise)
            } else {
                filter_labelled(&candidates)?
            };

            let phi = slope(state.s);
            let u_sat = truck.saturate(state.v, u);
            let input = match cfg.plant_mode {
                PlantMode::Ideal => u_sat,
                PlantMode::Physical => truck.low_level_invert(phi, state.v, u_sat).total(),
            };
            let mut v_dot = acceleration(truck, cfg.plant_mode, state, input, &slope);
            if state.v <= 0.0 && v_dot < 0.0 {
                v_dot = 0.0;
            }
            let u_dr = u_dr_from_accel(truck, phi, state.v, v_dot);
            let w = work.push(TrajectorySample { t, v: state.v, u_dr })?;

            log.records.push(StepRecord {
                t,
                s: state.s,
                v: state.v,
                h_r: radar.map(|r| r.h),
                v1_r: radar.map(|r| r.v1),
                h_c: comms.map(|r| r.h),
                v1_c: comms.map(|r| r.v1),
                u_acc,
                u_ccc,
                u_pcc,
                u,
                active,
                u_dr,
                w,
                v_dot: Some(v_dot),
                phi: Some(phi),
            });

            if state.s >= s_f {
                log.finished = true;
                break;
            }
            if k == n_max {
                break;
            }
            state = plant::step(truck, cfg.plant_mode, state, input, slope, cfg.dt);
        }
        Ok(log)
    }
}

/// Loads, solves and runs a scenario file.
pub fn run_scenario_file(path: &Path) -> Result<RunLog, SimError> {
    Scenario::load(path)?.run()
}
