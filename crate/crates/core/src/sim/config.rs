//! Scenario configuration (TOML) and its validation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::cbf::CriticalDistance;
use crate::controllers::{CccParams, ControllerKind};
use crate::pcc::SolverSettings;
use crate::plant::{PlantMode, TruckParams};
use crate::road::{
    ingest_elevation_csv, RoadConfig, RoadProfile, SpeedLimit, SpeedLimits, SyntheticRoad,
    DEFAULT_GRID_SPACING, DEFAULT_SMOOTHING_WINDOW,
};

/// Full description of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Simulated-time budget [s].
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub plant_mode: PlantMode,
    pub controller_set: Vec<ControllerKind>,
    /// Ego speed at `t = 0`; defaults to the planner's `v0` or standstill.
    #[serde(default)]
    pub initial_speed: Option<f64>,
    pub road: RoadSection,
    #[serde(default)]
    pub truck: TruckParams,
    #[serde(default)]
    pub controllers: ControllerSection,
    #[serde(default)]
    pub cbf: CbfSection,
    #[serde(default)]
    pub pcc: Option<PccSection>,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub leaders: Vec<LeaderSpec>,
}

fn default_dt() -> f64 {
    0.01
}

fn default_t_max() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    /// Elevation CSV, relative to the scenario file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticRoad>,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Hill height of synthetic roads [m].
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    #[serde(default = "default_spacing")]
    pub grid_spacing: f64,
    /// `[s_start, v_min, v_max]` breakpoints.
    #[serde(default = "default_limits")]
    pub speed_limits: Vec<(f64, f64, f64)>,
}

fn default_length() -> f64 {
    3000.0
}
fn default_height() -> f64 {
    20.0
}
fn default_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}
fn default_spacing() -> f64 {
    DEFAULT_GRID_SPACING
}
fn default_limits() -> Vec<(f64, f64, f64)> {
    SpeedLimits::default()
        .segments()
        .iter()
        .map(|seg| (seg.s_start, seg.v_min, seg.v_max))
        .collect()
}

impl RoadSection {
    pub fn speed_limits(&self) -> Result<SpeedLimits, SimError> {
        let segments = self
            .speed_limits
            .iter()
            .map(|&(s, lo, hi)| SpeedLimit::new(s, lo, hi))
            .collect();
        Ok(SpeedLimits::new(segments)?)
    }

    /// Builds the road, resolving `file` against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<RoadProfile, SimError> {
        let config = RoadConfig {
            smoothing_window: self.smoothing_window,
            grid_spacing: self.grid_spacing,
            speed_limits: self.speed_limits()?,
        };
        match (&self.file, self.synthetic) {
            (Some(file), None) => {
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                let reader = std::fs::File::open(&path)
                    .map_err(|e| SimError::Config(format!("cannot open road file {}: {e}", path.display())))?;
                Ok(ingest_elevation_csv(reader, &config)?)
            }
            (None, Some(kind)) => {
                let samples = kind.generate(self.length, self.grid_spacing, self.height);
                Ok(RoadProfile::from_samples(&samples, &config)?)
            }
            _ => Err(SimError::Config(
                "road needs exactly one of `file` or `synthetic`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerPreset {
    OnTrack,
    #[default]
    Highway,
}

impl ControllerPreset {
    pub fn params(self) -> CccParams {
        match self {
            Self::OnTrack => CccParams::on_track(),
            Self::Highway => CccParams::highway(),
        }
    }
}

/// Cruise-controller preset with optional per-field overrides. ACC and CCC
/// share these parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub preset: ControllerPreset,
    pub h_st: Option<f64>,
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub alpha_cc: Option<f64>,
    pub v_max: Option<f64>,
    /// Gain of the profile-tracking controller; defaults to `alpha_cc`.
    pub pcc_gain: Option<f64>,
}

impl ControllerSection {
    pub fn ccc_params(&self) -> CccParams {
        let base = self.preset.params();
        CccParams {
            h_st: self.h_st.unwrap_or(base.h_st),
            kappa: self.kappa.unwrap_or(base.kappa),
            delta: self.delta.unwrap_or(base.delta),
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            alpha_cc: self.alpha_cc.unwrap_or(base.alpha_cc),
            v_max: self.v_max.unwrap_or(base.v_max),
        }
    }

    pub fn pcc_gain(&self) -> f64 {
        self.pcc_gain.unwrap_or(self.ccc_params().alpha_cc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfSection {
    #[serde(default = "default_rho_0")]
    pub rho_0: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha_e")]
    pub alpha_e: f64,
}

fn default_rho_0() -> f64 {
    5.0
}
fn default_tau() -> f64 {
    1.5
}
fn default_alpha_e() -> f64 {
    1.0
}

impl Default for CbfSection {
    fn default() -> Self {
        Self {
            rho_0: default_rho_0(),
            tau: default_tau(),
            alpha_e: default_alpha_e(),
        }
    }
}

impl CbfSection {
    pub fn critical_distance(&self) -> CriticalDistance {
        CriticalDistance {
            rho_0: self.rho_0,
            tau: self.tau,
        }
    }
}

/// Energy-optimal profile settings. An absent section disables the PCC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PccSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub v0: f64,
    pub vf: f64,
    pub t_f_max: f64,
    #[serde(default, flatten)]
    pub solver: SolverSettings,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    #[serde(default = "default_radar_range")]
    pub radar_range: f64,
    #[serde(default = "default_comms_range")]
    pub comms_range: f64,
    /// Connectivity packet rate [Hz].
    #[serde(default = "default_comms_rate")]
    pub comms_rate: f64,
    /// Standard deviation of additive measurement noise on headway [m] and
    /// speed [m/s]; zero disables it.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_radar_range() -> f64 {
    200.0
}
fn default_comms_range() -> f64 {
    300.0
}
fn default_comms_rate() -> f64 {
    10.0
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            radar_range: default_radar_range(),
            comms_range: default_comms_range(),
            comms_rate: default_comms_rate(),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

/// A scripted preceding vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSpec {
    /// Initial bumper-to-bumper gap ahead of the ego truck [m].
    pub gap: f64,
    /// Piecewise-linear speed samples `[t, v1]`.
    pub profile: Vec<(f64, f64)>,
    #[serde(default)]
    pub connected: bool,
}

impl LeaderSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(SimError::Config(format!("leader gap must be positive, got {}", self.gap)));
        }
        if self.profile.is_empty() {
            return Err(SimError::Config("leader profile is empty".into()));
        }
        for w in self.profile.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::Config(format!(
                    "leader profile times not increasing at t = {}",
                    w[1].0
                )));
            }
        }
        if self.profile.iter().any(|&(t, v)| !(v >= 0.0) || !t.is_finite() || !v.is_finite()) {
            return Err(SimError::Config("leader speeds must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Seeded variation of the profile: each breakpoint speed is scaled by a
    /// factor in `1 +/- speed_jitter` and each interior breakpoint time is
    /// shifted by up to `time_jitter` seconds (order is preserved).
    pub fn perturbed(&self, seed: u64, speed_jitter: f64, time_jitter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.profile.len();
        let mut profile = Vec::with_capacity(n);
        for (i, &(t, v)) in self.profile.iter().enumerate() {
            let scale = 1.0 + speed_jitter * rng.random_range(-1.0..=1.0);
            let shift = if i == 0 || i + 1 == n {
                0.0
            } else {
                let room_lo = (t - self.profile[i - 1].0) / 3.0;
                let room_hi = (self.profile[i + 1].0 - t) / 3.0;
                (time_jitter * rng.random_range(-1.0..=1.0)).clamp(-room_lo, room_hi)
            };
            profile.push((t + shift, (v * scale).max(0.0)));
        }
        Self {
            gap: self.gap,
            profile,
            connected: self.connected,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0) {
            return Err(SimError::Config("t_max must be positive".into()));
        }
        if self.controller_set.is_empty() {
            return Err(SimError::Config("controller_set is empty".into()));
        }
        if self.controller_set.contains(&ControllerKind::Cruise) {
            return Err(SimError::Config("`cruise` is a fallback, not a selectable controller".into()));
        }
        let pcc_wanted = self.controller_set.contains(&ControllerKind::Pcc);
        let pcc_ready = self.pcc.is_some_and(|p| p.enabled);
        if pcc_wanted && !pcc_ready {
            return Err(SimError::Config("PCC selected but the [pcc] section is missing or disabled".into()));
        }
        let s = &self.sensing;
        if !(s.radar_range > 0.0 && s.comms_range > 0.0 && s.comms_rate > 0.0 && s.noise_std >= 0.0) {
            return Err(SimError::Config(
                "sensing ranges and rate must be positive, noise non-negative".into(),
            ));
        }
        if self.leaders.iter().filter(|l| l.connected).count() > 1 {
            return Err(SimError::Config("at most one leader may be connected".into()));
        }
        for leader in &self.leaders {
            leader.validate()?;
        }
        self.truck.validate().map_err(SimError::Config)?;
        self.controllers.ccc_params().validate()?;
        if !(self.controllers.pcc_gain() > 0.0) {
            return Err(SimError::Config("pcc_gain must be positive".into()));
        }
        self.cbf.critical_distance().validate()?;
        if let Some(v) = self.initial_speed {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("initial_speed must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn initial_speed(&self) -> f64 {
        self.initial_speed
            .or_else(|| self.pcc.filter(|p| p.enabled).map(|p| p.v0))
            .unwrap_or(0.0)
    }

    pub fn is_enabled(&self, kind: ControllerKind) -> bool {
        self.controller_set.contains(&kind)
    }
}

/// Reads and validates a scenario file. Relative road paths resolve against
/// the file's directory.
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, Option<PathBuf>), SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    let config = ScenarioConfig::from_toml(&text)?;
    Ok((config, path.parent().map(Path::to_path_buf)))
}
