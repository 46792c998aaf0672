//! Longitudinal truck dynamics, actuator limits and the low-level inversion
//! from desired acceleration to scaled wheel torque.

use serde::{Deserialize, Serialize};

/// Physical constants of the truck plus actuator limits.
///
/// Accelerations are "scaled" quantities: torque divided by `R * m_eff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruckParams {
    /// Tire radius [m].
    pub radius: f64,
    /// Mass [kg].
    pub mass: f64,
    /// Effective mass including rotating inertia [kg].
    pub m_eff: f64,
    /// Rolling resistance coefficient.
    pub gamma: f64,
    /// Air drag coefficient [kg/m].
    pub k_air: f64,
    /// Gravitational acceleration [m/s^2].
    pub g: f64,
    /// Maximum deceleration magnitude [m/s^2].
    pub u_min: f64,
    /// Maximum acceleration [m/s^2].
    pub u_max: f64,
    /// Maximum powertrain power [W].
    pub p_max: f64,
    /// Maximum scaled drive torque [m/s^2].
    pub u_dr_max: f64,
    /// Maximum scaled brake magnitude [m/s^2].
    pub u_br_max: f64,
}

impl Default for TruckParams {
    fn default() -> Self {
        Self {
            radius: 0.5,
            mass: 9000.0,
            m_eff: 9157.0,
            gamma: 0.006,
            k_air: 3.84,
            g: 9.81,
            u_min: 4.0,
            u_max: 2.0,
            p_max: 93_000.0,
            u_dr_max: 2.0,
            u_br_max: 4.0,
        }
    }
}

impl TruckParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("radius", self.radius),
            ("mass", self.mass),
            ("m_eff", self.m_eff),
            ("gamma", self.gamma),
            ("k_air", self.k_air),
            ("g", self.g),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("p_max", self.p_max),
            ("u_dr_max", self.u_dr_max),
            ("u_br_max", self.u_br_max),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(format!("truck parameter {name} must be positive and finite, got {value}"));
            }
        }
        if self.m_eff < self.mass {
            return Err(format!("m_eff ({}) must be at least mass ({})", self.m_eff, self.mass));
        }
        Ok(())
    }

    /// Grade and rolling resistance `(m g / m_eff)(sin phi + gamma cos phi)`.
    pub fn f1(&self, phi: f64) -> f64 {
        self.mass * self.g / self.m_eff * (phi.sin() + self.gamma * phi.cos())
    }

    /// Aerodynamic drag `(k_air / m_eff) v^2`.
    pub fn f2(&self, v: f64) -> f64 {
        self.k_air / self.m_eff * v * v
    }

    /// Power-limited acceleration `P / (m_eff v)`; infinite at standstill.
    pub fn power_limit(&self, v: f64) -> f64 {
        if v > 0.0 {
            self.p_max / (self.m_eff * v)
        } else {
            f64::INFINITY
        }
    }

    /// Admissible desired-acceleration interval at speed `v`.
    pub fn input_bounds(&self, v: f64) -> (f64, f64) {
        (-self.u_min, self.u_max.min(self.power_limit(v)))
    }

    /// Clamps a desired acceleration into [`Self::input_bounds`].
    pub fn saturate(&self, v: f64, u: f64) -> f64 {
        let (lo, hi) = self.input_bounds(v);
        u.clamp(lo, hi)
    }

    /// Upper bound on the scaled drive torque at speed `v`.
    pub fn drive_limit(&self, v: f64) -> f64 {
        self.u_dr_max.min(self.power_limit(v))
    }

    /// Maps a desired acceleration to the scaled torque that realizes it,
    /// `u + f1 + f2`, split into clamped drive and brake parts.
    pub fn low_level_invert(&self, phi: f64, v: f64, u: f64) -> TorqueCommand {
        TorqueCommand::split(self.compensation(phi, v, u), self.drive_limit(v), self.u_br_max)
    }

    /// Unclamped torque `u + f1 + f2` behind [`Self::low_level_invert`].
    pub fn compensation(&self, phi: f64, v: f64, u: f64) -> f64 {
        u + self.f1(phi) + self.f2(v)
    }
}

/// Scaled wheel torque, split into non-negative drive and non-positive brake.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueCommand {
    pub u_dr: f64,
    pub u_br: f64,
}

impl TorqueCommand {
    pub fn split(raw: f64, drive_limit: f64, brake_limit: f64) -> Self {
        if raw >= 0.0 {
            Self {
                u_dr: raw.min(drive_limit),
                u_br: 0.0,
            }
        } else {
            Self {
                u_dr: 0.0,
                u_br: raw.max(-brake_limit),
            }
        }
    }

    /// Net scaled torque `u_dr + u_br`.
    pub fn total(&self) -> f64 {
        self.u_dr + self.u_br
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position of the front bumper [m].
    pub s: f64,
    /// Speed [m/s].
    pub v: f64,
}

impl VehicleState {
    pub fn new(s: f64, v: f64) -> Self {
        Self { s, v }
    }
}

/// Plant fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantMode {
    /// Double integrator: the input is the realized acceleration.
    #[default]
    Ideal,
    /// Torque-level model: the input is the scaled wheel torque and
    /// resistances act on the truck.
    Physical,
}

/// Acceleration produced by `input` at `state`.
pub fn acceleration<F: Fn(f64) -> f64>(
    params: &TruckParams,
    mode: PlantMode,
    state: VehicleState,
    input: f64,
    slope: &F,
) -> f64 {
    match mode {
        PlantMode::Ideal => input,
        PlantMode::Physical => input - params.f1(slope(state.s)) - params.f2(state.v),
    }
}

/// Advances the truck by one classical RK4 step.
///
/// Speed is floored at zero: a stopped truck stays put while the net force
/// points backwards, and a truck that would reverse within the step stops at
/// the distance implied by its initial deceleration.
pub fn step<F: Fn(f64) -> f64>(
    params: &TruckParams,
    mode: PlantMode,
    state: VehicleState,
    input: f64,
    slope: F,
    dt: f64,
) -> VehicleState {
    debug_assert!(dt > 0.0);
    let accel = |x: VehicleState| acceleration(params, mode, x, input, &slope);
    let a0 = accel(state);
    if state.v <= 0.0 && a0 <= 0.0 {
        return VehicleState::new(state.s, 0.0);
    }

    let deriv = |x: VehicleState| (x.v, accel(x));
    let add = |x: VehicleState, k: (f64, f64), h: f64| VehicleState::new(x.s + h * k.0, x.v + h * k.1);
    let k1 = (state.v, a0);
    let k2 = deriv(add(state, k1, dt / 2.0));
    let k3 = deriv(add(state, k2, dt / 2.0));
    let k4 = deriv(add(state, k3, dt));
    let next = VehicleState::new(
        state.s + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.v + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    );
    if next.v >= 0.0 {
        next
    } else {
        let stop = if a0 < 0.0 { state.v * state.v / (-2.0 * a0) } else { 0.0 };
        VehicleState::new(state.s + stop, 0.0)
    }
}
