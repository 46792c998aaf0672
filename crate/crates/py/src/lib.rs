//! Python module `safecruise`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use safecruise::cbf::{self, CriticalDistance};
use safecruise::controllers::{self, CccParams, FollowState};
use safecruise::pcc::{self, OcpSpec, SolverSettings, TrajectorySample};
use safecruise::plant;
use safecruise::road::{self, ElevationSample, RoadProfile, SpeedLimits};
use safecruise::sim::{summarize, Scenario};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "TruckParams", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyTruckParams {
    radius: f64,
    mass: f64,
    m_eff: f64,
    gamma: f64,
    k_air: f64,
    g: f64,
    u_min: f64,
    u_max: f64,
    p_max: f64,
    u_dr_max: f64,
    u_br_max: f64,
}

impl From<plant::TruckParams> for PyTruckParams {
    fn from(p: plant::TruckParams) -> Self {
        Self {
            radius: p.radius,
            mass: p.mass,
            m_eff: p.m_eff,
            gamma: p.gamma,
            k_air: p.k_air,
            g: p.g,
            u_min: p.u_min,
            u_max: p.u_max,
            p_max: p.p_max,
            u_dr_max: p.u_dr_max,
            u_br_max: p.u_br_max,
        }
    }
}

impl PyTruckParams {
    fn core(&self) -> plant::TruckParams {
        plant::TruckParams {
            radius: self.radius,
            mass: self.mass,
            m_eff: self.m_eff,
            gamma: self.gamma,
            k_air: self.k_air,
            g: self.g,
            u_min: self.u_min,
            u_max: self.u_max,
            p_max: self.p_max,
            u_dr_max: self.u_dr_max,
            u_br_max: self.u_br_max,
        }
    }
}

#[pymethods]
impl PyTruckParams {
    /// Default truck; keyword arguments override single fields.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let py_self = Self::from(plant::TruckParams::default());
        let Some(kwargs) = overrides else {
            return Ok(py_self);
        };
        let py = kwargs.py();
        let obj = Bound::new(py, py_self)?;
        for (key, value) in kwargs.iter() {
            obj.as_any().setattr(key.extract::<String>()?.as_str(), value)?;
        }
        let out = obj.borrow().clone();
        out.core().validate().map_err(value_err)?;
        Ok(out)
    }

    /// Grade and rolling resistance at slope `phi`.
    fn f1(&self, phi: f64) -> f64 {
        self.core().f1(phi)
    }

    /// Air drag at speed `v`.
    fn f2(&self, v: f64) -> f64 {
        self.core().f2(v)
    }

    /// Admissible acceleration interval `(lo, hi)` at speed `v`.
    fn input_bounds(&self, v: f64) -> (f64, f64) {
        self.core().input_bounds(v)
    }

    fn saturate(&self, v: f64, u: f64) -> f64 {
        self.core().saturate(v, u)
    }

    /// Scaled drive and brake torque `(u_dr, u_br)` realizing `u`.
    fn low_level_invert(&self, phi: f64, v: f64, u: f64) -> (f64, f64) {
        let cmd = self.core().low_level_invert(phi, v, u);
        (cmd.u_dr, cmd.u_br)
    }

    /// One RK4 step of the `ideal` or `physical` plant; returns `(s, v)`.
    #[pyo3(signature = (s, v, u, dt, phi = 0.0, mode = "ideal"))]
    fn step(&self, s: f64, v: f64, u: f64, dt: f64, phi: f64, mode: &str) -> PyResult<(f64, f64)> {
        let mode = match mode {
            "ideal" => plant::PlantMode::Ideal,
            "physical" => plant::PlantMode::Physical,
            other => return Err(value_err(format!("unknown plant mode {other:?}"))),
        };
        if dt.is_nan() || dt <= 0.0 {
            return Err(value_err("dt must be positive"));
        }
        let next = plant::step(&self.core(), mode, plant::VehicleState::new(s, v), u, |_| phi, dt);
        Ok((next.s, next.v))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.core())
    }
}

#[pyclass(name = "CccParams", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCccParams {
    h_st: f64,
    kappa: f64,
    delta: f64,
    alpha: f64,
    beta: f64,
    alpha_cc: f64,
    v_max: f64,
}

impl From<CccParams> for PyCccParams {
    fn from(p: CccParams) -> Self {
        Self {
            h_st: p.h_st,
            kappa: p.kappa,
            delta: p.delta,
            alpha: p.alpha,
            beta: p.beta,
            alpha_cc: p.alpha_cc,
            v_max: p.v_max,
        }
    }
}

impl PyCccParams {
    fn core(&self) -> CccParams {
        CccParams {
            h_st: self.h_st,
            kappa: self.kappa,
            delta: self.delta,
            alpha: self.alpha,
            beta: self.beta,
            alpha_cc: self.alpha_cc,
            v_max: self.v_max,
        }
    }
}

#[pymethods]
impl PyCccParams {
    #[new]
    fn new(h_st: f64, kappa: f64, delta: f64, alpha: f64, beta: f64, alpha_cc: f64, v_max: f64) -> PyResult<Self> {
        let p = CccParams {
            h_st,
            kappa,
            delta,
            alpha,
            beta,
            alpha_cc,
            v_max,
        };
        p.validate().map_err(value_err)?;
        Ok(p.into())
    }

    #[staticmethod]
    fn highway() -> Self {
        CccParams::highway().into()
    }

    #[staticmethod]
    fn on_track() -> Self {
        CccParams::on_track().into()
    }

    #[getter]
    fn h_go(&self) -> f64 {
        self.core().h_go()
    }

    #[getter]
    fn h_cc(&self) -> f64 {
        self.core().h_cc()
    }

    fn range_policy(&self, h: f64) -> f64 {
        self.core().range_policy(h)
    }

    fn speed_policy(&self, v1: f64) -> f64 {
        self.core().speed_policy(v1)
    }

    fn gain_a(&self, h: f64) -> f64 {
        self.core().gain_a(h)
    }

    fn gain_b(&self, h: f64) -> f64 {
        self.core().gain_b(h)
    }

    /// Cruise-controller command at headway `h`, speed `v`, leader speed `v1`.
    fn accel(&self, h: f64, v: f64, v1: f64) -> f64 {
        self.core().accel(FollowState::new(h, v, v1))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.core())
    }
}

/// Min-rule filter; returns `(u, index_of_active_candidate)`.
#[pyfunction]
fn safety_filter(candidates: Vec<f64>) -> PyResult<(f64, usize)> {
    let out = controllers::safety_filter(&candidates).map_err(value_err)?;
    Ok((out.u, out.active))
}

/// Profile-tracking command `alpha_cc * (v_pcc - v)`.
#[pyfunction]
fn pcc_feedback(alpha_cc: f64, v_pcc: f64, v: f64) -> f64 {
    controllers::pcc_feedback(alpha_cc, v_pcc, v)
}

fn critical(rho_0: f64, tau: f64) -> PyResult<CriticalDistance> {
    CriticalDistance::new(rho_0, tau).map_err(value_err)
}

/// Barrier value and Lie derivatives `(b, lfb, lgb)`.
#[pyfunction]
#[pyo3(signature = (h, v, v1, rho_0 = 5.0, tau = 1.5))]
fn barrier_eval(h: f64, v: f64, v1: f64, rho_0: f64, tau: f64) -> PyResult<(f64, f64, f64)> {
    let bs = cbf::barrier_eval(&critical(rho_0, tau)?, FollowState::new(h, v, v1));
    Ok((bs.b, bs.lfb, bs.lgb))
}

#[pyfunction]
#[pyo3(signature = (h, v, v1, alpha_e, rho_0 = 5.0, tau = 1.5))]
fn u_safe(h: f64, v: f64, v1: f64, alpha_e: f64, rho_0: f64, tau: f64) -> PyResult<f64> {
    let bs = cbf::barrier_eval(&critical(rho_0, tau)?, FollowState::new(h, v, v1));
    cbf::u_safe(&bs, alpha_e).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (h, v, v1, u_nom, alpha_e, rho_0 = 5.0, tau = 1.5))]
fn qp_filter(h: f64, v: f64, v1: f64, u_nom: f64, alpha_e: f64, rho_0: f64, tau: f64) -> PyResult<f64> {
    let bs = cbf::barrier_eval(&critical(rho_0, tau)?, FollowState::new(h, v, v1));
    cbf::qp_filter(&bs, u_nom, alpha_e).map_err(value_err)
}

fn samples(s: &[f64], elevation: &[f64]) -> PyResult<Vec<ElevationSample>> {
    if s.len() != elevation.len() {
        return Err(value_err("s and elevation differ in length"));
    }
    Ok(s.iter().zip(elevation).map(|(&s, &e)| ElevationSample::new(s, e)).collect())
}

/// Slope [rad] at every elevation sample.
#[pyfunction]
#[pyo3(signature = (s, elevation, window = road::DEFAULT_SMOOTHING_WINDOW))]
fn slope_from_elevation(s: Vec<f64>, elevation: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    road::slope_from_elevation(&samples(&s, &elevation)?, window).map_err(value_err)
}

/// Energy-optimal profile over an elevation profile with a uniform speed band.
/// Returns a dict of grid columns plus `cost`, `travel_time` and `lambda`.
#[pyfunction]
#[pyo3(signature = (s, elevation, v0, vf, t_f_max, v_min = 15.0, v_max = 32.0, window = 5, ds = 2.5, v_grid_step = 0.1, truck = None))]
#[allow(clippy::too_many_arguments)]
fn solve_pcc<'py>(
    py: Python<'py>,
    s: Vec<f64>,
    elevation: Vec<f64>,
    v0: f64,
    vf: f64,
    t_f_max: f64,
    v_min: f64,
    v_max: f64,
    window: usize,
    ds: f64,
    v_grid_step: f64,
    truck: Option<PyRef<'py, PyTruckParams>>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = road::RoadConfig {
        smoothing_window: window,
        grid_spacing: ds,
        speed_limits: SpeedLimits::uniform(v_min, v_max).map_err(value_err)?,
    };
    let road = RoadProfile::from_samples(&samples(&s, &elevation)?, &config).map_err(value_err)?;
    let params = truck.map_or_else(plant::TruckParams::default, |t| t.core());
    let spec = OcpSpec {
        road: &road,
        params: &params,
        v0,
        vf,
        t_f_max,
        settings: SolverSettings {
            ds,
            v_grid_step,
            ..SolverSettings::default()
        },
    };
    let profile = py.detach(|| pcc::solve(&spec)).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("s", &profile.s_grid)?;
    out.set_item("v_pcc", &profile.v_pcc)?;
    out.set_item("u_dr", &profile.u_dr_star)?;
    out.set_item("u_br", &profile.u_br_star)?;
    out.set_item("w", &profile.energy)?;
    out.set_item("cost", profile.cost())?;
    out.set_item("travel_time", profile.travel_time)?;
    out.set_item("lambda", profile.lambda)?;
    Ok(out)
}

/// Cumulative drive work of a `(t, v, u_dr)` time series.
#[pyfunction]
fn energy(t: Vec<f64>, v: Vec<f64>, u_dr: Vec<f64>) -> PyResult<Vec<f64>> {
    if t.len() != v.len() || t.len() != u_dr.len() {
        return Err(value_err("t, v and u_dr differ in length"));
    }
    let traj: Vec<TrajectorySample> = (0..t.len())
        .map(|i| TrajectorySample {
            t: t[i],
            v: v[i],
            u_dr: u_dr[i],
        })
        .collect();
    pcc::energy(&traj).map_err(value_err)
}

/// Runs a scenario file; returns the summary dict with the log columns
/// `t`, `s`, `v`, `u`, `active`, `w` under `log`.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let log = py
        .detach(|| Scenario::load(&path).and_then(|sc| sc.run()))
        .map_err(value_err)?;
    let summary = summarize(&log, None);
    let out = PyDict::new(py);
    out.set_item("final_energy_J_per_kg", summary.final_energy)?;
    out.set_item("min_headway_m", summary.min_headway)?;
    out.set_item("finish_time_s", summary.finish_time)?;
    out.set_item("switch_count", summary.switch_count)?;
    out.set_item("collision", summary.collision)?;
    let cols = PyDict::new(py);
    let col = |f: fn(&safecruise::sim::StepRecord) -> f64| log.records.iter().map(f).collect::<Vec<_>>();
    cols.set_item("t", col(|r| r.t))?;
    cols.set_item("s", col(|r| r.s))?;
    cols.set_item("v", col(|r| r.v))?;
    cols.set_item("u", col(|r| r.u))?;
    cols.set_item("w", col(|r| r.w))?;
    cols.set_item(
        "active",
        log.records.iter().map(|r| r.active.as_str()).collect::<Vec<_>>(),
    )?;
    out.set_item("log", cols)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "safecruise")]
fn safecruise_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTruckParams>()?;
    m.add_class::<PyCccParams>()?;
    m.add_function(wrap_pyfunction!(safety_filter, m)?)?;
    m.add_function(wrap_pyfunction!(pcc_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(barrier_eval, m)?)?;
    m.add_function(wrap_pyfunction!(u_safe, m)?)?;
    m.add_function(wrap_pyfunction!(qp_filter, m)?)?;
    m.add_function(wrap_pyfunction!(slope_from_elevation, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pcc, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
