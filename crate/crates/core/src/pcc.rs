//! Energy-optimal speed planning in the spatial domain, plus the energy
//! bookkeeping used to score every run.
//!
//! The planner minimizes the drive work `sum(u_dr * ds)` subject to the
//! truck dynamics, actuator and speed limits, boundary speeds and a travel
//! time budget. It runs a dynamic program over a quantized speed grid: each
//! arc `(s_i, v_j) -> (s_{i+1}, v_k)` is driven by the constant net torque
//! that satisfies the work-energy balance
//!
//! ```text
//! v_k^2 = v_j^2 + 2 ds (u - f1 - f2)
//! ```
//!
//! with `f1`, `f2` averaged over the arc endpoints. Longer arcs cover the
//! cases one step cannot: spans gain or lose a single cell over several
//! steps, and coasting arcs follow the zero-input trajectory before braking
//! onto the grid.
//!
//! The travel-time budget is dualized: a multiplier `lambda >= 0` prices
//! time in the stage cost and is bisected until the unconstrained DP meets
//! the budget. A duality gap above `gap_tolerance` triggers a bounded exact
//! label search.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::TruckParams;
use crate::road::RoadProfile;

#[derive(Debug, Error, PartialEq)]
pub enum PccError {
    #[error("travel time budget {budget:.2} s is infeasible; minimum achievable is {min_time:.2} s")]
    Infeasible { budget: f64, min_time: f64 },
    #[error("malformed problem: {0}")]
    MalformedSpec(String),
    #[error("no feasible speed trajectory connects the boundary speeds")]
    Unreachable,
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("non-positive speed {v} at s = {s} m")]
    DivisionHazard { s: f64, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Spatial step [m].
    pub ds: f64,
    /// Speed quantization [m/s].
    pub v_grid_step: f64,
    /// Bisection stops once the unused time budget is below this [s], or
    /// when the multiplier bracket is narrower than 0.1%.
    pub time_tolerance: f64,
    /// Maximum number of multiplier bisection steps.
    pub max_iterations: usize,
    /// Longest stretch, in steps, over which a single speed cell may be
    /// gained or lost. One step of `ds` is often too short to change speed
    /// by a whole cell within the power limit or while coasting. At most 127.
    /// Coasting arcs reach up to twice as far.
    pub max_span: usize,
    /// Relative gap between the relaxation bound and the best feasible path
    /// above which an exact search is run.
    pub gap_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            ds: 2.5,
            v_grid_step: 0.1,
            time_tolerance: 0.5,
            max_iterations: 40,
            max_span: 16,
            gap_tolerance: 1e-3,
        }
    }
}

/// Optimal control problem over a road.
#[derive(Debug, Clone, Copy)]
pub struct OcpSpec<'a> {
    pub road: &'a RoadProfile,
    pub params: &'a TruckParams,
    /// Initial speed [m/s].
    pub v0: f64,
    /// Final speed [m/s].
    pub vf: f64,
    /// Travel time budget [s].
    pub t_f_max: f64,
    pub settings: SolverSettings,
}

/// Solved speed profile and input split on the spatial grid.
///
/// `u_dr_star[i]` and `u_br_star[i]` act on the arc `[s_i, s_{i+1}]`; the
/// entry at the last grid point is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalProfile {
    pub s_grid: Vec<f64>,
    pub v_pcc: Vec<f64>,
    pub u_dr_star: Vec<f64>,
    pub u_br_star: Vec<f64>,
    /// Cumulative drive work `w(s_i)` [J/kg].
    pub energy: Vec<f64>,
    /// Trapezoidal travel time [s].
    pub travel_time: f64,
    /// Time price at the returned solution.
    pub lambda: f64,
    /// Distance between the requested and grid boundary speeds [m/s].
    pub boundary_mismatch: (f64, f64),
}

impl OptimalProfile {
    /// Total drive work `sum(u_dr * ds)` [J/kg].
    pub fn cost(&self) -> f64 {
        self.energy.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.s_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_grid.is_empty()
    }

    /// Target speed at `s`, linearly interpolated and held past the ends.
    pub fn v_at(&self, s: f64) -> f64 {
        let idx = self.s_grid.partition_point(|&x| x <= s);
        if idx == 0 {
            return self.v_pcc[0];
        }
        if idx >= self.s_grid.len() {
            return self.v_pcc[self.v_pcc.len() - 1];
        }
        let (s0, s1) = (self.s_grid[idx - 1], self.s_grid[idx]);
        let frac = (s - s0) / (s1 - s0);
        self.v_pcc[idx - 1] + frac * (self.v_pcc[idx] - self.v_pcc[idx - 1])
    }

    /// Time-domain replay of the profile.
    ///
    /// Each arc has constant acceleration, so speed is linear in time and the
    /// arc takes `2 ds / (v_i + v_{i+1})`. The arc's input is held over the
    /// arc: every arc contributes a start sample and an end sample placed a
    /// negligible fraction of the arc duration before the next arc starts,
    /// which keeps times strictly increasing while representing the input
    /// step.
    pub fn trajectory(&self) -> Vec<TrajectorySample> {
        const END_OFFSET: f64 = 1e-9;
        let mut out = Vec::with_capacity(2 * self.len());
        let mut t = 0.0;
        for i in 0..self.len().saturating_sub(1) {
            let (va, vb) = (self.v_pcc[i], self.v_pcc[i + 1]);
            let ds = self.s_grid[i + 1] - self.s_grid[i];
            let dt = 2.0 * ds / (va + vb);
            let u = self.u_dr_star[i];
            out.push(TrajectorySample { t, v: va, u_dr: u });
            let t_end = dt * (1.0 - END_OFFSET);
            out.push(TrajectorySample {
                t: t + t_end,
                v: va + (vb - va) * (1.0 - END_OFFSET),
                u_dr: u,
            });
            t += dt;
        }
        if let Some(&v) = self.v_pcc.last() {
            out.push(TrajectorySample { t, v, u_dr: 0.0 });
        }
        out
    }

    /// Writes the `s,v_pcc,u_dr,u_br,w` export.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["s", "v_pcc", "u_dr", "u_br", "w"])?;
        for i in 0..self.len() {
            wtr.write_record([
                self.s_grid[i].to_string(),
                self.v_pcc[i].to_string(),
                self.u_dr_star[i].to_string(),
                self.u_br_star[i].to_string(),
                self.energy[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Constant net torque that moves the truck from `va` to `vb` over an arc,
/// given the arc-averaged grade term.
pub fn arc_input(params: &TruckParams, ds: f64, f1_avg: f64, va: f64, vb: f64) -> f64 {
    (vb * vb - va * va) / (2.0 * ds) + f1_avg + params.k_air / params.m_eff * 0.5 * (va * va + vb * vb)
}

/// Whether a net arc torque respects the drive and brake limits. The power
/// cap is taken at the faster end of the arc.
pub fn arc_input_feasible(params: &TruckParams, u: f64, va: f64, vb: f64) -> bool {
    if u >= 0.0 {
        u <= params.drive_limit(va.max(vb))
    } else {
        u >= -params.u_br_max
    }
}

/// Spatial grid, slopes and per-node speed bands of a problem.
struct Discretization {
    s: Vec<f64>,
    f1_avg: Vec<f64>,
    v_lo: f64,
    dv: f64,
    cells: usize,
    /// Allowed cell range per node (inclusive).
    allowed: Vec<(usize, usize)>,
    /// Step of the uniform part of the grid.
    ds: f64,
    /// Last node of the uniform part; only the final arc may be shorter.
    n_full: usize,
    max_span: usize,
    /// Last node `r` such that nodes `i..=r` share the speed band of node `i`.
    band_end: Vec<usize>,
    /// Travel time of a one-cell span, see [`Discretization::span_index`].
    span_time: Vec<f64>,
    /// Zero-input step on uniform arc `i`: `v^2 -> coast_a v^2 - coast_b[i]`.
    coast_a: f64,
    coast_b: Vec<f64>,
}

/// Node speeds inside a span where `v^2` changes linearly with position.
fn span_speed(va: f64, vb: f64, l: usize, m: usize) -> f64 {
    if l == 0 {
        va
    } else if l == m {
        vb
    } else {
        (va * va + (vb * vb - va * va) * l as f64 / m as f64).sqrt()
    }
}

/// Coasting keeps `v^2` this fraction below the zero-input value, so inputs
/// recomputed from the node speeds come out as negligible braking rather
/// than drive.
const COAST_MARGIN: f64 = 1e-12;

/// How a path arrives at a node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Step {
    len: usize,
    coast: bool,
}

/// A node on a grid path and the cell it passes. `coast` marks the arc into
/// it as a coasting arc.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Waypoint {
    node: usize,
    cell: usize,
    coast: bool,
}

/// Slack on the span feasibility bounds so that recomputing the inputs from
/// rounded node speeds still respects the actuator limits.
const SPAN_MARGIN: f64 = 1e-12;

impl Discretization {
    fn new(spec: &OcpSpec<'_>) -> Result<Self, PccError> {
        let SolverSettings {
            ds,
            v_grid_step,
            max_span,
            ..
        } = spec.settings;
        if !(ds > 0.0 && ds.is_finite()) || !(v_grid_step > 0.0 && v_grid_step.is_finite()) {
            return Err(PccError::MalformedSpec(format!(
                "ds ({ds}) and v_grid_step ({v_grid_step}) must be positive"
            )));
        }
        if !(1..=127).contains(&max_span) {
            return Err(PccError::MalformedSpec(format!("max_span ({max_span}) must be in 1..=127")));
        }
        let road = spec.road;
        let s_f = road.length();
        if road.len() < 2 || !(s_f > 0.0) {
            return Err(PccError::MalformedSpec("road is empty or has zero length".into()));
        }
        let n_full = (s_f / ds + 1e-9).floor() as usize;
        let mut s: Vec<f64> = (0..=n_full).map(|i| i as f64 * ds).collect();
        if s_f - s[n_full] > 1e-9 * ds {
            s.push(s_f);
        }
        if s.len() < 2 {
            return Err(PccError::MalformedSpec("road shorter than one spatial step".into()));
        }
        let f1: Vec<f64> = s.iter().map(|&x| spec.params.f1(road.slope_clamped(x))).collect();
        let f1_avg = f1.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

        let limits = road.limits();
        let v_lo = limits.min_v_min();
        let v_hi = limits.max_v_max();
        let cells = ((v_hi - v_lo) / v_grid_step + 1e-9).floor() as usize + 1;
        let eps = 1e-9 * v_grid_step;
        let mut allowed = Vec::with_capacity(s.len());
        for &x in &s {
            let band = limits.at(x);
            let lo = ((band.v_min - v_lo) / v_grid_step - eps).ceil().max(0.0) as usize;
            let hi = (((band.v_max - v_lo) / v_grid_step + eps).floor() as usize).min(cells - 1);
            if lo > hi {
                return Err(PccError::MalformedSpec(format!(
                    "speed band at s = {x} m contains no grid speed"
                )));
            }
            allowed.push((lo, hi));
        }
        let mut band_end: Vec<usize> = (0..s.len()).collect();
        for i in (0..s.len() - 1).rev() {
            if allowed[i] == allowed[i + 1] {
                band_end[i] = band_end[i + 1];
            }
        }
        let mut grid = Self {
            s,
            f1_avg,
            v_lo,
            dv: v_grid_step,
            cells,
            allowed,
            ds,
            n_full,
            max_span,
            band_end,
            span_time: Vec::new(),
            coast_a: 0.0,
            coast_b: Vec::new(),
        };
        let c = spec.params.k_air / spec.params.m_eff;
        let keep = (1.0 - COAST_MARGIN) / (1.0 + c * ds);
        grid.coast_a = (1.0 - c * ds) * keep;
        grid.coast_b = grid.f1_avg.iter().map(|f| 2.0 * ds * f * keep).collect();
        let mut span_time = vec![f64::NAN; (max_span + 1) * 2 * cells];
        for m in 2..=max_span {
            for up in [false, true] {
                for j in 0..cells {
                    if let Some(k) = grid.neighbour(j, up) {
                        let (va, vb) = (grid.speed(j), grid.speed(k));
                        span_time[grid.span_index(m, up, j)] = (0..m)
                            .map(|l| 0.5 * ds * (1.0 / span_speed(va, vb, l, m) + 1.0 / span_speed(va, vb, l + 1, m)))
                            .sum();
                    }
                }
            }
        }
        grid.span_time = span_time;
        Ok(grid)
    }

    fn speed(&self, j: usize) -> f64 {
        self.v_lo + j as f64 * self.dv
    }

    fn nearest_cell(&self, v: f64) -> usize {
        (((v - self.v_lo) / self.dv).round().max(0.0) as usize).min(self.cells - 1)
    }

    fn neighbour(&self, j: usize, up: bool) -> Option<usize> {
        if up {
            (j + 1 < self.cells).then_some(j + 1)
        } else {
            j.checked_sub(1)
        }
    }

    fn span_index(&self, m: usize, up: bool, j: usize) -> usize {
        (m * 2 + usize::from(up)) * self.cells + j
    }

    /// Fastest admissible trapezoidal travel time, ignoring acceleration limits.
    fn min_time(&self) -> f64 {
        let v: Vec<f64> = self.allowed.iter().map(|&(_, hi)| self.speed(hi)).collect();
        self.s
            .windows(2)
            .zip(v.windows(2))
            .map(|(s, v)| 0.5 * (s[1] - s[0]) * (1.0 / v[0] + 1.0 / v[1]))
            .sum()
    }

    /// Longest coasting arc.
    fn max_coast(&self) -> usize {
        (2 * self.max_span).min(127)
    }

    /// `v^2` after one zero-input step over uniform arc `i`.
    fn coast_next(&self, i: usize, v2: f64) -> f64 {
        self.coast_a * v2 - self.coast_b[i]
    }

    /// Drive is never admitted on an arc where the grade alone would speed the
    /// truck up at its entry speed (`f1 + f2(v) < 0`): there the force balance
    /// makes drive unnecessary, and allowing it only lets the grid trade
    /// quantization losses for small drive inputs.
    ///
    /// Calls `visit(step, k, work, time)` for every admissible arc leaving
    /// cell `j` of node `i`. Single-step arcs go to any reachable cell of
    /// node `i + 1`. Spans go one cell up or down over `2..=max_span` uniform
    /// steps inside one speed band. Coasting arcs run with zero input and
    /// brake on their last step to the cell just below the coasted speed.
    fn arcs_from(&self, params: &TruckParams, i: usize, j: usize, mut visit: impl FnMut(Step, usize, f64, f64)) {
        let c = params.k_air / params.m_eff;
        let va = self.speed(j);
        self.single_steps(params, i, j, &mut visit);

        let reach = (self.n_full).min(self.band_end[i] + 1);
        if reach < i + 2 {
            return;
        }
        let last = reach.min(i + self.max_span);
        let ds = self.ds;
        let (lo, hi) = self.allowed[i];
        for up in [false, true] {
            let Some(k) = self.neighbour(j, up) else { continue };
            if k < lo || k > hi {
                continue;
            }
            let vb = self.speed(k);
            let drive_limit = params.drive_limit(va.max(vb)) - SPAN_MARGIN;
            let brake_limit = -params.u_br_max + SPAN_MARGIN;
            let f = self.f1_avg[i];
            let (mut sum, mut f_min, mut f_max) = (f, f, f);
            for m in 2..=last - i {
                let f = self.f1_avg[i + m - 1];
                sum += f;
                f_min = f_min.min(f);
                f_max = f_max.max(f);
                let (lo_end, hi_end) = self.allowed[i + m];
                if k < lo_end || k > hi_end {
                    continue;
                }
                let mf = m as f64;
                let delta = (vb * vb - va * va) / mf;
                // Sub-arc l needs delta / (2 ds) + f1_l + c (va^2 + delta (l + 1/2)).
                let base = delta / (2.0 * ds) + c * va * va;
                let (lin_lo, lin_hi) = if delta > 0.0 {
                    (0.5 * c * delta, (mf - 0.5) * c * delta)
                } else {
                    ((mf - 0.5) * c * delta, 0.5 * c * delta)
                };
                let (u_lo, u_hi) = (base + f_min + lin_lo, base + f_max + lin_hi);
                if (u_hi > 0.0 && u_hi > drive_limit) || (u_lo < 0.0 && u_lo < brake_limit) {
                    continue;
                }
                if u_hi > 0.0 && f_min + c * va.min(vb).powi(2) < 0.0 {
                    let drives_rolling = (0..m).any(|l| {
                        let f = self.f1_avg[i + l];
                        base + f + c * delta * (l as f64 + 0.5) > 0.0 && f + c * (va * va + delta * l as f64) < 0.0
                    });
                    if drives_rolling {
                        continue;
                    }
                }
                let work = if u_lo >= 0.0 {
                    ds * (mf * base + sum + 0.5 * c * delta * mf * mf)
                } else if u_hi <= 0.0 {
                    0.0
                } else {
                    ds * (0..m)
                        .map(|l| (base + self.f1_avg[i + l] + c * delta * (l as f64 + 0.5)).max(0.0))
                        .sum::<f64>()
                };
                visit(Step { len: m, coast: false }, k, work, self.span_time[self.span_index(m, up, j)]);
            }
        }

        // A coasting arc ends only where the coasted speed crosses a grid
        // speed, at the node closest above the crossing, so the final brake
        // gives up little speed.
        let (v_min2, v_max2) = (self.speed(lo).powi(2), self.speed(hi).powi(2));
        let (mut v2, mut v, mut inv_v, mut time) = (va * va, va, 1.0 / va, 0.0);
        let mut below_prev = j as f64;
        let mut landing_prev: Option<(usize, usize, f64)> = None;
        for m in 1..=reach.min(i + self.max_coast()) - i {
            let next2 = self.coast_next(i + m - 1, v2);
            if !(next2 > 0.0) {
                break;
            }
            let next = next2.sqrt();
            let inv_next = 1.0 / next;
            let below = ((next - self.v_lo) / self.dv - 1e-9).floor();
            let mut landing = None;
            if m >= 2 {
                let (lo_end, hi_end) = self.allowed[i + m];
                if below >= lo_end as f64 {
                    let k = (below as usize).min(hi_end);
                    let vb = self.speed(k);
                    let u = arc_input(params, ds, self.f1_avg[i + m - 1], v, vb);
                    if (-params.u_br_max..=0.0).contains(&u) {
                        landing = Some((m, k, time + 0.5 * ds * (inv_v + 1.0 / vb)));
                    }
                }
            }
            let mut land = |(len, k, t): (usize, usize, f64)| visit(Step { len, coast: true }, k, 0.0, t);
            if below > below_prev {
                landing.map(&mut land);
            } else if below < below_prev {
                landing_prev.map(&mut land);
            }
            if !(next2 >= v_min2 && next2 <= v_max2) {
                break;
            }
            time += 0.5 * ds * (inv_v + inv_next);
            (v2, v, inv_v) = (next2, next, inv_next);
            (below_prev, landing_prev) = (below, landing);
        }
    }

    fn single_steps(&self, params: &TruckParams, i: usize, j: usize, visit: &mut impl FnMut(Step, usize, f64, f64)) {
        let c = params.k_air / params.m_eff;
        let ds = self.s[i + 1] - self.s[i];
        let f1 = self.f1_avg[i];
        let (lo_next, hi_next) = self.allowed[i + 1];
        let va = self.speed(j);
        // Reachable v_k^2 from the torque limits, inverting the arc balance.
        let reach = |u: f64| (2.0 * ds * (u - f1) - c * ds * va * va + va * va) / (1.0 + c * ds);
        let v2_lo = reach(-params.u_br_max);
        let v2_hi = reach(params.drive_limit(va));
        if v2_hi < 0.0 {
            return;
        }
        let to_cell = |v2: f64| (v2.max(0.0).sqrt() - self.v_lo) / self.dv;
        let k_lo = (to_cell(v2_lo).floor() - 1.0).max(lo_next as f64) as usize;
        let k_hi = (to_cell(v2_hi).ceil() + 1.0).min(hi_next as f64);
        if k_hi < k_lo as f64 {
            return;
        }
        for k in k_lo..=(k_hi as usize) {
            let vb = self.speed(k);
            let u = arc_input(params, ds, f1, va, vb);
            if arc_input_feasible(params, u, va, vb) && !(u > 0.0 && f1 + c * va * va < 0.0) {
                visit(Step { len: 1, coast: false }, k, u.max(0.0) * ds, 0.5 * ds * (1.0 / va + 1.0 / vb));
            }
        }
    }

    /// Cost-to-go `min sum(w_e * work + w_t * time)` to `end` from every
    /// (node, cell), flattened node-major.
    fn cost_to_go(&self, params: &TruckParams, end: usize, w_e: f64, w_t: f64) -> Vec<f64> {
        let m = self.cells;
        let n = self.s.len();
        let mut togo = vec![f64::INFINITY; n * m];
        togo[(n - 1) * m + end] = 0.0;
        for i in (0..n - 1).rev() {
            let (lo, hi) = self.allowed[i];
            for j in lo..=hi {
                let mut best = f64::INFINITY;
                self.arcs_from(params, i, j, |step, k, work, time| {
                    best = best.min(w_e * work + w_t * time + togo[(i + step.len) * m + k]);
                });
                togo[i * m + j] = best;
            }
        }
        togo
    }

    /// Speed at every node of a waypoint path.
    fn node_speeds(&self, path: &[Waypoint]) -> Vec<f64> {
        let mut v = vec![0.0; self.s.len()];
        for w in path.windows(2) {
            let (from, to) = (w[0], w[1]);
            let (a, b) = (from.node, to.node);
            let (va, vb) = (self.speed(from.cell), self.speed(to.cell));
            if to.coast {
                let mut v2 = va * va;
                v[a] = va;
                for l in 1..b - a {
                    v2 = self.coast_next(a + l - 1, v2);
                    v[a + l] = v2.sqrt();
                }
                v[b] = vb;
            } else {
                for l in 0..=b - a {
                    v[a + l] = span_speed(va, vb, l, b - a);
                }
            }
        }
        v
    }
}

/// A grid path from the first to the last node. Consecutive waypoints more
/// than one node apart form a span or a coasting arc.
struct DpSolution {
    path: Vec<Waypoint>,
    energy: f64,
    time: f64,
}

/// Flags a coasting arc in the packed predecessor step.
const COAST_BIT: u8 = 0x80;

fn run_dp(
    spec: &OcpSpec<'_>,
    grid: &Discretization,
    start: usize,
    end: usize,
    lambda: f64,
) -> Result<DpSolution, PccError> {
    let m = grid.cells;
    let n = grid.s.len();
    let mut cost = vec![f64::INFINITY; n * m];
    cost[start] = 0.0;
    let mut pred_cell = vec![u32::MAX; n * m];
    let mut pred_step = vec![0u8; n * m];

    for i in 0..n - 1 {
        let (lo, hi) = grid.allowed[i];
        for j in lo..=hi {
            let base = cost[i * m + j];
            if !base.is_finite() {
                continue;
            }
            grid.arcs_from(spec.params, i, j, |step, k, work, time| {
                let at = (i + step.len) * m + k;
                let total = base + work + lambda * time;
                if total < cost[at] {
                    cost[at] = total;
                    pred_cell[at] = j as u32;
                    pred_step[at] = step.len as u8 | if step.coast { COAST_BIT } else { 0 };
                }
            });
        }
    }

    if !cost[(n - 1) * m + end].is_finite() {
        return Err(PccError::Unreachable);
    }
    let mut path = Vec::new();
    let (mut node, mut cell) = (n - 1, end);
    while node > 0 {
        let at = node * m + cell;
        let step = pred_step[at];
        path.push(Waypoint {
            node,
            cell,
            coast: step & COAST_BIT != 0,
        });
        node -= (step & !COAST_BIT) as usize;
        cell = pred_cell[at] as usize;
    }
    path.push(Waypoint { node, cell, coast: false });
    path.reverse();
    Ok(DpSolution::from_path(spec, grid, path))
}

/// Per-arc drive work and travel time along a speed profile.
fn arc_costs(spec: &OcpSpec<'_>, grid: &Discretization, v: &[f64]) -> Vec<(f64, f64)> {
    (0..v.len() - 1)
        .map(|i| {
            let ds = grid.s[i + 1] - grid.s[i];
            let (va, vb) = (v[i], v[i + 1]);
            let work = arc_input(spec.params, ds, grid.f1_avg[i], va, vb).max(0.0) * ds;
            (work, 0.5 * ds * (1.0 / va + 1.0 / vb))
        })
        .collect()
}

/// Running `(work, time)` at every node.
fn cumulative_costs(spec: &OcpSpec<'_>, grid: &Discretization, path: &[Waypoint]) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0)];
    for (e, t) in arc_costs(spec, grid, &grid.node_speeds(path)) {
        let last = acc[acc.len() - 1];
        acc.push((last.0 + e, last.1 + t));
    }
    acc
}

impl DpSolution {
    fn from_path(spec: &OcpSpec<'_>, grid: &Discretization, path: Vec<Waypoint>) -> Self {
        let (energy, time) = *cumulative_costs(spec, grid, &path).last().unwrap();
        Self { path, energy, time }
    }

    /// The waypoint at every node, `None` inside spans and coasting arcs.
    fn waypoints(&self, n: usize) -> Vec<Option<Waypoint>> {
        let mut at = vec![None; n];
        for &w in &self.path {
            at[w.node] = Some(w);
        }
        at
    }
}

/// Narrows the duality gap between a feasible path and a cheaper path that
/// overruns the budget. Wherever both paths pass the same cell at the same
/// node either may be followed onward, so each stretch between such meeting
/// points may be taken from the cheaper path; stretches are adopted greedily
/// by work saved per second of time spent while the budget allows.
fn splice(
    spec: &OcpSpec<'_>,
    grid: &Discretization,
    feasible: &DpSolution,
    cheap: &DpSolution,
    budget: f64,
) -> DpSolution {
    let n = grid.s.len();
    let (wa, wb) = (feasible.waypoints(n), cheap.waypoints(n));
    let (ca, cb) = (
        cumulative_costs(spec, grid, &feasible.path),
        cumulative_costs(spec, grid, &cheap.path),
    );
    let cell = |w: &Option<Waypoint>| w.map(|w| w.cell);
    let meet: Vec<usize> = (0..n).filter(|&i| wa[i].is_some() && cell(&wa[i]) == cell(&wb[i])).collect();
    // (stretch index, work change, time change) of each stretch that saves work.
    let mut stretches: Vec<(usize, f64, f64)> = meet
        .windows(2)
        .enumerate()
        .map(|(idx, w)| {
            let (a, b) = (w[0], w[1]);
            let de = (cb[b].0 - cb[a].0) - (ca[b].0 - ca[a].0);
            let dt = (cb[b].1 - cb[a].1) - (ca[b].1 - ca[a].1);
            (idx, de, dt)
        })
        .filter(|&(_, de, _)| de < 0.0)
        .collect();
    // Free wins first, then best saving per second; ties keep path order.
    stretches.sort_by(|x, y| {
        let rate = |st: &(usize, f64, f64)| if st.2 <= 0.0 { f64::INFINITY } else { -st.1 / st.2 };
        rate(y).total_cmp(&rate(x)).then(x.0.cmp(&y.0))
    });
    let mut take_cheap = vec![false; meet.len().saturating_sub(1)];
    let mut time = feasible.time;
    for (idx, _, dt) in stretches {
        if time + dt <= budget + 1e-9 {
            take_cheap[idx] = true;
            time += dt;
        }
    }
    // A waypoint belongs to the stretch of the arc arriving at it.
    let mut path = vec![wa[0].unwrap()];
    let mut stretch = 0;
    for i in 1..n {
        while i > meet[stretch + 1] {
            stretch += 1;
        }
        let source = if take_cheap[stretch] { &wb } else { &wa };
        if let Some(w) = source[i] {
            path.push(w);
        }
    }
    DpSolution::from_path(spec, grid, path)
}

/// Upper bound on the labels kept by [`close_gap`] before it gives up.
const MAX_LABELS: usize = 400_000;

#[derive(Clone, Copy)]
struct Label {
    work: f64,
    time: f64,
    node: u32,
    cell: u32,
    parent: u32,
    coast: bool,
}

struct LabelCapReached;

/// Exact search for the cheapest path with work below `cutoff` within the
/// budget.
///
/// Labels are Pareto-optimal (work, time) pairs per (node, cell). A label is
/// dropped when even the fastest completion overruns the budget, or when the
/// Lagrangian bound `work + priced(i, j) - lambda (budget - time)` reaches the
/// cutoff; `priced` is the cost-to-go of work plus `lambda` times time, and
/// `fastest` the minimum time-to-go.
#[allow(clippy::too_many_arguments)]
fn close_gap(
    spec: &OcpSpec<'_>,
    grid: &Discretization,
    start: usize,
    end: usize,
    lambda: f64,
    priced: &[f64],
    fastest: &[f64],
    cutoff: f64,
) -> Result<Option<DpSolution>, LabelCapReached> {
    let budget = spec.t_f_max;
    let m = grid.cells;
    let n = grid.s.len();
    // Labels waiting for their node, in a ring indexed by node.
    let ring = grid.max_coast() + 1;
    // (work, time, parent label, arrived coasting)
    type Entry = (f64, f64, u32, bool);
    let mut pending: Vec<Vec<Vec<Entry>>> = vec![vec![Vec::new(); m]; ring];
    pending[0][start].push((0.0, 0.0, u32::MAX, false));
    let mut arena: Vec<Label> = Vec::new();
    let mut queued = 1usize;

    for i in 0..n {
        let first = arena.len();
        for (k, bucket) in pending[i % ring].iter_mut().enumerate() {
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut last_time = f64::INFINITY;
            for &(work, time, parent, coast) in bucket.iter() {
                // Times within a nanosecond count as equal, or rounding noise
                // between equivalent paths would swell the fronts.
                if time < last_time - 1e-9 {
                    arena.push(Label {
                        work,
                        time,
                        node: i as u32,
                        cell: k as u32,
                        parent,
                        coast,
                    });
                    last_time = time;
                }
            }
            queued -= bucket.len();
            bucket.clear();
        }
        if i == n - 1 {
            break;
        }
        for (idx, &label) in arena.iter().enumerate().skip(first) {
            grid.arcs_from(spec.params, i, label.cell as usize, |step, k, work, time| {
                let (w, t) = (label.work + work, label.time + time);
                let at = (i + step.len) * m + k;
                if t + fastest[at] > budget + 1e-9 {
                    return;
                }
                if w + priced[at] - lambda * (budget - t) >= cutoff {
                    return;
                }
                pending[(i + step.len) % ring][k].push((w, t, idx as u32, step.coast));
                queued += 1;
            });
        }
        if arena.len() + queued > MAX_LABELS {
            return Err(LabelCapReached);
        }
    }

    let Some((mut idx, best)) = arena
        .iter()
        .enumerate()
        .filter(|(_, l)| l.node as usize == n - 1 && l.cell as usize == end)
        .min_by(|a, b| a.1.work.total_cmp(&b.1.work))
    else {
        return Ok(None);
    };
    if best.work >= cutoff {
        return Ok(None);
    }
    let mut path = Vec::new();
    while idx != u32::MAX as usize {
        let label = arena[idx];
        path.push(Waypoint {
            node: label.node as usize,
            cell: label.cell as usize,
            coast: label.coast,
        });
        idx = label.parent as usize;
    }
    path.reverse();
    Ok(Some(DpSolution::from_path(spec, grid, path)))
}

fn build_profile(spec: &OcpSpec<'_>, grid: &Discretization, sol: &DpSolution, lambda: f64) -> OptimalProfile {
    let n = grid.s.len();
    let v_pcc = grid.node_speeds(&sol.path);
    let mut u_dr_star = vec![0.0; n];
    let mut u_br_star = vec![0.0; n];
    let mut energy = vec![0.0; n];
    for i in 0..n - 1 {
        let ds = grid.s[i + 1] - grid.s[i];
        let u = arc_input(spec.params, ds, grid.f1_avg[i], v_pcc[i], v_pcc[i + 1]);
        if u >= 0.0 {
            u_dr_star[i] = u;
        } else {
            u_br_star[i] = u;
        }
        energy[i + 1] = energy[i] + u_dr_star[i] * ds;
    }
    debug_assert!((energy[n - 1] - sol.energy).abs() <= 1e-9 * (1.0 + sol.energy));
    OptimalProfile {
        s_grid: grid.s.clone(),
        travel_time: sol.time,
        boundary_mismatch: (v_pcc[0] - spec.v0, v_pcc[n - 1] - spec.vf),
        v_pcc,
        u_dr_star,
        u_br_star,
        energy,
        lambda,
    }
}

/// Solves the energy-optimal speed planning problem.
pub fn solve(spec: &OcpSpec<'_>) -> Result<OptimalProfile, PccError> {
    if !(spec.t_f_max > 0.0) {
        return Err(PccError::MalformedSpec(format!("time budget {} must be positive", spec.t_f_max)));
    }
    let grid = Discretization::new(spec)?;
    let road = spec.road;
    let s_f = *grid.s.last().unwrap();
    for (name, v, s) in [("v0", spec.v0, 0.0), ("vf", spec.vf, s_f)] {
        let band = road.limits().at(s);
        if !(v >= band.v_min && v <= band.v_max) {
            return Err(PccError::MalformedSpec(format!(
                "{name} = {v} m/s outside [{}, {}] m/s",
                band.v_min, band.v_max
            )));
        }
    }
    let start = grid.nearest_cell(spec.v0);
    let end = grid.nearest_cell(spec.vf);
    let in_band = |node: usize, j: usize| {
        let (lo, hi) = grid.allowed[node];
        (lo..=hi).contains(&j)
    };
    if !in_band(0, start) || !in_band(grid.s.len() - 1, end) {
        return Err(PccError::MalformedSpec("boundary speed has no admissible grid cell".into()));
    }

    let budget = spec.t_f_max;
    let min_time = grid.min_time();
    if budget + 1e-9 < min_time {
        return Err(PccError::Infeasible { budget, min_time });
    }
    let fits = |sol: &DpSolution| sol.time <= budget + 1e-9;

    let free = run_dp(spec, &grid, start, end, 0.0)?;
    if fits(&free) {
        return Ok(build_profile(spec, &grid, &free, 0.0));
    }

    // Bracket the multiplier; `cheap` is the latest solution over budget.
    let mut cheap = free;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best = loop {
        let sol = run_dp(spec, &grid, start, end, hi)?;
        if fits(&sol) {
            break sol;
        }
        lo = hi;
        hi *= 4.0;
        if hi > 1e9 {
            return Err(PccError::Infeasible {
                budget,
                min_time: sol.time,
            });
        }
        cheap = sol;
    };
    let mut best_lambda = hi;
    for _ in 0..spec.settings.max_iterations {
        // A bracket this narrow no longer changes the DP solution.
        if budget - best.time < spec.settings.time_tolerance || hi - lo <= 1e-3 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let sol = run_dp(spec, &grid, start, end, mid)?;
        if fits(&sol) {
            hi = mid;
            best = sol;
            best_lambda = mid;
        } else {
            lo = mid;
            cheap = sol;
        }
    }
    // Both bracket ends are DP optima, so each gives a lower bound on the
    // work; price the bound at the tighter one.
    let dual = |lambda: f64, sol: &DpSolution| sol.energy + lambda * (sol.time - budget);
    let (price, dual_bound) = if dual(lo, &cheap) > dual(best_lambda, &best) {
        (lo, dual(lo, &cheap))
    } else {
        (best_lambda, dual(best_lambda, &best))
    };
    let spliced = splice(spec, &grid, &best, &cheap, budget);
    if spliced.energy < best.energy {
        best = spliced;
    }
    if best.energy - dual_bound <= spec.settings.gap_tolerance * best.energy.abs() {
        return Ok(build_profile(spec, &grid, &best, best_lambda));
    }
    // Search below cutoffs that rise from the dual bound to the incumbent.
    // The first search that finds a path has found the grid optimum.
    let priced = grid.cost_to_go(spec.params, end, 1.0, price);
    let fastest = grid.cost_to_go(spec.params, end, 0.0, 1.0);
    let incumbent = best.energy - 1e-9 * (1.0 + best.energy);
    for frac in [0.02, 0.1, 0.3, 1.0] {
        let cutoff = (dual_bound + frac * (best.energy - dual_bound)).min(incumbent);
        match close_gap(spec, &grid, start, end, price, &priced, &fastest, cutoff) {
            Ok(Some(exact)) => {
                best = exact;
                break;
            }
            Ok(None) => {}
            Err(LabelCapReached) => break,
        }
    }
    Ok(build_profile(spec, &grid, &best, best_lambda))
}

/// Re-checks every constraint of a solved profile from its speeds alone.
pub fn check_feasibility(spec: &OcpSpec<'_>, profile: &OptimalProfile) -> Result<(), String> {
    let p = spec.params;
    let n = profile.len();
    if n < 2 {
        return Err("profile has fewer than two grid points".into());
    }
    for i in 0..n {
        let (s, v) = (profile.s_grid[i], profile.v_pcc[i]);
        let band = spec.road.limits().at(s);
        if v < band.v_min - 1e-9 || v > band.v_max + 1e-9 {
            return Err(format!("speed {v} outside [{}, {}] at s = {s}", band.v_min, band.v_max));
        }
        let (dr, br) = (profile.u_dr_star[i], profile.u_br_star[i]);
        if dr < 0.0 || br > 0.0 || dr * br != 0.0 {
            return Err(format!("input split violated at s = {s}: u_dr = {dr}, u_br = {br}"));
        }
    }
    for i in 0..n - 1 {
        let ds = profile.s_grid[i + 1] - profile.s_grid[i];
        let (va, vb) = (profile.v_pcc[i], profile.v_pcc[i + 1]);
        let phi_a = spec.road.slope_clamped(profile.s_grid[i]);
        let phi_b = spec.road.slope_clamped(profile.s_grid[i + 1]);
        // Work-energy balance recomputed from scratch.
        let kinetic = (vb * vb - va * va) / (2.0 * ds);
        let resist = 0.5 * (p.f1(phi_a) + p.f1(phi_b)) + 0.5 * (p.f2(va) + p.f2(vb));
        let u = kinetic + resist;
        let stored = profile.u_dr_star[i] + profile.u_br_star[i];
        if (u - stored).abs() > 1e-9 * (1.0 + u.abs()) {
            return Err(format!("arc {i}: stored input {stored} differs from dynamics {u}"));
        }
        let drive_cap = p.u_dr_max.min(p.p_max / (p.m_eff * va.max(vb)));
        if profile.u_dr_star[i] > drive_cap + 1e-12 || profile.u_br_star[i] < -p.u_br_max - 1e-12 {
            return Err(format!("arc {i}: input {u} outside actuator limits"));
        }
    }
    let step = spec.settings.v_grid_step;
    if (profile.v_pcc[0] - spec.v0).abs() > step || (profile.v_pcc[n - 1] - spec.vf).abs() > step {
        return Err("boundary speeds more than one grid step off".into());
    }
    let t = travel_time(profile).map_err(|e| e.to_string())?;
    if t > spec.t_f_max + 0.1 {
        return Err(format!("travel time {t} exceeds budget {}", spec.t_f_max));
    }
    Ok(())
}

/// Trapezoidal `integral(1/v ds)` over the profile grid.
pub fn travel_time(profile: &OptimalProfile) -> Result<f64, PccError> {
    for (&s, &v) in profile.s_grid.iter().zip(&profile.v_pcc) {
        if !(v > 0.0) {
            return Err(PccError::DivisionHazard { s, v });
        }
    }
    Ok(profile
        .s_grid
        .windows(2)
        .zip(profile.v_pcc.windows(2))
        .map(|(s, v)| 0.5 * (s[1] - s[0]) * (1.0 / v[0] + 1.0 / v[1]))
        .sum())
}

/// One time sample of speed and drive input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub v: f64,
    pub u_dr: f64,
}

/// Running trapezoidal integral of drive power `u_dr * v`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyIntegrator {
    last: Option<TrajectorySample>,
    total: f64,
}

impl EnergyIntegrator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a sample and returns the cumulative work [J/kg].
    pub fn push(&mut self, sample: TrajectorySample) -> Result<f64, PccError> {
        if let Some(prev) = self.last {
            if !(sample.t > prev.t) {
                return Err(PccError::MalformedTrajectory(format!(
                    "time not increasing: {} -> {}",
                    prev.t, sample.t
                )));
            }
            self.total += 0.5 * (sample.t - prev.t) * (prev.u_dr * prev.v + sample.u_dr * sample.v);
        }
        self.last = Some(sample);
        Ok(self.total)
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Cumulative drive work `w(t_k)` of a time series [J/kg].
pub fn energy(trajectory: &[TrajectorySample]) -> Result<Vec<f64>, PccError> {
    let mut acc = EnergyIntegrator::new();
    trajectory.iter().map(|&sample| acc.push(sample)).collect()
}

/// Drive input implied by a measured acceleration, `max(0, v' + f1 + f2)`.
pub fn u_dr_from_accel(params: &TruckParams, phi: f64, v: f64, v_dot: f64) -> f64 {
    (v_dot + params.f1(phi) + params.f2(v)).max(0.0)
}
