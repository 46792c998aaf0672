//! Reference implementations used as oracles by the integration tests. They
//! share no code paths with the library beyond its value types.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safecruise::plant::TruckParams;
use safecruise::road::{ElevationSample, RoadProfile, SpeedLimits};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// Constrained minimizer of `(u - u_nom)^2` subject to
/// `lfb + lgb u >= -alpha_e b`, found by bisection on the constraint
/// boundary. Assumes `lgb != 0`.
pub fn qp_bisection(b: f64, lfb: f64, lgb: f64, u_nom: f64, alpha_e: f64) -> f64 {
    let g = |u: f64| lfb + lgb * u + alpha_e * b;
    if g(u_nom) >= 0.0 {
        return u_nom;
    }
    // The feasible side of the boundary lies towards smaller u when lgb < 0.
    let (mut lo, mut hi) = (-1e4, 1e4);
    let feasible_low = lgb < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let ok = g(mid) >= 0.0;
        if ok == feasible_low {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    if feasible_low {
        lo
    } else {
        hi
    }
}

/// Piecewise-constant leader acceleration, sampled per control step, with the
/// speed kept in `[0, v_cap]`.
pub struct LeaderScript {
    pub accel: Vec<f64>,
}

impl LeaderScript {
    pub fn random(rng: &mut ChaCha8Rng, steps: usize, dt: f64, a_max: f64) -> Self {
        let mut accel = Vec::with_capacity(steps);
        let mut current = 0.0;
        let mut hold = 0usize;
        for _ in 0..steps {
            if hold == 0 {
                current = rng.random_range(-a_max..=a_max);
                hold = (rng.random_range(0.5..6.0) / dt) as usize;
            }
            hold -= 1;
            accel.push(current);
        }
        Self { accel }
    }
}

/// RK4 rollout of `h' = v1 - v`, `v' = u_safe`, `v1' = a1` with the barrier
/// `h - rho_0 - tau v` and linear class-K gain. Returns the smallest barrier
/// value seen.
pub fn cbf_rollout(
    mut x: [f64; 3],
    rho_0: f64,
    tau: f64,
    alpha_e: f64,
    script: &LeaderScript,
    dt: f64,
    v_cap: f64,
) -> f64 {
    let barrier = |x: &[f64; 3]| x[0] - rho_0 - tau * x[1];
    let control = |x: &[f64; 3]| (x[2] - x[1] + alpha_e * barrier(x)) / tau;
    let mut min_b = barrier(&x);
    for &a_req in &script.accel {
        // Clip the leader so its speed stays in [0, v_cap] at the step end.
        let a1 = a_req.clamp(-x[2] / dt, (v_cap - x[2]) / dt);
        let f = |x: &[f64; 3]| [x[2] - x[1], control(x), a1];
        let add = |x: &[f64; 3], k: &[f64; 3], h: f64| [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]];
        let k1 = f(&x);
        let k2 = f(&add(&x, &k1, dt / 2.0));
        let k3 = f(&add(&x, &k2, dt / 2.0));
        let k4 = f(&add(&x, &k3, dt));
        for i in 0..3 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        min_b = min_b.min(barrier(&x));
    }
    min_b
}

/// Random rolling road sampled every 2.5 m, grades within a few percent.
pub fn random_road(seed: u64, length: f64, v_min: f64, v_max: f64) -> RoadProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = 2.5;
    let cells = (length / ds).round() as usize;
    let bumps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let width = rng.random_range(0.05..0.15) * length;
            (rng.random_range(0.0..length), width, rng.random_range(-0.03..0.03) * width)
        })
        .collect();
    let samples: Vec<ElevationSample> = (0..=cells)
        .map(|k| {
            let s = k as f64 * ds;
            let e = bumps
                .iter()
                .map(|&(c, w, h)| {
                    let d = (s - c) / w;
                    if d.abs() < 1.0 {
                        h * 0.5 * (1.0 + (std::f64::consts::PI * d).cos())
                    } else {
                        0.0
                    }
                })
                .sum();
            ElevationSample::new(s, e)
        })
        .collect();
    RoadProfile::new(samples, 5, SpeedLimits::uniform(v_min, v_max).unwrap()).unwrap()
}

/// (length in steps, end cell, work, time)
type Arc = (usize, usize, f64, f64);

/// Exact grid optimum of the time-constrained problem, by label-setting over
/// Pareto fronts of (energy, time) at every (node, speed cell). Every
/// single-step cell pair is enumerated with no reachability pruning. Spans of
/// up to `max_span` steps move one cell with `v^2` linear in position, and
/// each of their sub-arcs is checked on its own. Coasting arcs run with zero
/// input and brake on their final step to the fastest cell not above the
/// coasted speed. They reach up to `2 * max_span` steps (at most 127) and
/// end only next to a crossing of a grid speed. No arc drives where the grade
/// alone accelerates the truck at the arc's entry speed.
pub struct ParetoOracle<'a> {
    pub road: &'a RoadProfile,
    pub params: &'a TruckParams,
    pub ds: f64,
    pub speeds: Vec<f64>,
    pub max_span: usize,
}

impl ParetoOracle<'_> {
    /// Grade and rolling term averaged over each arc.
    fn grade_terms(&self, n_arcs: usize) -> Vec<f64> {
        let p = self.params;
        let f1 = |s: f64| {
            let phi = self.road.slope_at(s).unwrap();
            p.mass * p.g / p.m_eff * (phi.sin() + p.gamma * phi.cos())
        };
        (0..n_arcs)
            .map(|i| 0.5 * (f1(i as f64 * self.ds) + f1((i + 1) as f64 * self.ds)))
            .collect()
    }

    /// Net torque over an arc, from the work-energy balance.
    fn net_input(&self, f1_avg: f64, va: f64, vb: f64) -> f64 {
        let p = self.params;
        let drag = p.k_air / p.m_eff * 0.5 * (va * va + vb * vb);
        (vb * vb - va * va) / (2.0 * self.ds) + f1_avg + drag
    }

    fn arc(&self, f1: &[f64], i: usize, va: f64, vb: f64) -> Option<(f64, f64)> {
        let p = self.params;
        let u = self.net_input(f1[i], va, vb);
        // No drive where the grade alone accelerates the truck.
        if u > 0.0 && f1[i] + p.k_air / p.m_eff * va * va < 0.0 {
            return None;
        }
        let ok = if u >= 0.0 {
            let v_hi = va.max(vb);
            u <= p.u_dr_max.min(p.p_max / (p.m_eff * v_hi))
        } else {
            u >= -p.u_br_max
        };
        ok.then(|| (u.max(0.0) * self.ds, 0.5 * self.ds * (1.0 / va + 1.0 / vb)))
    }

    fn span(&self, f1: &[f64], i: usize, m: usize, va: f64, vb: f64) -> Option<(f64, f64)> {
        let v = |l: usize| (va * va + (vb * vb - va * va) * l as f64 / m as f64).sqrt();
        (0..m).try_fold((0.0, 0.0), |(e, t), l| {
            let (de, dt) = self.arc(f1, i + l, v(l), v(l + 1))?;
            Some((e + de, t + dt))
        })
    }

    /// Speed after one zero-input arc, by bisection on the arc balance. The
    /// lower bracket is returned so the recomputed input is never drive.
    fn coast_step(&self, f1: &[f64], i: usize, va: f64) -> Option<f64> {
        let zero = |vb: f64| self.net_input(f1[i], va, vb) <= 0.0;
        let (mut lo, mut hi) = (1e-6, 100.0);
        if !zero(lo) || zero(hi) {
            return None;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if zero(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }

    /// `(length, cell, time)` of every coasting arc leaving cell `j` of node `i`.
    fn coasts(&self, f1: &[f64], i: usize, j: usize, n_arcs: usize) -> Vec<(usize, usize, f64)> {
        let (v_min, v_max) = (self.speeds[0], *self.speeds.last().unwrap());
        let tiny = 1e-9 * (self.speeds[1] - self.speeds[0]);
        let longest = (2 * self.max_span).min(127).min(n_arcs - i);
        let mut out = Vec::new();
        let (mut v, mut time) = (self.speeds[j], 0.0);
        // Cell just below the speed, and the arc that would brake onto it.
        let mut prev: (Option<usize>, Option<(usize, usize, f64)>) = (Some(j), None);
        for m in 1..=longest {
            let Some(next) = self.coast_step(f1, i + m - 1, v) else { break };
            let below = self.speeds.iter().rposition(|&x| x <= next - tiny);
            let landing = below.filter(|_| m >= 2).and_then(|k| {
                let (de, dt) = self.arc(f1, i + m - 1, v, self.speeds[k])?;
                (de == 0.0).then_some((m, k, time + dt))
            });
            // Arcs end only where a grid speed is crossed: on the way up at
            // the first node past it, on the way down at the last node before.
            if below > prev.0 {
                out.extend(landing);
            } else if below < prev.0 {
                out.extend(prev.1);
            }
            if next < v_min || next > v_max {
                break;
            }
            time += 0.5 * self.ds * (1.0 / v + 1.0 / next);
            v = next;
            prev = (below, landing);
        }
        out
    }

    /// Minimum drive work reaching `end` from `start` within `budget`.
    pub fn solve(&self, start: usize, end: usize, budget: f64) -> Option<f64> {
        self.solve_below(start, end, budget, f64::INFINITY)
    }

    /// Like `solve`, restricted to paths costing at most `ceiling`. Exact
    /// whenever the optimum is below the ceiling, `None` when nothing is.
    pub fn solve_below(&self, start: usize, end: usize, budget: f64, ceiling: f64) -> Option<f64> {
        let m = self.speeds.len();
        let n_arcs = (self.road.length() / self.ds).round() as usize;
        // (length, cell, work, time) of every arc out of each (node, cell).
        let f1 = self.grade_terms(n_arcs);
        let arcs: Vec<Vec<Vec<Arc>>> = (0..n_arcs)
            .map(|i| (0..m).map(|j| self.arcs_from(&f1, i, j, n_arcs)).collect())
            .collect();
        // Pruning bounds over the same graph: exact fastest time-to-go, and
        // min(work + lambda time) to go for a ladder of multipliers. For any
        // lambda >= 0 a label (e, t) can finish no cheaper than
        // e + togo - lambda (budget - t).
        const RUNGS: usize = 30;
        let lambdas: [f64; RUNGS] = std::array::from_fn(|r| if r == 0 { 0.0 } else { 2f64.powf((r as f64 - 10.0) / 4.0) });
        let mut fastest = vec![vec![f64::INFINITY; m]; n_arcs + 1];
        let mut togo = vec![vec![[f64::INFINITY; RUNGS]; m]; n_arcs + 1];
        fastest[n_arcs][end] = 0.0;
        togo[n_arcs][end] = [0.0; RUNGS];
        for i in (0..n_arcs).rev() {
            for j in 0..m {
                for &(len, k, de, dt) in &arcs[i][j] {
                    fastest[i][j] = fastest[i][j].min(dt + fastest[i + len][k]);
                    for (l, lambda) in lambdas.iter().enumerate() {
                        togo[i][j][l] = togo[i][j][l].min(de + lambda * dt + togo[i + len][k][l]);
                    }
                }
            }
        }
        let bound = |node: usize, k: usize, e: f64, t: f64| {
            lambdas
                .iter()
                .zip(&togo[node][k])
                .map(|(lambda, g)| e + g - lambda * (budget - t))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        // Raise the ceiling in stages from the dual bound: the first stage that
        // reaches the end has explored every path at or below its optimum.
        let floor = bound(0, start, 0.0, 0.0);
        if floor > ceiling {
            return None;
        }
        [0.01, 0.05, 0.2, 1.0].into_iter().find_map(|frac| {
            let cap = if frac < 1.0 { floor + frac * (ceiling - floor).min(floor.abs()) } else { ceiling };
            self.search(&arcs, &fastest, &bound, start, end, budget, cap.min(ceiling))
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        arcs: &[Vec<Vec<Arc>>],
        fastest: &[Vec<f64>],
        bound: &dyn Fn(usize, usize, f64, f64) -> f64,
        start: usize,
        end: usize,
        budget: f64,
        ceiling: f64,
    ) -> Option<f64> {
        let m = self.speeds.len();
        let n_arcs = arcs.len();
        let mut fronts: Vec<Vec<Vec<(f64, f64)>>> = vec![vec![Vec::new(); m]; n_arcs + 1];
        fronts[0][start].push((0.0, 0.0));
        for i in 0..n_arcs {
            for bucket in &mut fronts[i] {
                prune(bucket);
            }
            let here = std::mem::take(&mut fronts[i]);
            for (j, front) in here.iter().enumerate() {
                for &(len, k, de, dt) in &arcs[i][j] {
                    let slack = budget + 1e-9 - fastest[i + len][k];
                    for &(e, t) in front {
                        let (e, t) = (e + de, t + dt);
                        if t <= slack && bound(i + len, k, e, t) <= ceiling {
                            fronts[i + len][k].push((e, t));
                        }
                    }
                }
            }
            fronts[i] = here;
        }
        fronts[n_arcs][end].iter().map(|&(e, _)| e).min_by(f64::total_cmp)
    }

    fn arcs_from(&self, f1: &[f64], i: usize, j: usize, n_arcs: usize) -> Vec<Arc> {
        let m = self.speeds.len();
        let mut out = Vec::new();
        for k in 0..m {
            if let Some((de, dt)) = self.arc(f1, i, self.speeds[j], self.speeds[k]) {
                out.push((1, k, de, dt));
            }
        }
        for span in 2..=self.max_span.min(n_arcs - i) {
            for k in [j.wrapping_sub(1), j + 1] {
                if k < m {
                    if let Some((de, dt)) = self.span(f1, i, span, self.speeds[j], self.speeds[k]) {
                        out.push((span, k, de, dt));
                    }
                }
            }
        }
        for (len, k, dt) in self.coasts(f1, i, j, n_arcs) {
            out.push((len, k, 0.0, dt));
        }
        out
    }
}

/// Keeps only (energy, time) points not dominated by another point.
fn prune(points: &mut Vec<(f64, f64)>) {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut kept: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points.iter() {
        if kept.last().is_none_or(|last| p.1 < last.1 - 1e-12) {
            kept.push(p);
        }
    }
    *points = kept;
}
