//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! runtime and exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cbf_rollout, qp_bisection, random_road, scenario_path, LeaderScript, ParetoOracle};
use safecruise::cbf::{barrier_eval, qp_filter, CriticalDistance};
use safecruise::controllers::{CccParams, ControllerKind, FollowState};
use safecruise::pcc::{self, energy, u_dr_from_accel, OcpSpec, SolverSettings, TrajectorySample};
use safecruise::plant::TruckParams;
use safecruise::road::{slope_from_elevation, ElevationSample, RoadProfile, SpeedLimits, DEFAULT_SMOOTHING_WINDOW};
use safecruise::sim::{RunLog, Scenario};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cbf_forward_invariance() -> Outcome {
    let (rho_0, tau, alpha_e, v_bar) = (5.0, 1.5, 1.0, 32.0);
    let (dt, steps) = (0.01, 6000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scripts: Vec<LeaderScript> = (0..10)
        .map(|_| LeaderScript::random(&mut rng, steps, dt, 3.0))
        .collect();
    let mut worst = f64::INFINITY;
    for k in 0..200 {
        let v = rng.random_range(0.0..v_bar);
        let v1 = rng.random_range(0.0..v_bar);
        let slack = if k < 100 { 0.0 } else { rng.random_range(0.0..60.0) };
        let h = rho_0 + tau * v + slack;
        for script in &scripts {
            worst = worst.min(cbf_rollout([h, v, v1], rho_0, tau, alpha_e, script, dt, v_bar));
        }
    }
    let floor = -1e-6 * (1.0 + tau * v_bar);
    ensure(worst >= floor, || format!("min b {worst:e} below {floor:e}"))?;
    Ok(format!("2000 runs, min b = {worst:.3e}"))
}

fn qp_oracle_equivalence() -> Outcome {
    let rho = CriticalDistance::default();
    let alpha_e = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = FollowState::new(
            rng.random_range(0.0..120.0),
            rng.random_range(0.0..32.0),
            rng.random_range(0.0..32.0),
        );
        let u_nom = rng.random_range(-6.0..4.0);
        let bs = barrier_eval(&rho, x);
        let u = qp_filter(&bs, u_nom, alpha_e).map_err(|e| e.to_string())?;
        let oracle = qp_bisection(bs.b, bs.lfb, bs.lgb, u_nom, alpha_e);
        worst = worst.max((u - oracle).abs());
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 samples, max deviation {worst:.1e}"))
}

fn integrated_filter_safety() -> Outcome {
    let base = Scenario::load(&scenario_path("stop_and_go.toml")).map_err(|e| e.to_string())?;
    let leader = base.config.leaders[0].clone();
    let sets = [
        vec![ControllerKind::Ccc, ControllerKind::Pcc],
        vec![ControllerKind::Acc, ControllerKind::Ccc, ControllerKind::Pcc],
    ];
    let mut worst = f64::INFINITY;
    for set in &sets {
        let world = base.with_controllers(set).map_err(|e| e.to_string())?;
        for seed in 0..10 {
            let run = world
                .with_leaders(vec![leader.perturbed(seed, 0.1, 3.0)])
                .and_then(|w| w.run())
                .map_err(|e| e.to_string())?;
            let gap = run.min_gap.unwrap_or(f64::INFINITY);
            ensure(gap > 0.0 && !run.collision, || format!("seed {seed} set {set:?}: min headway {gap}"))?;
            worst = worst.min(gap);
        }
    }
    Ok(format!("20 runs, min headway {worst:.2} m"))
}

fn energy_ordering() -> Outcome {
    let base = Scenario::load(&scenario_path("two_hill_highway.toml")).map_err(|e| e.to_string())?;
    let run = |set: &[ControllerKind]| -> Result<RunLog, String> {
        base.with_controllers(set).and_then(|w| w.run()).map_err(|e| e.to_string())
    };
    // PCC alone ignores the leader, so it runs on an empty road.
    let pcc_only = base
        .with_leaders(vec![])
        .and_then(|w| w.with_controllers(&[ControllerKind::Pcc]))
        .and_then(|w| w.run())
        .map_err(|e| e.to_string())?;
    ensure(pcc_only.finished, || "pcc run did not finish".into())?;
    let ccc_only = run(&[ControllerKind::Ccc])?;
    let filter = run(&[ControllerKind::Acc, ControllerKind::Ccc, ControllerKind::Pcc])?;
    for (name, log) in [("ccc", &ccc_only), ("filter", &filter)] {
        ensure(log.finished && !log.collision, || {
            format!(
                "{name} run: finished {}, collision {}, min gap {:?}",
                log.finished, log.collision, log.min_gap
            )
        })?;
    }
    let times = [pcc_only.finish_time(), ccc_only.finish_time(), filter.finish_time()];
    let (t_lo, t_hi) = (times.iter().cloned().fold(f64::INFINITY, f64::min), times.iter().cloned().fold(0.0, f64::max));
    ensure(t_hi <= 1.02 * t_lo, || format!("finish times not matched: {times:?}"))?;
    let (w_p, w_c, w_f) = (pcc_only.final_energy(), ccc_only.final_energy(), filter.final_energy());
    ensure(w_f <= 1.02 * w_p, || format!("filter {w_f:.1} above 1.02 x pcc {w_p:.1}"))?;
    ensure(w_f < w_c, || format!("filter {w_f:.1} not below ccc {w_c:.1}"))?;
    ensure(filter.switch_count() >= 1, || "filter never switched".into())?;
    Ok(format!(
        "w pcc {w_p:.1} / filter {w_f:.1} / ccc {w_c:.1} J/kg, saving {:.2}%, {} switches",
        100.0 * (w_c - w_f) / w_c,
        filter.switch_count()
    ))
}

fn flat_road_optimum() -> Outcome {
    let params = TruckParams::default();
    let samples: Vec<ElevationSample> = (0..=1200).map(|k| ElevationSample::new(k as f64 * 2.5, 0.0)).collect();
    let limits = SpeedLimits::uniform(15.0, 32.0).map_err(|e| e.to_string())?;
    let road = RoadProfile::new(samples, DEFAULT_SMOOTHING_WINDOW, limits).map_err(|e| e.to_string())?;
    let spec = OcpSpec {
        road: &road,
        params: &params,
        v0: 20.0,
        vf: 20.0,
        t_f_max: 150.0,
        settings: SolverSettings::default(),
    };
    let profile = pcc::solve(&spec).map_err(|e| e.to_string())?;
    // Constant-speed optimum; evaluates to about 676.8 J/kg with the default truck.
    let analytic = (params.f1(0.0) + params.f2(20.0)) * 3000.0;
    let rel = (profile.cost() - analytic).abs() / analytic;
    ensure(rel <= 5e-3, || format!("energy {:.2} vs {analytic:.2} ({:.3}%)", profile.cost(), 100.0 * rel))?;
    let n = profile.len();
    let off = profile.v_pcc[10..n - 10]
        .iter()
        .map(|v| (v - 20.0).abs())
        .fold(0.0, f64::max);
    ensure(off <= 0.1 + 1e-9, || format!("interior speed off by {off}"))?;
    Ok(format!(
        "energy {:.2} vs analytic {analytic:.2} J/kg ({:.3}%), interior speed error {off:.2e}",
        profile.cost(),
        100.0 * rel
    ))
}

fn oracle_dominance() -> Outcome {
    let params = TruckParams::default();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        // 200 arcs of 10 m: at 2.5 m one 0.5 m/s speed cell needs more than the
        // drive limit, so a coarse grid could not accelerate at all.
        let road = random_road(600 + seed, 2000.0, 10.0, 16.0);
        let budget = road.length() / 12.5;
        let spec = OcpSpec {
            road: &road,
            params: &params,
            v0: 12.0,
            vf: 13.0,
            t_f_max: budget,
            settings: SolverSettings {
                ds: 10.0,
                v_grid_step: 0.5,
                ..SolverSettings::default()
            },
        };
        let profile = pcc::solve(&spec).map_err(|e| e.to_string())?;
        let oracle = ParetoOracle {
            road: &road,
            params: &params,
            ds: 10.0,
            speeds: (0..=12).map(|j| 10.0 + 0.5 * j as f64).collect(),
            max_span: SolverSettings::default().max_span,
        };
        // Ceiling at the claimed cost: the oracle stays exact below it and
        // finds nothing if the claim undercuts every feasible path.
        let best = oracle
            .solve_below(4, 6, budget, profile.cost() + 1e-6)
            .ok_or("no path as cheap as the solver claims")?;
        let gap = (profile.cost() - best) / best;
        ensure(gap <= 0.01, || format!("seed {seed}: solve {:.3} oracle {best:.3}", profile.cost()))?;
        worst = worst.max(gap);
    }
    Ok(format!("5 roads, worst gap {:.4}%", 100.0 * worst))
}

fn downhill_coasting() -> Outcome {
    let params = TruckParams::default();
    // Flat 1000 m, a 600 m stretch at sin(phi) = -0.05, then flat 1000 m.
    let elevation = |s: f64| -0.05 * (s - 1000.0).clamp(0.0, 600.0);
    let samples: Vec<ElevationSample> = (0..=1040).map(|k| ElevationSample::new(k as f64 * 2.5, elevation(k as f64 * 2.5))).collect();
    let limits = SpeedLimits::uniform(15.0, 25.0).map_err(|e| e.to_string())?;
    let road = RoadProfile::new(samples, DEFAULT_SMOOTHING_WINDOW, limits).map_err(|e| e.to_string())?;
    let spec = OcpSpec {
        road: &road,
        params: &params,
        v0: 20.0,
        vf: 20.0,
        t_f_max: 2600.0 / 19.0,
        settings: SolverSettings::default(),
    };
    let profile = pcc::solve(&spec).map_err(|e| e.to_string())?;
    let interior: Vec<f64> = profile
        .s_grid
        .iter()
        .zip(&profile.u_dr_star)
        .filter(|(s, _)| **s > 1010.0 && **s < 1590.0)
        .map(|(_, u)| *u)
        .collect();
    let driven = interior.iter().filter(|u| **u != 0.0).count();
    ensure(driven == 0, || format!("{driven} of {} interior cells drive", interior.len()))?;
    Ok(format!("u_dr = 0 on all {} interior cells", interior.len()))
}

fn energy_bookkeeping() -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (file, sets) in [
        ("stop_and_go.toml", vec![vec![ControllerKind::Acc, ControllerKind::Ccc, ControllerKind::Pcc], vec![ControllerKind::Ccc]]),
        ("two_hill_highway.toml", vec![vec![ControllerKind::Pcc], vec![ControllerKind::Acc, ControllerKind::Ccc, ControllerKind::Pcc]]),
    ] {
        let base = Scenario::load(&scenario_path(file)).map_err(|e| e.to_string())?;
        for set in sets {
            let log = base.with_controllers(&set).and_then(|w| w.run()).map_err(|e| e.to_string())?;
            let params = &base.config.truck;
            let traj: Vec<TrajectorySample> = log
                .records
                .iter()
                .map(|r| TrajectorySample {
                    t: r.t,
                    v: r.v,
                    u_dr: u_dr_from_accel(params, r.phi.unwrap_or(0.0), r.v, r.v_dot.unwrap_or(0.0)),
                })
                .collect();
            let w = energy(&traj).map_err(|e| e.to_string())?;
            for (rec, w) in log.records.iter().zip(&w) {
                let rel = (rec.w - w).abs() / (1.0 + rec.w.abs());
                worst = worst.max(rel);
                ensure(rel <= 1e-6, || format!("{file} t = {}: logged {} recomputed {w}", rec.t, rec.w))?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} logs, worst relative error {worst:.1e}"))
}

fn slope_round_trip() -> Outcome {
    let (amp, period, ds) = (2.0, 500.0, 2.5);
    let k = 2.0 * std::f64::consts::PI / period;
    let samples: Vec<ElevationSample> = (0..=1200)
        .map(|i| {
            let s = i as f64 * ds;
            ElevationSample::new(s, amp * (k * s).sin())
        })
        .collect();
    let slopes = slope_from_elevation(&samples, DEFAULT_SMOOTHING_WINDOW).map_err(|e| e.to_string())?;
    let half = DEFAULT_SMOOTHING_WINDOW / 2;
    let worst = (half + 1..samples.len() - half - 1)
        .map(|i| (slopes[i] - (amp * k * (k * samples[i].s).cos()).atan()).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-3, || format!("max slope error {worst:e} rad"))?;
    Ok(format!("max interior slope error {worst:.2e} rad"))
}

fn branch_boundaries() -> Outcome {
    for (name, p) in [("on-track", CccParams::on_track()), ("highway", CccParams::highway())] {
        let (h_st, h_go, h_cc) = (p.h_st, p.h_go(), p.h_cc());
        let cases = [
            ("V(h_st)", p.range_policy(h_st), 0.0),
            ("V(h_go)", p.range_policy(h_go), p.v_max),
            ("V(h_CC)", p.range_policy(h_cc), p.v_max),
            ("A(h_st)", p.gain_a(h_st), p.alpha),
            ("A(h_go)", p.gain_a(h_go), p.alpha),
            ("A(h_CC)", p.gain_a(h_cc), p.alpha),
            ("B(h_st)", p.gain_b(h_st), p.beta),
            ("B(h_go)", p.gain_b(h_go), p.beta),
            ("B(h_CC)", p.gain_b(h_cc), 0.0),
        ];
        for (what, got, want) in cases {
            ensure(got == want, || format!("{name} {what} = {got}, expected {want}"))?;
        }
    }
    Ok("18 boundary values exact".into())
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "CBF forward invariance", budget: Duration::from_secs(30), check: cbf_forward_invariance },
        Criterion { id: 2, name: "QP oracle equivalence", budget: Duration::from_secs(1), check: qp_oracle_equivalence },
        Criterion { id: 3, name: "integrated filter safety", budget: Duration::from_secs(60), check: integrated_filter_safety },
        Criterion { id: 4, name: "energy ordering", budget: Duration::from_secs(60), check: energy_ordering },
        Criterion { id: 5, name: "flat road optimum", budget: Duration::from_secs(10), check: flat_road_optimum },
        Criterion { id: 6, name: "oracle dominance", budget: Duration::from_secs(30), check: oracle_dominance },
        Criterion { id: 7, name: "downhill coasting", budget: Duration::MAX, check: downhill_coasting },
        Criterion { id: 8, name: "energy bookkeeping", budget: Duration::MAX, check: energy_bookkeeping },
        Criterion { id: 9, name: "slope round trip", budget: Duration::MAX, check: slope_round_trip },
        Criterion { id: 10, name: "controller branch boundaries", budget: Duration::MAX, check: branch_boundaries },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let took = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if took > c.budget {
                Err(format!("{detail}; took {:.2?}, budget {:.0?}", took, c.budget))
            } else {
                Ok(detail)
            }
        });
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {} ({:.2?}): {}", c.id, c.name, took, detail),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{:>2}] {} ({:.2?}): {}", c.id, c.name, took, reason);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
