mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{cbf_rollout, qp_bisection, LeaderScript};
use safecruise::cbf::{barrier_eval, follow_step, qp_filter, u_safe, CriticalDistance};
use safecruise::controllers::{CccParams, FollowState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn barrier_stays_non_negative_under_u_safe(
        v in 0.0f64..32.0,
        v1 in 0.0f64..32.0,
        slack in 0.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let (rho_0, tau, alpha_e, dt) = (5.0, 1.5, 1.0, 0.01);
        let script = LeaderScript::random(&mut ChaCha8Rng::seed_from_u64(seed), 3000, dt, 3.0);
        let min_b = cbf_rollout([rho_0 + tau * v + slack, v, v1], rho_0, tau, alpha_e, &script, dt, 32.0);
        prop_assert!(min_b >= -1e-6 * (1.0 + tau * 32.0), "min b {}", min_b);
    }

    #[test]
    fn filtered_cruise_controller_keeps_the_set(
        v in 0.0f64..30.0,
        v1 in 0.0f64..30.0,
        slack in 0.0f64..40.0,
        seed in any::<u64>(),
    ) {
        // The library's own stepper with the QP filter wrapped around a
        // cruise controller that would happily close the gap.
        let rho = CriticalDistance::default();
        let ccc = CccParams::highway();
        let dt = 0.01;
        let script = LeaderScript::random(&mut ChaCha8Rng::seed_from_u64(seed), 3000, dt, 3.0);
        let mut x = FollowState::new(rho.rho_0 + rho.tau * v + slack, v, v1);
        let control = |x: FollowState| qp_filter(&barrier_eval(&rho, x), ccc.cruise(x.v), 1.0).unwrap();
        for &a in &script.accel {
            let a1 = a.clamp(-x.v1 / dt, (32.0 - x.v1) / dt);
            x = follow_step(x, control, a1, dt);
            prop_assert!(barrier_eval(&rho, x).b >= -1e-6, "b {} at {:?}", barrier_eval(&rho, x).b, x);
        }
    }

    #[test]
    fn qp_filter_matches_bisection(
        h in -10.0f64..150.0,
        v in 0.0f64..35.0,
        v1 in 0.0f64..35.0,
        u_nom in -8.0f64..6.0,
        rho_0 in 0.0f64..10.0,
        tau in 0.2f64..3.0,
        alpha_e in 0.1f64..3.0,
    ) {
        let rho = CriticalDistance::new(rho_0, tau).unwrap();
        let bs = barrier_eval(&rho, FollowState::new(h, v, v1));
        let u = qp_filter(&bs, u_nom, alpha_e).unwrap();
        let oracle = qp_bisection(bs.b, bs.lfb, bs.lgb, u_nom, alpha_e);
        prop_assert!((u - oracle).abs() <= 1e-8, "{} vs {}", u, oracle);
        prop_assert!(u <= u_nom);
        prop_assert!(u <= u_safe(&bs, alpha_e).unwrap() + 1e-12);
    }
}
