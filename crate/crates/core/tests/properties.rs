use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use flexdep::allocate::{optimize_weights, portfolio_moments, project, AllocConfig, UtilityConfig};
use flexdep::evaluate::metrics::{management_fee, modified_sharpe};
use flexdep::evaluate::synthetic::{synthetic_copula, synthetic_gas};
use flexdep::gas::{gas_filter, gas_step, map_params, simulate_gas, GasCoeffs, Scaling, TildeParams};
use flexdep::moments::{moment_tensors, Draws, MomentTensors};
use flexdep::mscopula::hamilton_filter;
use flexdep::mscopula::sim::simulate_copula_panel;
use flexdep::stats::mean;

fn gaussian_draws(n: usize, b: usize, seed: u64, skew: f64) -> Draws {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * b);
    for _ in 0..b {
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..n {
            let x: f64 = z[i] + 0.4 * z[(i + 1) % n];
            values.push(0.001 * i as f64 + 0.02 * (x + skew * x * x));
        }
    }
    Draws { n, values }
}

fn returns(seed: u64, len: usize, drift: f64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| drift + 0.02 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parameter_map_is_total(mu in -1e3..1e3f64, s in -1e3..1e3f64, g in -1e3..1e3f64, v in -1e3..1e3f64) {
        let p = map_params(&TildeParams::from_array([mu, s, g, v]));
        prop_assert!(p.validate().is_ok(), "{p:?}");
    }

    #[test]
    fn filter_path_replays_step_by_step(seed in 0u64..1000) {
        let (c, start) = synthetic_gas();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y = simulate_gas(&c, start, Scaling::Fisher, 60, &mut rng).unwrap();
        let out = gas_filter(&y, &c, start, Scaling::Fisher).unwrap();
        for t in 0..y.len() {
            let next = gas_step(&out.path[t], y[t], &c, Scaling::Fisher).unwrap();
            prop_assert_eq!(next, out.path[t + 1]);
        }
    }

    #[test]
    fn zero_loading_filter_is_constant(seed in 0u64..1000, scaling in prop_oneof![Just(Scaling::Fisher), Just(Scaling::Identity)]) {
        let (c, start) = synthetic_gas();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y = simulate_gas(&c, start, Scaling::Fisher, 40, &mut rng).unwrap();
        let b = c.beta;
        let omega = std::array::from_fn(|k| (1.0 - b[k]) * start.to_array()[k]);
        let flat = GasCoeffs { omega, alpha: [0.0; 4], beta: b };
        let out = gas_filter(&y, &flat, start, scaling).unwrap();
        for p in &out.path {
            for (a, e) in p.to_array().iter().zip(start.to_array()) {
                prop_assert!((a - e).abs() < 1e-12 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn projection_is_feasible(v in prop::collection::vec(-50.0..50.0f64, 1..8), bound in 1.0..6.0f64) {
        let n = v.len();
        prop_assume!(bound * n as f64 >= 1.0);
        let p = project(&v, bound);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(p.iter().all(|x| x.abs() <= bound + 1e-12));
        // Idempotent on the feasible set.
        let q = project(&p, bound);
        prop_assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn optimized_weights_sum_to_one(seed in 0u64..500, upsilon in 1.0..30.0f64, order in 2usize..=4) {
        let t = moment_tensors(&gaussian_draws(3, 2000, seed, 0.2), seed).unwrap();
        let cfg = AllocConfig { utility: UtilityConfig { upsilon, order }, ..AllocConfig::default() };
        let a = optimize_weights(&t, &cfg).unwrap();
        prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(a.weights.iter().all(|w| w.abs() <= cfg.bound + 1e-12));
    }

    #[test]
    fn variance_only_argmax_is_scale_invariant(seed in 0u64..500, scale in 0.1..10.0f64) {
        let mut t = moment_tensors(&gaussian_draws(3, 2000, seed, 0.0), seed).unwrap();
        t.m1 = vec![0.0; 3];
        let mut s = t.clone();
        s.m2.iter_mut().for_each(|v| *v *= scale);
        let cfg = AllocConfig { utility: UtilityConfig { upsilon: 5.0, order: 2 }, ..AllocConfig::default() };
        let a = optimize_weights(&t, &cfg).unwrap();
        let b = optimize_weights(&s, &cfg).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() < 1e-7, "{:?} {:?}", a.weights, b.weights);
        }
    }

    #[test]
    fn tensors_have_index_symmetry(seed in 0u64..500, i in 0usize..3, j in 0usize..3, k in 0usize..3, l in 0usize..3) {
        let n = 3;
        let t = moment_tensors(&gaussian_draws(n, 500, seed, 0.3), seed).unwrap();
        let m3 = |a: usize, b: usize, c: usize| t.m3[a * n * n + b * n + c];
        let m4 = |a: usize, b: usize, c: usize, d: usize| t.m4[a * n * n * n + b * n * n + c * n + d];
        let tol = |x: f64| 1e-12 * x.abs().max(1e-12);
        prop_assert!((t.m2[i * n + j] - t.m2[j * n + i]).abs() <= tol(t.m2[i * n + j]));
        for (a, b, c) in [(j, i, k), (k, j, i), (i, k, j)] {
            prop_assert!((m3(i, j, k) - m3(a, b, c)).abs() <= tol(m3(i, j, k)));
        }
        for (a, b, c, d) in [(j, i, k, l), (l, j, k, i), (i, k, j, l), (i, j, l, k)] {
            prop_assert!((m4(i, j, k, l) - m4(a, b, c, d)).abs() <= tol(m4(i, j, k, l)));
        }
    }

    #[test]
    fn unit_weights_give_own_moments(seed in 0u64..500, i in 0usize..3) {
        let n = 3;
        let d = gaussian_draws(n, 800, seed, 0.3);
        let t: MomentTensors = moment_tensors(&d, seed).unwrap();
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let pm = portfolio_moments(&e, &t).unwrap();
        let col: Vec<f64> = (0..d.len()).map(|b| d.row(b)[i]).collect();
        let m = mean(&col);
        let c = |k: i32| col.iter().map(|v| (v - m).powi(k)).sum::<f64>() / col.len() as f64;
        prop_assert!((pm.mu - m).abs() < 1e-12);
        prop_assert!((pm.var - c(2)).abs() < 1e-10 * c(2));
        prop_assert!((pm.skew3 - c(3)).abs() < 1e-8 * c(2).powf(1.5));
        prop_assert!((pm.kurt4 - c(4)).abs() < 1e-8 * c(4));
    }

    #[test]
    fn self_comparison_is_exactly_zero(seed in 0u64..10_000, upsilon in 1.0..25.0f64) {
        let a = returns(seed, 120, 0.002);
        prop_assert_eq!(management_fee(&a, &a, upsilon).unwrap().0, 0.0);
        prop_assert_eq!(modified_sharpe(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn msr_sign_is_antisymmetric(seed in 0u64..10_000) {
        let a = returns(seed, 100, 0.001);
        let b = returns(seed + 1, 100, 0.003);
        let ab = modified_sharpe(&a, &b).unwrap();
        let ba = modified_sharpe(&b, &a).unwrap();
        prop_assume!(ab != 0.0 && ba != 0.0);
        prop_assert_eq!(ab.signum(), -ba.signum());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn filter_is_invariant_to_regime_relabelling(seed in 0u64..1000) {
        let m = synthetic_copula(3, 0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (u, _) = simulate_copula_panel(&m, 150, &[], &mut rng).unwrap();
        let mut swapped = m.clone();
        swapped.regimes.reverse();
        swapped.trans.q = vec![
            vec![m.trans.q[1][1], m.trans.q[1][0]],
            vec![m.trans.q[0][1], m.trans.q[0][0]],
        ];
        swapped.trans.delta.reverse();
        let a = hamilton_filter(&u, &[], &m).unwrap();
        let b = hamilton_filter(&u, &[], &swapped).unwrap();
        prop_assert!((a.loglik - b.loglik).abs() < 1e-9 * a.loglik.abs().max(1.0));
        for (p, q) in a.filtered.iter().zip(&b.filtered) {
            prop_assert!((p[0] - q[1]).abs() < 1e-10);
        }
        for row in &a.predicted {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
