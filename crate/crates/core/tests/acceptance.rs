//! Acceptance criteria. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line
//! and then asserts, so `cargo test --test acceptance -- --nocapture`
//! doubles as a report.

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use flexdep::allocate::{
    expected_utility_gradient, expected_utility_taylor, optimize_weights, AllocConfig, UtilityConfig,
};
use flexdep::ast::{Ast, AstParams};
use flexdep::evaluate::gof::{chi2_critical, dgt_ar_test, dgt_h_test, DGT_AR_CRITICAL, DGT_BINS, DGT_LAGS};
use flexdep::evaluate::metrics::{
    block_bootstrap_pvalue, default_block_len, fee_statistic, management_fee, modified_sharpe,
};
use flexdep::evaluate::synthetic::{synthetic_copula, synthetic_gas, synthetic_panel};
use flexdep::evaluate::{run_backtest, BacktestConfig, BacktestData, BacktestSchedule, WindowKind};
use flexdep::gas::{fit_marginal_lenient, simulate_gas, GasConfig, Scaling};
use flexdep::moments::{moment_tensors, simulate_joint, Draws, JointForecast};
use flexdep::mscopula::em::{em_fit_traced, EmConfig};
use flexdep::mscopula::select::aic;
use flexdep::mscopula::sim::simulate_copula_panel;
use flexdep::mscopula::{backward_smoother, forward_filter, hamilton_filter, smooth, TransitionSpec};

/// Heavy criteria run one at a time so wall-clock limits are measured alone.
static HEAVY: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    println!("ACCEPTANCE {n:>2} {} {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

/// ∫ f over ℝ, split at `mode`, with y = mode ± scale·s/(1−s) and composite Simpson in s.
fn integrate_line(f: impl Fn(f64) -> f64, mode: f64, scale: f64) -> f64 {
    let n = 40_000;
    let h = 1.0 / n as f64;
    let mut total = 0.0;
    for side in [-1.0, 1.0] {
        let g = |s: f64| {
            if s >= 1.0 {
                return 0.0;
            }
            let y = mode + side * scale * s / (1.0 - s);
            f(y) * scale / ((1.0 - s) * (1.0 - s))
        };
        let mut acc = g(0.0) + g(1.0);
        for i in 1..n {
            acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += acc * h / 3.0;
    }
    total
}

/// Richardson-extrapolated central difference.
fn richardson(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[test]
fn criterion_01_ast_correctness() {
    let _guard = exclusive();
    let t0 = Instant::now();
    let mut worst_norm = 0.0_f64;
    let mut worst_inv = 0.0_f64;
    for &gamma in &[0.1, 0.3, 0.5, 0.7, 0.9] {
        for &nu in &[4.5, 6.0, 10.0, 30.0, 100.0] {
            let d = Ast::new(AstParams::new(0.3, 1.7, gamma, nu).unwrap()).unwrap();
            worst_norm = worst_norm.max((integrate_line(|y| d.pdf(y), 0.3, 1.7) - 1.0).abs());
            for &u in &[1e-6, 1e-3, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999, 1.0 - 1e-6] {
                worst_inv = worst_inv.max((d.cdf(d.quantile(u).unwrap()) - u).abs());
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst_score = 0.0_f64;
    for _ in 0..100 {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(0.5..3.0),
            rng.random_range(0.15..0.85),
            rng.random_range(4.5..40.0),
        ];
        let y = p[0] + p[1] * rng.sample::<f64, _>(StandardNormal) * 2.0;
        let s = Ast::new(AstParams::new(p[0], p[1], p[2], p[3]).unwrap())
            .unwrap()
            .score(y);
        for k in 0..4 {
            let lp = |v: f64| {
                let mut q = p;
                q[k] = v;
                Ast::new(AstParams::new(q[0], q[1], q[2], q[3]).unwrap())
                    .unwrap()
                    .ln_pdf(y)
            };
            let fd = richardson(lp, p[k], 1e-3 * p[k].abs().max(0.1));
            worst_score = worst_score.max((s[k] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    let el = t0.elapsed();
    let pass = worst_norm < 1e-8 && worst_inv < 1e-8 && worst_score < 1e-6 && el < Duration::from_secs(60);
    report(
        1,
        pass,
        &format!(
            "norm err {worst_norm:.1e}, cdf∘quantile err {worst_inv:.1e}, score rel err {worst_score:.1e}, {el:.1?}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_gas_recovery() {
    let _guard = exclusive();
    let t0 = Instant::now();
    let (coeffs, start) = synthetic_gas();
    let mut hits = 0;
    let mut detail = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y = simulate_gas(&coeffs, start, Scaling::Fisher, 3000, &mut rng).unwrap();
        let (m, _) = fit_marginal_lenient(
            &y,
            &GasConfig {
                seed,
                ..GasConfig::default()
            },
            None,
        )
        .unwrap();
        let (b, a) = (m.coeffs.beta[1], m.coeffs.alpha[1]);
        if (b - coeffs.beta[1]).abs() <= 0.05 && (a - coeffs.alpha[1]).abs() <= 0.03 {
            hits += 1;
        } else {
            detail.push(format!("seed {seed}: β_σ {b:.3} α_σ {a:.3}"));
        }
    }
    let el = t0.elapsed();
    let pass = hits >= 18 && el < Duration::from_secs(600);
    report(
        2,
        pass,
        &format!("{hits}/20 within tolerance, {el:.1?} {}", detail.join("; ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Filtered and smoothed marginals by summing over every state path.
fn enumerate_paths(e: &[Vec<f64>], trans: &TransitionSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (t_len, l) = (e.len(), trans.n_states());
    let mut filtered = vec![vec![0.0; l]; t_len];
    let mut smoothed = vec![vec![0.0; l]; t_len];
    for upto in 1..=t_len {
        let mut marg = vec![vec![0.0; l]; upto];
        for code in 0..l.pow(upto as u32) {
            let path: Vec<usize> = (0..upto).map(|t| (code / l.pow(t as u32)) % l).collect();
            let mut w = trans.delta[path[0]] * e[0][path[0]].exp();
            for t in 1..upto {
                w *= trans.q[path[t - 1]][path[t]] * e[t][path[t]].exp();
            }
            for t in 0..upto {
                marg[t][path[t]] += w;
            }
        }
        let z: f64 = marg[upto - 1].iter().sum();
        filtered[upto - 1] = marg[upto - 1].iter().map(|v| v / z).collect();
        if upto == t_len {
            smoothed = marg.iter().map(|r| r.iter().map(|v| v / z).collect()).collect();
        }
    }
    (filtered, smoothed)
}

#[test]
fn criterion_03_filter_smoother_exactness() {
    let mut worst = 0.0_f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let e: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.random_range(-3.0..1.0), rng.random_range(-3.0..1.0)])
            .collect();
        let stay = [rng.random_range(0.5..0.99), rng.random_range(0.5..0.99)];
        let d0 = rng.random_range(0.1..0.9);
        let trans = TransitionSpec {
            q: vec![vec![stay[0], 1.0 - stay[0]], vec![1.0 - stay[1], stay[1]]],
            delta: vec![d0, 1.0 - d0],
        };
        let fwd = forward_filter(&e, &trans).unwrap();
        let sm = backward_smoother(&fwd, &trans);
        let (fb, sb) = enumerate_paths(&e, &trans);
        for t in 0..8 {
            for s in 0..2 {
                worst = worst.max((fwd.filtered[t][s] - fb[t][s]).abs());
                worst = worst.max((sm.probs[t][s] - sb[t][s]).abs());
            }
        }
    }
    let pass = worst < 1e-10;
    report(
        3,
        pass,
        &format!("max abs deviation {worst:.1e} over 10 chains, T=8, L=2"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_em_regime_recovery() {
    let _guard = exclusive();
    let truth = synthetic_copula(5, 0);
    let mut accs = Vec::new();
    let mut worst_drop = 0.0_f64;
    for seed in [0u64, 1, 2] {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (u, states) = simulate_copula_panel(&truth, 1500, &[], &mut rng).unwrap();
        let fit = em_fit_traced(
            &u,
            &[],
            &EmConfig {
                seed,
                ..EmConfig::default()
            },
            None,
        )
        .unwrap();
        let f = hamilton_filter(&u, &[], &fit.model).unwrap();
        let sm = smooth(&f, &fit.model);
        let hit = sm
            .iter()
            .zip(&states)
            .filter(|(p, &s)| usize::from(p[1] > p[0]) == s)
            .count() as f64
            / 1500.0;
        // Regime labels are arbitrary.
        accs.push(hit.max(1.0 - hit));
        for (w, pen) in fit.trace.windows(2).zip(fit.penalized.windows(2)) {
            if !pen[0] && !pen[1] {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
        }
    }
    let pass = accs.iter().all(|a| *a >= 0.9) && worst_drop <= 1e-8;
    report(
        4,
        pass,
        &format!("accuracy {accs:.3?}, largest loglik decrease {worst_drop:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_moment_tensor_oracle() {
    let b = 50_000;
    let n = 3;
    let mut corr = vec![0.3; n * n];
    for i in 0..n {
        corr[i * n + i] = 1.0;
    }
    // A t-copula with t marginals of the same ν is a multivariate t.
    let fc = JointForecast {
        marginals: vec![AstParams::new(0.0, 1.0, 0.5, 8.0).unwrap(); n],
        probs: vec![1.0],
        corr: vec![corr],
        nu: vec![8.0],
    };
    let d = simulate_joint(&fc, b, 21).unwrap();
    let t = moment_tensors(&d, 21).unwrap();
    let mut worst_t = 0.0_f64;
    for i in 0..n {
        let z: Vec<f64> = (0..b)
            .map(|k| (d.row(k)[i] - t.m1[i]) / t.m2[i * n + i].sqrt())
            .collect();
        let k4 = t.m4[i * n * n * n + i * n * n + i * n + i] / t.m2[i * n + i].powi(2);
        let z4: Vec<f64> = z.iter().map(|v| v.powi(4)).collect();
        let m = z4.iter().sum::<f64>() / b as f64;
        let se = (z4.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1) as f64 / b as f64).sqrt();
        worst_t = worst_t.max((k4 - 4.5).abs() / se);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let mut values = Vec::with_capacity(b * n);
    for _ in 0..b {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            values.push(0.5 * z[i] + 0.4 * z[(i + 1) % n]);
        }
    }
    let g = Draws { n, values };
    let tg = moment_tensors(&g, 22).unwrap();
    let mut worst_g = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p: Vec<f64> = (0..b)
                    .map(|r| {
                        let x = g.row(r);
                        (x[i] - tg.m1[i]) * (x[j] - tg.m1[j]) * (x[k] - tg.m1[k])
                    })
                    .collect();
                let m = p.iter().sum::<f64>() / b as f64;
                let se = (p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1) as f64 / b as f64).sqrt();
                worst_g = worst_g.max(tg.m3[i * n * n + j * n + k].abs() / se);
            }
        }
    }
    let pass = worst_t < 3.0 && worst_g < 4.0;
    report(
        5,
        pass,
        &format!("t(8) kurtosis max |z| {worst_t:.2} (< 3), Gaussian M3 max |z| {worst_g:.2} (< 4)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_optimizer_oracle() {
    let (n, b) = (4, 20_000);
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut values = Vec::with_capacity(b * n);
    for _ in 0..b {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            values.push(0.001 * (i as f64 + 1.0) + 0.02 * (z[i] + 0.3 * z[(i + 1) % n]));
        }
    }
    let t = moment_tensors(&Draws { n, values }, 6).unwrap();
    let upsilon = 10.0;

    // KKT system of max m¹ − (υ/2)m² s.t. Σλ = 1, where m² = λ′(M2 + M1M1′)λ.
    let m1 = DVector::from_column_slice(&t.m1);
    let s = DMatrix::from_row_slice(n, n, &t.m2) + &m1 * m1.transpose();
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(s * upsilon));
    for i in 0..n {
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&m1);
    rhs[n] = 1.0;
    let sol = kkt.lu().solve(&rhs).unwrap();
    let cfg = AllocConfig {
        utility: UtilityConfig { upsilon, order: 2 },
        ..AllocConfig::default()
    };
    let a = optimize_weights(&t, &cfg).unwrap();
    let closed_err = (0..n).map(|i| (a.weights[i] - sol[i]).abs()).fold(0.0, f64::max);

    let full = UtilityConfig { upsilon, order: 4 };
    let mut grad_err = 0.0_f64;
    for _ in 0..20 {
        let lam: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = expected_utility_gradient(&lam, &t, &full).unwrap();
        for i in 0..n {
            let f = |v: f64| {
                let mut l = lam.clone();
                l[i] = v;
                expected_utility_taylor(&l, &t, &full).unwrap()
            };
            let fd = richardson(f, lam[i], 1e-3);
            grad_err = grad_err.max((g[i] - fd).abs() / fd.abs().max(1e-6));
        }
    }
    let pass = closed_err < 1e-6 && grad_err < 1e-6;
    report(
        6,
        pass,
        &format!("order-2 vs KKT solution {closed_err:.1e}, order-4 gradient rel err {grad_err:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_information_criteria() {
    let a = aic(-1354.74, 3);
    let b = aic(-1324.22, 16);
    let pass = format!("{a:.2}") == "2715.48"
        && format!("{b:.2}") == "2680.44"
        && (a - 2715.48).abs() < 1e-9
        && (b - 2680.44).abs() < 1e-9;
    report(7, pass, &format!("AIC {a:.2} and {b:.2}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_economic_metrics() {
    let _guard = exclusive();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let a: Vec<f64> = (0..300)
        .map(|_| 0.002 + 0.02 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut identities = true;
    let mut shift_err = 0.0_f64;
    for u in [1.0, 3.0, 7.0, 10.0, 20.0] {
        identities &= management_fee(&a, &a, u).unwrap().0 == 0.0;
        for c in [-0.003, 0.0005, 0.004] {
            let b: Vec<f64> = a.iter().map(|v| v + c).collect();
            shift_err = shift_err.max((management_fee(&a, &b, u).unwrap().0 - c).abs());
        }
    }
    identities &= modified_sharpe(&a, &a).unwrap() == 0.0;

    let (s, n_boot, experiments) = (200, 499, 500);
    let (mut rej_fee, mut rej_msr) = (0, 0);
    for e in 0..experiments as u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + e);
        let x: Vec<f64> = (0..s)
            .map(|_| 0.002 + 0.02 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = (0..s)
            .map(|_| 0.002 + 0.02 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bl = default_block_len(s);
        rej_fee += usize::from(
            block_bootstrap_pvalue(fee_statistic(7.0), &x, &y, bl, n_boot, e)
                .unwrap()
                .1
                < 0.05,
        );
        rej_msr += usize::from(
            block_bootstrap_pvalue(modified_sharpe, &x, &y, bl, n_boot, e)
                .unwrap()
                .1
                < 0.05,
        );
    }
    let (sf, sm) = (rej_fee as f64 / experiments as f64, rej_msr as f64 / experiments as f64);
    let pass = identities && shift_err <= 1e-10 && (sf - 0.05).abs() <= 0.02 && (sm - 0.05).abs() <= 0.02;
    report(
        8,
        pass,
        &format!("self-comparison exact zero: {identities}, shift err {shift_err:.1e}, bootstrap size fee {sf:.3} mSR {sm:.3}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_gof_calibration() {
    let _guard = exclusive();
    let reps = 500;
    let h_crit = chi2_critical((DGT_BINS - 1) as f64, 0.01);
    let mut ar_rej = [0usize; 4];
    let mut h_rej = 0;
    for r in 0..reps as u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(9000 + r);
        let u: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        for k in 0..4 {
            ar_rej[k] += usize::from(dgt_ar_test(&u, k as u32 + 1, DGT_LAGS).unwrap() > DGT_AR_CRITICAL);
        }
        h_rej += usize::from(dgt_h_test(&u, DGT_BINS).unwrap() > h_crit);
    }
    let ar: Vec<f64> = ar_rej.iter().map(|c| *c as f64 / reps as f64).collect();
    let h = h_rej as f64 / reps as f64;
    // Three binomial standard errors around the nominal sizes.
    let tol = |p: f64| 3.0 * (p * (1.0 - p) / reps as f64).sqrt();
    let pass = ar.iter().all(|r| (r - 0.05).abs() <= tol(0.05)) && (h - 0.01).abs() <= tol(0.01);
    report(9, pass, &format!("DGT-AR rejection rates {ar:.3?}, DGT-H {h:.3}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_end_to_end() {
    let _guard = exclusive();
    let p = synthetic_panel(5, 1448, 3, 11).unwrap();
    let schedule = BacktestSchedule {
        insample_len: 1000,
        oos_len: 448,
        refit_every: 24,
        window: WindowKind::FixedMoving,
    };
    let mut cfg = BacktestConfig::new(schedule);
    cfg.draws = 20_000;
    cfg.seed = 3;
    let data = BacktestData {
        dates: &p.dates,
        assets: &p.assets,
        returns: &p.returns,
        covariates: &p.covariates,
    };
    let mut outputs = Vec::new();
    let mut times = Vec::new();
    for _ in 0..2 {
        let t0 = Instant::now();
        let r = run_backtest(data, &cfg).unwrap();
        times.push(t0.elapsed());
        outputs.push((r.periods_csv(), r.summary_json().unwrap()));
    }
    let identical = outputs[0] == outputs[1];
    let limit = Duration::from_secs(30 * 60);
    let pass = identical && times.iter().all(|t| *t < limit);
    report(
        10,
        pass,
        &format!("run times {times:.0?}, reports byte-identical: {identical}"),
    );
    assert!(pass);
}
