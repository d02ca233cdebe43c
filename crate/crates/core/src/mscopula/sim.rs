//! Simulation from the Markov-switching copula.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{forecast_correlation, leverage_indicators, window_cov, DccCoefs, MsCopulaModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::special::StudentT;

/// Draws one point from the t copula with correlation `r` (N×N) and ν.
pub fn sample_t_copula<R: Rng + ?Sized>(
    chol_r: &[f64],
    n: usize,
    t: &StudentT,
    chi: &ChiSquared<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let scale = (chi.sample(rng) / t.nu()).sqrt();
    (0..n)
        .map(|i| {
            let y: f64 = (0..=i).map(|k| chol_r[i * n + k] * z[k]).sum();
            t.cdf(y / scale)
        })
        .collect()
}

/// Simulates `t_len` pseudo-observations and the state path. `x` holds the
/// covariates (T×p, may be empty when the model has none).
pub fn simulate_copula_panel<R: Rng + ?Sized>(
    model: &MsCopulaModel,
    t_len: usize,
    x: &[Vec<f64>],
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    model.validate()?;
    let n = model.n_assets;
    let p = model.n_covariates();
    if p > 0 && (x.len() != t_len || x.iter().any(|r| r.len() != p)) {
        return Err(Error::Dimension(format!("need {t_len}×{p} covariates")));
    }
    let l = model.n_states();
    let coefs: Vec<DccCoefs> = model
        .regimes
        .iter()
        .map(|r| DccCoefs::new(r, &model.cbar, &model.xbar, &model.nbar, n))
        .collect();
    let dists = model
        .regimes
        .iter()
        .map(|r| {
            let t = StudentT::new(r.nu_c)?;
            let chi = ChiSquared::new(r.nu_c).map_err(|e| Error::ParameterDomain(e.to_string()))?;
            Ok((t, chi))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut c: Vec<Vec<f64>> = vec![model.cbar.clone(); l];
    let mut next = vec![0.0; n * n];
    let mut forcing = vec![0.0; n * n];
    let mut chol = vec![0.0; n * n];
    let mut u = Vec::with_capacity(t_len);
    let mut states = Vec::with_capacity(t_len);
    let mut state = draw(&model.trans.delta, rng);
    let empty: Vec<f64> = Vec::new();
    for t in 0..t_len {
        let r = forecast_correlation(&c[state], n)?;
        if !linalg::cholesky(&r, n, &mut chol) {
            let r2 = linalg::clip_eigenvalues(&r, n, 1e-10);
            linalg::cholesky(&r2, n, &mut chol);
        }
        let (td, chi) = &dists[state];
        let row: Vec<f64> = sample_t_copula(&chol, n, td, chi, rng)
            .into_iter()
            .map(|v| v.clamp(crate::gas::PIT_CLAMP, 1.0 - crate::gas::PIT_CLAMP))
            .collect();
        u.push(row);
        states.push(state);
        if t + 1 >= model.window {
            let rows: Vec<&[f64]> = u[t + 1 - model.window..=t].iter().map(Vec::as_slice).collect();
            window_cov(&rows, n, &mut forcing);
        } else {
            forcing.copy_from_slice(&model.cbar);
        }
        let eta = leverage_indicators(&u[t]);
        let xt = if p > 0 { &x[t] } else { &empty };
        for s in 0..l {
            coefs[s].step(&c[s], &forcing, xt, model.leverage.then_some(eta.as_slice()), &mut next);
            std::mem::swap(&mut c[s], &mut next);
        }
        state = draw(&model.trans.q[state], rng);
    }
    Ok((u, states))
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let v: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if v < acc {
            return i;
        }
    }
    probs.len() - 1
}
