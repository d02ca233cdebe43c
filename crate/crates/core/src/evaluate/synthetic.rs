//! Synthetic weekly panels drawn from the full model: GAS-AST marginals
//! glued by a two-regime switching t-copula with covariate-driven DCC.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::ast::Ast;
use crate::error::Result;
use crate::gas::{gas_step, map_params, GasCoeffs, Scaling, TildeParams};
use crate::mscopula::sim::simulate_copula_panel;
use crate::mscopula::{DccSpec, MsCopulaModel, RegimeParams, TransitionSpec};

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    /// T×N percent returns.
    pub returns: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
    /// T×p covariate changes.
    pub covariates: Vec<Vec<f64>>,
    /// Copula regime per row.
    pub states: Vec<usize>,
}

/// Marginal coefficients at typical weekly-equity magnitudes.
pub fn synthetic_gas() -> (GasCoeffs, TildeParams) {
    let beta = [0.2368, 0.9712, 0.339, 0.9];
    let alpha = [0.0, 0.0769, 0.0134, 0.01];
    let bar = [0.1, 1.5_f64.ln(), (0.45_f64 / 0.55).ln(), 4.0_f64.ln()];
    let mut omega = [0.0; 4];
    for k in 0..4 {
        omega[k] = (1.0 - beta[k]) * bar[k];
    }
    (GasCoeffs { omega, alpha, beta }, TildeParams::from_array(bar))
}

/// Two well-separated regimes: a turbulent ν = 6 state with fast correlation
/// dynamics and a calm ν = 30 state with persistent ones.
pub fn synthetic_copula(n: usize, p: usize) -> MsCopulaModel {
    let mut cbar = vec![0.4 / 12.0; n * n];
    for i in 0..n {
        cbar[i * n + i] = 1.0 / 12.0;
    }
    let regime = |a: f64, b: f64, nu: f64, xi: f64| RegimeParams {
        a: vec![a],
        b: vec![b],
        xi: vec![xi; p],
        nu_c: nu,
        gamma_lev: None,
    };
    MsCopulaModel {
        regimes: vec![regime(0.3, 0.65, 6.0, 0.002), regime(0.02, 0.97, 30.0, -0.002)],
        trans: TransitionSpec::persistent(2, 0.995),
        spec: DccSpec::Simple,
        leverage: false,
        n_assets: n,
        window: crate::mscopula::DEFAULT_WINDOW,
        cbar,
        xbar: vec![0.0; p],
        nbar: vec![0.0; n * n],
        loglik: 0.0,
        aic: 0.0,
        bic: 0.0,
        n_obs: 0,
    }
}

/// `t_len` weekly rows (Fridays from 1990-01-05) of `n` assets and `p`
/// standard-normal covariates scaled to 0.1.
pub fn synthetic_panel(n: usize, t_len: usize, p: usize, seed: u64) -> Result<SyntheticPanel> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let covariates: Vec<Vec<f64>> = (0..t_len)
        .map(|_| (0..p).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let model = synthetic_copula(n, p);
    let (u, states) = simulate_copula_panel(&model, t_len, &covariates, &mut rng)?;
    let (coeffs, init) = synthetic_gas();
    let mut returns = vec![vec![0.0; n]; t_len];
    for i in 0..n {
        let mut st = init;
        for t in 0..t_len {
            let y = Ast::new(map_params(&st))?.quantile(u[t][i])?;
            returns[t][i] = y;
            st = gas_step(&st, y, &coeffs, Scaling::Fisher)?;
        }
    }
    let start = NaiveDate::from_ymd_opt(1990, 1, 5).expect("valid date");
    let dates = (0..t_len)
        .map(|t| (start + Days::new(7 * t as u64)).format("%Y-%m-%d").to_string())
        .collect();
    Ok(SyntheticPanel {
        dates,
        assets: (1..=n).map(|i| format!("A{i}")).collect(),
        returns,
        covariate_names: (1..=p).map(|k| format!("X{k}")).collect(),
        covariates,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_shape_and_determinism() {
        let a = synthetic_panel(3, 60, 2, 5).unwrap();
        let b = synthetic_panel(3, 60, 2, 5).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.returns.len(), 60);
        assert_eq!(a.covariates[0].len(), 2);
        assert_eq!(a.dates[1], "1990-01-12");
        assert!(a.returns.iter().flatten().all(|v| v.is_finite()));
    }
}
