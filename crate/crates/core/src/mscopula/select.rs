//! Information criteria and model-order selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::{em_fit, EmConfig};
use super::DccSpec;
use crate::error::{Error, Result};

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_obs as f64).ln()
}

/// Expected sojourn 1/(1 − q_ll) of a regime with persistence q_ll.
pub fn expected_duration(q_ll: f64) -> Result<f64> {
    if !(q_ll > 0.0 && q_ll < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "persistence must lie in (0,1), got {q_ll}"
        )));
    }
    Ok(1.0 / (1.0 - q_ll))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub n_regimes: usize,
    pub spec: DccSpec,
    pub covariates: bool,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub bic: f64,
    /// Set when the cell failed to fit; criteria are then +∞.
    pub error: Option<String>,
}

/// Fits every (L, spec, covariates) cell and ranks the results by ascending BIC.
pub fn select_model(
    u: &[Vec<f64>],
    x: &[Vec<f64>],
    grid: &[(usize, DccSpec, bool)],
    base: &EmConfig,
) -> Result<Vec<SelectionRow>> {
    if grid.is_empty() {
        return Err(Error::ParameterDomain("empty model grid".into()));
    }
    let mut rows: Vec<SelectionRow> = grid
        .par_iter()
        .map(|&(l, spec, cov)| {
            let cfg = EmConfig {
                n_regimes: l,
                spec,
                covariates: cov && !x.is_empty(),
                ..base.clone()
            };
            match em_fit(u, x, &cfg) {
                Ok(m) => SelectionRow {
                    n_regimes: l,
                    spec,
                    covariates: cfg.covariates,
                    loglik: m.loglik,
                    n_params: m.n_params(),
                    aic: m.aic,
                    bic: m.bic,
                    error: None,
                },
                Err(e) => SelectionRow {
                    n_regimes: l,
                    spec,
                    covariates: cfg.covariates,
                    loglik: f64::NEG_INFINITY,
                    n_params: 0,
                    aic: f64::INFINITY,
                    bic: f64::INFINITY,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    Ok(rows)
}

/// The grid {1,2,3} × {simple, generalised} × {with, without covariates}.
pub fn default_grid() -> Vec<(usize, DccSpec, bool)> {
    let mut g = Vec::new();
    for l in 1..=3 {
        for spec in [DccSpec::Simple, DccSpec::Generalised] {
            for cov in [true, false] {
                g.push((l, spec, cov));
            }
        }
    }
    g
}
