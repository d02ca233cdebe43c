//! Density-forecast goodness-of-fit tests on probability integral transforms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const DGT_LAGS: usize = 20;
pub const DGT_BINS: usize = 20;
/// 5% critical value of χ²(20).
pub const DGT_AR_CRITICAL: f64 = 31.4;

/// LM statistic (T − lags)·R² from regressing (u_t − ū)^k on a constant and
/// its own `lags` lags.
pub fn dgt_ar_test(pits: &[f64], k: u32, lags: usize) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(Error::ParameterDomain(format!("moment order must be 1..4, got {k}")));
    }
    let t = pits.len();
    if t <= 2 * lags + 1 {
        return Err(Error::DegenerateInput(format!(
            "{t} observations are too few for {lags} lags"
        )));
    }
    let m = pits.iter().sum::<f64>() / t as f64;
    let z: Vec<f64> = pits.iter().map(|u| (u - m).powi(k as i32)).collect();
    let n = t - lags;
    let y = DVector::from_fn(n, |i, _| z[i + lags]);
    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    if !(tss > 1e-300) {
        return Err(Error::DegenerateInput("regressand has zero variance".into()));
    }
    let x = DMatrix::from_fn(n, lags + 1, |i, j| if j == 0 { 1.0 } else { z[i + lags - j] });
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let resid = &y - &x * beta;
    let rss: f64 = resid.iter().map(|v| v * v).sum();
    Ok(n as f64 * (1.0 - rss / tss))
}

/// Pearson statistic Σ(n_g − T/G)²/(T/G) over G equal bins of (0,1).
pub fn dgt_h_test(pits: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 || pits.is_empty() {
        return Err(Error::DegenerateInput("need at least two bins and one PIT".into()));
    }
    let mut counts = vec![0usize; bins];
    for &u in pits {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("PIT {u} outside [0,1]")));
        }
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let e = pits.len() as f64 / bins as f64;
    Ok(counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum())
}

/// Upper-tail critical value of χ²(dof) at level `alpha`.
pub fn chi2_critical(dof: f64, alpha: f64) -> f64 {
    ChiSquared::new(dof).expect("positive dof").inverse_cdf(1.0 - alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub asset: String,
    /// DGT-AR statistics for k = 1..4.
    pub ar: [f64; 4],
    pub ar_reject: [bool; 4],
    pub hist: f64,
    pub hist_reject: bool,
}

/// Both tests on one PIT series, at the 5% (AR) and 1% (histogram) levels.
pub fn gof_row(asset: &str, pits: &[f64]) -> Result<GofRow> {
    let mut ar = [0.0; 4];
    for k in 1..=4 {
        ar[k - 1] = dgt_ar_test(pits, k as u32, DGT_LAGS)?;
    }
    let hist = dgt_h_test(pits, DGT_BINS)?;
    Ok(GofRow {
        asset: asset.to_string(),
        ar,
        ar_reject: ar.map(|v| v > DGT_AR_CRITICAL),
        hist,
        hist_reject: hist > chi2_critical((DGT_BINS - 1) as f64, 0.01),
    })
}
