//! Competitor allocation rules. Inputs are percent returns; tensors handed to
//! the optimizer are in fractions so that 1 + λ′y is gross wealth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocate::{optimize_weights, AllocConfig, UtilityConfig};
use crate::error::{Error, Result};
use crate::moments::{moment_tensors, Draws, MomentTensors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    /// Full dynamic-dependence model: GAS marginals + switching copula, order-4 objective.
    Fddm,
    /// Gaussian DCC forecast, order-2 objective.
    Dcc,
    /// Rolling empirical moments, order-2 objective.
    Nmv,
    /// Rolling empirical moments, order-4 objective.
    Nhm,
    /// In-sample global minimum variance, held fixed.
    Mv,
    /// 1/N.
    Ew,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Fddm,
        Strategy::Dcc,
        Strategy::Nmv,
        Strategy::Nhm,
        Strategy::Mv,
        Strategy::Ew,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Fddm => "FDDM",
            Strategy::Dcc => "DCC",
            Strategy::Nmv => "NMV",
            Strategy::Nhm => "NHM",
            Strategy::Mv => "MV",
            Strategy::Ew => "EW",
        }
    }

    /// Whether the weights depend on the risk-aversion coefficient.
    pub fn uses_upsilon(self) -> bool {
        !matches!(self, Strategy::Mv | Strategy::Ew)
    }
}

pub fn ew_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn sample_cov(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    let t = rows.len();
    if n == 0 || t < 2 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("need a rectangular panel with T ≥ 2".into()));
    }
    let mean: Vec<f64> = (0..n)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / t as f64)
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (t - 1) as f64
    }))
}

/// Global minimum-variance weights Σ⁻¹1 / 1′Σ⁻¹1 (shorting allowed).
pub fn mv_weights(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cov = sample_cov(rows)?;
    let n = cov.nrows();
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::DegenerateInput("sample covariance is singular".into()))?;
    let x = chol.solve(&DVector::from_element(n, 1.0));
    let s = x.sum();
    Ok(x.iter().map(|v| v / s).collect())
}

/// Empirical moment tensors of percent-return rows, in fractions.
pub fn empirical_tensors(rows: &[Vec<f64>]) -> Result<MomentTensors> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("ragged return window".into()));
    }
    let values = rows.iter().flatten().map(|v| v / 100.0).collect();
    moment_tensors(&Draws { n, values }, 0)
}

/// First two moments only; higher tensors are left at zero (order-2 use).
pub fn gaussian_tensors(mean_pct: &[f64], cov_pct: &[f64]) -> Result<MomentTensors> {
    let n = mean_pct.len();
    if cov_pct.len() != n * n {
        return Err(Error::Dimension("covariance must be N×N".into()));
    }
    let mut t = MomentTensors::zeros(n);
    t.m1 = mean_pct.iter().map(|v| v / 100.0).collect();
    t.m2 = cov_pct.iter().map(|v| v / 1e4).collect();
    Ok(t)
}

pub fn optimize_order(t: &MomentTensors, upsilon: f64, order: usize, base: &AllocConfig) -> Result<Vec<f64>> {
    let cfg = AllocConfig {
        utility: UtilityConfig { upsilon, order },
        ..*base
    };
    Ok(optimize_weights(t, &cfg)?.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ew_is_one_over_n() {
        assert_eq!(ew_weights(5), vec![0.2; 5]);
    }

    #[test]
    fn mv_with_diagonal_covariance() {
        // Rows ±√v_i in a balanced pattern give an exactly diagonal sample covariance.
        let v = [1.0_f64, 2.0, 4.0, 0.5];
        let signs = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let mut rows = Vec::new();
        for s in signs {
            rows.push((0..4).map(|i| s[i] * v[i].sqrt()).collect::<Vec<_>>());
            rows.push((0..4).map(|i| -s[i] * v[i].sqrt()).collect::<Vec<_>>());
        }
        let w = mv_weights(&rows).unwrap();
        let inv: f64 = v.iter().map(|x| 1.0 / x).sum();
        for i in 0..4 {
            assert!((w[i] - (1.0 / v[i]) / inv).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn nmv_equals_order_two_on_empirical_tensors() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                (0..3)
                    .map(|i| 0.1 * i as f64 + 2.0 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let base = AllocConfig::default();
        let t = empirical_tensors(&rows).unwrap();
        let w = optimize_order(&t, 7.0, 2, &base).unwrap();
        let direct = optimize_weights(
            &t,
            &AllocConfig {
                utility: UtilityConfig { upsilon: 7.0, order: 2 },
                ..base
            },
        )
        .unwrap();
        assert_eq!(w, direct.weights);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}
