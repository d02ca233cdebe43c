//! Descriptive statistics shared by model initialization and reporting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Sample skewness and (non-excess) kurtosis from population moments.
pub fn skew_kurt(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2))
}

/// Kendall's τ-b, O(n²).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension("Kendall tau needs equal-length series".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateInput("Kendall tau needs at least two points".into()));
    }
    let (mut s, mut ties_a, mut ties_b, mut pairs) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..n {
        for j in i + 1..n {
            let da = (a[i] - a[j]).signum() * f64::from(u8::from(a[i] != a[j]));
            let db = (b[i] - b[j]).signum() * f64::from(u8::from(b[i] != b[j]));
            s += da * db;
            pairs += 1.0;
            if da == 0.0 {
                ties_a += 1.0;
            }
            if db == 0.0 {
                ties_b += 1.0;
            }
        }
    }
    let denom = ((pairs - ties_a) * (pairs - ties_b)).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateInput(
            "Kendall tau undefined for a constant series".into(),
        ));
    }
    Ok(s / denom)
}

/// Jarque–Bera statistic and its χ²(2) p-value.
pub fn jarque_bera(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 || variance(x) == 0.0 {
        return Err(Error::DegenerateInput("Jarque-Bera needs a non-constant series".into()));
    }
    let (s, k) = skew_kurt(x);
    let jb = x.len() as f64 / 6.0 * (s * s + 0.25 * (k - 3.0).powi(2));
    let chi = ChiSquared::new(2.0).expect("valid dof");
    Ok((jb, 1.0 - chi.cdf(jb)))
}

/// Linear-interpolation empirical quantile (Hyndman–Fan type 7).
pub fn empirical_quantile(x: &[f64], p: f64) -> Result<f64> {
    if x.is_empty() || !(0.0..=1.0).contains(&p) {
        return Err(Error::DegenerateInput("quantile needs data and p in [0,1]".into()));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub n_obs: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub jarque_bera: f64,
    pub jb_pvalue: f64,
    pub quantile_01: f64,
}

/// Per-column descriptive statistics of a T×N panel.
pub fn summary_stats(names: &[String], rows: &[Vec<f64>]) -> Result<Vec<SummaryRow>> {
    let n = names.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("panel width differs from the name list".into()));
    }
    (0..n)
        .map(|i| {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let (jb, p) = jarque_bera(&col)?;
            let (s, k) = skew_kurt(&col);
            Ok(SummaryRow {
                name: names[i].clone(),
                n_obs: col.len(),
                mean: mean(&col),
                std_dev: variance(&col).sqrt(),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                skewness: s,
                kurtosis: k,
                jarque_bera: jb,
                jb_pvalue: p,
                quantile_01: empirical_quantile(&col, 0.01)?,
            })
        })
        .collect()
}

/// Pearson correlation and Kendall τ matrices (row-major N×N).
pub fn dependence_tables(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rows.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..n).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    let mut rho = vec![1.0; n * n];
    let mut tau = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (mi, mj) = (mean(&cols[i]), mean(&cols[j]));
            let c: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - mi) * (b - mj))
                .sum::<f64>()
                / cols[i].len() as f64;
            let r = c / (variance(&cols[i]) * variance(&cols[j])).sqrt();
            let k = kendall_tau(&cols[i], &cols[j])?;
            rho[i * n + j] = r;
            rho[j * n + i] = r;
            tau[i * n + j] = k;
            tau[j * n + i] = k;
        }
    }
    Ok((rho, tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_extremes_and_known_value() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        let r: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(kendall_tau(&a, &r).unwrap(), -1.0);
        // 8 concordant, 2 discordant pairs.
        let b = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert!((kendall_tau(&a, &b).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn jarque_bera_small_for_symmetric_flat_sample() {
        let x: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.618_034).fract() - 0.5).collect();
        let (s, k) = skew_kurt(&x);
        assert!(s.abs() < 0.05);
        assert!((k - 1.8).abs() < 0.05);
        let (jb, p) = jarque_bera(&x).unwrap();
        let expect = 200.0 / 6.0 * (s * s + 0.25 * (k - 3.0).powi(2));
        assert!((jb - expect).abs() < 1e-12);
        assert!(p < 0.01);
    }

    #[test]
    fn quantile_and_summary() {
        let x: Vec<f64> = (0..101).map(f64::from).collect();
        assert_eq!(empirical_quantile(&x, 0.01).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&x, 0.5).unwrap(), 50.0);
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v, -v]).collect();
        let s = summary_stats(&["a".into(), "b".into()], &rows).unwrap();
        assert_eq!(s[0].max, 100.0);
        assert_eq!(s[1].min, -100.0);
        let (rho, tau) = dependence_tables(&rows).unwrap();
        assert!((rho[1] + 1.0).abs() < 1e-12);
        assert_eq!(tau[2], -1.0);
    }
}
