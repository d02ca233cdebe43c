//! Economic comparison of two return series: management fee, modified
//! Sharpe ratio and circular block bootstrap p-values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::allocate::crra_utility;
use crate::error::{Error, Result};
use crate::optim::brent_root;
use crate::stats;

/// Pairs with ruin (1 + y ≤ 0) in either series are dropped; returns the
/// kept pairs and the number dropped.
fn solvent_pairs(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if a.len() != b.len() {
        return Err(Error::Dimension("paired series differ in length".into()));
    }
    if a.is_empty() {
        return Err(Error::DegenerateInput("empty return series".into()));
    }
    let mut ka = Vec::with_capacity(a.len());
    let mut kb = Vec::with_capacity(b.len());
    for (&x, &y) in a.iter().zip(b) {
        if 1.0 + x > 0.0 && 1.0 + y > 0.0 {
            ka.push(x);
            kb.push(y);
        }
    }
    let dropped = a.len() - ka.len();
    if ka.is_empty() {
        return Err(Error::Domain("every period is a ruin period".into()));
    }
    Ok((ka, kb, dropped))
}

fn mean_utility(y: &[f64], shift: f64, upsilon: f64) -> f64 {
    let mut s = 0.0;
    for &v in y {
        match crra_utility(1.0 + v - shift, upsilon) {
            Ok(u) => s += u,
            Err(_) => return f64::NAN,
        }
    }
    s / y.len() as f64
}

/// Fee ϑ solving mean 𝒰(1 + y_A) = mean 𝒰(1 + y_B − ϑ) (returns as
/// fractions). ϑ > 0 means an investor would pay to switch from A to B.
/// Ruin periods are excluded pairwise; their count is returned.
pub fn management_fee(a: &[f64], b: &[f64], upsilon: f64) -> Result<(f64, usize)> {
    let (a, b, dropped) = solvent_pairs(a, b)?;
    Ok((fee_on(&a, &b, upsilon)?, dropped))
}

fn fee_on(a: &[f64], b: &[f64], upsilon: f64) -> Result<f64> {
    let target = mean_utility(a, 0.0, upsilon);
    if !target.is_finite() {
        return Err(Error::Domain("utility undefined for series A".into()));
    }
    let g = |th: f64| mean_utility(b, th, upsilon) - target;
    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    // 1 + y_B − ϑ must stay positive: ϑ < 1 + min y_B.
    let cap = 1.0 + b.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let (lo, hi) = if g0 > 0.0 {
        // Root above 0; g decreases to −∞ as ϑ → cap.
        let mut hi = 0.5 * cap;
        let mut k = 0;
        while g(hi) > 0.0 {
            hi = 0.5 * (hi + cap);
            k += 1;
            if k > 200 {
                return Err(Error::Domain("fee root not bracketed below ruin".into()));
            }
        }
        (0.0, hi)
    } else {
        let mut lo = -0.1;
        let mut k = 0;
        while g(lo) < 0.0 {
            lo *= 2.0;
            k += 1;
            if k > 60 {
                return Err(Error::Domain("fee root not bracketed".into()));
            }
        }
        (lo, 0.0)
    };
    brent_root(g, lo, hi, 1e-15)
}

/// (σ_A/σ_B)·μ_B − μ_A; positive when B has the higher Sharpe ratio.
pub fn modified_sharpe(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension("need paired series of length ≥ 2".into()));
    }
    let (sa, sb) = (stats::variance(a).sqrt(), stats::variance(b).sqrt());
    if !(sb > 0.0) {
        return Err(Error::DegenerateInput("series B has zero volatility".into()));
    }
    Ok(sa / sb * stats::mean(b) - stats::mean(a))
}

/// ⌈S^{1/3}⌉.
pub fn default_block_len(s: usize) -> usize {
    ((s as f64).cbrt().ceil() as usize).max(1)
}

/// Circular block bootstrap of a paired series. The p-value is the share of
/// replicates with |θ* − θ̂| ≥ |θ̂|, i.e. the centred bootstrap distribution
/// serves as the null. Replicate k draws from stream k of the seed.
pub fn block_bootstrap_pvalue<F>(
    stat: F,
    a: &[f64],
    b: &[f64],
    block_len: usize,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension("paired series differ in length".into()));
    }
    if block_len == 0 || n_boot == 0 {
        return Err(Error::ParameterDomain(
            "block length and replicate count must be positive".into(),
        ));
    }
    let n = a.len();
    let theta = stat(a, b)?;
    let exceed: usize = (0..n_boot)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut ra = Vec::with_capacity(n);
            let mut rb = Vec::with_capacity(n);
            while ra.len() < n {
                let start = rng.random_range(0..n);
                for j in 0..block_len.min(n - ra.len()) {
                    let idx = (start + j) % n;
                    ra.push(a[idx]);
                    rb.push(b[idx]);
                }
            }
            match stat(&ra, &rb) {
                Ok(v) => usize::from((v - theta).abs() >= theta.abs()),
                // A replicate where the statistic is undefined counts as no evidence.
                Err(_) => 1,
            }
        })
        .sum();
    Ok((theta, exceed as f64 / n_boot as f64))
}

/// Fee statistic in the form the bootstrap expects (ruin pairs dropped).
pub fn fee_statistic(upsilon: f64) -> impl Fn(&[f64], &[f64]) -> Result<f64> + Sync {
    move |a, b| management_fee(a, b, upsilon).map(|(f, _)| f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.04..0.05)).collect()
    }

    #[test]
    fn fee_identities() {
        let a = series(1, 300);
        assert_eq!(management_fee(&a, &a, 7.0).unwrap(), (0.0, 0));
        for c in [0.001, -0.002, 0.01] {
            let b: Vec<f64> = a.iter().map(|v| v + c).collect();
            let (f, _) = management_fee(&a, &b, 7.0).unwrap();
            assert!((f - c).abs() < 1e-10, "{c} {f}");
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10 {
            let b: Vec<f64> = series(2, 300).iter().map(|v| v + 0.001 * k as f64).collect();
            let (f, _) = management_fee(&a, &b, 3.0).unwrap();
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn ruin_periods_are_excluded() {
        let a = vec![0.01, -1.5, 0.02];
        let b = vec![0.02, 0.01, 0.03];
        let (f, dropped) = management_fee(&a, &b, 3.0).unwrap();
        assert_eq!(dropped, 1);
        assert!((f - 0.01).abs() < 1e-10);
    }

    #[test]
    fn modified_sharpe_identities() {
        let a = series(3, 200);
        assert_eq!(modified_sharpe(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.003).collect();
        let msr = modified_sharpe(&a, &b).unwrap();
        assert!((msr - 0.003).abs() < 1e-15);
        for seed in 0..50 {
            let x = series(10 + seed, 50);
            let y: Vec<f64> = series(100 + seed, 50).iter().map(|v| v * 1.7 + 0.004).collect();
            let m = modified_sharpe(&x, &y).unwrap();
            let sr = |s: &[f64]| stats::mean(s) / stats::variance(s).sqrt();
            assert_eq!(m > 0.0, sr(&y) > sr(&x));
            let back = modified_sharpe(&y, &x).unwrap();
            assert_eq!(m > 0.0, back < 0.0);
        }
    }

    #[test]
    fn bootstrap_trivia() {
        let a = series(4, 100);
        let b = series(5, 100);
        let zero = |_: &[f64], _: &[f64]| Ok(0.0);
        assert_eq!(block_bootstrap_pvalue(zero, &a, &b, 5, 200, 1).unwrap().1, 1.0);
        let p1 = block_bootstrap_pvalue(fee_statistic(7.0), &a, &b, 5, 200, 9).unwrap();
        let p2 = block_bootstrap_pvalue(fee_statistic(7.0), &a, &b, 5, 200, 9).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(default_block_len(448), 8);
        assert_eq!(default_block_len(1000), 10);
    }
}
