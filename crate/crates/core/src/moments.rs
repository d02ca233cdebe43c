//! Simulation of the one-step predictive joint distribution and its first
//! four moment tensors.
//!
//! Flattened layout: M3 is N×N² with `M3[i][j*N + k] = E[d_i d_j d_k]` and M4
//! is N×N³ with `M4[i][(j*N + k)*N + l] = E[d_i d_j d_k d_l]` (0-based), where
//! d is the centred draw.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::{Ast, AstParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::special::StudentT;

pub const DEFAULT_DRAWS: usize = 50_000;
/// Draws per independently seeded sub-stream.
const CHUNK: usize = 1024;

/// Everything needed to sample y_{T+1}: predicted marginals and the copula
/// mixture (weights π_{T+1|T}, correlations R^s_{T+1}, ν^s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointForecast {
    pub marginals: Vec<AstParams>,
    pub probs: Vec<f64>,
    /// Row-major N×N correlation matrix per regime.
    pub corr: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
}

impl JointForecast {
    pub fn n_assets(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        let l = self.probs.len();
        if n == 0 || l == 0 || self.corr.len() != l || self.nu.len() != l {
            return Err(Error::Dimension(
                "forecast needs N ≥ 1 and matching regime lists".into(),
            ));
        }
        if self.corr.iter().any(|r| r.len() != n * n) {
            return Err(Error::Dimension("correlation matrices must be N×N".into()));
        }
        let s: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::ParameterDomain(
                "regime weights must be a probability vector".into(),
            ));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        if self.nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::ParameterDomain(
                "copula degrees of freedom must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// B×N matrix of draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Draws {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.n..(b + 1) * self.n]
    }
}

struct RegimeSampler {
    chol: Vec<f64>,
    t: StudentT,
    chi: ChiSquared<f64>,
}

/// Samples `b` draws from the predictive joint distribution. Chunk k uses
/// stream k of a ChaCha20 generator seeded with `seed`, so the output does
/// not depend on the number of worker threads.
pub fn simulate_joint(fc: &JointForecast, b: usize, seed: u64) -> Result<Draws> {
    fc.validate()?;
    let n = fc.n_assets();
    let samplers = fc
        .corr
        .iter()
        .zip(&fc.nu)
        .map(|(r, &nu)| {
            let mut chol = vec![0.0; n * n];
            if !linalg::cholesky(r, n, &mut chol) {
                return Err(Error::ParameterDomain(
                    "regime correlation matrix is not positive definite".into(),
                ));
            }
            Ok(RegimeSampler {
                chol,
                t: StudentT::new(nu)?,
                chi: ChiSquared::new(nu).map_err(|e| Error::ParameterDomain(e.to_string()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let margins = fc.marginals.iter().map(|p| Ast::new(*p)).collect::<Result<Vec<_>>>()?;
    let n_chunks = b.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let rows = CHUNK.min(b - k * CHUNK);
            let mut out = Vec::with_capacity(rows * n);
            let mut z = vec![0.0; n];
            for _ in 0..rows {
                let v: f64 = rng.random();
                let mut s = 0;
                let mut acc = fc.probs[0];
                while v >= acc && s + 1 < fc.probs.len() {
                    s += 1;
                    acc += fc.probs[s];
                }
                let rs = &samplers[s];
                z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                let scale = (rs.chi.sample(&mut rng) / rs.t.nu()).sqrt();
                for i in 0..n {
                    let y: f64 = (0..=i).map(|k| rs.chol[i * n + k] * z[k]).sum();
                    let u =
                        rs.t.cdf(y / scale)
                            .clamp(crate::gas::PIT_CLAMP, 1.0 - crate::gas::PIT_CLAMP);
                    out.push(margins[i].quantile(u)?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(b * n);
    for c in chunks {
        values.extend(c?);
    }
    Ok(Draws { n, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTensors {
    pub n: usize,
    pub m1: Vec<f64>,
    /// N×N, row-major.
    pub m2: Vec<f64>,
    /// N×N², row-major.
    pub m3: Vec<f64>,
    /// N×N³, row-major.
    pub m4: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
}

impl MomentTensors {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            m1: vec![0.0; n],
            m2: vec![0.0; n * n],
            m3: vec![0.0; n * n * n],
            m4: vec![0.0; n * n * n * n],
            draws: 0,
            seed: 0,
        }
    }

    /// Writes m1.csv … m4.csv into `dir`, each an N-row matrix preceded by a
    /// comment line describing the layout.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let n = self.n;
        let layouts = [
            ("m1.csv", &self.m1, 1, "# M1: N x 1 means"),
            ("m2.csv", &self.m2, n, "# M2: N x N covariance"),
            (
                "m3.csv",
                &self.m3,
                n * n,
                "# M3: N x N^2, column j*N+k (0-based) holds E[d_i d_j d_k]",
            ),
            (
                "m4.csv",
                &self.m4,
                n * n * n,
                "# M4: N x N^3, column (j*N+k)*N+l (0-based) holds E[d_i d_j d_k d_l]",
            ),
        ];
        for (name, data, cols, header) in layouts {
            let mut s = String::new();
            writeln!(s, "{header}").expect("string write");
            for row in data.chunks(cols) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(s, "{}", line.join(",")).expect("string write");
            }
            crate::io::write_atomic(&dir.join(name), s.as_bytes())?;
        }
        Ok(())
    }
}

/// Centred empirical moment tensors of the draws. Sums run in draw order,
/// so the result is reproducible bit for bit.
pub fn moment_tensors(draws: &Draws, seed: u64) -> Result<MomentTensors> {
    let n = draws.n;
    let b = draws.len();
    if n == 0 || b < 2 {
        return Err(Error::DegenerateInput("need at least two draws of N ≥ 1 assets".into()));
    }
    if draws.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite simulated return".into()));
    }
    let bf = b as f64;
    let mut t = MomentTensors::zeros(n);
    for r in 0..b {
        for i in 0..n {
            t.m1[i] += draws.row(r)[i];
        }
    }
    t.m1.iter_mut().for_each(|v| *v /= bf);
    let n2 = n * n;
    let mut d = vec![0.0; n];
    let mut dd = vec![0.0; n2];
    let mut ddd = vec![0.0; n2 * n];
    for r in 0..b {
        let row = draws.row(r);
        for i in 0..n {
            d[i] = row[i] - t.m1[i];
        }
        for j in 0..n {
            for k in 0..n {
                dd[j * n + k] = d[j] * d[k];
            }
        }
        for jk in 0..n2 {
            for l in 0..n {
                ddd[jk * n + l] = dd[jk] * d[l];
            }
        }
        for i in 0..n {
            let di = d[i];
            for (acc, v) in t.m2[i * n..(i + 1) * n].iter_mut().zip(&d) {
                *acc += di * v;
            }
            for (acc, v) in t.m3[i * n2..(i + 1) * n2].iter_mut().zip(&dd) {
                *acc += di * v;
            }
            for (acc, v) in t.m4[i * n2 * n..(i + 1) * n2 * n].iter_mut().zip(&ddd) {
                *acc += di * v;
            }
        }
    }
    for m in [&mut t.m2, &mut t.m3, &mut t.m4] {
        m.iter_mut().for_each(|v| *v /= bf);
    }
    t.draws = b;
    t.seed = seed;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indep(n: usize, nu: f64, gamma: f64) -> JointForecast {
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            r[i * n + i] = 1.0;
        }
        JointForecast {
            marginals: vec![AstParams::new(0.0, 1.0, gamma, 8.0).unwrap(); n],
            probs: vec![1.0],
            corr: vec![r],
            nu: vec![nu],
        }
    }

    #[test]
    fn univariate_tensors_are_plain_central_moments() {
        let draws = Draws {
            n: 1,
            values: vec![1.0, 2.0, 4.0, 7.0],
        };
        let t = moment_tensors(&draws, 0).unwrap();
        let m = 3.5;
        let c = |k: i32| draws.values.iter().map(|v| (v - m).powi(k)).sum::<f64>() / 4.0;
        assert_eq!(t.m1, vec![m]);
        assert!((t.m2[0] - c(2)).abs() < 1e-12);
        assert!((t.m3[0] - c(3)).abs() < 1e-12);
        assert!((t.m4[0] - c(4)).abs() < 1e-12);
    }

    #[test]
    fn tensor_index_symmetry() {
        let fc = JointForecast {
            marginals: vec![
                AstParams::new(0.1, 1.0, 0.3, 6.0).unwrap(),
                AstParams::new(0.0, 2.0, 0.6, 9.0).unwrap(),
                AstParams::new(-0.2, 0.5, 0.5, 5.0).unwrap(),
            ],
            probs: vec![1.0],
            corr: vec![vec![1.0, 0.4, 0.2, 0.4, 1.0, -0.1, 0.2, -0.1, 1.0]],
            nu: vec![7.0],
        };
        let t = moment_tensors(&simulate_joint(&fc, 4000, 2).unwrap(), 2).unwrap();
        let n = 3;
        let m3 = |i: usize, j: usize, k: usize| t.m3[i * n * n + j * n + k];
        let m4 = |i: usize, j: usize, k: usize, l: usize| t.m4[i * n * n * n + (j * n + k) * n + l];
        for (i, j, k) in [(0, 1, 2), (2, 2, 1), (1, 0, 0)] {
            let v = m3(i, j, k);
            for w in [m3(j, i, k), m3(k, j, i), m3(i, k, j)] {
                assert!((v - w).abs() <= 1e-12 * v.abs().max(1e-3));
            }
        }
        for (i, j, k, l) in [(0, 1, 2, 0), (2, 1, 1, 0)] {
            let v = m4(i, j, k, l);
            for w in [m4(l, k, j, i), m4(j, i, l, k), m4(k, l, i, j)] {
                assert!((v - w).abs() <= 1e-12 * v.abs().max(1e-3));
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(t.m2[i * n + j].to_bits(), t.m2[j * n + i].to_bits());
            }
        }
    }

    #[test]
    fn draws_are_deterministic_and_cross_correlations_vanish() {
        let fc = indep(2, 6.0, 0.5);
        let a = simulate_joint(&fc, 20_000, 11).unwrap();
        let b = simulate_joint(&fc, 20_000, 11).unwrap();
        assert_eq!(a, b);
        let t = moment_tensors(&a, 11).unwrap();
        let corr = t.m2[1] / (t.m2[0] * t.m2[3]).sqrt();
        // Independent coordinates: the sample correlation has SE ≈ 1/√B, but a
        // common ν makes them only uncorrelated, which is what is checked.
        assert!(corr.abs() < 3.0 / (20_000f64).sqrt(), "{corr}");
    }

    #[test]
    fn kendall_tau_matches_elliptical_identity() {
        let fc = JointForecast {
            corr: vec![vec![1.0, 0.6, 0.6, 1.0]],
            ..indep(2, 5.0, 0.4)
        };
        let d = simulate_joint(&fc, 3000, 5).unwrap();
        let a: Vec<f64> = (0..3000).map(|b| d.row(b)[0]).collect();
        let c: Vec<f64> = (0..3000).map(|b| d.row(b)[1]).collect();
        let tau = crate::stats::kendall_tau(&a, &c).unwrap();
        let expect = 2.0 / std::f64::consts::PI * 0.6_f64.asin();
        // Var(τ̂) ≤ 2(1 − τ²)/n for Kendall's τ.
        let se = (2.0 * (1.0 - expect * expect) / 3000.0).sqrt();
        assert!((tau - expect).abs() < 3.0 * se, "{tau} vs {expect}");
    }

    #[test]
    fn univariate_draws_match_ast_moments() {
        let p = AstParams::new(0.3, 1.2, 0.35, 9.0).unwrap();
        let fc = JointForecast {
            marginals: vec![p],
            probs: vec![1.0],
            corr: vec![vec![1.0]],
            nu: vec![4.0],
        };
        let d = simulate_joint(&fc, 100_000, 3).unwrap();
        let t = moment_tensors(&d, 3).unwrap();
        let mean = crate::ast::ast_mean(&p).unwrap();
        let var = crate::ast::ast_central_moment(&p, 2).unwrap();
        let se = (var / 100_000.0).sqrt();
        assert!((t.m1[0] - mean).abs() < 4.0 * se);
        assert!((t.m2[0] / var - 1.0).abs() < 0.03);
    }

    #[test]
    fn non_pd_correlation_is_rejected() {
        let fc = JointForecast {
            corr: vec![vec![1.0, 1.2, 1.2, 1.0]],
            ..indep(2, 6.0, 0.5)
        };
        assert!(simulate_joint(&fc, 10, 0).is_err());
    }
}
