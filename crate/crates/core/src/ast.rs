//! Asymmetric Student-t (AST) distribution with a common tail index on both
//! sides of the mode.
//!
//! Density:
//!
//! ```text
//! f(y) = (1/σ) [1 + ((y−μ) / (2cσK(ν)))² / ν]^{−(ν+1)/2},   c = γ for y ≤ μ, c = 1−γ otherwise
//! ```
//!
//! where K(ν) is the Student-t density at zero. The left half carries mass γ.
//! Everything below is expressed through the standard Student-t on each half:
//! with z = (y−μ)/(2cσK), f(y) dy = 2c g(z) dz where g is the t(ν) density.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::{OnceLock, RwLock};

use nalgebra::{Matrix4, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::special::{dln_t_const, ln_t_const, StudentT};

/// Condition number above which a Fisher matrix is considered unusable for scaling.
pub const FISHER_COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AstParams {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub nu: f64,
}

impl AstParams {
    pub fn new(mu: f64, sigma: f64, gamma: f64, nu: f64) -> Result<Self> {
        let p = Self { mu, sigma, gamma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::ParameterDomain(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::ParameterDomain(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.nu > 4.0 && self.nu.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "nu must be finite and > 4, got {}",
                self.nu
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.sigma, self.gamma, self.nu]
    }
}

/// Evaluation kernel for one parameter value with the ν-dependent constants
/// precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Ast {
    p: AstParams,
    t: StudentT,
    k: f64,
}

impl Ast {
    pub fn new(p: AstParams) -> Result<Self> {
        p.validate()?;
        let t = StudentT::new(p.nu)?;
        Ok(Self {
            k: t.ln_k().exp(),
            t,
            p,
        })
    }

    pub fn params(&self) -> &AstParams {
        &self.p
    }

    /// K(ν).
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Half-specific scale 2cσK and the standardized residual z.
    #[inline]
    fn standardize(&self, y: f64) -> (f64, f64) {
        let c = if y <= self.p.mu {
            self.p.gamma
        } else {
            1.0 - self.p.gamma
        };
        let scale = 2.0 * c * self.p.sigma * self.k;
        (c, (y - self.p.mu) / scale)
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let (_, z) = self.standardize(y);
        -self.p.sigma.ln() - 0.5 * (self.p.nu + 1.0) * (z * z / self.p.nu).ln_1p()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        let (c, z) = self.standardize(y);
        if y <= self.p.mu {
            2.0 * c * self.t.cdf(z)
        } else {
            // 1 − 2(1−γ)·P(T > z), kept in tail form for precision near 1.
            1.0 - 2.0 * c * self.t.cdf(-z)
        }
    }

    /// Inverse CDF, reduced to the symmetric Student-t quantile on the relevant half.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::ParameterDomain(format!(
                "quantile level must lie in (0,1), got {u}"
            )));
        }
        let g = self.p.gamma;
        let base = 2.0 * self.p.sigma * self.k;
        if u <= g {
            let z = self.t.quantile(u / (2.0 * g))?;
            Ok(self.p.mu + g * base * z)
        } else {
            let upper = (1.0 - u) / (2.0 * (1.0 - g));
            let z = if upper < 0.5 { -self.t.quantile(upper)? } else { 0.0 };
            Ok(self.p.mu + (1.0 - g) * base * z)
        }
    }

    /// Gradient of ln f w.r.t. (μ, σ, γ, ν).
    pub fn score(&self, y: f64) -> [f64; 4] {
        self.score_with(y, dln_t_const(self.p.nu))
    }

    /// Score with d ln K / dν supplied by the caller.
    #[inline]
    pub(crate) fn score_with(&self, y: f64, dlnk: f64) -> [f64; 4] {
        let AstParams { sigma, gamma, nu, .. } = self.p;
        let left = y <= self.p.mu;
        let (c, z) = self.standardize(y);
        let z2 = z * z;
        let a = 1.0 + z2 / nu;
        let w = z2 / (a * nu);
        let s_mu = (nu + 1.0) * z / (a * nu * 2.0 * c * sigma * self.k);
        let s_sigma = (-1.0 + (nu + 1.0) * w) / sigma;
        let s_gamma = if left {
            (nu + 1.0) * w / gamma
        } else {
            -(nu + 1.0) * w / (1.0 - gamma)
        };
        let s_nu = -0.5 * a.ln() + (nu + 1.0) * w * (0.5 / nu + dlnk);
        [s_mu, s_sigma, s_gamma, s_nu]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.quantile(open_unit(rng))
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn ast_pdf(y: f64, p: &AstParams) -> Result<f64> {
    Ok(Ast::new(*p)?.pdf(y))
}

pub fn ast_ln_pdf(y: f64, p: &AstParams) -> Result<f64> {
    Ok(Ast::new(*p)?.ln_pdf(y))
}

pub fn ast_cdf(y: f64, p: &AstParams) -> Result<f64> {
    Ok(Ast::new(*p)?.cdf(y))
}

pub fn ast_quantile(u: f64, p: &AstParams) -> Result<f64> {
    Ast::new(*p)?.quantile(u)
}

pub fn ast_score(y: f64, p: &AstParams) -> Result<[f64; 4]> {
    Ok(Ast::new(*p)?.score(y))
}

pub fn ast_sample<R: Rng + ?Sized>(p: &AstParams, rng: &mut R) -> Result<f64> {
    Ast::new(*p)?.sample(rng)
}

/// Expectation of `h(y)` (vector valued) under the AST, integrating each half
/// in the angle variable z = √ν tan φ, where the t weight becomes K√ν cos^{ν−1}φ.
fn expect<F>(p: &AstParams, dim: usize, opts: QuadOptions, h: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let ast = Ast::new(*p)?;
    let nu = p.nu;
    let sq = nu.sqrt();
    let kw = ast.k * sq;
    let mut total = vec![0.0; dim];
    for (c, dir) in [(p.gamma, -1.0), (1.0 - p.gamma, 1.0)] {
        let scale = 2.0 * c * p.sigma * ast.k;
        let part = integrate(
            |phi: f64, out: &mut [f64]| {
                let cos = phi.cos();
                let weight = 2.0 * c * kw * ((nu - 1.0) * cos.ln()).exp();
                if weight == 0.0 {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                let y = p.mu + dir * scale * sq * phi.tan();
                h(y, out);
                out.iter_mut().for_each(|v| *v *= weight);
            },
            0.0,
            FRAC_PI_2,
            dim,
            opts,
        )?;
        total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

pub fn ast_mean(p: &AstParams) -> Result<f64> {
    Ok(expect(p, 1, QuadOptions::default(), |y, out| out[0] = y)?[0])
}

/// k-th central moment, k ≤ 4 (higher orders are not guaranteed to exist).
pub fn ast_central_moment(p: &AstParams, k: u32) -> Result<f64> {
    if k > 4 {
        return Err(Error::ParameterDomain(format!(
            "central moments are supported up to order 4, got {k}"
        )));
    }
    match k {
        0 => return Ok(1.0),
        1 => return Ok(0.0),
        _ => {}
    }
    let m = ast_mean(p)?;
    let opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-11,
        max_intervals: 8000,
    };
    Ok(expect(p, 1, opts, |y, out| out[0] = (y - m).powi(k as i32))?[0])
}

/// Fisher information of the AST together with its 2-norm condition number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherInfo {
    pub matrix: [[f64; 4]; 4],
    pub condition: f64,
}

impl FisherInfo {
    pub(crate) fn from_matrix(matrix: [[f64; 4]; 4]) -> Self {
        let m = Matrix4::from_fn(|i, j| matrix[i][j]);
        let eig = SymmetricEigen::new(m);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        Self { matrix, condition }
    }

    pub fn is_ill_conditioned(&self) -> bool {
        !(self.condition.is_finite() && self.condition <= FISHER_COND_LIMIT)
    }
}

type FisherKey = (u64, u64, u64);

fn fisher_cache() -> &'static RwLock<HashMap<FisherKey, FisherInfo>> {
    static CACHE: OnceLock<RwLock<HashMap<FisherKey, FisherInfo>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

const FISHER_CACHE_CAP: usize = 50_000;

/// E[∇∇′] by adaptive quadrature of the score outer product on each half.
/// Results are memoized per (σ, γ, ν); the matrix does not depend on μ.
pub fn ast_fisher(p: &AstParams) -> Result<FisherInfo> {
    p.validate()?;
    let key = (p.sigma.to_bits(), p.gamma.to_bits(), p.nu.to_bits());
    if let Some(hit) = fisher_cache().read().ok().and_then(|c| c.get(&key).copied()) {
        return Ok(hit);
    }
    let ast = Ast::new(*p)?;
    let dlnk = dln_t_const(p.nu);
    let opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-11,
        max_intervals: 4000,
    };
    let v = expect(p, 10, opts, |y, out| {
        let s = ast.score_with(y, dlnk);
        let mut idx = 0;
        for i in 0..4 {
            for j in i..4 {
                out[idx] = s[i] * s[j];
                idx += 1;
            }
        }
    })?;
    let mut m = [[0.0; 4]; 4];
    let mut idx = 0;
    for i in 0..4 {
        for j in i..4 {
            m[i][j] = v[idx];
            m[j][i] = v[idx];
            idx += 1;
        }
    }
    let info = FisherInfo::from_matrix(m);
    if let Ok(mut cache) = fisher_cache().write() {
        if cache.len() >= FISHER_CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, info);
    }
    Ok(info)
}

// ---------------------------------------------------------------------------
// Tabulated Fisher information for the score filter.
//
// On each half the standardized score depends on z only through
// q = z/(ν+z²), w = z²/(ν+z²) and ℓ = ln(1+z²/ν); the half weight c enters
// as explicit powers. The Fisher matrix is therefore an algebraic function of
// γ, σ and nine ν-only half-line integrals J[·] = ∫_{z≤0} (·) g(z) dz, which
// are tabulated on a grid in ln(ν−4) and interpolated.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
struct HalfIntegrals {
    q: f64,
    q2: f64,
    qw: f64,
    ql: f64,
    w: f64,
    w2: f64,
    l: f64,
    wl: f64,
    l2: f64,
}

impl HalfIntegrals {
    const LEN: usize = 9;

    fn from_slice(v: &[f64]) -> Self {
        Self {
            q: v[0],
            q2: v[1],
            qw: v[2],
            ql: v[3],
            w: v[4],
            w2: v[5],
            l: v[6],
            wl: v[7],
            l2: v[8],
        }
    }

    fn to_array(self) -> [f64; 9] {
        [
            self.q, self.q2, self.qw, self.ql, self.w, self.w2, self.l, self.wl, self.l2,
        ]
    }

    fn compute(nu: f64) -> Result<Self> {
        let k = ln_t_const(nu).exp();
        let sq = nu.sqrt();
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-12,
            max_intervals: 2000,
        };
        // z = −√ν tan φ on the left half, φ ∈ [0, π/2).
        let v = integrate(
            |phi: f64, out: &mut [f64]| {
                let (s, c) = phi.sin_cos();
                let lc = c.ln();
                let weight = k * sq * ((nu - 1.0) * lc).exp();
                let q = -s * c / sq;
                let w = s * s;
                let l = -2.0 * lc;
                let vals = [q, q * q, q * w, q * l, w, w * w, l, w * l, l * l];
                for (o, v) in out.iter_mut().zip(vals) {
                    *o = weight * v;
                }
            },
            0.0,
            FRAC_PI_2,
            Self::LEN,
            opts,
        )?;
        Ok(Self::from_slice(&v))
    }
}

/// Assembles the Fisher matrix at (σ, γ, ν) from the half-line integrals.
fn assemble_fisher(sigma: f64, gamma: f64, nu: f64, k: f64, dlnk: f64, j: &HalfIntegrals) -> [[f64; 4]; 4] {
    let a = (nu + 1.0) / (2.0 * k);
    let b = nu + 1.0;
    let e = 0.5 / nu + dlnk;
    let mut m = [[0.0; 4]; 4];
    for (c, sg) in [(gamma, 1.0), (1.0 - gamma, -1.0)] {
        m[0][0] += 2.0 * a * a / c * j.q2;
        m[0][1] += sg * 2.0 * a * (-j.q + b * j.qw);
        m[0][2] += 2.0 * a * b / c * j.qw;
        m[0][3] += sg * 2.0 * a * (-0.5 * j.ql + b * e * j.qw);
        m[1][1] += 2.0 * c * (0.5 - 2.0 * b * j.w + b * b * j.w2);
        m[1][2] += sg * 2.0 * b * (-j.w + b * j.w2);
        m[1][3] += 2.0 * c * (0.5 * j.l - b * e * j.w - 0.5 * b * j.wl + b * b * e * j.w2);
        m[2][2] += 2.0 * b * b / c * j.w2;
        m[2][3] += sg * 2.0 * b * (-0.5 * j.wl + b * e * j.w2);
        m[3][3] += 2.0 * c * (0.25 * j.l2 - b * e * j.wl + b * b * e * e * j.w2);
    }
    // Location and scale rows carry a 1/σ factor each.
    let d = [1.0 / sigma, 1.0 / sigma, 1.0, 1.0];
    for i in 0..4 {
        for jj in i..4 {
            m[i][jj] *= d[i] * d[jj];
            m[jj][i] = m[i][jj];
        }
    }
    m
}

const TABLE_LO: f64 = -7.0;
const TABLE_HI: f64 = 9.0;
const TABLE_STEP: f64 = 0.01;

struct FisherTable {
    nodes: Vec<[f64; 9]>,
}

impl FisherTable {
    fn build() -> Result<Self> {
        let n = ((TABLE_HI - TABLE_LO) / TABLE_STEP).round() as usize + 1;
        let nodes = (0..n)
            .map(|i| {
                let nu = 4.0 + (TABLE_LO + i as f64 * TABLE_STEP).exp();
                HalfIntegrals::compute(nu).map(HalfIntegrals::to_array)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes })
    }

    /// Four-point Lagrange interpolation in ln(ν−4), clamped to the grid.
    fn interpolate(&self, nu: f64) -> HalfIntegrals {
        let x = ((nu - 4.0).ln() - TABLE_LO) / TABLE_STEP;
        let last = self.nodes.len() - 1;
        let x = x.clamp(0.0, last as f64);
        let i = (x.floor() as usize).clamp(1, last - 2);
        let t = x - i as f64;
        // nodes i−1, i, i+1, i+2 at offsets −1, 0, 1, 2
        let w = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        let mut out = [0.0; 9];
        for (o, node) in w.iter().zip(&self.nodes[i - 1..=i + 2]) {
            for k in 0..9 {
                out[k] += o * node[k];
            }
        }
        HalfIntegrals::from_slice(&out)
    }
}

fn fisher_table() -> &'static FisherTable {
    static TABLE: OnceLock<FisherTable> = OnceLock::new();
    TABLE.get_or_init(|| FisherTable::build().expect("Fisher integral table"))
}

/// Fisher matrix from the interpolated integral table; used by the score filter.
pub fn ast_fisher_tabulated(p: &AstParams) -> FisherInfo {
    FisherInfo::from_matrix(fisher_matrix_tabulated(p, ln_t_const(p.nu).exp(), dln_t_const(p.nu)))
}

/// Tabulated Fisher matrix with K(ν) and d ln K/dν supplied by the caller.
pub(crate) fn fisher_matrix_tabulated(p: &AstParams, k: f64, dlnk: f64) -> [[f64; 4]; 4] {
    let j = fisher_table().interpolate(p.nu);
    assemble_fisher(p.sigma, p.gamma, p.nu, k, dlnk, &j)
}

/// Fisher matrix assembled from freshly integrated half-line integrals.
pub fn ast_fisher_assembled(p: &AstParams) -> Result<FisherInfo> {
    p.validate()?;
    let j = HalfIntegrals::compute(p.nu)?;
    let m = assemble_fisher(p.sigma, p.gamma, p.nu, ln_t_const(p.nu).exp(), dln_t_const(p.nu), &j);
    Ok(FisherInfo::from_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::function::beta::beta;

    fn p(mu: f64, sigma: f64, gamma: f64, nu: f64) -> AstParams {
        AstParams::new(mu, sigma, gamma, nu).unwrap()
    }

    #[test]
    fn density_at_mode_is_inverse_scale() {
        let q = p(0.3, 1.7, 0.35, 6.0);
        assert!((ast_pdf(0.3, &q).unwrap() - 1.0 / 1.7).abs() < 1e-15);
    }

    #[test]
    fn symmetric_when_gamma_half() {
        let q = p(1.0, 2.0, 0.5, 7.0);
        for d in [0.1, 1.0, 5.0, 40.0] {
            let a = ast_pdf(1.0 + d, &q).unwrap();
            let b = ast_pdf(1.0 - d, &q).unwrap();
            assert!((a - b).abs() < 1e-15 * a.max(1e-300));
        }
    }

    #[test]
    fn cdf_at_mode_is_gamma_and_limits() {
        let q = p(-0.5, 0.8, 0.27, 5.5);
        assert!((ast_cdf(-0.5, &q).unwrap() - 0.27).abs() < 1e-15);
        assert!(ast_cdf(-1e12, &q).unwrap() < 1e-40);
        assert!((ast_cdf(1e12, &q).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_at_gamma_is_mode() {
        let q = p(2.0, 1.3, 0.62, 9.0);
        assert!((ast_quantile(0.62, &q).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_quantile_reduces_to_scaled_t() {
        // γ = ½: y = μ + σK(ν)·t, so the 97.5% quantile is σK·t_{0.975}(ν).
        let q = p(0.0, 1.0, 0.5, 5.0);
        let k = ln_t_const(5.0).exp();
        let expected = k * 2.570_581_835_636_314;
        assert!((ast_quantile(0.975, &q).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn score_at_mode_has_zero_location_component() {
        let q = p(0.1, 1.2, 0.4, 6.0);
        assert_eq!(ast_score(0.1, &q).unwrap()[0], 0.0);
    }

    #[test]
    fn half_integrals_match_beta_closed_forms() {
        // J[w] = K√ν · ½B(3/2, ν/2), J[w²] = K√ν · ½B(5/2, ν/2)
        for nu in [4.2, 6.0, 25.0, 400.0] {
            let j = HalfIntegrals::compute(nu).unwrap();
            let kw = ln_t_const(nu).exp() * nu.sqrt();
            assert!((j.w - kw * 0.5 * beta(1.5, 0.5 * nu)).abs() < 1e-12);
            assert!((j.w2 - kw * 0.5 * beta(2.5, 0.5 * nu)).abs() < 1e-12);
        }
    }

    #[test]
    fn assembled_fisher_agrees_with_direct_quadrature() {
        for &(g, nu, s) in &[(0.5, 5.0, 1.0), (0.2, 8.0, 2.5), (0.85, 4.6, 0.7), (0.4, 60.0, 1.3)] {
            let q = p(0.0, s, g, nu);
            let direct = ast_fisher(&q).unwrap().matrix;
            let assembled = ast_fisher_assembled(&q).unwrap().matrix;
            let tab = ast_fisher_tabulated(&q).matrix;
            for i in 0..4 {
                for j in 0..4 {
                    let scale = (direct[i][i] * direct[j][j]).sqrt();
                    assert!(
                        (direct[i][j] - assembled[i][j]).abs() < 1e-9 * scale,
                        "({i},{j}) direct={} assembled={}",
                        direct[i][j],
                        assembled[i][j]
                    );
                    assert!((direct[i][j] - tab[i][j]).abs() < 1e-7 * scale);
                }
            }
        }
    }

    #[test]
    fn fisher_is_symmetric_with_positive_diagonal() {
        let f = ast_fisher(&p(0.0, 1.0, 0.3, 7.0)).unwrap();
        for i in 0..4 {
            assert!(f.matrix[i][i] > 0.0);
            for j in 0..4 {
                assert_eq!(f.matrix[i][j], f.matrix[j][i]);
            }
        }
        assert!(!f.is_ill_conditioned());
    }

    #[test]
    fn fisher_reflection_symmetry_at_gamma_half() {
        // Under y → 2μ−y with γ = ½ the density is unchanged while the μ and γ
        // score components flip sign, so the cross terms with σ and ν vanish.
        let f = ast_fisher(&p(0.0, 1.0, 0.5, 6.0)).unwrap().matrix;
        let scale = f[0][0].max(f[3][3]);
        for (i, j) in [(0, 1), (0, 3), (1, 2), (2, 3)] {
            assert!(f[i][j].abs() < 1e-10 * scale, "({i},{j}) = {}", f[i][j]);
        }
    }

    #[test]
    fn mean_and_kurtosis_for_symmetric_case() {
        let nu = 9.0;
        let k = ln_t_const(nu).exp();
        let q = p(0.0, 1.0 / k, 0.5, nu);
        assert!(ast_mean(&q).unwrap().abs() < 1e-12);
        let m2 = ast_central_moment(&q, 2).unwrap();
        let m4 = ast_central_moment(&q, 4).unwrap();
        assert!((m2 - nu / (nu - 2.0)).abs() < 1e-9);
        let kurt = m4 / (m2 * m2);
        assert!((kurt - 3.0 * (nu - 2.0) / (nu - 4.0)).abs() < 1e-8);
    }

    #[test]
    fn moments_finite_near_lower_tail_bound() {
        let q = p(0.0, 1.0, 0.3, 4.5);
        for k in 2..=4 {
            assert!(ast_central_moment(&q, k).unwrap().is_finite());
        }
        assert!(ast_central_moment(&q, 5).is_err());
    }

    #[test]
    fn cdf_matches_quadrature_of_density() {
        let q = p(0.2, 1.4, 0.3, 5.0);
        let ast = Ast::new(q).unwrap();
        let opts = QuadOptions::default();
        for y in [-6.0, -1.0, 0.0, 0.2, 0.9, 4.0, 12.0] {
            let mass = integrate_scalar(|x| ast.pdf(x), f64::NEG_INFINITY, y, opts).unwrap();
            assert!((mass - ast.cdf(y)).abs() < 1e-9, "y={y}");
        }
    }

    #[test]
    fn sampling_is_reproducible_and_left_mass_is_gamma() {
        let q = p(0.0, 1.0, 0.3, 6.0);
        let draw = |seed| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            (0..20_000)
                .map(|_| ast_sample(&q, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = draw(11);
        assert_eq!(a, draw(11));
        let n = a.len() as f64;
        let frac = a.iter().filter(|&&y| y <= 0.0).count() as f64 / n;
        assert!((frac - 0.3).abs() < 3.0 * (0.3 * 0.7 / n).sqrt());
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(AstParams::new(0.0, 0.0, 0.5, 5.0).is_err());
        assert!(AstParams::new(0.0, 1.0, 1.0, 5.0).is_err());
        assert!(AstParams::new(0.0, 1.0, 0.5, 4.0).is_err());
        let bad = AstParams {
            mu: 0.0,
            sigma: -1.0,
            gamma: 0.5,
            nu: 5.0,
        };
        assert!(ast_pdf(0.0, &bad).is_err());
        assert!(ast_quantile(1.2, &p(0.0, 1.0, 0.5, 5.0)).is_err());
    }
}
