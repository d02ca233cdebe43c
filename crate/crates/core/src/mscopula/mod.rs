//! Markov-switching Student-t copula with regime-dependent DCC dynamics and
//! exogenous covariates.
//!
//! Each regime s carries its own covariance-like recursion
//!
//! ```text
//! C_{t+1} = (C̄ − A C̄ A − B C̄ B − Γ N̄ Γ − K ξ′X̄) + A Ξ_t A + B C_t B + Γ η_t η_t′ Γ + K ξ′X_t
//! ```
//!
//! driven by the data only, so given the parameters the regime emissions are
//! deterministic and the state process is a plain hidden Markov chain.

pub mod em;
pub mod select;
pub mod sim;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gas::PIT_CLAMP;
use crate::linalg;
use crate::special::StudentT;

pub use em::{em_fit, em_fit_traced, EmConfig, EmFit};
pub use select::{aic, bic, expected_duration, select_model, SelectionRow};
pub use sim::simulate_copula_panel;

/// Default length m of the rolling window behind the forcing variable Ξ_t.
pub const DEFAULT_WINDOW: usize = 20;
pub const NU_C_MIN: f64 = 2.05;
pub const NU_C_MAX: f64 = 500.0;
/// Penalty per unit of negative eigenvalue mass of C_t.
pub const PML_WEIGHT: f64 = 1e4;
/// Eigenvalue floor used when a non-PD C_t must still yield a density.
const CLIP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DccSpec {
    /// One (α, β) pair shared by all assets.
    Simple,
    /// Asset-specific α_i, β_i.
    Generalised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    /// α_i (length 1 for the simple specification, N otherwise).
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Covariate loadings ξ (length p, possibly 0).
    pub xi: Vec<f64>,
    pub nu_c: f64,
    /// Leverage loadings γ_i, same length convention as `a`.
    pub gamma_lev: Option<Vec<f64>>,
}

fn pick(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

impl RegimeParams {
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let ok_len = |len: usize| len == 1 || len == n;
        if !ok_len(self.a.len()) || self.a.len() != self.b.len() {
            return Err(Error::Dimension(format!(
                "DCC loadings must have length 1 or {n}, got {} and {}",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.xi.len() != p {
            return Err(Error::Dimension(format!(
                "expected {p} covariate loadings, got {}",
                self.xi.len()
            )));
        }
        if let Some(g) = &self.gamma_lev {
            if g.len() != self.a.len() {
                return Err(Error::Dimension("leverage loadings length mismatch".into()));
            }
        }
        for i in 0..self.a.len() {
            let (a, b) = (self.a[i], self.b[i]);
            let g = self.gamma_lev.as_ref().map_or(0.0, |g| g[i]);
            if !(a >= 0.0 && b >= 0.0 && g >= 0.0 && a + b < 1.0) {
                return Err(Error::ParameterDomain(format!(
                    "DCC loadings need alpha, beta >= 0 and alpha + beta < 1 (got {a}, {b})"
                )));
            }
        }
        if self.xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain("covariate loadings must be finite".into()));
        }
        if !(self.nu_c > 2.0 && self.nu_c.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "copula degrees of freedom must exceed 2, got {}",
                self.nu_c
            )));
        }
        Ok(())
    }

    /// Free parameters of this regime: α, β, ν, ξ and optional γ.
    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len() + 1 + self.xi.len() + self.gamma_lev.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    /// q[l][k] = P(S_t = k | S_{t−1} = l).
    pub q: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl TransitionSpec {
    pub fn n_states(&self) -> usize {
        self.delta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.delta.len();
        if l == 0 || self.q.len() != l || self.q.iter().any(|r| r.len() != l) {
            return Err(Error::Dimension("transition matrix must be L×L with L ≥ 1".into()));
        }
        for row in self.q.iter().chain(std::iter::once(&self.delta)) {
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::ParameterDomain("probabilities must be >= 0".into()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::ParameterDomain(format!("probability vector sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Persistent chain with `stay` on the diagonal and a uniform start.
    pub fn persistent(l: usize, stay: f64) -> Self {
        let off = if l > 1 { (1.0 - stay) / (l - 1) as f64 } else { 0.0 };
        let q = (0..l)
            .map(|i| {
                (0..l)
                    .map(|j| {
                        if i == j && l > 1 {
                            stay
                        } else if l == 1 {
                            1.0
                        } else {
                            off
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            q,
            delta: vec![1.0 / l as f64; l],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsCopulaModel {
    pub regimes: Vec<RegimeParams>,
    pub trans: TransitionSpec,
    pub spec: DccSpec,
    pub leverage: bool,
    pub n_assets: usize,
    /// Rolling window m of the forcing variable.
    pub window: usize,
    /// Estimation-window covariance of the pseudo-observations (row-major N×N).
    pub cbar: Vec<f64>,
    /// Estimation-window covariate means.
    pub xbar: Vec<f64>,
    /// Estimation-window mean of η_t η_t′ (zeros without leverage).
    pub nbar: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
}

impl MsCopulaModel {
    pub fn n_states(&self) -> usize {
        self.regimes.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.xbar.len()
    }

    /// n_p = Σ_s (#α + #β + 1 + p [+ #γ]) + L(L − 1).
    pub fn n_params(&self) -> usize {
        let l = self.regimes.len();
        self.regimes.iter().map(RegimeParams::n_params).sum::<usize>() + l * (l - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets;
        if self.regimes.is_empty() || self.regimes.len() != self.trans.n_states() {
            return Err(Error::Dimension("regime count and transition matrix disagree".into()));
        }
        self.trans.validate()?;
        for r in &self.regimes {
            r.validate(n, self.xbar.len())?;
            if self.leverage != r.gamma_lev.is_some() {
                return Err(Error::ParameterDomain("leverage flag and parameters disagree".into()));
            }
            let expect = if self.spec == DccSpec::Simple { 1 } else { n };
            if r.a.len() != expect {
                return Err(Error::Dimension(format!(
                    "{:?} specification needs {expect} loadings per regime",
                    self.spec
                )));
            }
        }
        if self.cbar.len() != n * n || self.nbar.len() != n * n {
            return Err(Error::Dimension("C̄ and N̄ must be N×N".into()));
        }
        if self.window < 2 {
            return Err(Error::ParameterDomain("forcing window must be at least 2".into()));
        }
        Ok(())
    }
}

/// Rolling covariance Ξ = m⁻¹ Σ u u′ − ū ū′ of a window of pseudo-observations.
pub fn forcing_variable(window: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = window.len();
    if m == 0 {
        return Err(Error::DegenerateInput("empty forcing window".into()));
    }
    let n = window[0].len();
    if window.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("ragged forcing window".into()));
    }
    let rows: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
    let mut out = vec![0.0; n * n];
    window_cov(&rows, n, &mut out);
    Ok(out)
}

fn window_cov(rows: &[&[f64]], n: usize, out: &mut [f64]) {
    let m = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for i in 0..n {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in rows {
        for i in 0..n {
            let di = r[i] - mean[i];
            for j in i..n {
                out[i * n + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = out[i * n + j] / m;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

/// Precomputed loading products for one regime.
struct DccCoefs {
    n: usize,
    /// √(α_i α_j), √(β_i β_j), √(γ_i γ_j), row-major.
    aa: Vec<f64>,
    bb: Vec<f64>,
    gg: Option<Vec<f64>>,
    /// Intercept C̄ − AC̄A − BC̄B − ΓN̄Γ − ξ′X̄ (the last applied to every entry).
    omega: Vec<f64>,
    xi: Vec<f64>,
}

impl DccCoefs {
    fn new(r: &RegimeParams, cbar: &[f64], xbar: &[f64], nbar: &[f64], n: usize) -> Self {
        let prod = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = (pick(v, i) * pick(v, j)).sqrt();
                }
            }
            out
        };
        let aa = prod(&r.a);
        let bb = prod(&r.b);
        let gg = r.gamma_lev.as_deref().map(prod);
        let shift: f64 = r.xi.iter().zip(xbar).map(|(a, b)| a * b).sum();
        let omega = (0..n * n)
            .map(|k| {
                let lev = gg.as_ref().map_or(0.0, |g| g[k] * nbar[k]);
                cbar[k] * (1.0 - aa[k] - bb[k]) - lev - shift
            })
            .collect();
        Self {
            n,
            aa,
            bb,
            gg,
            omega,
            xi: r.xi.clone(),
        }
    }

    /// C_next = Ω + AΞA + BCB + ΓηηΓ + ξ′X_t (entrywise), symmetrized.
    fn step(&self, c: &[f64], xi_mat: &[f64], x_t: &[f64], eta: Option<&[f64]>, out: &mut [f64]) {
        let n = self.n;
        let cov: f64 = self.xi.iter().zip(x_t).map(|(a, b)| a * b).sum();
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let mut v = self.omega[k] + self.aa[k] * xi_mat[k] + self.bb[k] * c[k] + cov;
                if let (Some(g), Some(e)) = (&self.gg, eta) {
                    v += g[k] * e[i] * e[j];
                }
                out[k] = v;
            }
        }
        linalg::symmetrize(out, n);
    }
}

/// One DCC update (no leverage). Matrices are row-major N×N.
#[allow(clippy::too_many_arguments)]
pub fn dcc_step(
    c: &[f64],
    xi_mat: &[f64],
    x_t: &[f64],
    r: &RegimeParams,
    cbar: &[f64],
    xbar: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    let zeros = vec![0.0; n * n];
    leverage_dcc_step(c, xi_mat, x_t, None, r, cbar, xbar, &zeros, n)
}

/// DCC update with the leverage term Γ η η′ Γ and its intercept correction
/// Γ N̄ Γ. `eta` is ignored when `r.gamma_lev` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn leverage_dcc_step(
    c: &[f64],
    xi_mat: &[f64],
    x_t: &[f64],
    eta: Option<&[f64]>,
    r: &RegimeParams,
    cbar: &[f64],
    xbar: &[f64],
    nbar: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    for (name, m) in [("C", c), ("Xi", xi_mat), ("Cbar", cbar), ("Nbar", nbar)] {
        if m.len() != n * n {
            return Err(Error::Dimension(format!("{name} must be {n}×{n}")));
        }
    }
    if x_t.len() != r.xi.len() || xbar.len() != r.xi.len() {
        return Err(Error::Dimension("covariate vector length mismatch".into()));
    }
    let coefs = DccCoefs::new(r, cbar, xbar, nbar, n);
    let mut out = vec![0.0; n * n];
    coefs.step(c, xi_mat, x_t, eta, &mut out);
    Ok(out)
}

/// η_t: indicators of negative Student-t transforms, i.e. u_i < 1/2.
pub fn leverage_indicators(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| if v < 0.5 { 1.0 } else { 0.0 }).collect()
}

/// R = D⁻¹ C D⁻¹.
pub fn to_correlation(c: &[f64], n: usize) -> Result<Vec<f64>> {
    if c.len() != n * n {
        return Err(Error::Dimension(format!("expected {n}×{n} matrix")));
    }
    let d: Vec<f64> = (0..n).map(|i| c[i * n + i]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ParameterDomain("diagonal must be positive".into()));
    }
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            r[i * n + j] = if i == j {
                1.0
            } else {
                (c[i * n + j] / (d[i] * d[j]).sqrt()).clamp(-1.0, 1.0)
            };
        }
    }
    Ok(r)
}

/// lnΓ((ν+N)/2) + (N−1) lnΓ(ν/2) − N lnΓ((ν+1)/2).
fn copula_const(nu: f64, n: usize) -> f64 {
    let nf = n as f64;
    ln_gamma(0.5 * (nu + nf)) + (nf - 1.0) * ln_gamma(0.5 * nu) - nf * ln_gamma(0.5 * (nu + 1.0))
}

/// Log-density of the Student-t copula with correlation `r` and `nu` degrees of freedom.
pub fn t_copula_logdensity(u: &[f64], r: &[f64], nu: f64) -> Result<f64> {
    let n = u.len();
    if r.len() != n * n {
        return Err(Error::Dimension(format!("correlation must be {n}×{n}")));
    }
    let t = StudentT::new(nu)?;
    let x = u
        .iter()
        .map(|&v| t.quantile(v.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP)))
        .collect::<Result<Vec<_>>>()?;
    let mut l = vec![0.0; n * n];
    if !linalg::cholesky(r, n, &mut l) {
        return Err(Error::ParameterDomain(
            "correlation matrix is not positive definite".into(),
        ));
    }
    let mut z = x.clone();
    linalg::forward_solve(&l, n, &mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let marg: f64 = x.iter().map(|v| (v * v / nu).ln_1p()).sum();
    Ok(
        copula_const(nu, n) - 0.5 * linalg::chol_logdet(&l, n) - 0.5 * (nu + n as f64) * (quad / nu).ln_1p()
            + 0.5 * (nu + 1.0) * marg,
    )
}

/// Data-only quantities shared by every likelihood evaluation on one sample.
#[derive(Debug, Clone)]
pub struct CopulaData {
    pub n: usize,
    pub t_len: usize,
    pub p: usize,
    /// Clamped pseudo-observations, row-major T×N.
    pub u: Vec<f64>,
    /// Covariates, row-major T×p.
    pub x: Vec<f64>,
    /// Ξ_t for every t (C̄ until a full window is available), T×N².
    pub forcing: Vec<f64>,
    /// η_t, T×N.
    pub eta: Vec<f64>,
    pub cbar: Vec<f64>,
    pub xbar: Vec<f64>,
    pub nbar: Vec<f64>,
    pub window: usize,
}

fn check_panel(u: &[Vec<f64>], x: &[Vec<f64>]) -> Result<(usize, usize)> {
    if u.is_empty() {
        return Err(Error::DegenerateInput("empty pseudo-observation panel".into()));
    }
    let n = u[0].len();
    if n == 0 || u.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("pseudo-observation rows must share N ≥ 1".into()));
    }
    if let Some((t, _)) = u
        .iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !(*v > 0.0 && *v < 1.0) && !(*v == 0.0 || *v == 1.0)))
    {
        return Err(Error::Domain(format!("pseudo-observation outside [0,1] at t = {t}")));
    }
    if !x.is_empty() && x.len() != u.len() {
        return Err(Error::Dimension(format!(
            "covariates have {} rows, pseudo-observations {}",
            x.len(),
            u.len()
        )));
    }
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Dimension("covariate rows must be finite and share p".into()));
    }
    Ok((n, p))
}

impl CopulaData {
    /// Builds the sample constants (C̄, X̄, N̄) from this sample.
    pub fn new(u: &[Vec<f64>], x: &[Vec<f64>], window: usize) -> Result<Self> {
        let (n, p) = check_panel(u, x)?;
        let clamped: Vec<Vec<f64>> = u
            .iter()
            .map(|r| r.iter().map(|v| v.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP)).collect())
            .collect();
        let rows: Vec<&[f64]> = clamped.iter().map(Vec::as_slice).collect();
        let mut cbar = vec![0.0; n * n];
        window_cov(&rows, n, &mut cbar);
        let t = u.len() as f64;
        let mut xbar = vec![0.0; p];
        for r in x {
            for k in 0..p {
                xbar[k] += r[k] / t;
            }
        }
        let mut nbar = vec![0.0; n * n];
        for r in &clamped {
            let e = leverage_indicators(r);
            for i in 0..n {
                for j in 0..n {
                    nbar[i * n + j] += e[i] * e[j] / t;
                }
            }
        }
        Self::with_constants(u, x, window, cbar, xbar, nbar)
    }

    /// Builds the data with externally fixed C̄, X̄, N̄ (e.g. a fitted model's).
    pub fn with_constants(
        u: &[Vec<f64>],
        x: &[Vec<f64>],
        window: usize,
        cbar: Vec<f64>,
        xbar: Vec<f64>,
        nbar: Vec<f64>,
    ) -> Result<Self> {
        let (n, p) = check_panel(u, x)?;
        if window < 2 {
            return Err(Error::ParameterDomain("forcing window must be at least 2".into()));
        }
        if cbar.len() != n * n || nbar.len() != n * n || xbar.len() != p {
            return Err(Error::Dimension("sample constants have the wrong shape".into()));
        }
        let t_len = u.len();
        let mut flat = Vec::with_capacity(t_len * n);
        for r in u {
            flat.extend(r.iter().map(|v| v.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP)));
        }
        let xflat: Vec<f64> = x.iter().flatten().copied().collect();
        let mut forcing = vec![0.0; t_len * n * n];
        let mut eta = vec![0.0; t_len * n];
        for t in 0..t_len {
            let dst = &mut forcing[t * n * n..(t + 1) * n * n];
            if t + 1 >= window {
                let rows: Vec<&[f64]> = (t + 1 - window..=t).map(|s| &flat[s * n..(s + 1) * n]).collect();
                window_cov(&rows, n, dst);
            } else {
                dst.copy_from_slice(&cbar);
            }
            for i in 0..n {
                eta[t * n + i] = if flat[t * n + i] < 0.5 { 1.0 } else { 0.0 };
            }
        }
        Ok(Self {
            n,
            t_len,
            p,
            u: flat,
            x: xflat,
            forcing,
            eta,
            cbar,
            xbar,
            nbar,
            window,
        })
    }

    /// Same data with covariates dropped (p = 0).
    pub fn without_covariates(&self) -> Self {
        Self {
            p: 0,
            x: Vec::new(),
            xbar: Vec::new(),
            ..self.clone()
        }
    }

    fn x_row(&self, t: usize) -> &[f64] {
        &self.x[t * self.p..(t + 1) * self.p]
    }
}

/// t-quantile transforms x = T_ν⁻¹(u) and Σ_i ln(1 + x_i²/ν) for one ν.
#[derive(Debug, Clone)]
pub(crate) struct Transformed {
    pub nu: f64,
    pub x: Vec<f64>,
    pub marg: Vec<f64>,
    pub constant: f64,
}

impl Transformed {
    pub fn new(data: &CopulaData, nu: f64) -> Result<Self> {
        let t = StudentT::new(nu)?;
        let x = data.u.iter().map(|&v| t.quantile(v)).collect::<Result<Vec<_>>>()?;
        let n = data.n;
        let marg = x
            .chunks(n)
            .map(|row| row.iter().map(|v| (v * v / nu).ln_1p()).sum())
            .collect();
        Ok(Self {
            nu,
            x,
            marg,
            constant: copula_const(nu, n),
        })
    }
}

/// Per-observation copula log-densities of one regime plus the PML penalty
/// mass Σ_t |min(0, λ_min(C_t))|. Returns C_{T+1}.
pub(crate) fn regime_emissions(
    data: &CopulaData,
    r: &RegimeParams,
    tr: &Transformed,
    out: &mut [f64],
    mut path: Option<&mut Vec<Vec<f64>>>,
) -> (f64, Vec<f64>) {
    let n = data.n;
    let nf = n as f64;
    let nu = tr.nu;
    let coefs = DccCoefs::new(r, &data.cbar, &data.xbar, &data.nbar, n);
    let lev = r.gamma_lev.is_some();
    let mut c = data.cbar.clone();
    let mut next = vec![0.0; n * n];
    let mut l = vec![0.0; n * n];
    let mut z = vec![0.0; n];
    let mut penalty = 0.0;
    for t in 0..data.t_len {
        if let Some(p) = path.as_deref_mut() {
            p.push(c.clone());
        }
        let x = &tr.x[t * n..(t + 1) * n];
        let (logdet_r, quad) = if linalg::cholesky(&c, n, &mut l) {
            // chol(R) = D⁻¹ chol(C): ln|R| = ln|C| − Σ ln C_ii, and x′R⁻¹x = z′C⁻¹z, z = D x.
            let mut logdet = linalg::chol_logdet(&l, n);
            for i in 0..n {
                let d = c[i * n + i].sqrt();
                logdet -= 2.0 * d.ln();
                z[i] = x[i] * d;
            }
            linalg::forward_solve(&l, n, &mut z);
            (logdet, z.iter().map(|v| v * v).sum::<f64>())
        } else {
            penalty += linalg::min_eigenvalue(&c, n).min(0.0).abs();
            clipped_quadratic(&c, n, x)
        };
        out[t] = tr.constant - 0.5 * logdet_r - 0.5 * (nu + nf) * (quad / nu).ln_1p() + 0.5 * (nu + 1.0) * tr.marg[t];
        let eta = lev.then(|| &data.eta[t * n..(t + 1) * n]);
        coefs.step(
            &c,
            &data.forcing[t * n * n..(t + 1) * n * n],
            data.x_row(t),
            eta,
            &mut next,
        );
        std::mem::swap(&mut c, &mut next);
    }
    (penalty, c)
}

/// ln|R| and x′R⁻¹x for the correlation of the eigen-clipped C.
fn clipped_quadratic(c: &[f64], n: usize, x: &[f64]) -> (f64, f64) {
    let scale = (0..n).map(|i| c[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    let cc = linalg::clip_eigenvalues(c, n, CLIP_FLOOR * scale);
    let r = to_correlation(&cc, n).expect("clipped matrix has positive diagonal");
    let mut l = vec![0.0; n * n];
    if !linalg::cholesky(&r, n, &mut l) {
        let r2 = linalg::clip_eigenvalues(&r, n, CLIP_FLOOR);
        linalg::cholesky(&r2, n, &mut l);
    }
    let mut z = x.to_vec();
    linalg::forward_solve(&l, n, &mut z);
    (linalg::chol_logdet(&l, n), z.iter().map(|v| v * v).sum())
}

/// Forward recursion output.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// P(S_t = s | data up to t), T×L.
    pub filtered: Vec<Vec<f64>>,
    /// π_{t|t−1}, (T+1)×L; row 0 is δ and row T is the one-step forecast.
    pub predicted: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Hamilton filter in log space on precomputed emission log-densities (T×L).
pub fn forward_filter(log_emis: &[Vec<f64>], trans: &TransitionSpec) -> Result<Forward> {
    let l = trans.n_states();
    let mut pred = trans.delta.clone();
    let mut filtered = Vec::with_capacity(log_emis.len());
    let mut predicted = Vec::with_capacity(log_emis.len() + 1);
    let mut loglik = 0.0;
    let mut lp = vec![0.0; l];
    for (t, e) in log_emis.iter().enumerate() {
        predicted.push(pred.clone());
        let mut mx = f64::NEG_INFINITY;
        for s in 0..l {
            lp[s] = pred[s].ln() + e[s];
            if lp[s] > mx {
                mx = lp[s];
            }
        }
        if !mx.is_finite() {
            return Err(Error::ZeroLikelihood { t });
        }
        let total: f64 = lp.iter().map(|v| (v - mx).exp()).sum();
        let lt = mx + total.ln();
        loglik += lt;
        let filt: Vec<f64> = lp.iter().map(|v| (v - lt).exp()).collect();
        let mut next = vec![0.0; l];
        for m in 0..l {
            for s in 0..l {
                next[s] += trans.q[m][s] * filt[m];
            }
        }
        let norm: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= norm);
        filtered.push(filt);
        pred = next;
    }
    predicted.push(pred);
    Ok(Forward {
        filtered,
        predicted,
        loglik,
    })
}

/// Backward (Kim) smoother output.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    /// P(S_t = s | all data), T×L.
    pub probs: Vec<Vec<f64>>,
    /// Σ_t P(S_t = i, S_{t+1} = j | all data), L×L.
    pub transitions: Vec<Vec<f64>>,
}

pub fn backward_smoother(fwd: &Forward, trans: &TransitionSpec) -> Smoothed {
    let l = trans.n_states();
    let t_len = fwd.filtered.len();
    let mut probs = vec![vec![0.0; l]; t_len];
    let mut transitions = vec![vec![0.0; l]; l];
    if t_len == 0 {
        return Smoothed { probs, transitions };
    }
    probs[t_len - 1] = fwd.filtered[t_len - 1].clone();
    for t in (0..t_len - 1).rev() {
        let pred = &fwd.predicted[t + 1];
        let ratio: Vec<f64> = (0..l)
            .map(|j| if pred[j] > 0.0 { probs[t + 1][j] / pred[j] } else { 0.0 })
            .collect();
        let filt = &fwd.filtered[t];
        let mut row = vec![0.0; l];
        for i in 0..l {
            for j in 0..l {
                let joint = filt[i] * trans.q[i][j] * ratio[j];
                row[i] += joint;
                transitions[i][j] += joint;
            }
        }
        let norm: f64 = row.iter().sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        probs[t] = row;
    }
    Smoothed { probs, transitions }
}

/// Full filter output on a pseudo-observation panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub filtered: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Emission log-densities ln c_T(u_t; R_t^s, ν^s), T×L.
    pub log_emissions: Vec<Vec<f64>>,
    /// C_t^s for t = 1..T+1, indexed [s][t]; the last entry is the forecast.
    pub c_paths: Vec<Vec<Vec<f64>>>,
    /// Negative-eigenvalue mass per regime (zero when every C_t is PD).
    pub penalty_mass: Vec<f64>,
}

impl FilterResult {
    /// Correlation matrices R_{T+1}^s of the one-step forecast.
    pub fn forecast_correlations(&self) -> Result<Vec<Vec<f64>>> {
        self.c_paths
            .iter()
            .map(|p| {
                let c = p.last().expect("non-empty path");
                let n = (c.len() as f64).sqrt().round() as usize;
                forecast_correlation(c, n)
            })
            .collect()
    }

    pub fn forecast_probs(&self) -> &[f64] {
        self.predicted.last().expect("predicted has T+1 rows")
    }
}

/// Correlation implied by a forecast C, clipping to PD if the recursion left the cone.
pub fn forecast_correlation(c: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    if linalg::cholesky(c, n, &mut l) {
        return to_correlation(c, n);
    }
    let scale = (0..n).map(|i| c[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    to_correlation(&linalg::clip_eigenvalues(c, n, CLIP_FLOOR * scale), n)
}

/// Runs every regime's recursion and the Hamilton filter with the model's
/// estimation constants (C̄, X̄, N̄).
pub fn hamilton_filter(u: &[Vec<f64>], x: &[Vec<f64>], model: &MsCopulaModel) -> Result<FilterResult> {
    model.validate()?;
    let x_used: &[Vec<f64>] = if model.n_covariates() == 0 { &[] } else { x };
    let data = CopulaData::with_constants(
        u,
        x_used,
        model.window,
        model.cbar.clone(),
        model.xbar.clone(),
        model.nbar.clone(),
    )?;
    if data.n != model.n_assets {
        return Err(Error::Dimension(format!(
            "model has {} assets, data {}",
            model.n_assets, data.n
        )));
    }
    filter_on(&data, model)
}

pub(crate) fn filter_on(data: &CopulaData, model: &MsCopulaModel) -> Result<FilterResult> {
    let l = model.n_states();
    let t_len = data.t_len;
    let mut log_emissions = vec![vec![0.0; l]; t_len];
    let mut c_paths = Vec::with_capacity(l);
    let mut penalty_mass = Vec::with_capacity(l);
    let mut col = vec![0.0; t_len];
    for (s, r) in model.regimes.iter().enumerate() {
        let tr = Transformed::new(data, r.nu_c)?;
        let mut path = Vec::with_capacity(t_len + 1);
        let (pen, last) = regime_emissions(data, r, &tr, &mut col, Some(&mut path));
        path.push(last);
        for t in 0..t_len {
            log_emissions[t][s] = col[t];
        }
        c_paths.push(path);
        penalty_mass.push(pen);
    }
    let fwd = forward_filter(&log_emissions, &model.trans)?;
    Ok(FilterResult {
        filtered: fwd.filtered,
        predicted: fwd.predicted,
        loglik: fwd.loglik,
        log_emissions,
        c_paths,
        penalty_mass,
    })
}

/// Smoothed state probabilities (T×L).
pub fn smooth(filter: &FilterResult, model: &MsCopulaModel) -> Vec<Vec<f64>> {
    let fwd = Forward {
        filtered: filter.filtered.clone(),
        predicted: filter.predicted.clone(),
        loglik: filter.loglik,
    };
    backward_smoother(&fwd, &model.trans).probs
}
