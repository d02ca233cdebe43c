//! Score-driven (GAS) filter and maximum-likelihood estimation for the
//! time-varying AST marginal of a single asset.
//!
//! The unconstrained parameter θ̃ = (μ, σ̃, γ̃, ν̃) follows
//!
//! ```text
//! θ̃_{t+1} = ω + A s̃_t + B θ̃_t,      s̃_t = J(θ̃_t)⁻¹ I(θ_t)⁻¹ ∇(y_t; θ_t)
//! ```
//!
//! with diagonal A and B, θ = h(θ̃) mapping to the natural AST domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nalgebra::{Matrix4, Vector4};

use crate::ast::{fisher_matrix_tabulated, Ast, AstParams, FisherInfo, FISHER_COND_LIMIT};
use crate::error::{Error, Result};
use crate::optim::{minimize, minimize_with_grad, BfgsOptions, Minimum};
use crate::special::dln_t_const;

/// Lower bound on ν for the filter's initial value. The static fit often runs
/// into the ν → 4 boundary, where the scaled ν-score is unbounded.
const INIT_NU_MIN: f64 = 4.5;

/// Shortest series accepted by [`fit_marginal`].
pub const MIN_SERIES_LEN: usize = 200;

/// PITs are clamped to `[PIT_CLAMP, 1 − PIT_CLAMP]`.
pub const PIT_CLAMP: f64 = 1e-12;

// Numerical guards that keep the parameter map total in floating point.
const SIGMA_T_BOUND: f64 = 700.0; // also caps ln(ν−4)
const GAMMA_EPS: f64 = 1e-12;
const NU_EXCESS_MIN: f64 = 1e-12;

/// Unconstrained AST parameters (μ, ln σ, logit γ, ln(ν−4)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TildeParams {
    pub mu: f64,
    pub sigma_t: f64,
    pub gamma_t: f64,
    pub nu_t: f64,
}

impl TildeParams {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            mu: a[0],
            sigma_t: a[1],
            gamma_t: a[2],
            nu_t: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.mu, self.sigma_t, self.gamma_t, self.nu_t]
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// h(θ̃): μ = μ̃, σ = exp σ̃, γ = logistic γ̃, ν = 4 + exp ν̃.
pub fn map_params(t: &TildeParams) -> AstParams {
    AstParams {
        mu: t.mu,
        sigma: t.sigma_t.clamp(-SIGMA_T_BOUND, SIGMA_T_BOUND).exp(),
        gamma: logistic(t.gamma_t).clamp(GAMMA_EPS, 1.0 - GAMMA_EPS),
        nu: 4.0 + t.nu_t.min(SIGMA_T_BOUND).exp().max(NU_EXCESS_MIN),
    }
}

/// h⁻¹: the inverse of [`map_params`] on the valid domain.
pub fn unmap_params(p: &AstParams) -> Result<TildeParams> {
    p.validate()?;
    Ok(TildeParams {
        mu: p.mu,
        sigma_t: p.sigma.ln(),
        gamma_t: (p.gamma / (1.0 - p.gamma)).ln(),
        nu_t: (p.nu - 4.0).ln(),
    })
}

/// Diagonal of ∂h/∂θ̃.
pub fn jacobian(t: &TildeParams) -> [f64; 4] {
    let g = logistic(t.gamma_t);
    [1.0, t.sigma_t.exp(), g * (1.0 - g), t.nu_t.exp()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Inverse Fisher information.
    Fisher,
    /// Identity (plain score).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledScore {
    pub value: [f64; 4],
    /// True when Fisher scaling was requested but the information matrix was
    /// ill-conditioned, so identity scaling was used for this step.
    pub fell_back: bool,
}

/// Per-step quantities at one predicted parameter value.
struct StepEval {
    ln_pdf: f64,
    /// ∂ ln f / ∂θ̃ = ∇ ⊙ diag(J).
    dlogf: [f64; 4],
    scaled: ScaledScore,
}

fn eval_step(y: f64, t: &TildeParams, scaling: Scaling) -> Result<StepEval> {
    let p = map_params(t);
    let ast = Ast::new(p)?;
    let dlnk = dln_t_const(p.nu);
    let grad = ast.score_with(y, dlnk);
    let jac = jacobian(t);
    let mut fell_back = false;
    let mut direction = grad;
    if scaling == Scaling::Fisher {
        match solve_fisher(&p, ast.k(), dlnk, &grad) {
            Some(x) => direction = x,
            None => fell_back = true,
        }
    }
    let mut value = [0.0; 4];
    for k in 0..4 {
        value[k] = direction[k] / jac[k];
    }
    let mut dlogf = [0.0; 4];
    for k in 0..4 {
        dlogf[k] = grad[k] * jac[k];
    }
    Ok(StepEval {
        ln_pdf: ast.ln_pdf(y),
        dlogf,
        scaled: ScaledScore { value, fell_back },
    })
}

/// I⁻¹∇, or `None` when I is ill-conditioned in the 2-norm.
///
/// κ₂ ≤ ‖I‖_F‖I⁻¹‖_F, so the eigendecomposition is only needed when the
/// cheap Frobenius bound exceeds the limit.
fn solve_fisher(p: &AstParams, k: f64, dlnk: f64, grad: &[f64; 4]) -> Option<[f64; 4]> {
    let raw = fisher_matrix_tabulated(p, k, dlnk);
    let m = Matrix4::from_fn(|i, j| raw[i][j]);
    let chol = m.cholesky()?;
    let inv = chol.inverse();
    let bound = m.norm() * inv.norm();
    if !bound.is_finite() {
        return None;
    }
    if bound > FISHER_COND_LIMIT && FisherInfo::from_matrix(raw).is_ill_conditioned() {
        return None;
    }
    let x = inv * Vector4::new(grad[0], grad[1], grad[2], grad[3]);
    let out = [x[0], x[1], x[2], x[3]];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// s̃ = J⁻¹ I⁻¹ ∇ at the parameter implied by `t`.
pub fn scaled_score(y: f64, t: &TildeParams, scaling: Scaling) -> Result<ScaledScore> {
    Ok(eval_step(y, t, scaling)?.scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasCoeffs {
    pub omega: [f64; 4],
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

impl GasCoeffs {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .omega
            .iter()
            .chain(&self.alpha)
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::ParameterDomain("GAS coefficients must be finite".into()));
        }
        if let Some(b) = self.beta.iter().find(|b| b.abs() >= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "autoregressive coefficient {b} violates |beta| < 1"
            )));
        }
        Ok(())
    }

    fn norm(&self) -> f64 {
        self.omega
            .iter()
            .chain(&self.alpha)
            .chain(&self.beta)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Box applied to the filtered state. With Fisher scaling the ν-score grows
/// roughly like ν, so unbounded ν̃ paths diverge; the box keeps the
/// likelihood finite over the whole coefficient space. The ν cap also keeps
/// I_νν (which decays like ν⁻⁴) away from the identity-fallback threshold,
/// whose switch would make the likelihood discontinuous.
///
/// Each entry is (lower, upper, margin): within `margin` of a bound the state
/// saturates smoothly (tanh), so the likelihood stays differentiable.
pub const STATE_BOUNDS: [(f64, f64, f64); 4] = [
    (f64::NEG_INFINITY, f64::INFINITY, 1.0),
    (-30.0, 30.0, 5.0),
    (-8.0, 8.0, 2.0),
    (-4.605_170_185_988_091, 5.0, 1.0), // ν ∈ (4.01, 152.4)
];

/// Smooth saturation of `x` into `(lo, hi)`; returns the value and its derivative.
fn soft_clamp(x: f64, (lo, hi, m): (f64, f64, f64)) -> (f64, f64) {
    if x > hi - m {
        let th = ((x - (hi - m)) / m).tanh();
        (hi - m + m * th, 1.0 - th * th)
    } else if x < lo + m {
        let th = ((x - (lo + m)) / m).tanh();
        (lo + m + m * th, 1.0 - th * th)
    } else {
        (x, 1.0)
    }
}

/// Next state and the derivative of the saturation for each component.
fn apply_step(c: &GasCoeffs, t: &TildeParams, s: &[f64; 4]) -> (TildeParams, [f64; 4]) {
    let cur = t.to_array();
    let mut next = [0.0; 4];
    let mut slope = [1.0; 4];
    for k in 0..4 {
        let raw = c.omega[k] + c.alpha[k] * s[k] + c.beta[k] * cur[k];
        (next[k], slope[k]) = soft_clamp(raw, STATE_BOUNDS[k]);
    }
    (TildeParams::from_array(next), slope)
}

/// One filter update θ̃_{t+1} = ω + A s̃_t + B θ̃_t, saturated into [`STATE_BOUNDS`].
pub fn gas_step(t: &TildeParams, y: f64, c: &GasCoeffs, scaling: Scaling) -> Result<TildeParams> {
    let s = scaled_score(y, t, scaling)?;
    Ok(apply_step(c, t, &s.value).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Predicted parameters; row t is used for observation t, the final row is
    /// the one-step-ahead forecast beyond the sample.
    pub path: Vec<TildeParams>,
    pub loglik: f64,
    pub fallback_steps: usize,
    /// Steps at which the state entered the saturation margin of [`STATE_BOUNDS`].
    pub clamped_steps: usize,
}

/// Runs the score recursion over `series` from the initial value `init`.
pub fn gas_filter(series: &[f64], coeffs: &GasCoeffs, init: TildeParams, scaling: Scaling) -> Result<FilterOutput> {
    let mut path = Vec::with_capacity(series.len() + 1);
    let mut cur = init;
    let mut loglik = 0.0;
    let mut fallback_steps = 0;
    let mut clamped_steps = 0;
    for (t, &y) in series.iter().enumerate() {
        path.push(cur);
        let ev = eval_step(y, &cur, scaling)?;
        if !ev.ln_pdf.is_finite() {
            return Err(Error::Numerical(format!("non-finite log-density at t = {t}")));
        }
        loglik += ev.ln_pdf;
        fallback_steps += usize::from(ev.scaled.fell_back);
        let (next, slope) = apply_step(coeffs, &cur, &ev.scaled.value);
        clamped_steps += usize::from(slope.iter().any(|&d| d < 1.0));
        cur = next;
        if cur.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("filter diverged at t = {t}")));
        }
    }
    path.push(cur);
    Ok(FilterOutput {
        path,
        loglik,
        fallback_steps,
        clamped_steps,
    })
}

/// Log-likelihood and its gradient with respect to (ω, α, β), stacked in that
/// order. The state sensitivities dθ̃_t/d(ω, α, β) are propagated forward; the
/// Jacobian of the scaled score in θ̃ is taken by one-sided differences.
pub fn gas_loglik_grad(
    series: &[f64],
    coeffs: &GasCoeffs,
    init: TildeParams,
    scaling: Scaling,
) -> Result<(f64, [f64; 12])> {
    const H: f64 = 1e-6;
    let mut cur = init;
    let mut sens = [[0.0f64; 12]; 4];
    let mut loglik = 0.0;
    let mut grad = [0.0; 12];
    for (t, &y) in series.iter().enumerate() {
        let ev = eval_step(y, &cur, scaling)?;
        if !ev.ln_pdf.is_finite() {
            return Err(Error::Numerical(format!("non-finite log-density at t = {t}")));
        }
        loglik += ev.ln_pdf;
        for (k, row) in sens.iter().enumerate() {
            for j in 0..12 {
                grad[j] += ev.dlogf[k] * row[j];
            }
        }
        let s = ev.scaled.value;
        // G[i][k] = ∂s̃_i/∂θ̃_k
        let mut g = [[0.0; 4]; 4];
        let base = cur.to_array();
        for k in 0..4 {
            let mut shifted = base;
            let h = H * base[k].abs().max(1.0);
            shifted[k] += h;
            let bumped = eval_step(y, &TildeParams::from_array(shifted), scaling)?;
            let (hk, sk) = if bumped.scaled.fell_back == ev.scaled.fell_back {
                (h, bumped.scaled.value)
            } else {
                shifted[k] = base[k] - h;
                (
                    -h,
                    eval_step(y, &TildeParams::from_array(shifted), scaling)?.scaled.value,
                )
            };
            for i in 0..4 {
                g[i][k] = (sk[i] - s[i]) / hk;
            }
        }
        let (next, slope) = apply_step(coeffs, &cur, &s);
        let next_arr = next.to_array();
        let mut new_sens = [[0.0; 12]; 4];
        for i in 0..4 {
            let row = &mut new_sens[i];
            row[i] = 1.0;
            row[4 + i] = s[i];
            row[8 + i] = base[i];
            for j in 0..12 {
                let mut acc = coeffs.beta[i] * sens[i][j];
                for k in 0..4 {
                    acc += coeffs.alpha[i] * g[i][k] * sens[k][j];
                }
                row[j] = slope[i] * (row[j] + acc);
            }
        }
        sens = new_sens;
        cur = next;
        if next_arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("filter diverged at t = {t}")));
        }
    }
    Ok((loglik, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub coeffs: GasCoeffs,
    /// Predicted unconstrained parameters, `len = T + 1` (see [`FilterOutput::path`]).
    pub tilde_path: Vec<TildeParams>,
    pub loglik: f64,
    pub scaling: Scaling,
    pub fallback_steps: usize,
    pub clamped_steps: usize,
}

impl GasModel {
    /// Parameters of the one-step-ahead predictive distribution.
    pub fn forecast(&self) -> AstParams {
        map_params(self.tilde_path.last().expect("non-empty path"))
    }

    pub fn initial(&self) -> TildeParams {
        self.tilde_path[0]
    }

    /// Predictive state after additionally observing `y`.
    pub fn advance(&self, state: &TildeParams, y: f64) -> Result<TildeParams> {
        gas_step(state, y, &self.coeffs, self.scaling)
    }

    pub fn n_params(&self) -> usize {
        12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasConfig {
    pub scaling: Scaling,
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Tolerance on the infinity norm of the gradient of the mean log-likelihood.
    pub grad_tol: f64,
}

impl Default for GasConfig {
    fn default() -> Self {
        Self {
            scaling: Scaling::Fisher,
            n_starts: 5,
            seed: 0,
            max_iter: 400,
            grad_tol: 1e-4,
        }
    }
}

// Starting values for the dynamic coefficients.
const ALPHA_INIT: [f64; 4] = [0.01, 0.05, 0.01, 0.05];
const BETA_INIT: [f64; 4] = [0.2, 0.95, 0.5, 0.85];
const EXPLORE_ITER: usize = 30;

/// Unconstrained optimizer coordinates: ω, α, atanh β.
fn pack(c: &GasCoeffs) -> Vec<f64> {
    let mut v = Vec::with_capacity(12);
    v.extend_from_slice(&c.omega);
    v.extend_from_slice(&c.alpha);
    v.extend(c.beta.iter().map(|b| b.clamp(-0.999_999, 0.999_999).atanh()));
    v
}

fn unpack(v: &[f64]) -> GasCoeffs {
    let mut c = GasCoeffs {
        omega: [0.0; 4],
        alpha: [0.0; 4],
        beta: [0.0; 4],
    };
    for k in 0..4 {
        c.omega[k] = v[k];
        c.alpha[k] = v[4 + k];
        c.beta[k] = v[8 + k].tanh();
    }
    c
}

/// Unconditional (static) AST maximum likelihood in θ̃ coordinates.
pub fn fit_static(series: &[f64]) -> Result<(TildeParams, f64)> {
    check_series(series)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = (series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let nu0: f64 = 8.0;
    let k0 = crate::special::ln_t_const(nu0).exp();
    let sigma0 = sd / (k0 * (nu0 / (nu0 - 2.0)).sqrt());
    let x0 = [median, sigma0.ln(), 0.0, (nu0 - 4.0).ln()];
    let obj = |x: &[f64]| -> f64 {
        let t = TildeParams::from_array([x[0], x[1], x[2], x[3]]);
        let p = map_params(&t);
        match Ast::new(p) {
            Ok(ast) => {
                let ll: f64 = series.iter().map(|&y| ast.ln_pdf(y)).sum();
                if ll.is_finite() {
                    -ll / n
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    let m = minimize(
        obj,
        &x0,
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            ..Default::default()
        },
    );
    if !m.f.is_finite() {
        return Err(Error::Numerical("static AST fit failed".into()));
    }
    Ok((TildeParams::from_array([m.x[0], m.x[1], m.x[2], m.x[3]]), -m.f * n))
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::DegenerateInput(format!(
            "marginal fit needs at least {MIN_SERIES_LEN} observations, got {}",
            series.len()
        )));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(format!("non-finite observation at t = {i}")));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateInput(
            "series has zero variance; the scale path would collapse".into(),
        ));
    }
    Ok(())
}

struct Candidate {
    min: Minimum,
    coeffs: GasCoeffs,
}

/// Maximum-likelihood fit of the 12 GAS coefficients, initialized at the
/// static AST fit. Returns [`Error::MarginalNotConverged`] (carrying the best
/// model found) when the gradient tolerance is not met.
pub fn fit_marginal(series: &[f64], config: &GasConfig) -> Result<GasModel> {
    fit_marginal_from(series, config, None)
}

/// [`fit_marginal`] with an optional extra starting point, e.g. the previous
/// estimate when re-fitting on a rolled window.
pub fn fit_marginal_from(series: &[f64], config: &GasConfig, warm: Option<&GasCoeffs>) -> Result<GasModel> {
    check_series(series)?;
    let (mut init, _static_ll) = fit_static(series)?;
    init.nu_t = init.nu_t.max((INIT_NU_MIN - 4.0).ln());
    let n = series.len() as f64;
    let scaling = config.scaling;
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        let c = unpack(x);
        match gas_loglik_grad(series, &c, init, scaling) {
            Ok((ll, grad)) => {
                for k in 0..12 {
                    let chain = if k >= 8 { 1.0 - c.beta[k - 8].powi(2) } else { 1.0 };
                    g[k] = -grad[k] * chain / n;
                }
                -ll / n
            }
            Err(_) => {
                g.iter_mut().for_each(|v| *v = f64::NAN);
                f64::INFINITY
            }
        }
    };

    let theta = init.to_array();
    let base = |alpha: [f64; 4], beta: [f64; 4]| {
        let mut omega = [0.0; 4];
        for k in 0..4 {
            omega[k] = (1.0 - beta[k]) * theta[k];
        }
        GasCoeffs { omega, alpha, beta }
    };
    let n_starts = config.n_starts.max(1);
    let mut starts = vec![base([0.0; 4], BETA_INIT), base(ALPHA_INIT, BETA_INIT)];
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    while starts.len() < n_starts {
        let mut alpha = ALPHA_INIT;
        let mut beta = BETA_INIT;
        for k in 0..4 {
            alpha[k] *= rng.random_range(0.5..2.0);
            let z: f64 = StandardNormal.sample(&mut rng);
            beta[k] = (beta[k].atanh() + 0.5 * z).tanh();
        }
        starts.push(base(alpha, beta));
    }
    starts.truncate(n_starts);
    if let Some(w) = warm {
        starts.push(*w);
    }

    // Short exploratory runs from every start, then the best one is polished.
    let explore = BfgsOptions {
        max_iter: EXPLORE_ITER.min(config.max_iter),
        grad_tol: config.grad_tol,
        f_rel_tol: 1e-15,
        fd_step: 1e-6,
    };
    let pick = |a: Candidate, b: Candidate| {
        let better = b.min.f < a.min.f || (b.min.f == a.min.f && b.coeffs.norm() < a.coeffs.norm());
        if better {
            b
        } else {
            a
        }
    };
    let run = |x0: &[f64], opts: BfgsOptions| {
        let min = minimize_with_grad(objective, x0, opts);
        let coeffs = unpack(&min.x);
        Candidate { min, coeffs }
    };
    let scout = starts
        .iter()
        .map(|c| run(&pack(c), explore))
        .filter(|c| c.min.f.is_finite())
        .reduce(pick)
        .ok_or_else(|| Error::Numerical("no finite likelihood from any start".into()))?;
    let best = if scout.min.converged {
        scout
    } else {
        let polish = BfgsOptions {
            max_iter: config.max_iter,
            ..explore
        };
        pick(run(&scout.min.x.clone(), polish), scout)
    };

    let out = gas_filter(series, &best.coeffs, init, scaling)?;
    let model = GasModel {
        coeffs: best.coeffs,
        tilde_path: out.path,
        loglik: out.loglik,
        scaling,
        fallback_steps: out.fallback_steps,
        clamped_steps: out.clamped_steps,
    };
    if best.min.grad_norm <= config.grad_tol {
        Ok(model)
    } else {
        Err(Error::MarginalNotConverged {
            grad_norm: best.min.grad_norm,
            best: Box::new(model),
        })
    }
}

/// Like [`fit_marginal`] but accepts the best point when the optimizer stops
/// short of the gradient tolerance; returns the gradient norm alongside.
pub fn fit_marginal_lenient(
    series: &[f64],
    config: &GasConfig,
    warm: Option<&GasCoeffs>,
) -> Result<(GasModel, Option<f64>)> {
    match fit_marginal_from(series, config, warm) {
        Ok(m) => Ok((m, None)),
        Err(Error::MarginalNotConverged { best, grad_norm }) => Ok((*best, Some(grad_norm))),
        Err(e) => Err(e),
    }
}

/// Probability integral transforms u_t = F(y_t; h(θ̃_t)), clamped into (0,1).
pub fn compute_pit(series: &[f64], model: &GasModel) -> Result<Vec<f64>> {
    if model.tilde_path.len() < series.len() {
        return Err(Error::Dimension(format!(
            "model path has {} rows for {} observations",
            model.tilde_path.len(),
            series.len()
        )));
    }
    series
        .iter()
        .zip(&model.tilde_path)
        .map(|(&y, t)| {
            let ast = Ast::new(map_params(t))?;
            Ok(ast.cdf(y).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP))
        })
        .collect()
}

/// Simulates a series of length `n` from the GAS-AST model starting at `init`.
pub fn simulate_gas<R: Rng + ?Sized>(
    coeffs: &GasCoeffs,
    init: TildeParams,
    scaling: Scaling,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut cur = init;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ast = Ast::new(map_params(&cur))?;
        let y = ast.sample(rng)?;
        out.push(y);
        cur = gas_step(&cur, y, coeffs, scaling)?;
    }
    Ok(out)
}
