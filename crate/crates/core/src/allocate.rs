//! CRRA expected utility via a fourth-order Taylor expansion around unit
//! wealth, and its maximization over fully invested weights in a box.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentTensors;

pub const DEFAULT_BOUND: f64 = 5.0;

/// W^{1−υ}/(1−υ), or ln W at υ = 1.
pub fn crra_utility(w: f64, upsilon: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::Domain(format!("non-positive wealth {w} (ruin)")));
    }
    if !(upsilon >= 1.0) {
        return Err(Error::ParameterDomain(format!(
            "risk aversion must be >= 1, got {upsilon}"
        )));
    }
    Ok(if upsilon == 1.0 {
        w.ln()
    } else {
        w.powf(1.0 - upsilon) / (1.0 - upsilon)
    })
}

/// Central moments of the portfolio return λ′y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMoments {
    pub mu: f64,
    pub var: f64,
    pub skew3: f64,
    pub kurt4: f64,
}

/// Contractions λ′M1, λ′M2λ, λ′M3(λ⊗λ), λ′M4(λ⊗λ⊗λ) and the partial
/// contractions needed for derivatives.
struct Contractions {
    pm: PortfolioMoments,
    /// M2 λ
    m2l: Vec<f64>,
    /// M3 (λ⊗λ)
    m3ll: Vec<f64>,
    /// M4 (λ⊗λ⊗λ)
    m4lll: Vec<f64>,
}

fn contract(lambda: &[f64], t: &MomentTensors) -> Contractions {
    let n = t.n;
    let n2 = n * n;
    let mut ll = vec![0.0; n2];
    for j in 0..n {
        for k in 0..n {
            ll[j * n + k] = lambda[j] * lambda[k];
        }
    }
    let mut lll = vec![0.0; n2 * n];
    for jk in 0..n2 {
        for l in 0..n {
            lll[jk * n + l] = ll[jk] * lambda[l];
        }
    }
    let dot = |row: &[f64], v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let m2l: Vec<f64> = (0..n).map(|i| dot(&t.m2[i * n..(i + 1) * n], lambda)).collect();
    let m3ll: Vec<f64> = (0..n).map(|i| dot(&t.m3[i * n2..(i + 1) * n2], &ll)).collect();
    let m4lll: Vec<f64> = (0..n).map(|i| dot(&t.m4[i * n2 * n..(i + 1) * n2 * n], &lll)).collect();
    let pm = PortfolioMoments {
        mu: dot(&t.m1, lambda),
        var: dot(&m2l, lambda),
        skew3: dot(&m3ll, lambda),
        kurt4: dot(&m4lll, lambda),
    };
    Contractions { pm, m2l, m3ll, m4lll }
}

fn check_weights(lambda: &[f64], t: &MomentTensors) -> Result<()> {
    if lambda.len() != t.n {
        return Err(Error::Dimension(format!("{} weights for {} assets", lambda.len(), t.n)));
    }
    let n = t.n;
    if t.m1.len() != n || t.m2.len() != n * n || t.m3.len() != n.pow(3) || t.m4.len() != n.pow(4) {
        return Err(Error::Dimension("moment tensors have inconsistent shapes".into()));
    }
    Ok(())
}

pub fn portfolio_moments(lambda: &[f64], t: &MomentTensors) -> Result<PortfolioMoments> {
    check_weights(lambda, t)?;
    Ok(contract(lambda, t).pm)
}

/// Non-central moments (m¹, m², m³, m⁴) from the central ones.
pub fn noncentral_moments(pm: &PortfolioMoments) -> [f64; 4] {
    let PortfolioMoments { mu, var, skew3, kurt4 } = *pm;
    [
        mu,
        var + mu * mu,
        skew3 + 3.0 * var * mu + mu.powi(3),
        kurt4 + 4.0 * skew3 * mu + 6.0 * var * mu * mu + mu.powi(4),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub upsilon: f64,
    /// Truncation order of the expansion (2, 3 or 4).
    pub order: usize,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self { upsilon: 7.0, order: 4 }
    }
}

impl UtilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon >= 1.0 && self.upsilon.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "risk aversion must be >= 1, got {}",
                self.upsilon
            )));
        }
        if !(2..=4).contains(&self.order) {
            return Err(Error::ParameterDomain(format!(
                "expansion order must be 2, 3 or 4, got {}",
                self.order
            )));
        }
        Ok(())
    }

    /// 𝒰(1) and the Taylor coefficients 𝒰⁽ᵏ⁾(1)/k! for k = 1..4 (zeroed past `order`).
    fn coefficients(&self) -> (f64, [f64; 4]) {
        let u = self.upsilon;
        let constant = if u == 1.0 { 0.0 } else { 1.0 / (1.0 - u) };
        let mut c = [1.0, -u / 2.0, u * (u + 1.0) / 6.0, -u * (u + 1.0) * (u + 2.0) / 24.0];
        for v in c.iter_mut().skip(self.order) {
            *v = 0.0;
        }
        (constant, c)
    }
}

/// Truncated expansion 𝒰(1) + Σ_k 𝒰⁽ᵏ⁾(1)/k!·m^k.
pub fn expected_utility_taylor(lambda: &[f64], t: &MomentTensors, cfg: &UtilityConfig) -> Result<f64> {
    check_weights(lambda, t)?;
    cfg.validate()?;
    Ok(evaluate(lambda, t, cfg, None, None))
}

/// Value and gradient with respect to λ (no constraint applied).
pub fn expected_utility_gradient(lambda: &[f64], t: &MomentTensors, cfg: &UtilityConfig) -> Result<(f64, Vec<f64>)> {
    check_weights(lambda, t)?;
    cfg.validate()?;
    let mut g = vec![0.0; t.n];
    let v = evaluate(lambda, t, cfg, Some(&mut g), None);
    Ok((v, g))
}

/// Objective with optional gradient and Hessian (row-major).
fn evaluate(
    lambda: &[f64],
    t: &MomentTensors,
    cfg: &UtilityConfig,
    grad: Option<&mut [f64]>,
    hess: Option<&mut [f64]>,
) -> f64 {
    let n = t.n;
    let c = contract(lambda, t);
    let (constant, [c1, c2, c3, c4]) = cfg.coefficients();
    let PortfolioMoments { mu, var, skew3, .. } = c.pm;
    let m = noncentral_moments(&c.pm);
    let value = constant + c1 * m[0] + c2 * m[1] + c3 * m[2] + c4 * m[3];
    if grad.is_none() && hess.is_none() {
        return value;
    }
    // ∂EU/∂(μ, σ², s³, k⁴).
    let f_mu =
        c1 + 2.0 * c2 * mu + c3 * (3.0 * var + 3.0 * mu * mu) + c4 * (4.0 * skew3 + 12.0 * var * mu + 4.0 * mu.powi(3));
    let f_var = c2 + 3.0 * c3 * mu + 6.0 * c4 * mu * mu;
    let f_s = c3 + 4.0 * c4 * mu;
    let f_k = c4;
    // Gradients of the central moments.
    let g_mu = &t.m1;
    let g_var: Vec<f64> = c.m2l.iter().map(|v| 2.0 * v).collect();
    let g_s: Vec<f64> = c.m3ll.iter().map(|v| 3.0 * v).collect();
    let g_k: Vec<f64> = c.m4lll.iter().map(|v| 4.0 * v).collect();
    if let Some(g) = grad {
        for i in 0..n {
            g[i] = f_mu * g_mu[i] + f_var * g_var[i] + f_s * g_s[i] + f_k * g_k[i];
        }
    }
    if let Some(h) = hess {
        let f_mumu = 2.0 * c2 + 6.0 * c3 * mu + c4 * (12.0 * var + 12.0 * mu * mu);
        let f_muvar = 3.0 * c3 + 12.0 * c4 * mu;
        let f_mus = 4.0 * c4;
        let n2 = n * n;
        for a in 0..n {
            for b in 0..n {
                let mut h3 = 0.0;
                let mut h4 = 0.0;
                for k in 0..n {
                    h3 += t.m3[a * n2 + b * n + k] * lambda[k];
                    let base = a * n2 * n + (b * n + k) * n;
                    let inner: f64 = (0..n).map(|l| t.m4[base + l] * lambda[l]).sum();
                    h4 += inner * lambda[k];
                }
                h[a * n + b] = f_var * 2.0 * t.m2[a * n + b]
                    + f_s * 6.0 * h3
                    + f_k * 12.0 * h4
                    + f_mumu * g_mu[a] * g_mu[b]
                    + f_muvar * (g_mu[a] * g_var[b] + g_var[a] * g_mu[b])
                    + f_mus * (g_mu[a] * g_s[b] + g_s[a] * g_mu[b]);
            }
        }
    }
    value
}

/// Closed-form maximizer of the order-2 expansion m¹ − (υ/2)m² subject to
/// Σλ = 1 (no box): λ = S⁻¹(M1 − κ1)/υ with S = M2 + M1M1′.
pub fn mean_variance_weights(t: &MomentTensors, upsilon: f64) -> Result<Vec<f64>> {
    let n = t.n;
    let m1 = DVector::from_column_slice(&t.m1);
    let s = DMatrix::from_row_slice(n, n, &t.m2) + &m1 * m1.transpose();
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("second-moment matrix is not positive definite".into()))?;
    let ones = DVector::from_element(n, 1.0);
    let a = chol.solve(&m1);
    let b = chol.solve(&ones);
    let kappa = (a.sum() - upsilon) / b.sum();
    Ok(((a - b * kappa) / upsilon).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocConfig {
    pub utility: UtilityConfig,
    pub bound: f64,
    pub n_random: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            utility: UtilityConfig::default(),
            bound: DEFAULT_BOUND,
            n_random: 8,
            seed: 0,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Some weight sits on the box boundary.
    pub at_boundary: bool,
    /// Every start ended on the boundary (the unbounded problem likely has no maximum).
    pub unbounded: bool,
    /// Infinity norm of the projected gradient at the solution.
    pub projected_grad: f64,
}

/// Euclidean projection onto {Σλ = 1, |λ_i| ≤ bound}.
pub fn project(v: &[f64], bound: f64) -> Vec<f64> {
    let n = v.len();
    let clampsum = |tau: f64| v.iter().map(|x| (x - tau).clamp(-bound, bound)).sum::<f64>();
    let mut lo = v.iter().fold(f64::INFINITY, |m, x| m.min(*x)) - bound - 1.0;
    let mut hi = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) + bound + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clampsum(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    // Solve exactly on the identified piece.
    let free: Vec<usize> = (0..n).filter(|&i| (v[i] - tau).abs() < bound).collect();
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).clamp(-bound, bound)).collect();
    if !free.is_empty() {
        let fixed: f64 = (0..n).filter(|i| !free.contains(i)).map(|i| out[i]).sum();
        let tau = (free.iter().map(|&i| v[i]).sum::<f64>() + fixed - 1.0) / free.len() as f64;
        for &i in &free {
            out[i] = (v[i] - tau).clamp(-bound, bound);
        }
    }
    let resid = 1.0 - out.iter().sum::<f64>();
    if resid != 0.0 {
        let adjustable: Vec<usize> = (0..n).filter(|&i| out[i].abs() < bound).collect();
        if !adjustable.is_empty() {
            let share = resid / adjustable.len() as f64;
            for i in adjustable {
                out[i] += share;
            }
        }
    }
    out
}

/// Projected-gradient residual: λ − P(λ + g) for an ascent problem.
fn projected_gradient(lambda: &[f64], g: &[f64], bound: f64) -> f64 {
    let step: Vec<f64> = lambda.iter().zip(g).map(|(l, gi)| l + gi).collect();
    project(&step, bound)
        .iter()
        .zip(lambda)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Maximizes the truncated expected utility from several starts.
pub fn optimize_weights(t: &MomentTensors, cfg: &AllocConfig) -> Result<Allocation> {
    cfg.utility.validate()?;
    let n = t.n;
    if n < 2 {
        return Err(Error::DegenerateInput("allocation needs at least two assets".into()));
    }
    if !(cfg.bound * n as f64 >= 1.0) {
        return Err(Error::ParameterDomain(
            "weight box cannot hold a fully invested portfolio".into(),
        ));
    }
    check_weights(&vec![0.0; n], t)?;
    if t.m1
        .iter()
        .chain(&t.m2)
        .chain(&t.m3)
        .chain(&t.m4)
        .any(|v| !v.is_finite())
    {
        return Err(Error::DegenerateInput("non-finite moment tensors".into()));
    }
    let mut starts = vec![vec![1.0 / n as f64; n]];
    if let Ok(mv) = mean_variance_weights(t, cfg.utility.upsilon) {
        starts.push(project(&mv, cfg.bound));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.n_random {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) + 1.0 / n as f64).collect();
        starts.push(project(&v, cfg.bound));
    }
    let results: Vec<Allocation> = starts.iter().map(|s| ascend(t, cfg, s)).collect();
    let unbounded = results.iter().all(|r| r.at_boundary);
    let norm = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
    let best = results
        .into_iter()
        .filter(|r| r.objective.is_finite())
        .reduce(|a, b| {
            let tol = 1e-12 * a.objective.abs().max(1.0);
            if b.objective > a.objective + tol
                || ((b.objective - a.objective).abs() <= tol && norm(&b.weights) < norm(&a.weights))
            {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| Error::Numerical("no finite objective from any start".into()))?;
    Ok(Allocation { unbounded, ..best })
}

/// Active-set Newton ascent with a projected-gradient fallback.
fn ascend(t: &MomentTensors, cfg: &AllocConfig, start: &[f64]) -> Allocation {
    let n = t.n;
    let b = cfg.bound;
    let u = &cfg.utility;
    let mut lam = start.to_vec();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let mut f = evaluate(&lam, t, u, Some(&mut g), None);
    let mut bb_step = 1.0;
    for _ in 0..cfg.max_iter {
        let pg = projected_gradient(&lam, &g, b);
        if pg <= 1e-14 {
            break;
        }
        evaluate(&lam, t, u, None, Some(&mut h));
        // Free coordinates: inside the box, or on it with the gradient pointing inward.
        let kappa = mean_of(&g, &lam, b);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let r = g[i] - kappa;
                lam[i].abs() < b - 1e-12 || (lam[i] >= b - 1e-12 && r < 0.0) || (lam[i] <= -b + 1e-12 && r > 0.0)
            })
            .collect();
        let mut moved = false;
        if let Some(d) = newton_direction(&h, &g, &free, n) {
            let mut step = 1.0;
            for _ in 0..40 {
                let cand: Vec<f64> = lam.iter().zip(&d).map(|(l, di)| l + step * di).collect();
                let cand = project(&cand, b);
                let fc = evaluate(&cand, t, u, None, None);
                if fc.is_finite() && fc >= f {
                    let mut gc = vec![0.0; n];
                    f = evaluate(&cand, t, u, Some(&mut gc), None);
                    lam = cand;
                    g = gc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !moved {
            // Projected gradient ascent with a Barzilai–Borwein-scaled step.
            let mut step = bb_step;
            for _ in 0..60 {
                let cand: Vec<f64> = lam.iter().zip(&g).map(|(l, gi)| l + step * gi).collect();
                let cand = project(&cand, b);
                let fc = evaluate(&cand, t, u, None, None);
                let gain: f64 = cand.iter().zip(&lam).zip(&g).map(|((c, l), gi)| (c - l) * gi).sum();
                if fc.is_finite() && fc >= f + 1e-4 * gain && gain > 0.0 {
                    let mut gc = vec![0.0; n];
                    let fnew = evaluate(&cand, t, u, Some(&mut gc), None);
                    let s: Vec<f64> = cand.iter().zip(&lam).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| b - a).collect();
                    let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                    let ss: f64 = s.iter().map(|v| v * v).sum();
                    bb_step = if sy > 0.0 {
                        (ss / sy).clamp(1e-6, 1e12)
                    } else {
                        step * 2.0
                    };
                    f = fnew;
                    lam = cand;
                    g = gc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !moved {
            break;
        }
    }
    let at_boundary = lam.iter().any(|v| v.abs() >= b - 1e-9);
    Allocation {
        projected_grad: projected_gradient(&lam, &g, b),
        weights: lam,
        objective: f,
        at_boundary,
        unbounded: false,
    }
}

/// Multiplier estimate of the budget constraint from the interior coordinates.
fn mean_of(g: &[f64], lam: &[f64], b: f64) -> f64 {
    let inner: Vec<f64> = g
        .iter()
        .zip(lam)
        .filter(|(_, l)| l.abs() < b - 1e-12)
        .map(|(gi, _)| *gi)
        .collect();
    if inner.is_empty() {
        g.iter().sum::<f64>() / g.len() as f64
    } else {
        inner.iter().sum::<f64>() / inner.len() as f64
    }
}

/// Newton ascent step on the free coordinates under Σ d_F = 0; None when the
/// reduced Hessian is not negative definite.
fn newton_direction(h: &[f64], g: &[f64], free: &[usize], n: usize) -> Option<Vec<f64>> {
    let k = free.len();
    if k < 2 {
        return None;
    }
    // Null-space basis of 1′: columns e_j − e_k for j < k.
    let z = DMatrix::from_fn(k, k - 1, |r, c| {
        if r == c {
            1.0
        } else if r == k - 1 {
            -1.0
        } else {
            0.0
        }
    });
    let hf = DMatrix::from_fn(k, k, |r, c| h[free[r] * n + free[c]]);
    let gf = DVector::from_fn(k, |r, _| g[free[r]]);
    let neg_red = -(z.transpose() * &hf * &z);
    let chol = neg_red.cholesky()?;
    let dz = chol.solve(&(z.transpose() * gf));
    let df = &z * dz;
    let mut d = vec![0.0; n];
    for (r, &i) in free.iter().enumerate() {
        d[i] = df[r];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}
