//! Gaussian DCC(1,1) baseline with GARCH(1,1) margins, estimated by
//! two-step quasi maximum likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky, forward_solve};
use crate::optim::{minimize, BfgsOptions};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Garch {
    pub mu: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccModel {
    pub garch: Vec<Garch>,
    pub a: f64,
    pub b: f64,
    /// Row-major N×N mean of ε ε′.
    pub qbar: Vec<f64>,
}

/// Persistence split (α, β) with α, β > 0 and α + β < 1.
fn split(p1: f64, p2: f64) -> (f64, f64) {
    let m = 0.0_f64.max(p1).max(p2);
    let (e0, e1, e2) = ((-m).exp(), (p1 - m).exp(), (p2 - m).exp());
    let s = e0 + e1 + e2;
    (e1 / s, e2 / s)
}

fn unsplit(a: f64, b: f64) -> (f64, f64) {
    let c = (1.0 - a - b).max(1e-6);
    ((a.max(1e-6) / c).ln(), (b.max(1e-6) / c).ln())
}

fn garch_variances(e: &[f64], omega: f64, alpha: f64, beta: f64, h1: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(e.len() + 1);
    h.push(h1);
    for t in 0..e.len() {
        h.push(omega + alpha * e[t] * e[t] + beta * h[t]);
    }
    h
}

fn garch_nll(e: &[f64], omega: f64, alpha: f64, beta: f64, h1: f64) -> f64 {
    let h = garch_variances(e, omega, alpha, beta, h1);
    let mut s = 0.0;
    for t in 0..e.len() {
        if !(h[t] > 0.0) {
            return f64::INFINITY;
        }
        s += h[t].ln() + e[t] * e[t] / h[t];
    }
    0.5 * s
}

/// GARCH(1,1) with constant mean fixed at the sample mean.
pub fn fit_garch(y: &[f64], warm: Option<&Garch>) -> Result<Garch> {
    if y.len() < 20 {
        return Err(Error::DegenerateInput("GARCH needs at least 20 observations".into()));
    }
    let mu = stats::mean(y);
    let e: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let v = stats::variance(y);
    if !(v > 0.0) {
        return Err(Error::DegenerateInput("constant return series".into()));
    }
    let (a0, b0) = warm.map_or((0.05, 0.90), |g| (g.alpha, g.beta));
    let (p1, p2) = unsplit(a0, b0);
    let w0 = warm.map_or(v * 0.05, |g| g.omega);
    let f = |x: &[f64]| {
        let (a, b) = split(x[1], x[2]);
        garch_nll(&e, x[0].exp(), a, b, v)
    };
    let opts = BfgsOptions {
        max_iter: 200,
        grad_tol: 1e-6,
        ..Default::default()
    };
    let m = minimize(f, &[w0.ln(), p1, p2], opts);
    let (alpha, beta) = split(m.x[1], m.x[2]);
    Ok(Garch {
        mu,
        omega: m.x[0].exp(),
        alpha,
        beta,
    })
}

/// Conditional variances h_1..h_{T+1} of a fitted GARCH on `y`.
pub fn garch_path(y: &[f64], g: &Garch) -> Vec<f64> {
    let e: Vec<f64> = y.iter().map(|v| v - g.mu).collect();
    garch_variances(&e, g.omega, g.alpha, g.beta, stats::variance(y))
}

/// Q_1..Q_{T+1}, flattened N×N each.
fn dcc_q_path(eps: &[Vec<f64>], qbar: &[f64], a: f64, b: f64) -> Vec<Vec<f64>> {
    let mut q = Vec::with_capacity(eps.len() + 1);
    q.push(qbar.to_vec());
    let n = eps.first().map_or(0, Vec::len);
    for (t, e) in eps.iter().enumerate() {
        let prev = &q[t];
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = (1.0 - a - b) * qbar[i * n + j] + a * e[i] * e[j] + b * prev[i * n + j];
            }
        }
        q.push(next);
    }
    q
}

fn to_corr(q: &[f64], n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            r[i * n + j] = q[i * n + j] / (q[i * n + i] * q[j * n + j]).sqrt();
        }
    }
    r
}

/// Correlation part of the Gaussian QML objective (negated).
fn dcc_nll(eps: &[Vec<f64>], qbar: &[f64], a: f64, b: f64) -> f64 {
    let n = qbar.len().isqrt();
    let mut q = qbar.to_vec();
    let mut l = vec![0.0; n * n];
    let mut z = vec![0.0; n];
    let mut s = 0.0;
    for e in eps {
        let r = to_corr(&q, n);
        if !cholesky(&r, n, &mut l) {
            return f64::INFINITY;
        }
        z.copy_from_slice(e);
        forward_solve(&l, n, &mut z);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        let ee: f64 = e.iter().map(|v| v * v).sum();
        s += chol_logdet(&l, n) + quad - ee;
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] = (1.0 - a - b) * qbar[i * n + j] + a * e[i] * e[j] + b * q[i * n + j];
            }
        }
    }
    0.5 * s
}

/// Two-step QML on a T×N panel.
pub fn fit_dcc(panel: &[Vec<f64>], warm: Option<&DccModel>) -> Result<DccModel> {
    let n = panel.first().map_or(0, Vec::len);
    if n == 0 || panel.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("DCC needs a rectangular panel with N ≥ 1".into()));
    }
    let t_len = panel.len();
    let garch = (0..n)
        .map(|i| {
            let col: Vec<f64> = panel.iter().map(|r| r[i]).collect();
            fit_garch(&col, warm.and_then(|w| w.garch.get(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let eps = standardize(panel, &garch);
    let mut qbar = vec![0.0; n * n];
    for e in &eps {
        for i in 0..n {
            for j in 0..n {
                qbar[i * n + j] += e[i] * e[j] / t_len as f64;
            }
        }
    }
    let (a0, b0) = warm.map_or((0.02, 0.95), |w| (w.a, w.b));
    let (p1, p2) = unsplit(a0, b0);
    let f = |x: &[f64]| {
        let (a, b) = split(x[0], x[1]);
        dcc_nll(&eps, &qbar, a, b)
    };
    let opts = BfgsOptions {
        max_iter: 200,
        grad_tol: 1e-6,
        ..Default::default()
    };
    let m = minimize(f, &[p1, p2], opts);
    if !m.f.is_finite() {
        return Err(Error::Numerical("DCC likelihood is not finite".into()));
    }
    let (a, b) = split(m.x[0], m.x[1]);
    Ok(DccModel { garch, a, b, qbar })
}

fn standardize(panel: &[Vec<f64>], garch: &[Garch]) -> Vec<Vec<f64>> {
    let n = garch.len();
    let paths: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let col: Vec<f64> = panel.iter().map(|r| r[i]).collect();
            garch_path(&col, &garch[i])
        })
        .collect();
    panel
        .iter()
        .enumerate()
        .map(|(t, r)| (0..n).map(|i| (r[i] - garch[i].mu) / paths[i][t].sqrt()).collect())
        .collect()
}

/// One-step-ahead mean vector and covariance (row-major) after `panel`.
pub fn dcc_forecast(panel: &[Vec<f64>], model: &DccModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.garch.len();
    if panel.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("panel width differs from the DCC model".into()));
    }
    let eps = standardize(panel, &model.garch);
    let q = dcc_q_path(&eps, &model.qbar, model.a, model.b);
    let r = to_corr(q.last().expect("non-empty path"), n);
    let sd: Vec<f64> = (0..n)
        .map(|i| {
            let col: Vec<f64> = panel.iter().map(|row| row[i]).collect();
            garch_path(&col, &model.garch[i]).last().expect("non-empty path").sqrt()
        })
        .collect();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = r[i * n + j] * sd[i] * sd[j];
        }
    }
    Ok((model.garch.iter().map(|g| g.mu).collect(), cov))
}
