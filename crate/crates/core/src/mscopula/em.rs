//! Expectation-conditional-maximization fit of the Markov-switching copula.
//!
//! E-step: forward filter plus Kim smoother. M-step: closed-form Q and δ, then
//! per regime a few BFGS iterations on the DCC loadings with ν fixed followed
//! by a safeguarded parabolic step in ln(ν − 2). Every partial step only
//! accepts improvements, so the observed log-likelihood is nondecreasing
//! whenever the penalty is inactive.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    backward_smoother, filter_on, forward_filter, regime_emissions, select, CopulaData, DccSpec, MsCopulaModel,
    RegimeParams, Transformed, TransitionSpec, NU_C_MAX, NU_C_MIN, PML_WEIGHT,
};
use crate::error::{Error, Result};
use crate::optim::{brent_minimize, minimize, BfgsOptions};
use crate::stats::kendall_tau;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub n_regimes: usize,
    pub spec: DccSpec,
    pub leverage: bool,
    /// Use the supplied covariates; when false ξ is dropped entirely.
    pub covariates: bool,
    pub window: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Random restarts in addition to the Kendall-τ clustering start.
    pub n_restarts: usize,
    pub seed: u64,
    pub penalty_weight: f64,
    /// BFGS iterations per partial M-step.
    pub inner_iter: usize,
    pub init_stay: f64,
    /// With a compatible warm start, run only that start (rolling refits).
    pub warm_only: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_regimes: 2,
            spec: DccSpec::Simple,
            leverage: false,
            covariates: true,
            window: super::DEFAULT_WINDOW,
            max_iter: 500,
            tol: 1e-6,
            n_restarts: 3,
            seed: 0,
            penalty_weight: PML_WEIGHT,
            inner_iter: 5,
            init_stay: 0.95,
            warm_only: false,
        }
    }
}

/// A fitted model with the log-likelihood trace of the winning run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: MsCopulaModel,
    /// Observed-data log-likelihood at the start of every iteration.
    pub trace: Vec<f64>,
    /// Whether any regime's penalty was active at that iteration.
    pub penalized: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Runs abandoned because a regime lost (almost) all occupancy.
    pub starved_runs: usize,
}

/// Fits the model and returns it alone.
pub fn em_fit(u: &[Vec<f64>], x: &[Vec<f64>], cfg: &EmConfig) -> Result<MsCopulaModel> {
    em_fit_traced(u, x, cfg, None).map(|f| f.model)
}

/// Fits the model. `warm` adds a run started from an earlier fit (its regime
/// parameters and transition matrix), which is how rolling re-estimation
/// stays cheap.
pub fn em_fit_traced(u: &[Vec<f64>], x: &[Vec<f64>], cfg: &EmConfig, warm: Option<&MsCopulaModel>) -> Result<EmFit> {
    validate_config(cfg)?;
    if u.len() <= cfg.window + 50 {
        return Err(Error::DegenerateInput(format!(
            "copula fit needs T > m + 50 = {}, got {}",
            cfg.window + 50,
            u.len()
        )));
    }
    let full = CopulaData::new(u, x, cfg.window)?;
    let data = if cfg.covariates {
        full
    } else {
        full.without_covariates()
    };
    let lay = Layout {
        groups: if cfg.spec == DccSpec::Simple { 1 } else { data.n },
        lev: cfg.leverage,
        p: data.p,
    };

    let mut starts: Vec<Start> = Vec::new();
    let warm = warm.filter(|w| compatible(w, cfg, &data));
    if let Some(w) = warm {
        starts.push(Start::Given(w.regimes.clone(), w.trans.clone()));
    }
    let fresh = warm.is_none() || !cfg.warm_only;
    if fresh {
        starts.push(Start::Cluster);
    }
    if fresh && cfg.n_regimes > 1 {
        starts.extend((0..cfg.n_restarts).map(|k| Start::Random(k as u64 + 1)));
    }

    let runs: Vec<Result<Run>> = starts
        .par_iter()
        .map(|s| run_with_retries(&data, &lay, cfg, s))
        .collect();
    let mut starved = 0;
    let mut best: Option<Run> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(run) => {
                starved += run.starved;
                // All runs share n_p, so the best BIC is the best log-likelihood.
                if best.as_ref().is_none_or(|b| run.loglik > b.loglik) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let run = match best {
        Some(r) => r,
        None => return Err(last_err.expect("at least one start")),
    };
    let model = assemble(&data, cfg, run.regimes, run.trans)?;
    Ok(EmFit {
        model,
        trace: run.trace,
        penalized: run.penalized,
        iterations: run.iterations,
        converged: run.converged,
        starved_runs: starved,
    })
}

fn validate_config(cfg: &EmConfig) -> Result<()> {
    if cfg.n_regimes == 0 {
        return Err(Error::ParameterDomain("need at least one regime".into()));
    }
    if cfg.window < 2 {
        return Err(Error::ParameterDomain("forcing window must be at least 2".into()));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 || !(cfg.penalty_weight >= 0.0) {
        return Err(Error::ParameterDomain("invalid EM tolerances".into()));
    }
    if !(cfg.init_stay > 0.0 && cfg.init_stay < 1.0) {
        return Err(Error::ParameterDomain("initial persistence must lie in (0,1)".into()));
    }
    Ok(())
}

fn compatible(w: &MsCopulaModel, cfg: &EmConfig, data: &CopulaData) -> bool {
    w.n_states() == cfg.n_regimes
        && w.spec == cfg.spec
        && w.leverage == cfg.leverage
        && w.n_assets == data.n
        && w.n_covariates() == data.p
}

/// Sorts regimes by ascending ν and builds the model with final statistics.
fn assemble(
    data: &CopulaData,
    cfg: &EmConfig,
    regimes: Vec<RegimeParams>,
    trans: TransitionSpec,
) -> Result<MsCopulaModel> {
    let l = regimes.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| regimes[a].nu_c.total_cmp(&regimes[b].nu_c));
    let q = order
        .iter()
        .map(|&i| order.iter().map(|&j| trans.q[i][j]).collect())
        .collect();
    let delta = order.iter().map(|&i| trans.delta[i]).collect();
    let mut model = MsCopulaModel {
        regimes: order.iter().map(|&i| regimes[i].clone()).collect(),
        trans: TransitionSpec { q, delta },
        spec: cfg.spec,
        leverage: cfg.leverage,
        n_assets: data.n,
        window: data.window,
        cbar: data.cbar.clone(),
        xbar: data.xbar.clone(),
        nbar: data.nbar.clone(),
        loglik: 0.0,
        aic: 0.0,
        bic: 0.0,
        n_obs: data.t_len,
    };
    model.validate()?;
    let f = filter_on(data, &model)?;
    let np = model.n_params();
    model.loglik = f.loglik;
    model.aic = select::aic(f.loglik, np);
    model.bic = select::bic(f.loglik, np, data.t_len);
    Ok(model)
}

#[derive(Debug, Clone)]
enum Start {
    Given(Vec<RegimeParams>, TransitionSpec),
    Cluster,
    Random(u64),
}

struct Run {
    regimes: Vec<RegimeParams>,
    trans: TransitionSpec,
    loglik: f64,
    trace: Vec<f64>,
    penalized: Vec<bool>,
    iterations: usize,
    converged: bool,
    starved: usize,
}

enum RunError {
    Starved,
    Failed(Error),
}

const STARVATION_RETRIES: u64 = 3;

fn run_with_retries(data: &CopulaData, lay: &Layout, cfg: &EmConfig, start: &Start) -> Result<Run> {
    let mut starved = 0;
    let mut start = start.clone();
    loop {
        match run_em(data, lay, cfg, &start) {
            Ok(mut r) => {
                r.starved = starved;
                return Ok(r);
            }
            Err(RunError::Failed(e)) => return Err(e),
            Err(RunError::Starved) => {
                starved += 1;
                warn!("copula EM: regime starvation, restarting with a perturbed transition matrix");
                if starved as u64 > STARVATION_RETRIES {
                    return Err(Error::NotConverged {
                        what: "copula EM (regime starvation)",
                        iterations: 0,
                        residual: f64::NAN,
                    });
                }
                let seed = match start {
                    Start::Random(s) => s,
                    _ => 0,
                };
                start = Start::Random(seed + 1000 * starved as u64);
            }
        }
    }
}

fn initial_params(
    data: &CopulaData,
    lay: &Layout,
    cfg: &EmConfig,
    start: &Start,
) -> Result<(Vec<RegimeParams>, TransitionSpec)> {
    let l = cfg.n_regimes;
    match start {
        Start::Given(r, t) => Ok((r.clone(), t.clone())),
        Start::Cluster => {
            let labels = tau_clusters(data, l)?;
            let mut regimes = Vec::with_capacity(l);
            for s in 0..l {
                let w: Vec<f64> = labels.iter().map(|&k| if k == s { 1.0 } else { 0.0 }).collect();
                let r0 = lay.default_regime(0.03, 0.9, 10.0, 0.01);
                let tr = Transformed::new(data, r0.nu_c)?;
                let (r, _) = fit_regime(data, lay, cfg, &r0, tr, &w, 30, true)?;
                regimes.push(r);
            }
            Ok((regimes, TransitionSpec::persistent(l, cfg.init_stay)))
        }
        Start::Random(seed) => {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let regimes = (0..l)
                .map(|_| {
                    let a = rng.random_range(0.01..0.12);
                    let b = rng.random_range(0.6..0.95_f64).min(0.98 - a);
                    let nu = rng.random_range(4.0_f64.ln()..40.0_f64.ln()).exp();
                    lay.default_regime(a, b, nu, 0.01)
                })
                .collect();
            let stay = if *seed >= 1000 {
                rng.random_range(0.8..0.99)
            } else {
                cfg.init_stay
            };
            Ok((regimes, TransitionSpec::persistent(l, stay)))
        }
    }
}

fn run_em(data: &CopulaData, lay: &Layout, cfg: &EmConfig, start: &Start) -> std::result::Result<Run, RunError> {
    let (mut regimes, mut trans) = initial_params(data, lay, cfg, start).map_err(RunError::Failed)?;
    let l = regimes.len();
    let t_len = data.t_len;
    let mut cache: Vec<Transformed> = regimes
        .iter()
        .map(|r| Transformed::new(data, r.nu_c))
        .collect::<Result<_>>()
        .map_err(RunError::Failed)?;
    let mut trace = Vec::new();
    let mut penalized = Vec::new();
    let mut converged = false;
    let mut col = vec![0.0; t_len];
    let mut emis = vec![vec![0.0; l]; t_len];
    let mut iterations = 0;
    let mut loglik = f64::NEG_INFINITY;

    for iter in 0..cfg.max_iter {
        iterations = iter + 1;
        let mut any_pen = false;
        for (s, r) in regimes.iter().enumerate() {
            let (pen, _) = regime_emissions(data, r, &cache[s], &mut col, None);
            any_pen |= pen > 0.0;
            for t in 0..t_len {
                emis[t][s] = col[t];
            }
        }
        let fwd = forward_filter(&emis, &trans).map_err(RunError::Failed)?;
        let prev = loglik;
        loglik = fwd.loglik;
        trace.push(loglik);
        penalized.push(any_pen);
        if iter > 0 && (loglik - prev).abs() < cfg.tol {
            converged = true;
            break;
        }
        let sm = backward_smoother(&fwd, &trans);
        if l > 1 {
            for s in 0..l {
                let occ: f64 = sm.probs.iter().map(|p| p[s]).sum();
                if occ < 1e-3 * t_len as f64 {
                    return Err(RunError::Starved);
                }
            }
            trans = update_transitions(&sm.transitions, &sm.probs[0]);
        }
        for s in 0..l {
            let w: Vec<f64> = sm.probs.iter().map(|p| p[s]).collect();
            let tr = std::mem::replace(&mut cache[s], dummy_transformed());
            let (r, tr) =
                fit_regime(data, lay, cfg, &regimes[s], tr, &w, cfg.inner_iter, false).map_err(RunError::Failed)?;
            regimes[s] = r;
            cache[s] = tr;
        }
    }
    Ok(Run {
        regimes,
        trans,
        loglik,
        trace,
        penalized,
        iterations,
        converged,
        starved: 0,
    })
}

fn dummy_transformed() -> Transformed {
    Transformed {
        nu: f64::NAN,
        x: Vec::new(),
        marg: Vec::new(),
        constant: 0.0,
    }
}

const Q_FLOOR: f64 = 1e-10;

fn update_transitions(joint: &[Vec<f64>], first: &[f64]) -> TransitionSpec {
    let l = joint.len();
    let q = joint
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            let mut r: Vec<f64> = if s > 0.0 {
                row.iter().map(|v| (v / s).max(Q_FLOOR)).collect()
            } else {
                vec![1.0 / l as f64; l]
            };
            let z: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= z);
            r
        })
        .collect();
    let z: f64 = first.iter().sum();
    TransitionSpec {
        q,
        delta: first.iter().map(|v| v / z).collect(),
    }
}

/// Unconstrained coordinates of one regime: per loading group a softmax
/// triple (a, b[, g]) against an implicit zero, then ξ.
struct Layout {
    groups: usize,
    lev: bool,
    p: usize,
}

const LOG_FLOOR: f64 = 1e-8;

impl Layout {
    fn width(&self) -> usize {
        if self.lev {
            3
        } else {
            2
        }
    }

    fn default_regime(&self, a: f64, b: f64, nu: f64, g: f64) -> RegimeParams {
        RegimeParams {
            a: vec![a; self.groups],
            b: vec![b; self.groups],
            xi: vec![0.0; self.p],
            nu_c: nu,
            gamma_lev: self.lev.then(|| vec![g.min(0.99 - a - b).max(0.0); self.groups]),
        }
    }

    fn pack(&self, r: &RegimeParams) -> Vec<f64> {
        let mut th = Vec::with_capacity(self.groups * self.width() + self.p);
        for i in 0..self.groups {
            let a = r.a[i].max(LOG_FLOOR);
            let b = r.b[i].max(LOG_FLOOR);
            let g = r.gamma_lev.as_ref().map_or(0.0, |g| g[i].max(LOG_FLOOR));
            let rest = (1.0 - a - b - g).max(LOG_FLOOR);
            th.push((a / rest).ln());
            th.push((b / rest).ln());
            if self.lev {
                th.push((g / rest).ln());
            }
        }
        th.extend_from_slice(&r.xi);
        th
    }

    fn unpack(&self, th: &[f64], nu: f64) -> RegimeParams {
        let w = self.width();
        let mut a = Vec::with_capacity(self.groups);
        let mut b = Vec::with_capacity(self.groups);
        let mut g = Vec::with_capacity(self.groups);
        for i in 0..self.groups {
            let z = &th[i * w..(i + 1) * w];
            let mx = z.iter().fold(0.0_f64, |m, v| m.max(*v));
            let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let denom = (-mx).exp() + e.iter().sum::<f64>();
            a.push(e[0] / denom);
            b.push(e[1] / denom);
            if self.lev {
                g.push(e[2] / denom);
            }
        }
        RegimeParams {
            a,
            b,
            xi: th[self.groups * w..].to_vec(),
            nu_c: nu,
            gamma_lev: self.lev.then_some(g),
        }
    }
}

/// Negative weighted copula log-likelihood per unit weight, penalized.
fn objective(
    data: &CopulaData,
    r: &RegimeParams,
    tr: &Transformed,
    w: &[f64],
    wsum: f64,
    pen_w: f64,
    col: &mut [f64],
) -> f64 {
    let (pen, _) = regime_emissions(data, r, tr, col, None);
    let s: f64 = w.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
    let v = -(s - pen_w * pen) / wsum;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn eta_of(nu: f64) -> f64 {
    (nu - 2.0).ln()
}

fn nu_of(eta: f64) -> f64 {
    2.0 + eta.exp()
}

/// Partial M-step for one regime. With `full` the ν search is a bounded
/// Brent minimization; otherwise a safeguarded parabolic step.
#[allow(clippy::too_many_arguments)]
fn fit_regime(
    data: &CopulaData,
    lay: &Layout,
    cfg: &EmConfig,
    r0: &RegimeParams,
    tr0: Transformed,
    w: &[f64],
    bfgs_iter: usize,
    full: bool,
) -> Result<(RegimeParams, Transformed)> {
    let wsum: f64 = w.iter().sum::<f64>().max(1e-300);
    let pen_w = cfg.penalty_weight;
    let mut col = vec![0.0; data.t_len];
    let nu = r0.nu_c;
    let tr = if tr0.nu == nu { tr0 } else { Transformed::new(data, nu)? };

    // DCC loadings with ν fixed.
    let th0 = lay.pack(r0);
    let f0 = objective(data, r0, &tr, w, wsum, pen_w, &mut col);
    let opts = BfgsOptions {
        max_iter: bfgs_iter,
        grad_tol: 1e-7,
        f_rel_tol: 1e-12,
        fd_step: 1e-5,
    };
    let m = minimize(
        |th| objective(data, &lay.unpack(th, nu), &tr, w, wsum, pen_w, &mut col),
        &th0,
        opts,
    );
    let mut best = if m.f.is_finite() && m.f < f0 {
        lay.unpack(&m.x, nu)
    } else {
        r0.clone()
    };
    let mut best_f = m.f.min(f0);

    // ν with the loadings fixed.
    let (lo, hi) = (eta_of(NU_C_MIN), eta_of(NU_C_MAX));
    let mut eval = |eta: f64| -> (f64, Option<Transformed>) {
        let Ok(t) = Transformed::new(data, nu_of(eta)) else {
            return (f64::INFINITY, None);
        };
        let r = RegimeParams {
            nu_c: t.nu,
            ..best.clone()
        };
        let v = objective(data, &r, &t, w, wsum, pen_w, &mut col);
        (v, Some(t))
    };
    let e0 = eta_of(nu);
    let mut best_tr = tr;
    let mut best_eta = e0;
    if full {
        let (e, _) = brent_minimize(|e| eval(e).0, lo, hi, 1e-3);
        let (v, t) = eval(e);
        if v < best_f {
            best_eta = e;
            best_tr = t.expect("finite objective has a transform");
        }
    } else {
        const H: f64 = 0.05;
        let em = (e0 - H).max(lo);
        let ep = (e0 + H).min(hi);
        let (fm, tm) = eval(em);
        let (fp, tp) = eval(ep);
        let mut cands = vec![(fm, em, tm), (fp, ep, tp)];
        if fm.is_finite() && fp.is_finite() {
            // Parabola through (em, fm), (e0, best_f), (ep, fp).
            let d1 = (best_f - fm) / (e0 - em);
            let d2 = (fp - best_f) / (ep - e0);
            let curv = 2.0 * (d2 - d1) / (ep - em);
            let slope = 0.5 * (d1 + d2);
            let step = if curv > 0.0 {
                -slope / curv
            } else {
                -slope.signum() * 0.5
            };
            let en = (e0 + step.clamp(-1.0, 1.0)).clamp(lo, hi);
            if (en - e0).abs() > 1e-6 && (en - em).abs() > 1e-9 && (en - ep).abs() > 1e-9 {
                let (fv, tv) = eval(en);
                cands.push((fv, en, tv));
            }
        }
        for (v, e, t) in cands {
            if v < best_f {
                best_f = v;
                best_eta = e;
                best_tr = t.expect("finite objective has a transform");
            }
        }
    }
    if best_eta != e0 {
        best.nu_c = best_tr.nu;
    }
    Ok((best, best_tr))
}

/// Rolling average pairwise Kendall τ, split into `l` groups by 1-D k-means.
fn tau_clusters(data: &CopulaData, l: usize) -> Result<Vec<usize>> {
    let t_len = data.t_len;
    if l == 1 {
        return Ok(vec![0; t_len]);
    }
    let n = data.n;
    let w = data.window.max(10).min(t_len);
    let col = |i: usize, a: usize, b: usize| -> Vec<f64> { (a..b).map(|t| data.u[t * n + i]).collect() };
    let mut tau = vec![0.0; t_len];
    for t in w - 1..t_len {
        let (a, b) = (t + 1 - w, t + 1);
        let mut s = 0.0;
        let mut k = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += kendall_tau(&col(i, a, b), &col(j, a, b)).unwrap_or(0.0);
                k += 1.0;
            }
        }
        tau[t] = if k > 0.0 { s / k } else { 0.0 };
    }
    for t in 0..w - 1 {
        tau[t] = tau[w - 1];
    }
    let mut sorted = tau.clone();
    sorted.sort_by(f64::total_cmp);
    let mut centers: Vec<f64> = (0..l)
        .map(|s| sorted[((s as f64 + 0.5) / l as f64 * t_len as f64) as usize])
        .collect();
    let mut labels = vec![0; t_len];
    for _ in 0..100 {
        let mut changed = false;
        for t in 0..t_len {
            let k = (0..l)
                .min_by(|&a, &b| (tau[t] - centers[a]).abs().total_cmp(&(tau[t] - centers[b]).abs()))
                .expect("l ≥ 1");
            if labels[t] != k {
                labels[t] = k;
                changed = true;
            }
        }
        for (s, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = (0..t_len).filter(|&t| labels[t] == s).map(|t| tau[t]).collect();
            if !members.is_empty() {
                *c = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // Keep every cluster populated so the hard-weight M-steps are defined.
    for s in 0..l {
        if !labels.contains(&s) {
            let stride = t_len / l;
            for t in s * stride..((s + 1) * stride).min(t_len) {
                labels[t] = s;
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trips() {
        let lay = Layout {
            groups: 2,
            lev: true,
            p: 1,
        };
        let r = RegimeParams {
            a: vec![0.05, 0.1],
            b: vec![0.9, 0.7],
            xi: vec![-0.2],
            nu_c: 7.0,
            gamma_lev: Some(vec![0.02, 0.01]),
        };
        let back = lay.unpack(&lay.pack(&r), 7.0);
        for i in 0..2 {
            assert!((back.a[i] - r.a[i]).abs() < 1e-12);
            assert!((back.b[i] - r.b[i]).abs() < 1e-12);
            assert!((back.gamma_lev.as_ref().unwrap()[i] - r.gamma_lev.as_ref().unwrap()[i]).abs() < 1e-12);
        }
        assert_eq!(back.xi, r.xi);
    }

    #[test]
    fn transition_update_is_row_stochastic() {
        let joint = vec![vec![8.0, 2.0], vec![0.0, 0.0]];
        let t = update_transitions(&joint, &[0.3, 0.7]);
        t.validate().unwrap();
        assert!((t.q[0][0] - 0.8).abs() < 1e-9);
        assert_eq!(t.q[1], vec![0.5, 0.5]);
    }
}
