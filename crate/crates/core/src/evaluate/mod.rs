//! Out-of-sample backtest: rolling refits, one-step joint density forecasts,
//! competing allocation rules and their economic and statistical comparison.

pub mod dcc;
pub mod gof;
pub mod metrics;
pub mod strategies;
pub mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocate::{crra_utility, AllocConfig};
use crate::ast::Ast;
use crate::error::{Error, Result};
use crate::gas::{compute_pit, fit_marginal_lenient, map_params, GasConfig, GasModel, TildeParams, PIT_CLAMP};
use crate::moments::{moment_tensors, simulate_joint, Draws, JointForecast};
use crate::mscopula::em::{em_fit_traced, EmConfig};
use crate::mscopula::{hamilton_filter, MsCopulaModel};

pub use gof::GofRow;
pub use strategies::Strategy;

use dcc::{dcc_forecast, fit_dcc, DccModel};
use metrics::{block_bootstrap_pvalue, default_block_len, fee_statistic, management_fee, modified_sharpe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// The estimation window keeps length F and rolls forward with each refit.
    FixedMoving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestSchedule {
    pub insample_len: usize,
    pub oos_len: usize,
    pub refit_every: usize,
    pub window: WindowKind,
}

impl BacktestSchedule {
    pub fn validate(&self, t_len: usize) -> Result<()> {
        if self.refit_every == 0 || self.oos_len == 0 || self.insample_len == 0 {
            return Err(Error::ParameterDomain("F, S and refit_every must be positive".into()));
        }
        if self.insample_len + self.oos_len > t_len {
            return Err(Error::ParameterDomain(format!(
                "F + S = {} exceeds the {t_len} available rows",
                self.insample_len + self.oos_len
            )));
        }
        Ok(())
    }

    /// Number of refits over the out-of-sample period.
    pub fn n_refits(&self) -> usize {
        self.oos_len.div_ceil(self.refit_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub schedule: BacktestSchedule,
    pub gas: GasConfig,
    pub copula: EmConfig,
    /// Monte Carlo draws per forecast (B).
    pub draws: usize,
    pub upsilons: Vec<f64>,
    pub strategies: Vec<Strategy>,
    /// Rows of the rolling empirical window used by NMV and NHM.
    pub rolling_window: usize,
    pub alloc: AllocConfig,
    pub n_boot: usize,
    /// Bootstrap block length; ⌈S^{1/3}⌉ when absent.
    pub block_len: Option<usize>,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(schedule: BacktestSchedule) -> Self {
        Self {
            schedule,
            gas: GasConfig::default(),
            copula: EmConfig {
                warm_only: true,
                ..EmConfig::default()
            },
            draws: crate::moments::DEFAULT_DRAWS,
            upsilons: vec![3.0, 7.0, 10.0, 20.0],
            strategies: Strategy::ALL.to_vec(),
            rolling_window: 104,
            alloc: AllocConfig::default(),
            n_boot: 2000,
            block_len: None,
            seed: 0,
        }
    }

    fn validate(&self, t_len: usize) -> Result<()> {
        self.schedule.validate(t_len)?;
        if self.upsilons.is_empty() || self.upsilons.iter().any(|u| !(*u >= 1.0)) {
            return Err(Error::ParameterDomain("risk aversion values must be ≥ 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::ParameterDomain("no strategies selected".into()));
        }
        if self.rolling_window < 2 || self.rolling_window > self.schedule.insample_len {
            return Err(Error::ParameterDomain(format!(
                "rolling window {} must lie in [2, F]",
                self.rolling_window
            )));
        }
        if self.draws < 2 || self.n_boot == 0 {
            return Err(Error::ParameterDomain("draws must be ≥ 2 and n_boot ≥ 1".into()));
        }
        Ok(())
    }
}

/// Input panel. Returns are in percent; `covariates` may be empty (p = 0) or
/// must have one row per date.
#[derive(Debug, Clone, Copy)]
pub struct BacktestData<'a> {
    pub dates: &'a [String],
    pub assets: &'a [String],
    pub returns: &'a [Vec<f64>],
    pub covariates: &'a [Vec<f64>],
}

impl BacktestData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.assets.len();
        if n < 2 {
            return Err(Error::DegenerateInput("a backtest needs at least two assets".into()));
        }
        if self.dates.len() != self.returns.len() {
            return Err(Error::Dimension("one date per return row is required".into()));
        }
        if !self.covariates.is_empty() && self.covariates.len() != self.returns.len() {
            return Err(Error::Alignment(format!(
                "{} covariate rows for {} return rows",
                self.covariates.len(),
                self.returns.len()
            )));
        }
        let p = self.covariates.first().map_or(0, Vec::len);
        for (t, date) in self.dates.iter().enumerate() {
            let r = &self.returns[t];
            if r.len() != n || r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Alignment(format!("missing return data on {date}")));
            }
            if let Some(x) = self.covariates.get(t) {
                if x.len() != p || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Alignment(format!("missing covariate data on {date}")));
                }
            }
        }
        Ok(())
    }
}

/// Mixes a master seed with a tag and an index (SplitMix64 finalizer).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z =
        master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SIM: u64 = 1;
const TAG_BOOT: u64 = 2;

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

/// GAS fits of every column, in parallel; each entry carries the final
/// gradient norm when the optimizer stopped short of its tolerance.
pub fn fit_marginals(
    rows: &[Vec<f64>],
    cfg: &GasConfig,
    warm: Option<&[GasModel]>,
) -> Result<Vec<(GasModel, Option<f64>)>> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n)
        .into_par_iter()
        .map(|i| fit_marginal_lenient(&column(rows, i), cfg, warm.map(|w| &w[i].coeffs)))
        .collect()
}

/// T×N PIT panel of the fitted marginals.
pub fn marginal_pits(rows: &[Vec<f64>], models: &[GasModel]) -> Result<Vec<Vec<f64>>> {
    let cols = models
        .iter()
        .enumerate()
        .map(|(i, m)| compute_pit(&column(rows, i), m))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..rows.len()).map(|t| cols.iter().map(|c| c[t]).collect()).collect())
}

/// Joint one-step forecast from marginal states and a copula filter run.
pub fn joint_forecast(
    states: &[TildeParams],
    pits: &[Vec<f64>],
    covariates: &[Vec<f64>],
    copula: &MsCopulaModel,
) -> Result<JointForecast> {
    let filt = hamilton_filter(pits, covariates, copula)?;
    let fc = JointForecast {
        marginals: states.iter().map(map_params).collect(),
        probs: filt.forecast_probs().to_vec(),
        corr: filt.forecast_correlations()?,
        nu: copula.regimes.iter().map(|r| r.nu_c).collect(),
    };
    fc.validate()?;
    Ok(fc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub upsilon: f64,
    /// S×N weights.
    pub weights: Vec<Vec<f64>>,
    /// Realized λ′y as a fraction of wealth.
    pub returns: Vec<f64>,
    /// CRRA utility of 1 + return; `None` for ruin periods.
    pub utilities: Vec<Option<f64>>,
    pub average_weights: Vec<f64>,
    pub ruin_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub upsilon: f64,
    /// Strategy A; B is always FDDM.
    pub competitor: Strategy,
    pub fee: Option<f64>,
    pub fee_pvalue: Option<f64>,
    pub msr: Option<f64>,
    pub msr_pvalue: Option<f64>,
    /// Periods dropped from the fee because either strategy was ruined.
    pub excluded_periods: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitRecord {
    pub step: usize,
    pub date: String,
    /// Final gradient norm of marginals whose optimizer stopped early.
    pub marginal_grad_norms: Vec<Option<f64>>,
    pub copula_loglik: Option<f64>,
    pub copula_iterations: Option<usize>,
    pub copula_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub assets: Vec<String>,
    /// Dates of the S out-of-sample rows.
    pub dates: Vec<String>,
    pub results: Vec<StrategyResult>,
    pub comparisons: Vec<Comparison>,
    pub gof: Vec<GofRow>,
    pub gof_error: Option<String>,
    pub refits: Vec<RefitRecord>,
    pub config: BacktestConfig,
    /// Models of the first refit (on rows 0..F), kept for reproduction checks.
    pub initial_marginals: Vec<GasModel>,
    pub initial_copula: Option<MsCopulaModel>,
}

impl BacktestReport {
    pub fn result(&self, s: Strategy, upsilon: f64) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.strategy == s && r.upsilon == upsilon)
    }

    /// Long-format per-period table: one row per (date, strategy, υ).
    pub fn periods_csv(&self) -> String {
        let mut s = String::from("date,strategy,upsilon,return,utility");
        for a in &self.assets {
            write!(s, ",w_{a}").expect("string write");
        }
        s.push('\n');
        for r in &self.results {
            for (t, date) in self.dates.iter().enumerate() {
                let u = r.utilities[t].map_or(String::from("NA"), |v| format!("{v:e}"));
                write!(s, "{date},{},{},{:e},{u}", r.strategy.label(), r.upsilon, r.returns[t]).expect("string write");
                for w in &r.weights[t] {
                    write!(s, ",{w:e}").expect("string write");
                }
                s.push('\n');
            }
        }
        s
    }

    /// Summary tables (average weights, fees, mSR, GoF, refit log) as JSON.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct AvgRow<'a> {
            strategy: Strategy,
            upsilon: f64,
            average_weights: &'a [f64],
            mean_return: f64,
            ruin_periods: usize,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            assets: &'a [String],
            oos_start: Option<&'a String>,
            oos_end: Option<&'a String>,
            average_weights: Vec<AvgRow<'a>>,
            comparisons: &'a [Comparison],
            gof: &'a [GofRow],
            gof_error: &'a Option<String>,
            refits: &'a [RefitRecord],
            config: &'a BacktestConfig,
        }
        let avg = self
            .results
            .iter()
            .map(|r| AvgRow {
                strategy: r.strategy,
                upsilon: r.upsilon,
                average_weights: &r.average_weights,
                mean_return: crate::stats::mean(&r.returns),
                ruin_periods: r.ruin_periods,
            })
            .collect();
        let s = Summary {
            assets: &self.assets,
            oos_start: self.dates.first(),
            oos_end: self.dates.last(),
            average_weights: avg,
            comparisons: &self.comparisons,
            gof: &self.gof,
            gof_error: &self.gof_error,
            refits: &self.refits,
            config: &self.config,
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    /// Writes `periods.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::write_atomic(&dir.join("periods.csv"), self.periods_csv().as_bytes())?;
        crate::io::write_atomic(&dir.join("summary.json"), self.summary_json()?.as_bytes())
    }
}

/// Model state carried between refits.
struct Fitted {
    marginals: Vec<GasModel>,
    /// Predictive tilde state for the next row, per asset.
    states: Vec<TildeParams>,
    /// PITs of the current estimation window (last F rows).
    pits: Vec<Vec<f64>>,
    copula: Option<MsCopulaModel>,
    dcc: Option<DccModel>,
}

pub fn run_backtest(data: BacktestData<'_>, cfg: &BacktestConfig) -> Result<BacktestReport> {
    data.check()?;
    cfg.validate(data.returns.len())?;
    let sch = cfg.schedule;
    let (f_len, s_len) = (sch.insample_len, sch.oos_len);
    let n = data.assets.len();
    let want = |s: Strategy| cfg.strategies.contains(&s);
    let p = data.covariates.first().map_or(0, Vec::len);
    let cov_window = |lo: usize, hi: usize| -> &[Vec<f64>] {
        if p == 0 {
            &[]
        } else {
            &data.covariates[lo..hi]
        }
    };

    let mv = if want(Strategy::Mv) {
        Some(strategies::mv_weights(&data.returns[..f_len])?)
    } else {
        None
    };

    // (strategy, υ) cells in report order.
    let mut cells: Vec<(Strategy, f64)> = Vec::new();
    for &s in &cfg.strategies {
        for &u in &cfg.upsilons {
            cells.push((s, u));
        }
    }
    let mut weights: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(s_len); cells.len()];
    let mut oos_pits: Vec<Vec<f64>> = Vec::with_capacity(s_len);
    let mut refits = Vec::new();
    let mut state: Option<Fitted> = None;
    let mut initial: Option<(Vec<GasModel>, Option<MsCopulaModel>)> = None;

    for s in 0..s_len {
        let tau = f_len + s;
        let lo = tau - f_len;
        let window = &data.returns[lo..tau];
        if s % sch.refit_every == 0 {
            log::info!("refit at step {s} ({})", data.dates[tau]);
            let (fitted, rec) = refit(window, cov_window(lo, tau), cfg, state.as_ref(), s, &data.dates[tau])?;
            if initial.is_none() {
                initial = Some((fitted.marginals.clone(), fitted.copula.clone()));
            }
            state = Some(fitted);
            refits.push(rec);
        }
        let st = state.as_mut().expect("fitted at step 0");

        let fddm_tensors = if want(Strategy::Fddm) {
            let copula = st.copula.as_ref().expect("copula fitted when FDDM is requested");
            let fc = joint_forecast(&st.states, &st.pits, cov_window(lo, tau), copula)?;
            let draws = simulate_joint(&fc, cfg.draws, derive_seed(cfg.seed, TAG_SIM, s as u64))?;
            let frac = Draws {
                n,
                values: draws.values.iter().map(|v| v / 100.0).collect(),
            };
            Some(moment_tensors(&frac, cfg.seed)?)
        } else {
            None
        };
        let dcc_tensors = match &st.dcc {
            Some(m) => {
                let (mu, cov) = dcc_forecast(window, m)?;
                Some(strategies::gaussian_tensors(&mu, &cov)?)
            }
            None => None,
        };
        let emp = if want(Strategy::Nmv) || want(Strategy::Nhm) {
            Some(strategies::empirical_tensors(
                &data.returns[tau - cfg.rolling_window..tau],
            )?)
        } else {
            None
        };

        let step_weights: Vec<Vec<f64>> = cells
            .par_iter()
            .map(|&(strat, u)| match strat {
                Strategy::Ew => Ok(strategies::ew_weights(n)),
                Strategy::Mv => Ok(mv.clone().expect("MV weights computed")),
                Strategy::Fddm => strategies::optimize_order(fddm_tensors.as_ref().expect("tensors"), u, 4, &cfg.alloc),
                Strategy::Dcc => strategies::optimize_order(dcc_tensors.as_ref().expect("tensors"), u, 2, &cfg.alloc),
                Strategy::Nmv => strategies::optimize_order(emp.as_ref().expect("tensors"), u, 2, &cfg.alloc),
                Strategy::Nhm => strategies::optimize_order(emp.as_ref().expect("tensors"), u, 4, &cfg.alloc),
            })
            .collect::<Result<_>>()?;
        for (k, w) in step_weights.into_iter().enumerate() {
            weights[k].push(w);
        }

        // Observe y_τ: out-of-sample PIT, then roll the marginal states and window.
        let y = &data.returns[tau];
        let mut pit_row = Vec::with_capacity(n);
        for i in 0..n {
            let ast = Ast::new(map_params(&st.states[i]))?;
            pit_row.push(ast.cdf(y[i]).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP));
            st.states[i] = st.marginals[i].advance(&st.states[i], y[i])?;
        }
        st.pits.remove(0);
        st.pits.push(pit_row.clone());
        oos_pits.push(pit_row);
    }

    let oos = &data.returns[f_len..f_len + s_len];
    let results: Vec<StrategyResult> = cells
        .iter()
        .zip(weights)
        .map(|(&(strategy, upsilon), w)| realize(strategy, upsilon, w, oos))
        .collect::<Result<_>>()?;

    let block = cfg.block_len.unwrap_or_else(|| default_block_len(s_len));
    let comparisons = compare_strategies(&results, &cfg.upsilons, block, cfg.n_boot, cfg.seed);
    let (gof, gof_error) = match (0..n)
        .map(|i| gof::gof_row(&data.assets[i], &column(&oos_pits, i)))
        .collect::<Result<Vec<_>>>()
    {
        Ok(g) => (g, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let (initial_marginals, initial_copula) = initial.expect("at least one refit");

    Ok(BacktestReport {
        assets: data.assets.to_vec(),
        dates: data.dates[f_len..f_len + s_len].to_vec(),
        results,
        comparisons,
        gof,
        gof_error,
        refits,
        config: cfg.clone(),
        initial_marginals,
        initial_copula,
    })
}

fn refit(
    window: &[Vec<f64>],
    covariates: &[Vec<f64>],
    cfg: &BacktestConfig,
    prev: Option<&Fitted>,
    step: usize,
    date: &str,
) -> Result<(Fitted, RefitRecord)> {
    let fits = fit_marginals(window, &cfg.gas, prev.map(|p| p.marginals.as_slice()))?;
    let grad_norms = fits.iter().map(|(_, g)| *g).collect();
    let marginals: Vec<GasModel> = fits.into_iter().map(|(m, _)| m).collect();
    let pits = marginal_pits(window, &marginals)?;
    let states = marginals
        .iter()
        .map(|m| *m.tilde_path.last().expect("non-empty path"))
        .collect();
    let mut rec = RefitRecord {
        step,
        date: date.to_string(),
        marginal_grad_norms: grad_norms,
        copula_loglik: None,
        copula_iterations: None,
        copula_converged: None,
    };
    let copula = if cfg.strategies.contains(&Strategy::Fddm) {
        let warm = prev.and_then(|p| p.copula.as_ref());
        let fit = em_fit_traced(&pits, covariates, &cfg.copula, warm)?;
        rec.copula_loglik = Some(fit.model.loglik);
        rec.copula_iterations = Some(fit.iterations);
        rec.copula_converged = Some(fit.converged);
        Some(fit.model)
    } else {
        None
    };
    let dcc = if cfg.strategies.contains(&Strategy::Dcc) {
        Some(fit_dcc(window, prev.and_then(|p| p.dcc.as_ref()))?)
    } else {
        None
    };
    Ok((
        Fitted {
            marginals,
            states,
            pits,
            copula,
            dcc,
        },
        rec,
    ))
}

/// Realized fractional returns λ′y/100 and CRRA utilities of a weight path.
pub fn realize(strategy: Strategy, upsilon: f64, weights: Vec<Vec<f64>>, oos: &[Vec<f64>]) -> Result<StrategyResult> {
    let n = oos.first().map_or(0, Vec::len);
    let returns: Vec<f64> = weights
        .iter()
        .zip(oos)
        .map(|(w, y)| w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / 100.0)
        .collect();
    let utilities: Vec<Option<f64>> = returns
        .iter()
        .map(|r| {
            if 1.0 + r > 0.0 {
                crra_utility(1.0 + r, upsilon).ok()
            } else {
                None
            }
        })
        .collect();
    let ruin_periods = utilities.iter().filter(|u| u.is_none()).count();
    let s = weights.len().max(1) as f64;
    let average_weights = (0..n).map(|i| weights.iter().map(|w| w[i]).sum::<f64>() / s).collect();
    Ok(StrategyResult {
        strategy,
        upsilon,
        weights,
        returns,
        utilities,
        average_weights,
        ruin_periods,
    })
}

/// Fee and mSR of FDDM (as B) against every other strategy (as A), per υ,
/// with block-bootstrap p-values.
pub fn compare_strategies(
    results: &[StrategyResult],
    upsilons: &[f64],
    block: usize,
    n_boot: usize,
    seed: u64,
) -> Vec<Comparison> {
    let mut out = Vec::new();
    for (ui, &u) in upsilons.iter().enumerate() {
        let Some(b) = results.iter().find(|r| r.strategy == Strategy::Fddm && r.upsilon == u) else {
            continue;
        };
        for a in results
            .iter()
            .filter(|r| r.upsilon == u && r.strategy != Strategy::Fddm)
        {
            let idx = (ui * Strategy::ALL.len() + a.strategy as usize) as u64;
            let mut c = Comparison {
                upsilon: u,
                competitor: a.strategy,
                fee: None,
                fee_pvalue: None,
                msr: None,
                msr_pvalue: None,
                excluded_periods: 0,
                error: None,
            };
            let mut errs = Vec::new();
            match management_fee(&a.returns, &b.returns, u) {
                Ok((f, dropped)) => {
                    c.fee = Some(f);
                    c.excluded_periods = dropped;
                    match block_bootstrap_pvalue(
                        fee_statistic(u),
                        &a.returns,
                        &b.returns,
                        block,
                        n_boot,
                        derive_seed(seed, TAG_BOOT, 2 * idx),
                    ) {
                        Ok((_, pv)) => c.fee_pvalue = Some(pv),
                        Err(e) => errs.push(format!("fee bootstrap: {e}")),
                    }
                }
                Err(e) => errs.push(format!("fee: {e}")),
            }
            match block_bootstrap_pvalue(
                modified_sharpe,
                &a.returns,
                &b.returns,
                block,
                n_boot,
                derive_seed(seed, TAG_BOOT, 2 * idx + 1),
            ) {
                Ok((m, pv)) => {
                    c.msr = Some(m);
                    c.msr_pvalue = Some(pv);
                }
                Err(e) => errs.push(format!("mSR: {e}")),
            }
            if !errs.is_empty() {
                c.error = Some(errs.join("; "));
            }
            out.push(c);
        }
    }
    out
}
