//! One function per subcommand. Each reads the config and its inputs and
//! writes its artifacts atomically into the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flexdep::allocate::optimize_weights;
use flexdep::evaluate::metrics::default_block_len;
use flexdep::evaluate::{
    compare_strategies, derive_seed, fit_marginals, gof, joint_forecast, marginal_pits, run_backtest, BacktestData,
    Strategy, StrategyResult,
};
use flexdep::io::write_atomic;
use flexdep::moments::{moment_tensors, simulate_joint, Draws, JointForecast};
use flexdep::mscopula::em::em_fit_traced;
use flexdep::mscopula::select::{default_grid, select_model};
use flexdep::stats::{dependence_tables, summary_stats};

use crate::config::RunConfig;
use crate::data::{inner_join, load_covariates, load_panel, load_returns, CovariatePanel, Panel, ReturnsPanel};
use crate::error::{CliError, CliResult};
use crate::model_file::{load_model, save_model, Models};

/// Settings shared by every subcommand after flag overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn write(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        self.ensure_out()?;
        let p = self.path(name);
        write_atomic(&p, body.as_bytes())?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }
}

const TAG_FORECAST_SIM: u64 = 101;

/// Returns and covariates on their common dates.
pub fn load_inputs(cfg: &RunConfig) -> CliResult<(ReturnsPanel, CovariatePanel)> {
    let r = load_returns(&cfg.data.returns)?;
    match cfg.covariates_path() {
        Some(p) => {
            let c = load_covariates(p)?;
            let (jr, jc, dr, dc) = inner_join(&r, &c);
            if dr > 0 || dc > 0 {
                log::warn!("date alignment dropped {dr} return rows and {dc} covariate rows");
            }
            Ok((jr, jc))
        }
        None => {
            let empty = Panel {
                dates: r.dates.clone(),
                names: Vec::new(),
                values: vec![Vec::new(); r.len()],
            };
            Ok((r, empty))
        }
    }
}

/// Covariate rows for exactly the given dates; an absent date is an alignment error.
fn covariates_for(dates: &[chrono::NaiveDate], cov: &CovariatePanel) -> CliResult<Vec<Vec<f64>>> {
    if cov.names.is_empty() {
        return Ok(Vec::new());
    }
    let idx: BTreeMap<_, _> = cov.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    dates
        .iter()
        .map(|d| {
            idx.get(d).map(|&i| cov.values[i].clone()).ok_or_else(|| {
                CliError::Core(flexdep::Error::Alignment(format!(
                    "no covariate row for {}",
                    d.format("%Y-%m-%d")
                )))
            })
        })
        .collect()
}

fn insample(cfg: &RunConfig, r: &ReturnsPanel) -> CliResult<Panel> {
    let f = cfg.schedule.insample;
    if f > r.len() {
        return Err(CliError::Config(format!(
            "schedule.insample = {f} exceeds the {} aligned rows",
            r.len()
        )));
    }
    Ok(r.slice(0, f))
}

pub fn fit_marginals_cmd(ctx: &Context) -> CliResult<()> {
    ctx.cfg.validate(true)?;
    let (r, _) = load_inputs(&ctx.cfg)?;
    let win = insample(&ctx.cfg, &r)?;
    let fits = fit_marginals(&win.values, &ctx.cfg.gas_config(ctx.seed), None)?;
    let mut table = String::from("asset,loglik,grad_norm_if_unconverged");
    for k in ["omega", "alpha", "beta"] {
        for p in ["mu", "sigma", "gamma", "nu"] {
            write!(table, ",{k}_{p}").expect("string write");
        }
    }
    table.push('\n');
    for (name, (m, g)) in win.names.iter().zip(&fits) {
        if let Some(g) = g {
            log::warn!("marginal {name}: optimizer stopped with gradient norm {g:e}");
        }
        write!(
            table,
            "{name},{},{}",
            m.loglik,
            g.map_or(String::new(), |v| v.to_string())
        )
        .expect("string write");
        for v in m.coeffs.omega.iter().chain(&m.coeffs.alpha).chain(&m.coeffs.beta) {
            write!(table, ",{v}").expect("string write");
        }
        table.push('\n');
    }
    let ds = win.date_strings();
    let models = Models {
        assets: win.names.clone(),
        window: (ds[0].clone(), ds[ds.len() - 1].clone()),
        marginals: fits.into_iter().map(|(m, _)| m).collect(),
        copula: None,
    };
    ctx.ensure_out()?;
    save_model(&ctx.path("model.toml"), &models)?;
    ctx.write("marginals.csv", &table)?;
    Ok(())
}

/// Rows of `r` inside the model's estimation window.
fn window_rows(models: &Models, r: &ReturnsPanel) -> CliResult<Panel> {
    let parse = |s: &str| {
        chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| CliError::Config(format!("model window date '{s}' is not ISO-8601")))
    };
    let (lo, hi) = (parse(&models.window.0)?, parse(&models.window.1)?);
    let a = r.dates.partition_point(|d| *d < lo);
    let b = r.dates.partition_point(|d| *d <= hi);
    if r.names != models.assets {
        return Err(CliError::Config(
            "returns columns differ from the model's assets".into(),
        ));
    }
    Ok(r.slice(a, b))
}

pub fn pit_cmd(ctx: &Context, model: &Path) -> CliResult<()> {
    let models = load_model(model)?;
    let (r, _) = load_inputs(&ctx.cfg)?;
    let win = window_rows(&models, &r)?;
    if win.len() + 1 != models.marginals[0].tilde_path.len() {
        return Err(CliError::Config(format!(
            "model was fitted on {} rows but the window holds {}",
            models.marginals[0].tilde_path.len() - 1,
            win.len()
        )));
    }
    let pits = Panel {
        values: marginal_pits(&win.values, &models.marginals)?,
        ..win
    };
    ctx.ensure_out()?;
    pits.write(&ctx.path("pits.csv"))?;
    Ok(())
}

pub fn fit_copula_cmd(ctx: &Context, model: &Path, pits: &Path) -> CliResult<()> {
    let mut models = load_model(model)?;
    let u = load_panel(pits)?;
    let (_, cov) = load_inputs(&ctx.cfg)?;
    let x = covariates_for(&u.dates, &cov)?;
    let fit = em_fit_traced(&u.values, &x, &ctx.cfg.em_config(ctx.seed), None)?;
    if !fit.converged {
        log::warn!("EM stopped at the iteration cap ({} iterations)", fit.iterations);
    }
    #[derive(Serialize)]
    struct Trace<'a> {
        iterations: usize,
        converged: bool,
        starved_runs: usize,
        loglik: f64,
        aic: f64,
        bic: f64,
        trace: &'a [f64],
        penalized: &'a [bool],
    }
    let trace = Trace {
        iterations: fit.iterations,
        converged: fit.converged,
        starved_runs: fit.starved_runs,
        loglik: fit.model.loglik,
        aic: fit.model.aic,
        bic: fit.model.bic,
        trace: &fit.trace,
        penalized: &fit.penalized,
    };
    let json = serde_json::to_string_pretty(&trace).map_err(flexdep::Error::from)?;
    models.copula = Some(fit.model);
    save_model(&ctx.path("model.toml"), &models)?;
    ctx.write("copula_fit.json", &(json + "\n"))?;
    Ok(())
}

pub fn select_cmd(ctx: &Context, pits: &Path) -> CliResult<()> {
    let u = load_panel(pits)?;
    let (_, cov) = load_inputs(&ctx.cfg)?;
    let x = covariates_for(&u.dates, &cov)?;
    let rows = select_model(&u.values, &x, &default_grid(), &ctx.cfg.em_config(ctx.seed))?;
    let mut s = String::from("regimes,spec,covariates,loglik,n_params,aic,bic,error\n");
    for r in rows {
        let spec = serde_json::to_value(r.spec).map_err(flexdep::Error::from)?;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.n_regimes,
            spec.as_str().unwrap_or(""),
            r.covariates,
            r.loglik,
            r.n_params,
            r.aic,
            r.bic,
            r.error.unwrap_or_default().replace(',', ";")
        )
        .expect("string write");
    }
    ctx.write("selection.csv", &s)?;
    Ok(())
}

/// Forecast artifact: the joint predictive of the row after `after`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastFile {
    pub assets: Vec<String>,
    pub after: String,
    pub forecast: JointForecast,
}

pub fn forecast_cmd(ctx: &Context, model: &Path, pits: &Path) -> CliResult<()> {
    let models = load_model(model)?;
    let copula = models
        .copula
        .as_ref()
        .ok_or_else(|| CliError::Config("model file has no copula; run fit-copula first".into()))?;
    let u = load_panel(pits)?;
    let (_, cov) = load_inputs(&ctx.cfg)?;
    let x = covariates_for(&u.dates, &cov)?;
    let states: Vec<_> = models
        .marginals
        .iter()
        .map(|m| *m.tilde_path.last().expect("non-empty path"))
        .collect();
    let fc = joint_forecast(&states, &u.values, &x, copula)?;
    let file = ForecastFile {
        assets: models.assets.clone(),
        after: models.window.1.clone(),
        forecast: fc,
    };
    let json = serde_json::to_string_pretty(&file).map_err(flexdep::Error::from)?;
    ctx.write("forecast.json", &(json + "\n"))?;
    Ok(())
}

fn read_forecast(path: &Path) -> CliResult<ForecastFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn draws_for(ctx: &Context, fc: &ForecastFile, b: usize) -> CliResult<Draws> {
    Ok(simulate_joint(
        &fc.forecast,
        b,
        derive_seed(ctx.seed, TAG_FORECAST_SIM, 0),
    )?)
}

pub fn simulate_cmd(ctx: &Context, forecast: &Path, draws: Option<usize>) -> CliResult<()> {
    let fc = read_forecast(forecast)?;
    let b = draws.unwrap_or(ctx.cfg.simulation.draws);
    let d = draws_for(ctx, &fc, b)?;
    let mut s = fc.assets.join(",");
    s.push('\n');
    for k in 0..d.len() {
        let row: Vec<String> = d.row(k).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    ctx.write("draws.csv", &s)?;
    Ok(())
}

pub fn optimize_cmd(ctx: &Context, forecast: &Path) -> CliResult<()> {
    ctx.cfg.validate(false)?;
    let fc = read_forecast(forecast)?;
    let d = draws_for(ctx, &fc, ctx.cfg.simulation.draws)?;
    let frac = Draws {
        n: d.n,
        values: d.values.iter().map(|v| v / 100.0).collect(),
    };
    let t = moment_tensors(&frac, ctx.seed)?;
    ctx.ensure_out()?;
    t.write_csv(&ctx.path("tensors"))?;
    let mut s = String::from("upsilon,order");
    for a in &fc.assets {
        write!(s, ",w_{a}").expect("string write");
    }
    s.push_str(",objective,at_boundary,unbounded\n");
    for &u in &ctx.cfg.allocation.upsilon {
        let a = optimize_weights(&t, &ctx.cfg.alloc_config(ctx.seed, u))?;
        write!(s, "{u},{}", ctx.cfg.allocation.order).expect("string write");
        for w in &a.weights {
            write!(s, ",{w}").expect("string write");
        }
        writeln!(s, ",{},{},{}", a.objective, a.at_boundary, a.unbounded).expect("string write");
    }
    ctx.write("weights.csv", &s)?;
    Ok(())
}

pub fn backtest_cmd(ctx: &Context) -> CliResult<()> {
    ctx.cfg.validate(true)?;
    let (r, cov) = load_inputs(&ctx.cfg)?;
    let bcfg = ctx.cfg.backtest_config(ctx.seed);
    let dates = r.date_strings();
    let data = BacktestData {
        dates: &dates,
        assets: &r.names,
        returns: &r.values,
        covariates: &cov.values,
    };
    let data = if cov.names.is_empty() {
        BacktestData {
            covariates: &[],
            ..data
        }
    } else {
        data
    };
    let report = run_backtest(data, &bcfg)?;
    ctx.ensure_out()?;
    report.write(&ctx.out)?;
    let f = bcfg.schedule.insample_len;
    let first = Models {
        assets: r.names.clone(),
        window: (dates[0].clone(), dates[f - 1].clone()),
        marginals: report.initial_marginals.clone(),
        copula: report.initial_copula.clone(),
    };
    save_model(&ctx.path("first_refit.toml"), &first)?;
    Ok(())
}

/// Rebuilds per-strategy return series from a backtest's periods.csv.
fn read_periods(path: &Path) -> CliResult<Vec<StrategyResult>> {
    let data_err = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let n_w = headers.len().saturating_sub(5);
    let mut map: BTreeMap<(Strategy, u64), StrategyResult> = BTreeMap::new();
    let mut order = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |c: usize| -> CliResult<f64> {
            rec[c].parse().map_err(|_| CliError::Cell {
                path: path.to_path_buf(),
                line,
                column: headers[c].to_string(),
                value: rec[c].to_string(),
            })
        };
        let strategy: Strategy = serde_json::from_value(serde_json::Value::String(rec[1].to_string()))
            .map_err(|_| data_err(format!("line {line}: unknown strategy '{}'", &rec[1])))?;
        let upsilon = num(2)?;
        let ret = num(3)?;
        let utility = if &rec[4] == "NA" { None } else { Some(num(4)?) };
        let w = (0..n_w).map(|k| num(5 + k)).collect::<CliResult<Vec<_>>>()?;
        let key = (strategy, upsilon.to_bits());
        let e = map.entry(key).or_insert_with(|| {
            order.push(key);
            StrategyResult {
                strategy,
                upsilon,
                weights: Vec::new(),
                returns: Vec::new(),
                utilities: Vec::new(),
                average_weights: Vec::new(),
                ruin_periods: 0,
            }
        });
        e.returns.push(ret);
        e.utilities.push(utility);
        e.ruin_periods += usize::from(utility.is_none());
        e.weights.push(w);
    }
    Ok(order
        .into_iter()
        .map(|k| map.remove(&k).expect("key present"))
        .collect())
}

pub fn evaluate_cmd(ctx: &Context, periods: &Path) -> CliResult<()> {
    let results = read_periods(periods)?;
    let mut upsilons: Vec<f64> = Vec::new();
    for r in &results {
        if !upsilons.contains(&r.upsilon) {
            upsilons.push(r.upsilon);
        }
    }
    let s_len = results.first().map_or(0, |r| r.returns.len());
    let block = match ctx.cfg.evaluation.block_len {
        0 => default_block_len(s_len),
        b => b,
    };
    let cmp = compare_strategies(&results, &upsilons, block, ctx.cfg.evaluation.n_boot, ctx.seed);
    let json = serde_json::to_string_pretty(&cmp).map_err(flexdep::Error::from)?;
    ctx.write("evaluation.json", &(json + "\n"))?;
    Ok(())
}

pub fn gof_cmd(ctx: &Context, pits: &Path) -> CliResult<()> {
    let u = load_panel(pits)?;
    let mut s = String::from("asset,ar1,ar2,ar3,ar4,ar1_reject,ar2_reject,ar3_reject,ar4_reject,hist,hist_reject\n");
    for (i, name) in u.names.iter().enumerate() {
        let col: Vec<f64> = u.values.iter().map(|r| r[i]).collect();
        let g = gof::gof_row(name, &col)?;
        writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{},{}",
            g.ar[0],
            g.ar[1],
            g.ar[2],
            g.ar[3],
            g.ar_reject[0],
            g.ar_reject[1],
            g.ar_reject[2],
            g.ar_reject[3],
            g.hist,
            g.hist_reject
        )
        .expect("string write");
    }
    ctx.write("gof.csv", &s)?;
    Ok(())
}

pub fn summary_stats_cmd(ctx: &Context) -> CliResult<()> {
    let r = load_returns(&ctx.cfg.data.returns)?;
    let rows = summary_stats(&r.names, &r.values)?;
    let mut s = String::from("asset,n_obs,mean,std_dev,min,max,skewness,kurtosis,jarque_bera,jb_pvalue,quantile_01\n");
    for x in &rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            x.name,
            x.n_obs,
            x.mean,
            x.std_dev,
            x.min,
            x.max,
            x.skewness,
            x.kurtosis,
            x.jarque_bera,
            x.jb_pvalue,
            x.quantile_01
        )
        .expect("string write");
    }
    ctx.write("summary_stats.csv", &s)?;
    let (rho, tau) = dependence_tables(&r.values)?;
    let n = r.names.len();
    let mut d = String::from("kind,asset");
    for a in &r.names {
        write!(d, ",{a}").expect("string write");
    }
    d.push('\n');
    for (kind, m) in [("pearson", &rho), ("kendall", &tau)] {
        for i in 0..n {
            write!(d, "{kind},{}", r.names[i]).expect("string write");
            for j in 0..n {
                write!(d, ",{}", m[i * n + j]).expect("string write");
            }
            d.push('\n');
        }
    }
    ctx.write("dependence.csv", &d)?;
    Ok(())
}
