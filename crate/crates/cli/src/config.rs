//! Run configuration: a sectioned TOML file. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flexdep::allocate::{AllocConfig, UtilityConfig};
use flexdep::evaluate::{BacktestConfig, BacktestSchedule, Strategy, WindowKind};
use flexdep::gas::{GasConfig, Scaling};
use flexdep::mscopula::em::EmConfig;
use flexdep::mscopula::DccSpec;

use crate::error::{CliError, CliResult};

/// The default configuration, shown by `--help`.
pub const DEFAULT_CONFIG: &str = r#"seed = 0                 # master seed; --seed overrides

[data]
returns = "returns.csv"  # wide CSV: date,<asset>...; percent log-returns
covariates = ""          # optional wide CSV: date,<covariate>...

[schedule]
insample = 1000          # F, estimation window length
oos = 448                # S, out-of-sample length
refit_every = 24         # periods between re-estimations (fixed moving window)

[marginal]
scaling = "fisher"       # "fisher" or "identity"
n_starts = 5
max_iter = 400
grad_tol = 1e-4

[copula]
regimes = 2
spec = "simple"          # "simple" or "generalised"
leverage = false
covariates = true
window = 20              # m, forcing-variable window
max_iter = 500
tol = 1e-6
restarts = 3

[simulation]
draws = 50000            # B, Monte Carlo draws per forecast

[allocation]
upsilon = [3.0, 7.0, 10.0, 20.0]
order = 4                # Taylor truncation order of the FDDM objective
bound = 5.0              # |weight| box
n_random = 8             # random optimizer starts

[strategies]
enabled = ["FDDM", "DCC", "NMV", "NHM", "MV", "EW"]

[evaluation]
rolling_window = 104     # NMV/NHM empirical window
n_boot = 2000
block_len = 0            # 0 means ceil(S^(1/3))

[output]
dir = "out"
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub returns: PathBuf,
    pub covariates: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            returns: "returns.csv".into(),
            covariates: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub insample: usize,
    pub oos: usize,
    pub refit_every: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            insample: 1000,
            oos: 448,
            refit_every: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalSection {
    pub scaling: Scaling,
    pub n_starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MarginalSection {
    fn default() -> Self {
        let g = GasConfig::default();
        Self {
            scaling: g.scaling,
            n_starts: g.n_starts,
            max_iter: g.max_iter,
            grad_tol: g.grad_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopulaSection {
    pub regimes: usize,
    pub spec: DccSpec,
    pub leverage: bool,
    pub covariates: bool,
    pub window: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for CopulaSection {
    fn default() -> Self {
        let e = EmConfig::default();
        Self {
            regimes: e.n_regimes,
            spec: e.spec,
            leverage: e.leverage,
            covariates: e.covariates,
            window: e.window,
            max_iter: e.max_iter,
            tol: e.tol,
            restarts: e.n_restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub draws: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            draws: flexdep::moments::DEFAULT_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationSection {
    pub upsilon: Vec<f64>,
    pub order: usize,
    pub bound: f64,
    pub n_random: usize,
}

impl Default for AllocationSection {
    fn default() -> Self {
        Self {
            upsilon: vec![3.0, 7.0, 10.0, 20.0],
            order: 4,
            bound: 5.0,
            n_random: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategiesSection {
    pub enabled: Vec<Strategy>,
}

impl Default for StrategiesSection {
    fn default() -> Self {
        Self {
            enabled: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub rolling_window: usize,
    pub n_boot: usize,
    pub block_len: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            rolling_window: 104,
            n_boot: 2000,
            block_len: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub marginal: MarginalSection,
    pub copula: CopulaSection,
    pub simulation: SimulationSection,
    pub allocation: AllocationSection,
    pub strategies: StrategiesSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses a config file; relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.returns, &mut cfg.data.covariates, &mut cfg.output.dir] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn covariates_path(&self) -> Option<&Path> {
        (!self.data.covariates.as_os_str().is_empty()).then_some(self.data.covariates.as_path())
    }

    /// Checks parameter domains; with `need_data` also that the input files exist.
    pub fn validate(&self, need_data: bool) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if need_data {
            if !self.data.returns.is_file() {
                return bad(format!("returns file {} does not exist", self.data.returns.display()));
            }
            if let Some(c) = self.covariates_path() {
                if !c.is_file() {
                    return bad(format!("covariates file {} does not exist", c.display()));
                }
            }
        }
        if self.allocation.upsilon.is_empty() || self.allocation.upsilon.iter().any(|u| !(*u >= 1.0)) {
            return bad("every upsilon must be ≥ 1".into());
        }
        if self.simulation.draws < 1000 {
            return bad(format!("simulation.draws = {} is below 1000", self.simulation.draws));
        }
        if !(2..=4).contains(&self.allocation.order) {
            return bad("allocation.order must be 2, 3 or 4".into());
        }
        if self.schedule.refit_every == 0 {
            return bad("schedule.refit_every must be ≥ 1".into());
        }
        if self.copula.regimes == 0 {
            return bad("copula.regimes must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn gas_config(&self, seed: u64) -> GasConfig {
        GasConfig {
            scaling: self.marginal.scaling,
            n_starts: self.marginal.n_starts,
            seed,
            max_iter: self.marginal.max_iter,
            grad_tol: self.marginal.grad_tol,
        }
    }

    pub fn em_config(&self, seed: u64) -> EmConfig {
        EmConfig {
            n_regimes: self.copula.regimes,
            spec: self.copula.spec,
            leverage: self.copula.leverage,
            covariates: self.copula.covariates,
            window: self.copula.window,
            max_iter: self.copula.max_iter,
            tol: self.copula.tol,
            n_restarts: self.copula.restarts,
            seed,
            ..EmConfig::default()
        }
    }

    pub fn alloc_config(&self, seed: u64, upsilon: f64) -> AllocConfig {
        AllocConfig {
            utility: UtilityConfig {
                upsilon,
                order: self.allocation.order,
            },
            bound: self.allocation.bound,
            n_random: self.allocation.n_random,
            seed,
            ..AllocConfig::default()
        }
    }

    pub fn backtest_config(&self, seed: u64) -> BacktestConfig {
        let schedule = BacktestSchedule {
            insample_len: self.schedule.insample,
            oos_len: self.schedule.oos,
            refit_every: self.schedule.refit_every,
            window: WindowKind::FixedMoving,
        };
        let mut b = BacktestConfig::new(schedule);
        b.gas = self.gas_config(seed);
        b.copula = EmConfig {
            warm_only: true,
            ..self.em_config(seed)
        };
        b.draws = self.simulation.draws;
        b.upsilons = self.allocation.upsilon.clone();
        b.strategies = self.strategies.enabled.clone();
        b.rolling_window = self.evaluation.rolling_window;
        b.alloc = self.alloc_config(seed, self.allocation.upsilon[0]);
        b.n_boot = self.evaluation.n_boot;
        b.block_len = (self.evaluation.block_len > 0).then_some(self.evaluation.block_len);
        b.seed = seed;
        b
    }
}
