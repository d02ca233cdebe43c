use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flexdep_cli::commands::{self, Context};
use flexdep_cli::config::{RunConfig, DEFAULT_CONFIG};
use flexdep_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "flexdep",
    version,
    about = "Regime-switching copula forecasts and higher-moment portfolio allocation"
)]
#[command(after_long_help = DEFAULT_CONFIG)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the GAS marginals on the in-sample window.
    FitMarginals,
    /// Probability integral transforms of the in-sample returns.
    Pit {
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit the regime-switching copula to PITs.
    FitCopula {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pits: PathBuf,
    },
    /// Information-criterion grid over regimes, specification and covariates.
    Select {
        #[arg(long)]
        pits: PathBuf,
    },
    /// One-step-ahead joint predictive distribution.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pits: PathBuf,
    },
    /// Draw joint returns from a forecast.
    Simulate {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Co-moment tensors and optimal weights for each risk aversion.
    Optimize {
        #[arg(long)]
        forecast: PathBuf,
    },
    /// Out-of-sample backtest of all enabled strategies.
    Backtest,
    /// Fees and modified Sharpe ratios with bootstrap p-values.
    Evaluate {
        #[arg(long)]
        periods: PathBuf,
    },
    /// Goodness-of-fit tests on PITs.
    Gof {
        #[arg(long)]
        pits: PathBuf,
    },
    /// Descriptive statistics of the returns.
    SummaryStats,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => toml::from_str(DEFAULT_CONFIG).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.output_dir.unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = Context { cfg, seed, out };
    match cli.command {
        Command::FitMarginals => commands::fit_marginals_cmd(&ctx),
        Command::Pit { model } => commands::pit_cmd(&ctx, &model),
        Command::FitCopula { model, pits } => commands::fit_copula_cmd(&ctx, &model, &pits),
        Command::Select { pits } => commands::select_cmd(&ctx, &pits),
        Command::Forecast { model, pits } => commands::forecast_cmd(&ctx, &model, &pits),
        Command::Simulate { forecast, draws } => commands::simulate_cmd(&ctx, &forecast, draws),
        Command::Optimize { forecast } => commands::optimize_cmd(&ctx, &forecast),
        Command::Backtest => commands::backtest_cmd(&ctx),
        Command::Evaluate { periods } => commands::evaluate_cmd(&ctx, &periods),
        Command::Gof { pits } => commands::gof_cmd(&ctx, &pits),
        Command::SummaryStats => commands::summary_stats_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                CliError::Core(_) => "numerical",
                CliError::Config(_) => "config",
                CliError::VersionMismatch { .. } | CliError::ModelSection { .. } => "model_file",
                CliError::Io { .. } => "io",
                _ => "data",
            };
            let msg = serde_json::json!({ "error": kind, "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
