mod config;
mod output;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_cov_core::montecarlo::McScheme;
use spde_cov_core::wave::extract_position_cov;
use spde_cov_core::{
    advdiff_run, emit, mc_validate, run_sweep, spectral_galerkin_cov, wave_run, Equation, Error, McConfig,
    OracleProblem, ReportFormat,
};

use config::RunConfig;

/// Fine time step of the oracle integrator relative to the scheme's step.
const ORACLE_DT_DIVISOR: f64 = 16.0;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(Error),
    RateMiss(String),
    Output(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => CliError::Config(msg),
            Error::ShapeMismatch(_)
            | Error::InvalidMesh(_)
            | Error::EllipticityViolated { .. }
            | Error::MismatchedBc
            | Error::NoPointwiseKernel => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::RateMiss(msg) => write!(f, "rate check failed: {msg}"),
            CliError::Output(msg) => write!(f, "output error: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::RateMiss(_) | CliError::Output(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "spde-cov",
    version,
    about = "Covariance recursions for linear SPDEs on the unit interval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Single advection-diffusion run; emits the covariance function at the nodes.
    Advdiff(Common),
    /// Single wave run; emits the displacement covariance function at the nodes.
    Wave(Common),
    /// Refinement sweep with fitted convergence rates.
    Sweep(Common),
    /// Monte Carlo comparison of sampled paths with the covariance recursion.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Spectral reference covariance at the single-run level.
    Oracle(Common),
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SPDE_COV_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("SPDE_COV_THREADS = {value:?} is not a thread count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn write_output(common: &Common, text: &str) -> Result<(), CliError> {
    let result = match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string()),
    };
    result.map_err(CliError::Output)
}

fn expect_equation(config: &RunConfig, name: &str) -> Result<(), CliError> {
    let actual = config.study.equation.name();
    if actual != name {
        return Err(CliError::Config(format!(
            "config describes a {actual} problem, not {name}"
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Advdiff(common) => {
            let config = RunConfig::load(&common.config)?;
            expect_equation(&config, "advdiff")?;
            let run = config.advdiff()?;
            let k = advdiff_run(&run)?;
            write_output(&common, &output::covariance(&k, &run.mesh, run.t_end, common.format))
        }
        Command::Wave(common) => {
            let config = RunConfig::load(&common.config)?;
            expect_equation(&config, "wave")?;
            let run = config.wave()?;
            let k = extract_position_cov(&wave_run(&run)?)?;
            write_output(&common, &output::covariance(&k, &run.mesh, run.t_end, common.format))
        }
        Command::Sweep(common) => {
            let config = RunConfig::load(&common.config)?;
            let report = run_sweep(&config.study)?;
            for inv in &report.invariants {
                if !inv.record.holds() {
                    log::warn!("invariant check failed: {inv:?}");
                }
            }
            write_output(&common, &emit(&report, common.format))?;
            if let Some(rate) = config.study.expected_rate {
                if !report.meets_rate(rate, config.rate_tolerance) {
                    return Err(CliError::RateMiss(format!(
                        "fitted slopes L1 = {}, L2 = {} miss the expected rate {rate} ± {}",
                        report.slope_l1(),
                        report.slope_l2(),
                        config.rate_tolerance
                    )));
                }
            }
            Ok(())
        }
        Command::Mc { common, samples, seed } => {
            let config = RunConfig::load(&common.config)?;
            let scheme = match &config.study.equation {
                Equation::AdvDiff { .. } => McScheme::AdvDiff(config.advdiff()?),
                Equation::Wave { .. } => McScheme::Wave(config.wave()?),
            };
            let mc = McConfig {
                scheme,
                n_samples: samples.unwrap_or(config.n_samples),
                seed: seed.unwrap_or(config.seed),
            };
            let report = mc_validate(&mc)?;
            write_output(&common, &output::mc_report(&report, mc.seed, common.format))
        }
        Command::Oracle(common) => {
            let config = RunConfig::load(&common.config)?;
            let modes = config.oracle_modes;
            let (k, t) = match &config.study.equation {
                Equation::AdvDiff { .. } => {
                    let run = config.advdiff()?;
                    let fine = run.dt() / ORACLE_DT_DIVISOR;
                    (
                        spectral_galerkin_cov(modes, OracleProblem::AdvDiff(&run), fine)?,
                        run.t_end,
                    )
                }
                Equation::Wave { .. } => {
                    let run = config.wave()?;
                    let fine = run.dt() / ORACLE_DT_DIVISOR;
                    let block = spectral_galerkin_cov(modes, OracleProblem::Wave(&run), fine)?;
                    (extract_position_cov(&block)?, run.t_end)
                }
            };
            let nodes = config.single_level.n_cells;
            write_output(&common, &output::modal_covariance(&k, nodes, t, common.format))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are configuration errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spde-cov: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
