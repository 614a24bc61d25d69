use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plm_divide::experiment::{self, ExperimentConfig, Profile, Scenario};
use plm_divide::kernel::{self, EigenSequence, KernelKind, KernelSpec};
use plm_divide::{PlmError, Result};

#[derive(Parser)]
#[command(name = "plm-divide", version, about = "Divide-and-conquer debiased estimation for partially linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation sweep and write results.csv, timings.csv and summary.csv.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Preset used when no config is given; `desk` also caps a given config.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Critical-radius diagnostics over a grid of sample sizes.
    Diag {
        #[arg(long, default_value = "sobolev3")]
        kernel: String,
        /// Eigenvalue decay `mu_l = l^(-2 alpha)`; without it the empirical
        /// eigenvalues of the Gram matrix on an even grid are used.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        p: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const THREADS_ENV: &str = "PLM_DIVIDE_THREADS";

fn build_config(
    config: Option<PathBuf>,
    scenario: Option<String>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    profile: Option<String>,
) -> Result<ExperimentConfig> {
    let profile = profile.map(|p| p.parse::<Profile>()).transpose()?;
    let scenario = scenario.map(|s| s.parse::<Scenario>()).transpose()?;
    let mut cfg = match &config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(profile.unwrap_or(Profile::Desk), scenario.unwrap_or(Scenario::SweepP)),
    };
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    if config.is_some() && profile == Some(Profile::Desk) {
        cfg.clamp_to_desk();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        cfg.workers = v
            .parse()
            .map_err(|_| PlmError::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: ExperimentConfig) -> Result<ExitCode> {
    log::info!(
        "{} over {:?}, {} replications, {} workers",
        cfg.scenario.name(),
        cfg.values,
        cfg.replications,
        cfg.workers
    );
    let output = experiment::run_experiment(&cfg)?;
    experiment::write_outputs(&output.rows, &cfg.out)?;
    for cell in experiment::summarize(&output.rows).iter().filter(|c| c.metric == "linf_error") {
        println!(
            "{}={} {}: mean linf {:.4} (se {:.4}, n={})",
            cell.scenario.name(),
            cell.value,
            cell.estimator.name(),
            cell.mean,
            cell.std_error,
            cell.count
        );
    }
    if output.failed_fraction > experiment::MAX_FAILED_FRACTION {
        eprintln!("{:.1}% of rows failed", 100.0 * output.failed_fraction);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn diag(kernel_name: &str, alpha: Option<f64>, n_grid: &[usize], p: usize, out: Option<PathBuf>) -> Result<()> {
    let kind: KernelKind = kernel_name.parse()?;
    let alpha = alpha.or((kind == KernelKind::Sobolev3).then_some(3.0));
    let eigs = match alpha {
        Some(a) => EigenSequence::power_law(a)?,
        None => {
            let spec = KernelSpec { kind, ..KernelSpec::default() };
            let size = n_grid.iter().copied().max().unwrap_or(100).min(2000);
            let points: Vec<f64> = (0..size).map(|i| (i as f64 + 0.5) / size as f64).collect();
            EigenSequence::from_gram(kernel::gram_matrix(&spec, &points)?.as_ref())?
        }
    };
    let csv = experiment::diagnostics_csv(&experiment::radius_diagnostics(&eigs, n_grid, p)?, alpha);
    match out {
        Some(path) => std::fs::write(&path, csv).map_err(|e| PlmError::Io { path, source: e })?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            scenario,
            seed,
            workers,
            out,
            profile,
        } => build_config(config, scenario, seed, workers, out, profile).and_then(run),
        Command::Diag {
            kernel,
            alpha,
            n_grid,
            p,
            out,
        } => diag(&kernel, alpha, &n_grid, p, out).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                PlmError::Config(_) | PlmError::Io { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
