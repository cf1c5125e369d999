use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rflab_harness::config::{Config, ConfigError, OutputFormat};
use rflab_harness::output::{run_sample, write_particles};
use rflab_harness::sweep::{run_sweep, summarize, to_csv, Axis, SweepError};
use rflab_harness::verify::{run_all, VerifyOptions};

/// Environment variable holding the worker count.
const WORKERS_ENV: &str = "RFLAB_WORKERS";

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "rflab", version, about = "Rectified-flow sampling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite and write verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Run the sampler and write the particles and summary.json.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one axis and write the records as CSV with a fit summary.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Run(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(c) => CliError::Config(c),
            SweepError::Run(r) => CliError::Run(r.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_CHECK_FAILED,
        }
    }
}

fn load_config(common: &Common) -> Result<Config, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out.clone_from(o);
    }
    if let Some(n) = common.particles {
        cfg.particles = n;
    }
    if let Some(f) = common.format {
        cfg.format = f;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_out(cfg: &Config) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Write {
        path: cfg.out.clone(),
        source,
    })
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Returns whether every check passed.
fn verify(cfg: &Config) -> Result<bool, CliError> {
    let target = cfg.load_target()?;
    let opts = VerifyOptions {
        delta: cfg.plan.delta,
        ..VerifyOptions::default()
    };
    let report = run_all(&target, &cfg.target, cfg.seed, &opts);
    prepare_out(cfg)?;
    write_file(&cfg.out.join("verify.json"), &json_bytes(&report))?;
    for c in &report.checks {
        println!("{:<36} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    Ok(report.passed)
}

fn sample_cmd(cfg: &Config) -> Result<bool, CliError> {
    let target = cfg.load_target()?;
    let model = cfg.build_model(&target)?;
    let plan = cfg.build_plan(&target)?;
    let run = run_sample(&model, &plan, cfg.particles, cfg.seed, cfg.plan.predictor_only, &cfg.target)
        .map_err(|e| CliError::Run(e.to_string()))?;
    prepare_out(cfg)?;
    let path = write_particles(&cfg.out, &run.cloud, cfg.format).map_err(|source| CliError::Write {
        path: cfg.out.clone(),
        source,
    })?;
    write_file(&cfg.out.join("summary.json"), &json_bytes(&run.summary))?;
    println!("wrote {} particles to {}", run.cloud.len(), path.display());
    Ok(run.summary.closed_form_error.is_none_or(|e| e <= 1e-12))
}

fn sweep_cmd(cfg: &Config, axis: Axis) -> Result<bool, CliError> {
    let target = cfg.load_target()?;
    let records = run_sweep(cfg, axis, &target)?;
    let fits = summarize(axis, &records);
    prepare_out(cfg)?;
    write_file(&cfg.out.join(format!("sweep_{}.csv", axis.name())), to_csv(&records).as_bytes())?;
    write_file(&cfg.out.join(format!("sweep_{}_fit.json", axis.name())), &json_bytes(&fits))?;
    for f in &fits {
        println!(
            "{} {}: slope {:.3} [{:.3}, {:.3}] spread {:.3} {}",
            axis.name(),
            f.group,
            f.slope,
            f.ci95[0],
            f.ci95[1],
            f.spread,
            if f.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(fits.iter().all(|f| f.passed))
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::Invalid(format!("{WORKERS_ENV}={raw} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_workers().and_then(|()| match &cli.command {
        Command::Verify { common } => verify(&load_config(common)?),
        Command::Sample { common } => sample_cmd(&load_config(common)?),
        Command::Sweep { axis, common } => sweep_cmd(&load_config(common)?, *axis),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("rflab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
