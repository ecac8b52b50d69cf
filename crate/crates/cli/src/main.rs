//! `facdiff`: factorized diffusion from the command line.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments,
//! 3 backend or network failure, 4 file I/O failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{BackendKind, Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "facdiff", version, about = "Factorized diffusion sampling")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Denoiser/scorer base URL; beats FD_ENDPOINT and the config.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample an image whose components follow different conditions.
    Generate,
    /// Sample with one component held to that of a reference image.
    Inverse {
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Label of the component to hold fixed, e.g. `low` or `gray`.
        #[arg(long)]
        fixed: String,
    },
    /// One hybrid generation per blur sigma, sharing the seed.
    SweepSigma {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true, allow_negative_numbers = true)]
        sigmas: Vec<f64>,
    },
    /// Blur-sweep alignment scores of an image against prompts.
    Eval {
        image: PathBuf,
        #[arg(long = "prompt", required = true)]
        prompts: Vec<String>,
    },
    /// Print schedule and model information.
    Info,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            backend: self.backend,
            endpoint: self.endpoint.clone(),
            out: self.out.clone(),
        }
    }

    fn run_config(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::invalid("--config is required for this command"))?;
        let (mut cfg, base) = RunConfig::load(path)?;
        cfg.apply(&self.overrides());
        Ok((cfg, base))
    }

    /// Config endpoint, when a config is given and readable.
    fn configured_endpoint(&self) -> Result<Option<String>, CliError> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?.0.endpoint),
            None => Ok(None),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let flag = cli.endpoint.as_deref();
    match &cli.command {
        Command::Generate => {
            let (cfg, base) = cli.run_config()?;
            commands::generate(&cfg, &base, flag)
        }
        Command::Inverse { reference, fixed } => {
            let (cfg, base) = cli.run_config()?;
            commands::inverse(&cfg, &base, flag, reference, fixed)
        }
        Command::SweepSigma { sigmas } => {
            let (cfg, base) = cli.run_config()?;
            commands::sweep_sigma(&cfg, &base, flag, sigmas)
        }
        Command::Eval { image, prompts } => {
            let configured = cli.configured_endpoint()?;
            let endpoint = commands::resolve_endpoint(flag, configured.as_deref())?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::eval(image, prompts, endpoint, &out)
        }
        Command::Info => {
            let configured = cli.configured_endpoint()?;
            let wants_remote = cli.backend == Some(BackendKind::Remote)
                || flag.is_some()
                || configured.is_some()
                || std::env::var_os(facdiff_core::remote::ENV_ENDPOINT).is_some();
            let endpoint = if wants_remote {
                Some(commands::resolve_endpoint(flag, configured.as_deref())?)
            } else {
                None
            };
            commands::info(endpoint)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
