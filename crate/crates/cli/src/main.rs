//! `thermocal`: calibrate, compare and validate grey-box thermal models from
//! the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thermocal::{Error, Result};

use crate::commands::Context;
use crate::config::Loaded;
use crate::output::{Manifest, OutDir, Versions};

#[derive(Parser)]
#[command(name = "thermocal", version, about = "Bayesian calibration of RC thermal network models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior and write traces, diagnostics and summaries.
    Calibrate(Common),
    /// Multi-start maximum-likelihood (or MAP) optimization.
    Ml(Common),
    /// Re-run convergence diagnostics on existing traces in `--out`.
    Diagnose(Common),
    /// Information criteria and likelihood-ratio tests across models.
    Compare(Common),
    /// Profile likelihood / posterior of one parameter.
    Profile(Common),
    /// Posterior predictive simulation on the validation record.
    Predict(Common),
    /// Generate a synthetic data set from the nominal parameters.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `sampler.chains`.
    #[arg(long)]
    chains: Option<usize>,
}

fn run(name: &'static str, args: Common, f: fn(&mut Context) -> Result<()>) -> Result<()> {
    let mut loaded = Loaded::from_path(&args.config)?;
    if let Some(s) = args.seed {
        loaded.config.seed = s;
    }
    if let Some(c) = args.chains {
        if c == 0 {
            return Err(Error::Config("--chains must be at least 1".into()));
        }
        loaded.config.sampler.chains = c;
    }
    let out = args
        .out
        .or_else(|| loaded.config.output.as_ref().map(|p| loaded.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let problem = loaded.build()?;
    let mut ctx = Context {
        seed: loaded.config.seed,
        chains: loaded.config.sampler.chains,
        out: OutDir::create(&out)?,
        problem,
        loaded,
    };
    f(&mut ctx)?;
    let manifest = Manifest {
        command: name,
        config: args.config.display().to_string(),
        config_hash: ctx.loaded.hash(),
        seed: ctx.seed,
        chains: ctx.chains,
        versions: Versions::current(),
        artifacts: Vec::new(),
    };
    ctx.out.write_manifest(manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => run("calibrate", a, commands::calibrate),
        Command::Ml(a) => run("ml", a, commands::ml),
        Command::Diagnose(a) => run("diagnose", a, commands::diagnose_command),
        Command::Compare(a) => run("compare", a, commands::compare),
        Command::Profile(a) => run("profile", a, commands::profile_command),
        Command::Predict(a) => run("predict", a, commands::predict),
        Command::Synth(a) => run("synth", a, commands::synth),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
