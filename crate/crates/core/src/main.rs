use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gfbigamp::harness::{
    run_sweep, theory_command, ExperimentSpec, HarnessError, SweepMode, SweepOptions, WORKERS_ENV,
};

#[derive(Parser)]
#[command(name = "gfbigamp", version, about = "Grant-free massive MIMO BiGAMP simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Workers {
    /// Worker threads (defaults to the number of CPUs)
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

impl Workers {
    fn get(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the trials of the base configuration (no sweep)
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Run every sweep point and trial
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        workers: Workers,
    },
    /// State-evolution traces and predictions per sweep point
    Theory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep with genie reference columns
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        workers: Workers,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Simulate { config, seed, out, workers } => {
            let mut spec = ExperimentSpec::load(&config)?;
            spec.sweep.clear();
            if let Some(s) = seed {
                spec.system.seed = s;
            }
            let opts = SweepOptions { workers: workers.get(), resume: false, mode: SweepMode::Sweep };
            let n = run_sweep(&spec, &out, opts)?;
            eprintln!("wrote {n} rows to {} (ce_mse is per-antenna absolute MSE)", out.display());
        }
        Cmd::Sweep { config, out, resume, workers } => {
            sweep(&config, &out, resume, workers.get(), SweepMode::Sweep)?;
        }
        Cmd::Compare { config, out, resume, workers } => {
            sweep(&config, &out, resume, workers.get(), SweepMode::Compare)?;
        }
        Cmd::Theory { config, out } => {
            let spec = ExperimentSpec::load(&config)?;
            theory_command(&spec, &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn sweep(config: &Path, out: &Path, resume: bool, workers: usize, mode: SweepMode) -> Result<(), HarnessError> {
    let spec = ExperimentSpec::load(config)?;
    let n = run_sweep(&spec, out, SweepOptions { workers, resume, mode })?;
    eprintln!("wrote {n} rows to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) | HarnessError::Json(_) | HarnessError::Model(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
