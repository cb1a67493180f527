//! Command-line front end.
//!
//! Every subcommand writes into an output directory: `observables.csv`,
//! `meta.json` and `schedule.json`, plus `walkers.csv`, `bound.csv`,
//! `traces.csv` and `snapshots/` depending on the mode.

pub mod aggregate;
pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

use crate::error::{Error, Result};
use crate::redfield::RedfieldParams;
use config::{Experiment, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "rtqmc", version, about = "Walker population dynamics for time-local master equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; RTQMC_WORKERS takes precedence.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stochastic run.
    Run(RunArgs),
    /// Deterministic reference run (n <= 10).
    Exact(RunArgs),
    /// Stochastic run plus the error bound series in bound.csv.
    Bound(RunArgs),
    /// Stochastic Redfield run from the six model parameters.
    Redfield {
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.omega1)]
        omega1: f64,
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.omega2)]
        omega2: f64,
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.gamma1)]
        gamma1: f64,
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.gamma2)]
        gamma2: f64,
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.alpha)]
        alpha: f64,
        #[arg(long, default_value_t = RedfieldParams::REFERENCE.kappa)]
        kappa: f64,
        /// Base configuration; the template is used when absent.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Run the deterministic integrator instead.
        #[arg(long)]
        exact: bool,
    },
    /// Pool replica snapshots from run directories.
    Aggregate {
        /// Run directories holding meta.json and snapshots/.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print a template configuration.
    Template {
        #[arg(value_enum)]
        experiment: Experiment,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let cfg = load(&a)?;
            let out = run::run_command(&cfg, &cfg.output_dir, run::resolve_workers(a.workers)?, false)?;
            info!("wrote {} ({:.1} s)", cfg.output_dir.display(), out.wall_seconds);
        }
        Command::Bound(a) => {
            let cfg = load(&a)?;
            run::run_command(&cfg, &cfg.output_dir, run::resolve_workers(a.workers)?, true)?;
            info!("wrote {}", cfg.output_dir.display());
        }
        Command::Exact(a) => {
            let cfg = load(&a)?;
            run::exact_command(&cfg, &cfg.output_dir)?;
            info!("wrote {}", cfg.output_dir.display());
        }
        Command::Redfield { omega1, omega2, gamma1, gamma2, alpha, kappa, config, out, seed, workers, exact } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::template(Experiment::Redfield),
            };
            if cfg.experiment != Experiment::Redfield {
                return Err(Error::Config("redfield subcommand needs experiment \"redfield\"".into()));
            }
            cfg.redfield = Some(RedfieldParams { omega1, omega2, gamma1, gamma2, alpha, kappa });
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if exact {
                run::exact_command(&cfg, &cfg.output_dir)?;
            } else {
                run::run_command(&cfg, &cfg.output_dir, run::resolve_workers(workers)?, false)?;
            }
            info!("wrote {}", cfg.output_dir.display());
        }
        Command::Aggregate { dirs, out, workers } => {
            let agg = aggregate::aggregate(&dirs, run::resolve_workers(workers)?)?;
            aggregate::write_aggregate_outputs(&agg, &out)?;
            info!("aggregated {} replica(s) into {}", agg.replicas.len(), out.display());
        }
        Command::Template { experiment } => {
            println!("{}", RunConfig::template(experiment).to_json()?);
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
