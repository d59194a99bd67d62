//! `qplab`: experiment driver for the quasi-periodic operator laboratory.
//!
//! Exit codes: 0 all checks passed, 1 usage or config error, 2 a hypothesis
//! was not met (no claim is made), 3 a certified bound was violated.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::ExperimentFile;
use crate::experiments::{Context, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] qplab_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                "hypothesis" => 2,
                "invariant" => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "qplab", version, about = "Green's function experiments for quasi-periodic lattice operators")]
struct Cli {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Goodness of G on Q_N over an (x, E) grid.
    GoodnessScan,
    /// Sublevel-set measures against delta and the Lojasiewicz fit.
    LdtScan,
    /// Large-coupling bounds on sampled phases outside the bad set.
    NeumannCheck,
    /// Bad-set measure of an analytic matrix family along an epsilon ladder.
    CartanSweep,
    /// One induction step at toy scale, with a JSON-lines trace.
    MsaToy,
    /// Scale schedule and rate bookkeeping of the induction.
    ScheduleTable,
    /// Orbit hit counts against the outer scale.
    HitCount,
    /// Eigenvector decay rates and participation ratios.
    LocalizationProfile,
    /// Regenerate the degrade-constant calibration table.
    Calibrate,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let file = match &cli.config {
        Some(p) => ExperimentFile::load(p)?,
        None => ExperimentFile::default(),
    };
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Context {
        file,
        seed,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::GoodnessScan => experiments::goodness_scan(&ctx),
        Command::LdtScan => experiments::ldt_scan(&ctx),
        Command::NeumannCheck => experiments::neumann_check(&ctx),
        Command::CartanSweep => experiments::cartan_sweep(&ctx),
        Command::MsaToy => experiments::msa_toy(&ctx),
        Command::ScheduleTable => experiments::schedule_table(&ctx),
        Command::HitCount => experiments::hit_count(&ctx),
        Command::LocalizationProfile => experiments::localization(&ctx),
        Command::Calibrate => experiments::calibrate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(err) => {
            eprintln!("qplab: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
