// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod diag;

use config::{ExperimentConfig, MatrixExport, TableFormat};
use diag::Diagnostic;

/// Quasi-ergodic measures of randomly perturbed open maps.
#[derive(Parser)]
#[command(name = "qemlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the operator and solve for the eigentriple and quasi-ergodic measure.
    Spectrum(Common),
    /// Conditioned particle simulation.
    Mc(Common),
    /// Spectral solves over a list of noise amplitudes.
    Sweep(Common),
    /// Filtration order of a connection graph, optionally with stratified solves.
    Filtration(Common),
    /// Compare two qem CSV files on the configured grid.
    Compare {
        #[command(flatten)]
        common: Common,
        first: PathBuf,
        second: PathBuf,
        /// Frequencies per axis in the test-function dictionary.
        #[arg(long, default_value_t = qemlab::equilibrium::TestDictionary::DEFAULT_K)]
        dictionary: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<TableFormat>,
    /// Also export the assembled matrix.
    #[arg(long, value_enum)]
    matrix: Option<MatrixExport>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Diagnostic> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| Diagnostic::io(&self.config, e))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        if let Some(dir) = &self.out {
            cfg.outputs.dir = dir.to_string_lossy().into_owned();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(f) = self.format {
            cfg.outputs.format = f;
        }
        if self.matrix.is_some() {
            cfg.outputs.matrix = self.matrix;
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Diagnostic::new(diag::Code::Invalid, format!("threads: {e}")))?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Diagnostic> {
    match cli.command {
        Command::Spectrum(c) => commands::spectrum(&c.load()?),
        Command::Mc(c) => commands::mc(&c.load()?),
        Command::Sweep(c) => commands::sweep(&c.load()?),
        Command::Filtration(c) => commands::filtration(&c.load()?),
        Command::Compare {
            common,
            first,
            second,
            dictionary,
        } => commands::compare(&common.load()?, &first, &second, dictionary),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(d) => {
            eprintln!("{d}");
            ExitCode::from(d.code.exit_code())
        }
    }
}
