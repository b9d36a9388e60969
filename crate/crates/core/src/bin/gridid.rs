//! `gridid generate|estimate|sweep|compare-approx --config <path> [--seed N] [--out DIR]`
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or
//! observability failure, 4 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridid_core::experiment::{
    cmd_compare_approx, cmd_estimate, cmd_generate, cmd_sweep, ExperimentConfig,
};
use gridid_core::{GridError, Result};

#[derive(Parser)]
#[command(name = "gridid", version, about = "Admittance matrix identification from meter data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the true states and write one measurement file per noise level.
    Generate(Common),
    /// Estimate Y from a generated dataset.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run every method at every noise level.
    Sweep(Common),
    /// Tabulate the power and current approximation errors.
    CompareApprox(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load(&common)?;
            let manifest = cmd_generate(&cfg)?;
            println!(
                "wrote {} files to {}",
                manifest.files.len() + 1,
                cfg.output_dir.display()
            );
        }
        Command::Estimate { common, dataset } => {
            let cfg = load(&common)?;
            let dataset = dataset.unwrap_or_else(|| cfg.output_dir.clone());
            for r in cmd_estimate(&cfg, &dataset)? {
                println!(
                    "{:<17} level {:<7} rrmse_y {:.6} false positives {}",
                    r.method, r.noise_level, r.rrmse_y, r.sparsity_false_positives
                );
            }
        }
        Command::Sweep(common) => {
            let cfg = load(&common)?;
            let res = cmd_sweep(&cfg)?;
            for c in &res.cells {
                match &c.outcome {
                    Ok((_, r)) => println!(
                        "{:<17} level {:<7} rrmse_y {:.6} ({:.1} s)",
                        c.method.name(),
                        c.noise_level,
                        r.rrmse_y,
                        c.seconds
                    ),
                    Err(e) => println!("{:<17} level {:<7} failed: {e}", c.method.name(), c.noise_level),
                }
            }
        }
        Command::CompareApprox(common) => {
            let cfg = load(&common)?;
            let e = cmd_compare_approx(&cfg)?;
            println!(
                "P: power flow {:.3}%, adapted {:.3}%  Q: power flow {:.3}%, adapted {:.3}%",
                100.0 * e.rrmse_p_lin,
                100.0 * e.rrmse_p_adapted,
                100.0 * e.rrmse_q_lin,
                100.0 * e.rrmse_q_adapted
            );
            println!(
                "current: real {:.3}%, imaginary {:.3}%",
                100.0 * e.rrmse_i_re,
                100.0 * e.rrmse_i_im
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(gridid_core::error::EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: GridError) -> ExitCode {
    eprintln!("gridid: {e}");
    ExitCode::from(e.exit_code() as u8)
}
