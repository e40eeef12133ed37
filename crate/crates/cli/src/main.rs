use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mhdbl_cli::config::ExperimentConfig;
use mhdbl_cli::{certify, converge, decay, simulate};

/// Experiment driver for the boundary-layer solver.
#[derive(Parser)]
#[command(name = "mhdbl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (flat `key = value`; defaults apply when omitted).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Demote the admissibility-chain and saturation checks to warnings.
    #[arg(long)]
    warn_only: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Step the system; write timeseries.csv, snapshots, and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the inequality probe battery and write the report table.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated probe selectors (default: the full battery).
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        lemmas: Vec<String>,
    },
    /// Joint (dt, dy) refinement study with fitted orders and plot data.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Number of refinement levels (at least 3).
        #[arg(long, default_value_t = 4, value_name = "K")]
        levels: usize,
    },
    /// Fit power-law tail exponents to time-series columns.
    FitDecay {
        #[command(flatten)]
        common: Common,
        /// CSV to read (default: `<output_dir>/timeseries.csv`).
        #[arg(long, value_name = "PATH")]
        file: Option<PathBuf>,
        /// Comma-separated column names (default: every column).
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        columns: Vec<String>,
        /// Fit window `lo..hi` (default: the trailing 80% of the run).
        #[arg(long, value_name = "RANGE")]
        window: Option<String>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Simulate { common } => {
            let cfg = common.resolve()?;
            let run = simulate::run_simulate(&cfg, common.warn_only)?;
            for warning in &run.warnings {
                eprintln!("warning: {warning}");
            }
            let last = run.records.last().expect("at least the initial record");
            match &run.halt {
                Some((t, reason)) => println!("halted at t = {t:.6}: {reason}"),
                None => println!("completed at t = {:.6} ({} steps)", last.t, run.steps),
            }
            println!(
                "records: {}   budget flagged: {}",
                run.records.len(),
                run.budget.flagged
            );
            for (label, fit) in &run.fits {
                match fit {
                    Some(slope) => println!("decay {label}: {slope:+.4}"),
                    None => println!("decay {label}: n/a"),
                }
            }
            println!("wrote {}", run.timeseries_path.display());
            println!("wrote {}", run.summary_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Certify { common, lemmas } => {
            let cfg = common.resolve()?;
            let outcome = certify::run_certify(&cfg, &lemmas)?;
            print!("{}", outcome.table);
            println!("wrote {}", outcome.report_path.display());
            if outcome.all_passed {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "probe failures: {} exact-class violation(s)",
                    outcome.exact_violations
                );
                Ok(ExitCode::from(2))
            }
        }
        Command::Converge { common, levels } => {
            let cfg = common.resolve()?;
            let outcome = converge::run_converge(&cfg, levels)?;
            let table = std::fs::read_to_string(&outcome.table_path)?;
            print!("{table}");
            for path in &outcome.plot_paths {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::FitDecay {
            common,
            file,
            columns,
            window,
        } => {
            let cfg = common.resolve()?;
            let path = file.unwrap_or_else(|| cfg.output_dir.join("timeseries.csv"));
            let window = window.map(|spec| parse_window(&spec)).transpose()?;
            let fits = decay::run_fit_decay(&path, &columns, window)?;
            println!("{:<16} exponent", "column");
            for (name, fit) in &fits {
                match fit {
                    Ok(slope) => println!("{name:<16} {slope:+.6}"),
                    Err(reason) => println!("{name:<16} skipped ({reason})"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_window(spec: &str) -> Result<(f64, f64)> {
    let (lo, hi) = spec
        .split_once("..")
        .with_context(|| format!("window `{spec}` is not of the form lo..hi"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("window lower bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("window upper bound `{hi}`"))?;
    if !(lo < hi) {
        bail!("window `{spec}` is empty");
    }
    Ok((lo, hi))
}
