use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mect::cli::{self, Command, ExperimentConfig, EXIT_CONFIG};
use mect::error::{Error, Result};
use mect::inversion::Method;
use mect::linmap::Strategy;

#[derive(Parser)]
#[command(name = "mect", version, about = "Multi-energy CT transform: scans, transform search, inversion")]
struct Args {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the payload here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minor extrema of J over the rectangle
    Scan,
    /// Tube-potential sweep, CSV of tuples and flags
    Sweep,
    /// Search for a transform A making A·J a P-matrix everywhere
    SearchA {
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Injectivity constant, optionally of A·I
    Mu {
        /// JSON file holding A as a list of rows
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// Invert y (comma-separated)
    Invert {
        #[arg(long)]
        y: Option<String>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Spectra on the energy grid as CSV
    Spectrum,
    /// P-family certificate for n > m
    Family {
        #[arg(long)]
        cover_splits: Option<usize>,
    },
}

fn parse_y(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad y value `{v}`: {e}"))))
        .collect()
}

fn execute(args: Args) -> Result<()> {
    let path = args.config.ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::from_path(&path)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let command = match args.command {
        Cmd::Scan => Command::Scan,
        Cmd::Sweep => Command::Sweep,
        Cmd::SearchA { budget, strategy } => {
            config.budget = budget.unwrap_or(config.budget);
            config.strategy = strategy.unwrap_or(config.strategy);
            Command::SearchA
        }
        Cmd::Mu { transform } => {
            if let Some(p) = transform {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                config.transform = Some(serde_json::from_str(&text)?);
            }
            Command::Mu
        }
        Cmd::Invert { y, starts, method } => {
            if let Some(y) = y {
                config.inversion.y = Some(parse_y(&y)?);
            }
            config.inversion.starts = starts.unwrap_or(config.inversion.starts);
            config.inversion.method = method.unwrap_or(config.inversion.method);
            Command::Invert
        }
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Family { cover_splits } => {
            config.cover_splits = cover_splits.unwrap_or(config.cover_splits);
            Command::Family
        }
    };
    let output = cli::run(command, &config)?;
    match args.out {
        Some(p) => {
            std::fs::write(&p, &output.payload)?;
            if let Some(s) = output.summary {
                println!("{s}");
            }
        }
        None => {
            print!("{}", output.payload);
            if let Some(s) = output.summary {
                eprintln!("{s}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
