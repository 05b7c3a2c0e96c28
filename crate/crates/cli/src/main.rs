use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ssd_cli::commands::{self, SweepKind};
use ssd_cli::config::{Overrides, RunConfig};
use ssd_cli::{exit_code, UsageError, EXIT_FAILURE, EXIT_OK};
use ssd_core::verify::VerifyLevel;

#[derive(Parser)]
#[command(name = "ssd", version, about = "Speculative decoding over tabular token models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tabular Markov model to a corpus.
    Fit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coarsen a target model into a lower-order draft.
    DeriveDraft {
        #[arg(long)]
        target: PathBuf,
        /// Reference corpus weighting the target's contexts.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one speculative decode and print tokens, trace and metrics.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Check the decoder against the exact oracles.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Quick)]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep beta or draft length and write a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(clap::Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    draft_len: Option<usize>,
    #[arg(long)]
    target_len: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            beta: a.beta,
            draft_len: a.draft_len,
            target_len: a.target_len,
            trials: a.trials,
            out: a.out,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Beta,
    DraftLen,
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: &Path, overrides: OverrideArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    config.apply(&overrides.into());
    Ok(config)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Fit {
            corpus,
            order,
            smoothing,
            out,
        } => print!("{}", commands::fit(&corpus, order, smoothing, &out)?),
        Command::DeriveDraft {
            target,
            corpus,
            order,
            smoothing,
            out,
        } => print!("{}", commands::derive(&target, &corpus, order, smoothing, &out)?),
        Command::Decode { config, overrides } => {
            let config = load_config(&config, overrides)?;
            let (text, _) = commands::decode(&config)?;
            if let Some(out) = &config.out {
                write_out(out, &text)?;
            }
            print!("{text}");
        }
        Command::Verify { level, seed, out } => {
            let level = match level {
                Level::Quick => VerifyLevel::Quick,
                Level::Full => VerifyLevel::Full,
            };
            let (text, report) = commands::verify(level, seed);
            if let Some(out) = &out {
                write_out(out, &text)?;
            }
            print!("{text}");
            if !report.passed() {
                return Ok(EXIT_FAILURE);
            }
        }
        Command::Sweep {
            config,
            kind,
            overrides,
        } => {
            let config = load_config(&config, overrides)?;
            let kind = match kind {
                Kind::Beta => SweepKind::Beta,
                Kind::DraftLen => SweepKind::DraftLen,
            };
            let out = config
                .out
                .clone()
                .ok_or_else(|| UsageError("sweep needs an output path (--out or `out =`)".into()))?;
            let (rows, csv) = commands::sweep(&config, kind)?;
            write_out(&out, &csv)?;
            print!("{}", commands::sweep_summary(&rows));
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
