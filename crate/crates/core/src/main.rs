use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use optomech::cli::{cmd_protocol, cmd_state, cmd_sweep, cmd_validate, RunConfig, RunOptions, THREADS_ENV};
use optomech::qnd_core::ClosedFormVariant;
use optomech::validation::Level;

/// Measurement-conditioned mechanical cat states: batch runs and validation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Treat grid truncation and device-inconsistent couplings as errors.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Conditional state grid and its metrics.
    State(Io),
    /// Metrics over the axes of the config's sweep block.
    Sweep(Io),
    /// Three-pulse cool, prepare and read protocol.
    Protocol(Io),
    /// Oracle-equivalence and invariant checks.
    Validate {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the checks against a deliberately broken closed form.
        #[arg(long, value_enum, hide = true)]
        inject: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    SignFlip,
}

fn run(cli: Cli) -> optomech::Result<()> {
    let opts = RunOptions { strict: cli.strict };
    match cli.command {
        Command::State(io) => {
            cmd_state(&RunConfig::load(&io.config)?, &io.out, opts)?;
        }
        Command::Sweep(io) => cmd_sweep(&RunConfig::load(&io.config)?, &io.out, opts)?,
        Command::Protocol(io) => {
            cmd_protocol(&RunConfig::load(&io.config)?, &io.out, opts)?;
        }
        Command::Validate { level, out, inject } => {
            let variant = match inject {
                Some(Fault::SignFlip) => ClosedFormVariant::SignFlipped,
                None => ClosedFormVariant::Corrected,
            };
            cmd_validate(level, variant, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
