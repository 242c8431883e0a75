use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use comrades_cli::{cmd_run, cmd_validate, parse_sweep, RunInvocation, SummaryFormat};

/// Run and validate comrades simulation scenarios.
///
/// Log verbosity follows RUST_LOG (e.g. RUST_LOG=debug).
#[derive(Parser)]
#[command(name = "comrades", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario once, or once per seed of a sweep.
    Run {
        file: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long, conflicts_with = "sweep")]
        seed: Option<u64>,
        /// Inclusive seed range A..B; one metrics file per seed.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Option<std::ops::RangeInclusive<u64>>,
        /// Metrics stream (newline-delimited JSON).
        #[arg(long, default_value = "metrics.ndjson")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Summary::Table)]
        summary: Summary,
    },
    /// Parse and check a scenario, then print it with defaults filled in.
    Validate { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Summary {
    Table,
    JsonLines,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let code = match cli.command {
        Command::Run { file, seed, sweep, out: output_path, summary } => {
            let inv = RunInvocation {
                scenario_path: file,
                seed_override: seed,
                sweep,
                output_path,
                summary_format: match summary {
                    Summary::Table => SummaryFormat::Table,
                    Summary::JsonLines => SummaryFormat::JsonLines,
                },
            };
            cmd_run(&inv, &mut out, &mut err)
        }
        Command::Validate { file } => cmd_validate(&file, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
