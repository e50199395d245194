use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod table;

use commands::Failure;

/// Experiments on discretised incidence geometry at dyadic scales.
#[derive(Debug, Parser)]
#[command(name = "delta-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON spec (for `validate`, the set file itself).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,

    /// Overrides the seed in the spec.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "DELTA_LAB_JOBS")]
    jobs: Option<usize>,

    /// Slack exponent: measured ratios up to delta^(-slack) pass.
    #[arg(long, global = true, default_value_t = 0.2)]
    slack: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a 1-D set or a product set as GridSet JSON.
    Gen,
    /// Katz-Tao / Frostman constant of a GridSet file.
    Validate,
    /// Shading and incidence counts of a tube family against squares.
    Incidence,
    /// Expander sweep over m, one CSV row per scale plus a fit row.
    Expander,
    /// One instrumented pipeline run: CSV report plus JSON-lines trace.
    Theorem,
    /// Pipeline runs over a grid of (m, s, seed), one CSV row each.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        delta_lab::par::set_threads(n);
    }
    let Some(spec) = cli.spec.as_deref() else {
        eprintln!("error: --spec is required");
        return ExitCode::from(2);
    };
    let ctx = commands::Context {
        spec,
        seed: cli.seed,
        out: cli.out.as_deref(),
        slack: cli.slack,
    };
    let result = match cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Validate => commands::validate(&ctx),
        Command::Incidence => commands::incidence(&ctx),
        Command::Expander => commands::expander(&ctx),
        Command::Theorem => commands::theorem(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msgs)) => {
            for m in msgs {
                eprintln!("assertion failed: {m}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("input error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
