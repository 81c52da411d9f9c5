//! `slowmix` — command-line front end for the slowmix library.
//!
//! Every subcommand prints one JSON report to stdout (an envelope carrying
//! the resolved configuration, its SHA-256 hash, library versions, and
//! source provenance) and, with `--out DIR`, also writes `report.json` plus
//! plot-ready CSV tables into that directory.  Reports are byte-identical
//! across reruns of the same configuration.  Failures print a
//! machine-readable error JSON and exit with 2 (configuration), 3
//! (numerics), or 4 (certificate unavailable).

mod ops;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "slowmix",
    version,
    about = "Simulation, estimation, and coupling experiments for slow-mixing output-memory channels"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Where the model or channel comes from: a built-in fixture (by name, with
/// optional `name(key=value,...)` parameters) or a JSON file.
#[derive(Args, Clone, Default)]
struct SourceArgs {
    /// Built-in fixture, e.g. "example4" or "example5(eps=0.2)"
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,
    /// Path to a model or channel JSON file
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
}

/// Depth selection shared by the counting pipelines: an explicit depth, a
/// log-fraction, or (neither) the library's threshold-fitting default.
#[derive(Args, Clone, Default)]
struct DepthArgs {
    /// Counting depth k_n (overrides --alpha-n)
    #[arg(long, value_name = "K")]
    k_n: Option<usize>,
    /// Depth as floor(alpha * log2 n), 0 < alpha < 1
    #[arg(long, value_name = "ALPHA")]
    alpha_n: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect a model or channel file or fixture
    Model {
        #[command(subcommand)]
        cmd: ModelCmd,
    },
    /// Stationary law of the (output) process
    Stationary {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Aggregate the process or channel to window depth k
    Aggregate {
        #[command(flatten)]
        src: SourceArgs,
        /// Aggregation depth
        #[arg(long, value_name = "K")]
        depth: usize,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Information rate of a channel (models are wrapped input-free)
    Rate {
        #[command(flatten)]
        src: SourceArgs,
        /// Also bound the rate through depth-K aggregation
        #[arg(long, value_name = "K")]
        depth: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Draw a seeded input/output trace
    Simulate {
        #[command(flatten)]
        src: SourceArgs,
        /// Trace length (>= 1)
        #[arg(long)]
        n: u64,
        /// RNG seed (default 0; SLOWMIX_SEED overrides, the flag wins)
        #[arg(long)]
        seed: Option<u64>,
        /// Starting output context, most recent symbol last (default all ones)
        #[arg(long, value_name = "SYMBOLS")]
        past: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Simulate, count, and run the full estimation pipeline
    Estimate {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "SYMBOLS")]
        past: Option<String>,
        #[command(flatten)]
        depth: DepthArgs,
        /// Dependency-decay profile: exponential:G | polynomial:R | zero |
        /// table:v1,v2,...[:zero|:geometric:C:R|:polynomial:C:P]
        #[arg(long, value_name = "SPEC")]
        decay: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Sequential weighted coding probability and its redundancy certificate
    Ctw {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "SYMBOLS")]
        past: Option<String>,
        #[command(flatten)]
        depth: DepthArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Coupled pairs of restriction chains: coalescence times per run
    Couple {
        #[command(flatten)]
        src: SourceArgs,
        /// Calibration trace length for the good-state set
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "SYMBOLS")]
        past: Option<String>,
        #[command(flatten)]
        depth: DepthArgs,
        #[arg(long, value_name = "SPEC")]
        decay: Option<String>,
        /// Number of coupled runs
        #[arg(long)]
        runs: u64,
        /// Restriction steps per run
        #[arg(long)]
        horizon: usize,
        /// Agreement depth defining coalescence (default: decay horizon)
        #[arg(long)]
        ell: Option<usize>,
        /// Left start context (a good state; default: first good state)
        #[arg(long, value_name = "SYMBOLS")]
        start_left: Option<String>,
        /// Right start context (default: last good state)
        #[arg(long, value_name = "SYMBOLS")]
        start_right: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Full experiment from a config file: simulate, count, estimate,
    /// certify, and optionally couple
    Run {
        /// Experiment config JSON (flags override; SLOWMIX_SEED sits between)
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "SYMBOLS")]
        past: Option<String>,
        #[command(flatten)]
        depth: DepthArgs,
        #[arg(long, value_name = "SPEC")]
        decay: Option<String>,
        /// Add a coupling stage with this many runs
        #[arg(long)]
        couple_runs: Option<u64>,
        /// Restriction steps per coupled run (default 1000)
        #[arg(long)]
        couple_horizon: Option<usize>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// List the built-in fixtures
    Fixtures {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Parse and validate, reporting shape on success
    Validate {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            println!("{}", err.to_json());
            ExitCode::from(err.code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), ops::CliError> {
    match cmd {
        Cmd::Model {
            cmd: ModelCmd::Validate { src, out },
        } => ops::model_validate(&src, out.as_deref()),
        Cmd::Stationary { src, out } => ops::stationary(&src, out.as_deref()),
        Cmd::Aggregate { src, depth, out } => ops::aggregate(&src, depth, out.as_deref()),
        Cmd::Rate { src, depth, out } => ops::rate(&src, depth, out.as_deref()),
        Cmd::Simulate {
            src,
            n,
            seed,
            past,
            out,
        } => ops::simulate_cmd(&src, n, seed, past.as_deref(), out.as_deref()),
        Cmd::Estimate {
            src,
            n,
            seed,
            past,
            depth,
            decay,
            out,
        } => ops::estimate_cmd(
            &src,
            n,
            seed,
            past.as_deref(),
            &depth,
            decay.as_deref(),
            out.as_deref(),
        ),
        Cmd::Ctw {
            src,
            n,
            seed,
            past,
            depth,
            out,
        } => ops::ctw_cmd(&src, n, seed, past.as_deref(), &depth, out.as_deref()),
        Cmd::Couple {
            src,
            n,
            seed,
            past,
            depth,
            decay,
            runs,
            horizon,
            ell,
            start_left,
            start_right,
            out,
        } => ops::couple_cmd(ops::CoupleRequest {
            src: &src,
            n,
            seed,
            past: past.as_deref(),
            depth: &depth,
            decay: decay.as_deref(),
            runs,
            horizon,
            ell,
            start_left: start_left.as_deref(),
            start_right: start_right.as_deref(),
            out: out.as_deref(),
        }),
        Cmd::Run {
            config,
            src,
            n,
            seed,
            past,
            depth,
            decay,
            couple_runs,
            couple_horizon,
            ell,
            out,
        } => ops::run_cmd(ops::RunRequest {
            config: config.as_deref(),
            src: &src,
            n,
            seed,
            past: past.as_deref(),
            depth: &depth,
            decay: decay.as_deref(),
            couple_runs,
            couple_horizon,
            ell,
            out: out.as_deref(),
        }),
        Cmd::Fixtures { out } => ops::fixtures_cmd(out.as_deref()),
    }
}
