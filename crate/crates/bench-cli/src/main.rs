//! `winsketch-bench`: replay a row stream through a sliding-window sketch,
//! score it against the exact oracle, and write a JSON or CSV report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input (stream) error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use winsketch::streamgen::{Source, StreamSpec, Timestamping};
use winsketch::Error;
use winsketch_bench::report::{emit_report, Format};
use winsketch_bench::run::{run_stream, Algo, RunConfig};

#[derive(Parser)]
#[command(
    name = "winsketch-bench",
    about = "Benchmark sliding-window matrix sketches against an exact oracle",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one stream through one algorithm and write a report.
    Run(RunArgs),
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("stream")
        .required(true)
        .args(["synthetic", "csv", "adversarial"])
))]
struct RunArgs {
    /// Algorithm under test.
    #[arg(long, value_enum)]
    algo: Algo,

    /// Window length: rows (sequence) or time units (time-based).
    #[arg(long = "window")]
    window: u64,

    /// Accuracy parameter in (0, 1]; sketches use min(ceil(1/epsilon), d) rows.
    #[arg(long)]
    epsilon: f64,

    /// Layered error coefficient.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,

    /// Upper bound on row squared norms (layered algorithms).
    #[arg(long = "R", default_value_t = 1.0)]
    big_r: f64,

    /// Query the sketch every this many rows.
    #[arg(long = "query-every")]
    query_every: u64,

    /// Seed for stream generators and samplers.
    #[arg(long)]
    seed: u64,

    /// Synthetic low-rank-plus-noise stream: n,d,zeta.
    #[arg(long, value_name = "N,D,ZETA", value_parser = parse_synthetic)]
    synthetic: Option<SyntheticArg>,

    /// CSV stream file (comma-separated decimal rows).
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,

    /// Zero-based CSV column holding integer timestamps.
    #[arg(long = "ts-col", requires = "csv", conflicts_with = "poisson")]
    ts_col: Option<usize>,

    /// Adversarial heavy-block stream; the value is the row dimension d.
    #[arg(long, value_name = "D")]
    adversarial: Option<usize>,

    /// Assign Poisson arrival timestamps with this rate.
    #[arg(long, value_name = "LAMBDA")]
    poisson: Option<f64>,

    /// Report output path.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,

    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Record wall-clock timing means (makes replays non-identical).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy)]
struct SyntheticArg {
    n: usize,
    d: usize,
    zeta: f64,
}

fn parse_synthetic(s: &str) -> Result<SyntheticArg, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected N,D,ZETA".into());
    }
    let n = parts[0].trim().parse().map_err(|_| "N must be an integer")?;
    let d = parts[1].trim().parse().map_err(|_| "D must be an integer")?;
    let zeta = parts[2]
        .trim()
        .parse()
        .map_err(|_| "ZETA must be a number")?;
    Ok(SyntheticArg { n, d, zeta })
}

/// Block parameter for the adversarial generator: the sketch row count
/// rounded up to the generator's multiple-of-4 requirement.
fn adversarial_ell(epsilon: f64, d: usize) -> usize {
    let ell = ((1.0 / epsilon).ceil() as usize).min(d).max(1);
    ell.div_ceil(4) * 4
}

fn build_config(args: &RunArgs) -> RunConfig {
    let source = if let Some(syn) = args.synthetic {
        Source::Synthetic {
            n: syn.n,
            d: syn.d,
            zeta: syn.zeta,
            seed: args.seed,
        }
    } else if let Some(path) = &args.csv {
        Source::Csv {
            path: path.clone(),
            timestamp_column: args.ts_col,
        }
    } else {
        let d = args.adversarial.expect("clap enforces one stream source");
        Source::Adversarial {
            d,
            ell: adversarial_ell(args.epsilon, d),
            window_n: args.window,
            big_r: args.big_r,
            seed: args.seed,
        }
    };
    let timestamping = if args.ts_col.is_some() {
        Timestamping::Column
    } else if let Some(lambda) = args.poisson {
        Timestamping::Poisson {
            lambda,
            seed: args.seed,
        }
    } else {
        Timestamping::Sequence
    };
    RunConfig {
        algo: args.algo,
        stream: StreamSpec {
            source,
            timestamping,
        },
        window_n: args.window,
        epsilon: args.epsilon,
        beta: args.beta,
        big_r: args.big_r,
        query_every: args.query_every,
        seed: args.seed,
        measure_timing: args.timing,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    let config = build_config(&args);
    let report = match run_stream(&config) {
        Ok(report) => report,
        Err(e) => return fail(e),
    };
    match emit_report(&report, &args.out, args.format) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        Error::Input(_) | Error::Format { .. } => ExitCode::from(3),
        _ => ExitCode::FAILURE,
    }
}
