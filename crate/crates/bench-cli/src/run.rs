//! Stream replay harness.
//!
//! Feeds a materialized stream through one sketch algorithm and an exact
//! window oracle in lockstep, queries periodically, and scores the sketch's
//! Gram estimate by `spectral_norm(oracle_gram - estimate_gram) /
//! oracle_frobenius_mass`. Measurement is one-directional: the sketch under
//! test never reads the oracle. The only exception is deliberate and
//! documented: the sampling estimators' scale factor takes the exact window
//! mass as an input by contract, so the harness passes the oracle's
//! Frobenius tracker to them.

use std::time::Instant;

use serde::Serialize;

use winsketch::baselines::{ExactWindow, LmFd, SworSampler, SwrSampler};
use winsketch::dsfd::{DsFd, DsFdConfig};
use winsketch::layered::{LayeredConfig, LayeredDsFd, WindowMode};
use winsketch::linalg::{gram, spectral_norm_sym, Mat};
use winsketch::streamgen::{open, Source, StreamItem, StreamSpec, Timestamping};
use winsketch::{Error, Result};

/// Algorithms the harness can replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algo {
    /// Plain sliding-window FD on normalized rows, scored on its
    /// uncompressed estimate.
    Dsfd,
    /// Same contract, single-decomposition-per-epoch engine.
    FastDsfd,
    /// Layered sketch for sequence windows over rows with squared norms
    /// in [1, R].
    SeqDsfd,
    /// Layered sketch for time-based windows.
    TimeDsfd,
    /// Exponential histogram of FD blocks.
    Lmfd,
    /// Priority sampling with replacement.
    Swr,
    /// Priority sampling without replacement.
    Swor,
    /// The oracle itself (zero error by construction).
    Exact,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Dsfd => "dsfd",
            Algo::FastDsfd => "fast-dsfd",
            Algo::SeqDsfd => "seq-dsfd",
            Algo::TimeDsfd => "time-dsfd",
            Algo::Lmfd => "lmfd",
            Algo::Swr => "swr",
            Algo::Swor => "swor",
            Algo::Exact => "exact",
        }
    }
}

/// One benchmark run: algorithm, stream, window and accuracy parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algo: Algo,
    pub stream: StreamSpec,
    /// Window length: rows for sequence windows, time units for time-based.
    pub window_n: u64,
    pub epsilon: f64,
    /// Layered error coefficient (guarantees validated at 4).
    pub beta: f64,
    /// Squared-norm upper bound for the layered algorithms.
    pub big_r: f64,
    /// Query cadence in steps.
    pub query_every: u64,
    /// Seed echoed into samplers (stream seeds live in `stream`).
    pub seed: u64,
    /// Record wall-clock means; off by default so replays are
    /// byte-identical.
    pub measure_timing: bool,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon = {}; must be in (0, 1]",
                self.epsilon
            )));
        }
        if self.query_every == 0 {
            return Err(Error::Config("query-every must be >= 1".into()));
        }
        if self.window_n == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta = {}; must be positive",
                self.beta
            )));
        }
        if !(self.big_r >= 1.0) || !self.big_r.is_finite() {
            return Err(Error::Config(format!("R = {}; must be >= 1", self.big_r)));
        }
        Ok(())
    }

    /// Samplers used by swr/swor: `ceil(1/epsilon^2)`.
    pub fn sampler_count(&self) -> usize {
        (1.0 / (self.epsilon * self.epsilon)).ceil() as usize
    }
}

/// Config as echoed into reports (stable, human-readable field values).
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub algo: String,
    pub stream: String,
    pub timestamping: String,
    pub window_n: u64,
    pub epsilon: f64,
    pub beta: f64,
    pub big_r: f64,
    pub query_every: u64,
    pub seed: u64,
}

fn describe_source(source: &Source) -> String {
    match source {
        Source::Synthetic { n, d, zeta, seed } => {
            format!("synthetic(n={n}, d={d}, zeta={zeta}, seed={seed})")
        }
        Source::Csv {
            path,
            timestamp_column,
        } => match timestamp_column {
            Some(k) => format!("csv({}, ts_col={k})", path.display()),
            None => format!("csv({})", path.display()),
        },
        Source::Adversarial {
            d,
            ell,
            window_n,
            big_r,
            seed,
        } => format!("adversarial(d={d}, ell={ell}, window_n={window_n}, R={big_r}, seed={seed})"),
    }
}

fn describe_timestamping(ts: &Timestamping) -> String {
    match ts {
        Timestamping::Sequence => "sequence".into(),
        Timestamping::Poisson { lambda, seed } => {
            format!("poisson(lambda={lambda}, seed={seed})")
        }
        Timestamping::Column => "column".into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRecord {
    pub step: u64,
    pub ts: u64,
    pub relative_error: f64,
    pub sketch_rows: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregates {
    /// Peak d-dimensional rows held by the sketch across all steps.
    pub max_sketch_rows: u64,
    pub avg_relative_error: f64,
    pub max_relative_error: f64,
    /// Wall-clock means; null unless timing was requested.
    pub mean_update_time_s: Option<f64>,
    pub mean_query_time_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub records: Vec<QueryRecord>,
    /// Null when the run produced no queries.
    pub aggregates: Option<Aggregates>,
    /// True if any layered query fell back to a layer that had discarded
    /// part of the window.
    pub coverage_incomplete: bool,
}

enum Runner {
    Plain(DsFd),
    Layered(LayeredDsFd),
    Lm(LmFd),
    Swr(SwrSampler),
    Swor(SworSampler),
    Exact,
}

impl Runner {
    fn build(config: &RunConfig, d: usize) -> Result<Runner> {
        Ok(match config.algo {
            Algo::Dsfd => Runner::Plain(DsFd::new(DsFdConfig::normalized(
                d,
                config.epsilon,
                config.window_n,
            )?)?),
            Algo::FastDsfd => Runner::Plain(DsFd::new_fast(DsFdConfig::normalized(
                d,
                config.epsilon,
                config.window_n,
            )?)?),
            Algo::SeqDsfd | Algo::TimeDsfd => {
                let mode = if config.algo == Algo::SeqDsfd {
                    WindowMode::Sequence
                } else {
                    WindowMode::Time
                };
                let mut cfg =
                    LayeredConfig::new(mode, d, config.epsilon, config.window_n, config.big_r);
                cfg.beta = config.beta;
                Runner::Layered(LayeredDsFd::new(cfg)?)
            }
            Algo::Lmfd => Runner::Lm(LmFd::new(d, config.epsilon, config.window_n)?),
            Algo::Swr => Runner::Swr(SwrSampler::new(
                d,
                config.window_n,
                config.sampler_count(),
                config.seed,
            )),
            Algo::Swor => Runner::Swor(SworSampler::new(
                d,
                config.window_n,
                config.sampler_count(),
                config.seed,
            )),
            Algo::Exact => Runner::Exact,
        })
    }

    fn update(&mut self, item: &StreamItem) -> Result<()> {
        match self {
            Runner::Plain(s) => s.update(&item.row),
            Runner::Layered(s) => s.update(&item.row, item.ts),
            Runner::Lm(s) => s.update(&item.row, item.ts),
            Runner::Swr(s) => s.update(&item.row, item.ts),
            Runner::Swor(s) => s.update(&item.row, item.ts),
            Runner::Exact => Ok(()),
        }
    }

    /// Gram of the current estimate; `None` for the oracle itself.
    fn estimate_gram(&self, oracle: &ExactWindow) -> Result<Option<(Mat, bool)>> {
        Ok(match self {
            Runner::Plain(s) => Some((gram(&s.query_rows()), true)),
            Runner::Layered(s) => {
                let (est, complete) = s.query()?;
                Some((gram(&est), complete))
            }
            Runner::Lm(s) => Some((gram(&s.query()?), true)),
            Runner::Swr(s) => Some((gram(&s.estimate(oracle.frob_sq())), true)),
            Runner::Swor(s) => Some((gram(&s.estimate(oracle.frob_sq())), true)),
            Runner::Exact => None,
        })
    }

    fn rows_held(&self, oracle: &ExactWindow) -> usize {
        match self {
            Runner::Plain(s) => s.rows_held(),
            Runner::Layered(s) => s.rows_held(),
            Runner::Lm(s) => s.rows_held(),
            Runner::Swr(s) => s.rows_held(),
            Runner::Swor(s) => s.rows_held(),
            Runner::Exact => oracle.len(),
        }
    }

    /// Plain FD windows count rows, so their coverage gate is the step
    /// index; everything else expires by timestamp.
    fn query_ready(&self, step: u64, ts: u64, window_n: u64) -> bool {
        match self {
            Runner::Plain(_) => step >= window_n,
            _ => ts >= window_n,
        }
    }
}

/// Replays the configured stream and returns the scored report.
pub fn run_stream(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let echo = ConfigEcho {
        algo: config.algo.name().to_string(),
        stream: describe_source(&config.stream.source),
        timestamping: describe_timestamping(&config.stream.timestamping),
        window_n: config.window_n,
        epsilon: config.epsilon,
        beta: config.beta,
        big_r: config.big_r,
        query_every: config.query_every,
        seed: config.seed,
    };
    let items = open(&config.stream)?;
    if items.is_empty() {
        return Ok(Report {
            config: echo,
            records: Vec::new(),
            aggregates: None,
            coverage_incomplete: false,
        });
    }
    let d = items[0].row.len();
    let mut runner = Runner::build(config, d)?;
    let mut oracle = ExactWindow::new(d, config.window_n);
    let mut records = Vec::new();
    let mut max_rows: usize = 0;
    let mut coverage_incomplete = false;
    let mut update_secs = 0.0f64;
    let mut query_secs = 0.0f64;
    let mut query_count = 0u64;
    for (i, item) in items.iter().enumerate() {
        let step = (i + 1) as u64;
        let started = config.measure_timing.then(Instant::now);
        runner.update(item).map_err(|e| at_step(step, e))?;
        if let Some(t0) = started {
            update_secs += t0.elapsed().as_secs_f64();
        }
        oracle.update(&item.row, item.ts)?;
        max_rows = max_rows.max(runner.rows_held(&oracle));
        if step % config.query_every == 0 && runner.query_ready(step, item.ts, config.window_n) {
            let started = config.measure_timing.then(Instant::now);
            let relative_error = match runner.estimate_gram(&oracle)? {
                None => 0.0,
                Some((est, complete)) => {
                    coverage_incomplete |= !complete;
                    let num = spectral_norm_sym(&(oracle.gram() - est))?;
                    let den = oracle.frob_sq();
                    if den == 0.0 {
                        if num == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        num / den
                    }
                }
            };
            if let Some(t0) = started {
                query_secs += t0.elapsed().as_secs_f64();
            }
            query_count += 1;
            records.push(QueryRecord {
                step,
                ts: item.ts,
                relative_error,
                sketch_rows: runner.rows_held(&oracle) as u64,
            });
        }
    }
    let aggregates = if records.is_empty() {
        None
    } else {
        let sum: f64 = records.iter().map(|r| r.relative_error).sum();
        let max = records
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0f64, f64::max);
        Some(Aggregates {
            max_sketch_rows: max_rows as u64,
            avg_relative_error: sum / records.len() as f64,
            max_relative_error: max,
            mean_update_time_s: config
                .measure_timing
                .then(|| update_secs / items.len() as f64),
            mean_query_time_s: config
                .measure_timing
                .then(|| query_secs / query_count as f64),
        })
    };
    Ok(Report {
        config: echo,
        records,
        aggregates,
        coverage_incomplete,
    })
}

fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::Input(msg) => Error::Input(format!("step {step}: {msg}")),
        other => other,
    }
}
