//! Stream synthesis and ingestion.
//!
//! Four sources feed the benchmarks: a low-rank-plus-noise synthetic
//! generator (`A = SDU + noise/zeta`), CSV files, Poisson arrival
//! timestamps, and an adversarial block stream that front-loads
//! geometrically heavy orthonormal blocks before a long unit-norm tail.
//! All generators are deterministic under a fixed seed: replaying with the
//! same arguments yields bit-identical streams.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::layered::ceil_log2;
use crate::linalg::{row_norm_sq, Mat};

/// One stream element: a row vector and its integer timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub row: Vec<f64>,
    pub ts: u64,
}

/// Where rows come from.
#[derive(Debug, Clone)]
pub enum Source {
    Synthetic {
        n: usize,
        d: usize,
        zeta: f64,
        seed: u64,
    },
    Csv {
        path: std::path::PathBuf,
        timestamp_column: Option<usize>,
    },
    Adversarial {
        d: usize,
        ell: usize,
        window_n: u64,
        big_r: f64,
        seed: u64,
    },
}

/// How timestamps are assigned to rows.
#[derive(Debug, Clone)]
pub enum Timestamping {
    /// ts = 1, 2, 3, ...
    Sequence,
    /// Ceiled cumulative exponential inter-arrivals.
    Poisson { lambda: f64, seed: u64 },
    /// Timestamps come from the source itself (CSV timestamp column).
    Column,
}

#[derive(Debug, Clone)]
pub struct StreamSpec {
    pub source: Source,
    pub timestamping: Timestamping,
}

/// Materializes a `StreamSpec` into timestamped rows.
pub fn open(spec: &StreamSpec) -> Result<Vec<StreamItem>> {
    let mut items: Vec<StreamItem> = match &spec.source {
        Source::Synthetic { n, d, zeta, seed } => gen_synthetic(*n, *d, *zeta, *seed)?
            .enumerate()
            .map(|(i, row)| StreamItem {
                row,
                ts: (i + 1) as u64,
            })
            .collect(),
        Source::Csv {
            path,
            timestamp_column,
        } => load_csv(path, *timestamp_column)?,
        Source::Adversarial {
            d,
            ell,
            window_n,
            big_r,
            seed,
        } => gen_adversarial(*d, *ell, *window_n, *big_r, *seed)?
            .enumerate()
            .map(|(i, row)| StreamItem {
                row,
                ts: (i + 1) as u64,
            })
            .collect(),
    };
    match &spec.timestamping {
        Timestamping::Sequence => {
            for (i, item) in items.iter_mut().enumerate() {
                item.ts = (i + 1) as u64;
            }
        }
        Timestamping::Poisson { lambda, seed } => {
            let ts = gen_poisson_ts(items.len(), *lambda, *seed)?;
            for (item, t) in items.iter_mut().zip(ts) {
                item.ts = t;
            }
        }
        Timestamping::Column => {
            if !matches!(spec.source, Source::Csv { timestamp_column: Some(_), .. }) {
                return Err(Error::Config(
                    "column timestamping requires a CSV source with a timestamp column".into(),
                ));
            }
        }
    }
    Ok(items)
}

/// Squared-norm range (min, max) over nonzero rows; (0, 0) if none.
pub fn norm_range(items: &[StreamItem]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for item in items {
        let w = row_norm_sq(&item.row);
        if w > 0.0 {
            lo = lo.min(w);
            hi = hi.max(w);
        }
    }
    if hi == 0.0 {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Lazy `A = SDU + noise/zeta` row generator.
///
/// `S` is standard normal, `D` diagonal with `D[i][i] = 1 - i/d` (zero
/// based), `U` the orthonormal Q factor of a seeded Gaussian `d x d`
/// matrix. Draw order is fixed: `U` entries row by row, then per emitted
/// row `d` signal draws followed by `d` noise draws.
pub struct SyntheticStream {
    remaining: usize,
    d: usize,
    inv_zeta: f64,
    diag: Vec<f64>,
    u: Mat,
    rng: ChaCha8Rng,
}

pub fn gen_synthetic(n: usize, d: usize, zeta: f64, seed: u64) -> Result<SyntheticStream> {
    if n == 0 || d == 0 {
        return Err(Error::Config("n and d must be >= 1".into()));
    }
    if !(zeta > 0.0) {
        return Err(Error::Config(format!("zeta = {zeta}; must be > 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let u = g.qr().q();
    let diag: Vec<f64> = (0..d).map(|i| 1.0 - i as f64 / d as f64).collect();
    Ok(SyntheticStream {
        remaining: n,
        d,
        inv_zeta: 1.0 / zeta,
        diag,
        u,
        rng,
    })
}

impl Iterator for SyntheticStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let d = self.d;
        let signal: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let mut row = vec![0.0; d];
        for i in 0..d {
            let c = signal[i] * self.diag[i];
            if c == 0.0 {
                continue;
            }
            for j in 0..d {
                row[j] += c * self.u[(i, j)];
            }
        }
        for x in row.iter_mut() {
            let noise: f64 = StandardNormal.sample(&mut self.rng);
            *x += noise * self.inv_zeta;
        }
        Some(row)
    }
}

/// Parses comma-separated float rows from a reader.
///
/// With `timestamp_column = Some(k)`, cell `k` (zero based) must hold a
/// non-decreasing non-negative integer timestamp and is stripped from the
/// row; otherwise timestamps default to 1, 2, 3, ... Blank lines are
/// skipped. Line numbers in errors are 1-based.
pub fn parse_csv<R: BufRead>(
    reader: R,
    timestamp_column: Option<usize>,
) -> Result<Vec<StreamItem>> {
    let mut items = Vec::new();
    let mut expected_cells: Option<usize> = None;
    let mut prev_ts: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match expected_cells {
            None => expected_cells = Some(cells.len()),
            Some(n) if n != cells.len() => {
                return Err(Error::Format {
                    line: line_no,
                    msg: format!("expected {n} cells, found {}", cells.len()),
                });
            }
            _ => {}
        }
        let ts = match timestamp_column {
            Some(k) => {
                let cell = cells.get(k).ok_or_else(|| Error::Format {
                    line: line_no,
                    msg: format!("timestamp column {k} out of range"),
                })?;
                let ts: u64 = cell.parse().map_err(|_| Error::Format {
                    line: line_no,
                    msg: format!("timestamp {cell:?} is not a non-negative integer"),
                })?;
                if let Some(prev) = prev_ts {
                    if ts < prev {
                        return Err(Error::Format {
                            line: line_no,
                            msg: format!("timestamp {ts} decreases from {prev}"),
                        });
                    }
                }
                prev_ts = Some(ts);
                ts
            }
            None => (items.len() + 1) as u64,
        };
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            if Some(j) == timestamp_column {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Format {
                line: line_no,
                msg: format!("cell {cell:?} is not a decimal number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line: line_no,
                    msg: format!("cell {cell:?} is not finite"),
                });
            }
            row.push(v);
        }
        items.push(StreamItem { row, ts });
    }
    Ok(items)
}

/// Loads a CSV file; see [`parse_csv`].
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    timestamp_column: Option<usize>,
) -> Result<Vec<StreamItem>> {
    parse_csv(BufReader::new(File::open(path)?), timestamp_column)
}

/// `n` timestamps `ts_k = ceil(sum of k Exp(lambda) inter-arrivals)`,
/// non-decreasing with expected span `n / lambda`.
pub fn gen_poisson_ts(n: usize, lambda: f64, seed: u64) -> Result<Vec<u64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda = {lambda}; must be > 0")));
    }
    let exp = Exp::new(lambda).map_err(|e| Error::Config(format!("lambda = {lambda}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        acc += exp.sample(&mut rng);
        out.push(acc.ceil().max(1.0) as u64);
    }
    Ok(out)
}

/// Adversarial block stream for window stress tests.
///
/// Emits `ceil(log2 R) + 1` blocks, heaviest first: block `i` (counting
/// down) is a seeded random orthonormal `(ell/4) x d` matrix whose rows
/// carry squared norm `2^i * N / ell`, split into equal-norm duplicates so
/// every emitted copy's squared norm lands in `[1, R + 1]`. A tail of `N`
/// one-hot rows (cycling coordinates) follows. Block Frobenius mass is
/// exactly `2^i * N / 4`.
pub struct AdversarialStream {
    schedule: Vec<(Vec<f64>, usize)>,
    schedule_idx: usize,
    copies_left: usize,
    block_sizes: Vec<usize>,
    tail_remaining: usize,
    tail_coord: usize,
    d: usize,
}

pub fn gen_adversarial(
    d: usize,
    ell: usize,
    window_n: u64,
    big_r: f64,
    seed: u64,
) -> Result<AdversarialStream> {
    if ell < 4 || ell % 4 != 0 {
        return Err(Error::Config(format!(
            "ell = {ell}; must be a positive multiple of 4"
        )));
    }
    if d < ell / 4 {
        return Err(Error::Config(format!(
            "d = {d} is too small for orthonormal blocks of {} rows",
            ell / 4
        )));
    }
    if !(big_r >= 1.0 && big_r.is_finite()) {
        return Err(Error::Config(format!("R = {big_r}; must be >= 1")));
    }
    let feasible = (ell as f64 / 2.0) * (ell as f64 * big_r).log2();
    if (window_n as f64) < feasible {
        return Err(Error::Config(format!(
            "window_n = {window_n} < (ell/2) * log2(ell * R) = {feasible:.2}"
        )));
    }
    let rows_per_block = ell / 4;
    let top = ceil_log2(big_r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = Vec::new();
    let mut block_sizes = Vec::new();
    for i in (0..=top).rev() {
        let mut g = Mat::zeros(d, rows_per_block);
        for r in 0..d {
            for c in 0..rows_per_block {
                g[(r, c)] = StandardNormal.sample(&mut rng);
            }
        }
        // Q of a tall Gaussian has orthonormal columns; transpose to rows.
        let q = g.qr().q();
        let s = 2f64.powi(i as i32) * window_n as f64 / ell as f64;
        let copies = ((s / big_r).ceil() as usize).min(s.floor() as usize).max(1);
        let scale = (s / copies as f64).sqrt();
        for c in 0..rows_per_block {
            let row: Vec<f64> = (0..d).map(|r| q[(r, c)] * scale).collect();
            schedule.push((row, copies));
        }
        block_sizes.push(rows_per_block * copies);
    }
    Ok(AdversarialStream {
        schedule,
        schedule_idx: 0,
        copies_left: 0,
        block_sizes,
        tail_remaining: window_n as usize,
        tail_coord: 0,
        d,
    })
}

impl AdversarialStream {
    /// Emitted row count per block, heaviest block first (tail excluded).
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }
}

impl Iterator for AdversarialStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.copies_left == 0 && self.schedule_idx < self.schedule.len() {
            self.copies_left = self.schedule[self.schedule_idx].1;
        }
        if self.copies_left > 0 {
            let row = self.schedule[self.schedule_idx].0.clone();
            self.copies_left -= 1;
            if self.copies_left == 0 {
                self.schedule_idx += 1;
            }
            return Some(row);
        }
        if self.tail_remaining > 0 {
            self.tail_remaining -= 1;
            let mut row = vec![0.0; self.d];
            row[self.tail_coord] = 1.0;
            self.tail_coord = (self.tail_coord + 1) % self.d;
            return Some(row);
        }
        None
    }
}
