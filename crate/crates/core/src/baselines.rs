//! Comparison algorithms for sliding-window Gram estimation.
//!
//! - [`ExactWindow`]: buffers every in-window row; the measurement oracle
//!   all other estimators are scored against.
//! - [`SwrSampler`] / [`SworSampler`]: priority sampling with and without
//!   replacement. A row of squared norm `w` draws priority `u^(1/w)`; with
//!   replacement, `ell` independent samplers each keep a skyline of rows
//!   whose priority beats everything newer; without replacement, a single
//!   priority per row and the top `ell` in-window rows are kept.
//! - [`LmFd`]: exponential histogram of FD blocks; the window is split into
//!   geometrically growing blocks, each summarized by an `ell`-row sketch,
//!   merged pairwise when a level overflows.
//!
//! Sampling estimators are unbiased only in expectation and need the exact
//! window Frobenius mass for scaling; they exist for comparison fidelity,
//! not as space-efficient contenders.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fd::fd_merge;
use crate::linalg::{row_norm_sq, Mat, RowBuffer, ZERO_ROW_TOL};

fn check_row(d: usize, a: &[f64]) -> Result<()> {
    if a.len() != d {
        return Err(Error::Shape(format!(
            "row has {} entries, expected {d}",
            a.len()
        )));
    }
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical("row contains non-finite entries".into()));
    }
    Ok(())
}

/// Exact sliding-window state: every in-window row plus a running
/// Frobenius tracker.
#[derive(Debug, Clone)]
pub struct ExactWindow {
    d: usize,
    window_n: u64,
    buf: VecDeque<(Vec<f64>, u64)>,
    frob: f64,
    now: u64,
}

impl ExactWindow {
    pub fn new(d: usize, window_n: u64) -> ExactWindow {
        ExactWindow {
            d,
            window_n,
            buf: VecDeque::new(),
            frob: 0.0,
            now: 0,
        }
    }

    /// Inserts a row at `ts` and expires everything at or before
    /// `ts - window_n`. Zero rows advance time without being stored.
    pub fn update(&mut self, a: &[f64], ts: u64) -> Result<()> {
        check_row(self.d, a)?;
        self.now = self.now.max(ts);
        let w = row_norm_sq(a);
        if w > ZERO_ROW_TOL {
            self.buf.push_back((a.to_vec(), ts));
            self.frob += w;
        }
        while let Some((row, front_ts)) = self.buf.front() {
            if *front_ts + self.window_n <= self.now {
                self.frob -= row_norm_sq(row);
                self.buf.pop_front();
            } else {
                break;
            }
        }
        if self.buf.is_empty() {
            self.frob = 0.0;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Running window Frobenius mass.
    pub fn frob_sq(&self) -> f64 {
        self.frob
    }

    /// Exact window Gram, summed from the buffer.
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.d, self.d);
        for (row, _) in &self.buf {
            for i in 0..self.d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..self.d {
                    g[(i, j)] += ri * row[j];
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
struct SkylineEntry {
    row: Vec<f64>,
    ts: u64,
    priority: f64,
}

/// Priority sampling with replacement: `ell` independent samplers.
#[derive(Debug, Clone)]
pub struct SwrSampler {
    d: usize,
    window_n: u64,
    skylines: Vec<VecDeque<SkylineEntry>>,
    rngs: Vec<ChaCha8Rng>,
    now: u64,
}

impl SwrSampler {
    pub fn new(d: usize, window_n: u64, ell: usize, seed: u64) -> SwrSampler {
        let rngs = (0..ell)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                rng
            })
            .collect();
        SwrSampler {
            d,
            window_n,
            skylines: vec![VecDeque::new(); ell],
            rngs,
            now: 0,
        }
    }

    pub fn update(&mut self, a: &[f64], ts: u64) -> Result<()> {
        check_row(self.d, a)?;
        self.now = self.now.max(ts);
        let w = row_norm_sq(a);
        for (skyline, rng) in self.skylines.iter_mut().zip(self.rngs.iter_mut()) {
            if w > ZERO_ROW_TOL {
                let u: f64 = rng.random();
                let priority = u.powf(1.0 / w);
                // Skyline: drop everything the new row dominates (ties go to
                // the newer row), so priorities strictly decrease from the
                // head and the head is the in-window maximum.
                while skyline.back().map_or(false, |e| e.priority <= priority) {
                    skyline.pop_back();
                }
                skyline.push_back(SkylineEntry {
                    row: a.to_vec(),
                    ts,
                    priority,
                });
            }
            while skyline
                .front()
                .map_or(false, |e| e.ts + self.window_n <= self.now)
            {
                skyline.pop_front();
            }
        }
        Ok(())
    }

    /// One row per sampler, each rescaled to squared norm `frob_sq / ell`;
    /// zero matrix when the window is empty.
    pub fn estimate(&self, frob_sq: f64) -> Mat {
        let ell = self.skylines.len();
        let mut out = Mat::zeros(ell, self.d);
        for (i, skyline) in self.skylines.iter().enumerate() {
            if let Some(head) = skyline.front() {
                let scale = (frob_sq / ell as f64 / row_norm_sq(&head.row)).sqrt();
                for j in 0..self.d {
                    out[(i, j)] = head.row[j] * scale;
                }
            }
        }
        out
    }

    pub fn rows_held(&self) -> usize {
        self.skylines.iter().map(|s| s.len()).sum()
    }

    #[cfg(test)]
    fn skyline(&self, i: usize) -> &VecDeque<SkylineEntry> {
        &self.skylines[i]
    }
}

/// Priority sampling without replacement: one shared priority per row, the
/// top `ell` in-window priorities form the sample. The backing list is
/// expired lazily and is O(window) memory by design.
#[derive(Debug, Clone)]
pub struct SworSampler {
    d: usize,
    window_n: u64,
    ell: usize,
    entries: Vec<SkylineEntry>,
    rng: ChaCha8Rng,
    now: u64,
}

impl SworSampler {
    pub fn new(d: usize, window_n: u64, ell: usize, seed: u64) -> SworSampler {
        SworSampler {
            d,
            window_n,
            ell,
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
        }
    }

    pub fn update(&mut self, a: &[f64], ts: u64) -> Result<()> {
        check_row(self.d, a)?;
        self.now = self.now.max(ts);
        let w = row_norm_sq(a);
        if w > ZERO_ROW_TOL {
            let u: f64 = self.rng.random();
            self.entries.push(SkylineEntry {
                row: a.to_vec(),
                ts,
                priority: u.powf(1.0 / w),
            });
        }
        // Entries arrive in timestamp order, so the expired ones form a
        // prefix; compact once they outnumber the live ones.
        let live_from = self
            .entries
            .partition_point(|e| e.ts + self.window_n <= self.now);
        if live_from * 2 > self.entries.len() {
            self.entries.drain(..live_from);
        }
        Ok(())
    }

    /// Top `ell` in-window rows by priority (ties to the newer row), each
    /// rescaled to squared norm `frob_sq / ell`.
    pub fn estimate(&self, frob_sq: f64) -> Mat {
        let mut live: Vec<&SkylineEntry> = self
            .entries
            .iter()
            .filter(|e| e.ts + self.window_n > self.now)
            .collect();
        live.sort_by(|a, b| {
            b.priority
                .partial_cmp(&a.priority)
                .unwrap()
                .then(b.ts.cmp(&a.ts))
        });
        live.truncate(self.ell);
        let mut out = Mat::zeros(self.ell, self.d);
        for (i, e) in live.iter().enumerate() {
            let scale = (frob_sq / self.ell as f64 / row_norm_sq(&e.row)).sqrt();
            for j in 0..self.d {
                out[(i, j)] = e.row[j] * scale;
            }
        }
        out
    }

    pub fn rows_held(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone)]
struct Block {
    rows: Mat,
    mass: f64,
    newest_ts: u64,
}

/// Exponential histogram over FD sketches.
///
/// Level 0 blocks hold `ell` raw rows; each level keeps at most `b` blocks
/// and merges its two oldest into the next level on overflow. Blocks whose
/// newest row left the window are dropped; at most the oldest live block
/// straddles the window boundary.
#[derive(Debug, Clone)]
pub struct LmFd {
    d: usize,
    ell: usize,
    b: usize,
    window_n: u64,
    levels: Vec<VecDeque<Block>>,
    current: RowBuffer,
    current_newest: u64,
    now: u64,
}

impl LmFd {
    /// `ell = min(ceil(1/epsilon), d)` sketch rows, `b = ceil(1/epsilon)`
    /// blocks per level.
    pub fn new(d: usize, epsilon: f64, window_n: u64) -> Result<LmFd> {
        if d == 0 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon = {epsilon}; must be in (0, 1]"
            )));
        }
        if window_n == 0 {
            return Err(Error::Config("window_n must be >= 1".into()));
        }
        let b = (1.0 / epsilon).ceil() as usize;
        Ok(LmFd {
            d,
            ell: b.min(d).max(1),
            b,
            window_n,
            levels: Vec::new(),
            current: RowBuffer::new(d),
            current_newest: 0,
            now: 0,
        })
    }

    pub fn update(&mut self, a: &[f64], ts: u64) -> Result<()> {
        check_row(self.d, a)?;
        self.now = self.now.max(ts);
        if row_norm_sq(a) > ZERO_ROW_TOL {
            self.current.push_row(a);
            self.current_newest = ts;
            if self.current.nrows() == self.ell {
                self.seal_current()?;
            }
        }
        for level in &mut self.levels {
            while level
                .front()
                .map_or(false, |blk| blk.newest_ts + self.window_n <= self.now)
            {
                level.pop_front();
            }
        }
        Ok(())
    }

    fn seal_current(&mut self) -> Result<()> {
        let rows = self.current.to_mat();
        let mass = self.current.frob_sq();
        let newest_ts = self.current_newest;
        self.current.clear();
        if self.levels.is_empty() {
            self.levels.push(VecDeque::new());
        }
        self.levels[0].push_back(Block {
            rows,
            mass,
            newest_ts,
        });
        let mut k = 0;
        while k < self.levels.len() && self.levels[k].len() > self.b {
            let first = self.levels[k].pop_front().unwrap();
            let second = self.levels[k].pop_front().unwrap();
            let merged = Block {
                rows: fd_merge(self.ell, self.d, &[&first.rows, &second.rows])?,
                mass: first.mass + second.mass,
                newest_ts: first.newest_ts.max(second.newest_ts),
            };
            if k + 1 == self.levels.len() {
                self.levels.push(VecDeque::new());
            }
            self.levels[k + 1].push_back(merged);
            k += 1;
        }
        Ok(())
    }

    /// Merge of all live block sketches and the unfilled newest block.
    pub fn query(&self) -> Result<Mat> {
        let mut parts: Vec<Mat> = Vec::new();
        for level in &self.levels {
            for blk in level {
                parts.push(blk.rows.clone());
            }
        }
        if !self.current.is_empty() {
            parts.push(self.current.to_mat());
        }
        let refs: Vec<&Mat> = parts.iter().collect();
        fd_merge(self.ell, self.d, &refs)
    }

    pub fn block_count(&self) -> usize {
        self.levels.iter().map(|lvl| lvl.len()).sum()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Rows held: `ell` per sealed block plus the unfilled block's rows.
    pub fn rows_held(&self) -> usize {
        self.block_count() * self.ell + self.current.nrows()
    }
}
