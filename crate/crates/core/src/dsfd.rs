//! Sliding-window FrequentDirections over a normalized row stream.
//!
//! The structure keeps two FD processes. The main process answers queries;
//! the auxiliary process restarts every `N` steps and replaces the main one,
//! so no process ever accumulates more than two windows of mass. Whenever a
//! sketch row's squared norm reaches the dump threshold `theta`, the row is
//! evicted into a snapshot queue with its coverage interval; snapshots expire
//! once they fall outside the window. A query stacks the live snapshots with
//! the residual sketch rows, giving a Gram estimate within `4*theta` of the
//! window Gram (with `theta = epsilon * N` and `ell = min(ceil(1/epsilon), d)`
//! on unit-norm rows).
//!
//! Two engines implement the per-row absorption:
//!
//! - **eager**: re-decomposes the sketch on every row so the dump check sees
//!   the exact top singular direction.
//! - **fast**: buffers rows and tracks an upper bound `sigma1_hat` on the top
//!   singular value via the small Gram matrix `K = D*D^T`; it decomposes only
//!   when `sigma1_hat^2` reaches `theta` (eigen-deflation of `K`) or when the
//!   buffer reaches `2*ell` rows (FD shrink).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::fd::fd_merge;
use crate::linalg::{
    fd_shrink, row_norm_sq, svd_thin, sym_eig, Mat, RowBuffer, ZERO_ROW_TOL,
};

/// Rows are accepted as unit-norm when |‖a‖² − 1| is within this tolerance.
pub const NORMALIZED_TOL: f64 = 1e-9;

/// A direction evicted from the sketch once its squared norm reached the
/// dump threshold. Accounts for stream mass over positions `s..=t`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub v: Vec<f64>,
    pub s: u64,
    pub t: u64,
}

/// FIFO of snapshots in dump order.
///
/// `complete_since` is the earliest timestamp from which no mass has been
/// discarded: it starts at the owning process's creation time and advances to
/// `popped.t + 1` on every head pop, so it always tells the truth about how
/// far back the queue-plus-sketch estimate covers.
#[derive(Debug, Clone)]
pub struct SnapshotQueue {
    items: VecDeque<Snapshot>,
    prev_t: u64,
    complete_since: u64,
}

impl SnapshotQueue {
    fn new(after_ts: u64) -> Self {
        SnapshotQueue {
            items: VecDeque::new(),
            prev_t: after_ts,
            complete_since: after_ts + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snapshot> {
        self.items.iter()
    }

    pub fn head(&self) -> Option<&Snapshot> {
        self.items.front()
    }

    /// Earliest timestamp with no discarded coverage.
    pub fn complete_since(&self) -> u64 {
        self.complete_since
    }

    fn push(&mut self, v: Vec<f64>, t: u64) {
        debug_assert!(t >= self.prev_t, "snapshot time went backwards");
        let s = (self.prev_t + 1).min(t);
        self.items.push_back(Snapshot { v, s, t });
        self.prev_t = t;
    }

    fn pop_head(&mut self) {
        if let Some(snap) = self.items.pop_front() {
            self.complete_since = snap.t + 1;
        }
    }

    fn expire(&mut self, now: u64, window_n: u64) {
        while let Some(h) = self.items.front() {
            if h.t + window_n <= now {
                self.pop_head();
            } else {
                break;
            }
        }
    }

    fn enforce_cap(&mut self, cap: usize) {
        while self.items.len() > cap {
            self.pop_head();
        }
    }
}

/// Parameters of one sliding-window FD process pair.
#[derive(Debug, Clone)]
pub struct DsFdConfig {
    pub d: usize,
    pub ell: usize,
    pub window_n: u64,
    pub theta: f64,
}

impl DsFdConfig {
    pub fn new(d: usize, ell: usize, window_n: u64, theta: f64) -> Result<Self> {
        if d == 0 || ell == 0 {
            return Err(Error::Config(format!(
                "d = {d}, ell = {ell}; both must be >= 1"
            )));
        }
        if window_n == 0 {
            return Err(Error::Config("window_n must be >= 1".into()));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Config(format!("theta = {theta}; must be positive")));
        }
        Ok(DsFdConfig {
            d,
            ell,
            window_n,
            theta,
        })
    }

    /// Standard sizing for unit-norm rows: `ell = min(ceil(1/epsilon), d)`
    /// and `theta = epsilon * N`.
    pub fn normalized(d: usize, epsilon: f64, window_n: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon = {epsilon}; must be in (0, 1]"
            )));
        }
        let ell = ((1.0 / epsilon).ceil() as usize).min(d).max(1);
        DsFdConfig::new(d, ell, window_n, epsilon * window_n as f64)
    }
}

#[derive(Debug, Clone)]
struct EagerEngine {
    /// Sketch rows in decomposed form: mutually orthogonal, norms
    /// non-increasing, at most `ell` of them.
    rows: RowBuffer,
}

#[derive(Debug, Clone)]
struct FastEngine {
    /// Row buffer, at most `2*ell` rows; deflated rows stay in place.
    d_rows: RowBuffer,
    /// Gram of the buffer, maintained incrementally.
    k: Mat,
    /// Upper bound on the top squared singular value of the buffer.
    sigma1_sq_hat: f64,
}

#[derive(Debug, Clone)]
enum Engine {
    Eager(EagerEngine),
    Fast(FastEngine),
}

impl Engine {
    fn fresh(fast: bool, d: usize) -> Engine {
        if fast {
            Engine::Fast(FastEngine {
                d_rows: RowBuffer::new(d),
                k: Mat::zeros(0, 0),
                sigma1_sq_hat: 0.0,
            })
        } else {
            Engine::Eager(EagerEngine {
                rows: RowBuffer::new(d),
            })
        }
    }

    /// Rows the engine currently stores, zero rows excluded.
    fn live_rows(&self) -> Vec<Vec<f64>> {
        let buf = match self {
            Engine::Eager(e) => &e.rows,
            Engine::Fast(f) => &f.d_rows,
        };
        (0..buf.nrows())
            .filter(|&i| buf.row_norm_sq(i) > ZERO_ROW_TOL)
            .map(|i| buf.row(i).to_vec())
            .collect()
    }

    /// Memory rows the engine accounts for: the eager sketch always owns
    /// `ell` slots, the fast buffer is counted by its actual length.
    fn rows_held(&self, ell: usize) -> usize {
        match self {
            Engine::Eager(_) => ell,
            Engine::Fast(f) => f.d_rows.nrows(),
        }
    }
}

#[derive(Debug, Clone)]
struct Process {
    engine: Engine,
    queue: SnapshotQueue,
    /// Mass absorbed since this process was created; drives mass-based
    /// restarts in the layered modes.
    lifetime_mass: f64,
    /// Timestamp of the last row the sketch absorbed (0 = never); a sketch
    /// older than one window contributes nothing to a query.
    last_absorb: u64,
}

impl Process {
    fn fresh(fast: bool, d: usize, after_ts: u64) -> Process {
        Process {
            engine: Engine::fresh(fast, d),
            queue: SnapshotQueue::new(after_ts),
            lifetime_mass: 0.0,
            last_absorb: 0,
        }
    }

    fn absorb(
        &mut self,
        a: &[f64],
        now: u64,
        config: &DsFdConfig,
        decompositions: &mut u64,
    ) -> Result<()> {
        self.lifetime_mass += row_norm_sq(a);
        self.last_absorb = now;
        match &mut self.engine {
            Engine::Eager(e) => {
                eager_absorb(e, &mut self.queue, a, now, config, decompositions)
            }
            Engine::Fast(f) => {
                fast_absorb(f, &mut self.queue, a, now, config, decompositions)
            }
        }
    }
}

/// Append, re-decompose exactly, dump every row at or above `theta`, and
/// shrink only if more than `ell` directions remain (which can happen only
/// when nothing was dumped).
fn eager_absorb(
    engine: &mut EagerEngine,
    queue: &mut SnapshotQueue,
    a: &[f64],
    now: u64,
    config: &DsFdConfig,
    decompositions: &mut u64,
) -> Result<()> {
    let mut stack = engine.rows.clone();
    stack.push_row(a);
    let svd = svd_thin(&stack.to_mat())?;
    *decompositions += 1;

    let floor = svd.singular_values.first().copied().unwrap_or(0.0) * 1e-12;
    let mut norms_sq: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= floor || sigma == 0.0 {
            break;
        }
        let mut row = vec![0.0; config.d];
        for j in 0..config.d {
            row[j] = sigma * svd.vt[(i, j)];
        }
        norms_sq.push(sigma * sigma);
        rows.push(row);
    }

    let mut start = 0;
    while start < rows.len() && norms_sq[start] >= config.theta {
        queue.push(std::mem::take(&mut rows[start]), now);
        start += 1;
    }
    let mut live: Vec<Vec<f64>> = rows.drain(start..).collect();
    let mut live_norms: Vec<f64> = norms_sq.drain(start..).collect();

    if live.len() > config.ell {
        let delta = live_norms[config.ell - 1];
        let mut shrunk = Vec::new();
        for (row, nsq) in live.drain(..).zip(live_norms.drain(..)) {
            let scaled_sq = (nsq - delta).max(0.0);
            if scaled_sq > ZERO_ROW_TOL {
                let scale = (scaled_sq / nsq).sqrt();
                shrunk.push(row.iter().map(|x| x * scale).collect());
            }
        }
        live = shrunk;
    }

    let mut buf = RowBuffer::new(config.d);
    for row in &live {
        buf.push_row(row);
    }
    engine.rows = buf;
    Ok(())
}

/// Buffered absorption: decompose only at the `2*ell` merge or when the
/// tracked upper bound `sigma1_hat^2` reaches `theta`.
fn fast_absorb(
    engine: &mut FastEngine,
    queue: &mut SnapshotQueue,
    a: &[f64],
    now: u64,
    config: &DsFdConfig,
    decompositions: &mut u64,
) -> Result<()> {
    engine.d_rows.push_row(a);
    engine.sigma1_sq_hat += row_norm_sq(a);

    if engine.d_rows.nrows() >= 2 * config.ell {
        let shrunk = fd_shrink(&engine.d_rows.to_mat(), config.ell)?;
        *decompositions += 1;
        let mut live: Vec<Vec<f64>> = Vec::new();
        for i in 0..shrunk.nrows() {
            let row: Vec<f64> = shrunk.row(i).iter().copied().collect();
            if row_norm_sq(&row) > ZERO_ROW_TOL {
                live.push(row);
            }
        }
        // fd_shrink returns rows by non-increasing norm; dump from the top.
        let mut start = 0;
        while start < live.len() && row_norm_sq(&live[start]) >= config.theta {
            queue.push(std::mem::take(&mut live[start]), now);
            start += 1;
        }
        let live: Vec<Vec<f64>> = live.drain(start..).collect();

        let mut buf = RowBuffer::new(config.d);
        for row in &live {
            buf.push_row(row);
        }
        engine.d_rows = buf;
        engine.k = rebuild_gram(&engine.d_rows);
        engine.sigma1_sq_hat = live.first().map(|r| row_norm_sq(r)).unwrap_or(0.0);
        return Ok(());
    }

    extend_gram(engine, a);

    if engine.sigma1_sq_hat >= config.theta {
        let (vals, vecs) = sym_eig(&engine.k)?;
        *decompositions += 1;
        let m = engine.d_rows.nrows();
        let mut remaining = 0.0f64;
        for (j, &lambda) in vals.iter().enumerate() {
            if lambda < config.theta {
                remaining = lambda.max(0.0);
                break;
            }
            let sigma = lambda.sqrt();
            // v = (1/sigma) D^T u, the right singular direction to evict.
            let mut v = vec![0.0; config.d];
            for i in 0..m {
                let ui = vecs[(i, j)];
                if ui != 0.0 {
                    let row = engine.d_rows.row(i);
                    for c in 0..config.d {
                        v[c] += ui * row[c];
                    }
                }
            }
            for c in 0..config.d {
                v[c] /= sigma;
            }
            queue.push(v.iter().map(|x| x * sigma).collect(), now);
            // w = D v, taken before D changes, so K - w w^T stays the exact
            // Gram of the deflated buffer.
            let mut w = vec![0.0; m];
            for i in 0..m {
                let row = engine.d_rows.row(i);
                let mut dot = 0.0;
                for c in 0..config.d {
                    dot += row[c] * v[c];
                }
                w[i] = dot;
            }
            for r in 0..m {
                for c in 0..m {
                    engine.k[(r, c)] -= w[r] * w[c];
                }
            }
            for i in 0..m {
                let wi = w[i];
                if wi != 0.0 {
                    let row = engine.d_rows.row_mut(i);
                    for c in 0..config.d {
                        row[c] -= wi * v[c];
                    }
                }
            }
        }
        engine.sigma1_sq_hat = remaining;
    }
    Ok(())
}

fn rebuild_gram(buf: &RowBuffer) -> Mat {
    let m = buf.nrows();
    let mut k = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut dot = 0.0;
            let (ri, rj) = (buf.row(i), buf.row(j));
            for c in 0..ri.len() {
                dot += ri[c] * rj[c];
            }
            k[(i, j)] = dot;
            k[(j, i)] = dot;
        }
    }
    k
}

/// Grow K by one bordered row/column for the appended buffer row `a`.
fn extend_gram(engine: &mut FastEngine, a: &[f64]) {
    let m = engine.d_rows.nrows();
    let mut k = Mat::zeros(m, m);
    k.view_mut((0, 0), (m - 1, m - 1)).copy_from(&engine.k);
    for i in 0..m - 1 {
        let row = engine.d_rows.row(i);
        let mut dot = 0.0;
        for c in 0..a.len() {
            dot += row[c] * a[c];
        }
        k[(i, m - 1)] = dot;
        k[(m - 1, i)] = dot;
    }
    k[(m - 1, m - 1)] = row_norm_sq(a);
    engine.k = k;
}

/// Sliding-window FD sketch with dual restarting processes.
#[derive(Debug, Clone)]
pub struct DsFd {
    config: DsFdConfig,
    main: Process,
    aux: Process,
    step: u64,
    fast: bool,
    decompositions: u64,
}

impl DsFd {
    /// Eager-engine instance: exact dump checks, one SVD per row.
    pub fn new(config: DsFdConfig) -> Result<Self> {
        Self::build(config, false)
    }

    /// Fast-engine instance: decomposes only on dump triggers and merges.
    pub fn new_fast(config: DsFdConfig) -> Result<Self> {
        Self::build(config, true)
    }

    fn build(config: DsFdConfig, fast: bool) -> Result<Self> {
        Ok(DsFd {
            main: Process::fresh(fast, config.d, 0),
            aux: Process::fresh(fast, config.d, 0),
            config,
            step: 0,
            fast,
            decompositions: 0,
        })
    }

    pub fn config(&self) -> &DsFdConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Count of SVD or eigendecomposition calls performed so far.
    pub fn decompositions(&self) -> u64 {
        self.decompositions
    }

    fn check_row(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.config.d {
            return Err(Error::Shape(format!(
                "row has {} entries, expected {}",
                a.len(),
                self.config.d
            )));
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("row contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Absorbs one unit-norm row at the next sequence position.
    pub fn update(&mut self, a: &[f64]) -> Result<()> {
        self.check_row(a)?;
        let nsq = row_norm_sq(a);
        if (nsq - 1.0).abs() > NORMALIZED_TOL {
            return Err(Error::Input(format!(
                "row squared norm {nsq} is not 1 within {NORMALIZED_TOL:e}"
            )));
        }
        self.step += 1;
        let now = self.step;
        if (now - 1) % self.config.window_n == 0 {
            self.swap_processes(now - 1);
        }
        self.main.queue.expire(now, self.config.window_n);
        self.main.absorb(a, now, &self.config, &mut self.decompositions)?;
        self.aux.absorb(a, now, &self.config, &mut self.decompositions)?;
        Ok(())
    }

    /// Retires the main process and promotes the auxiliary one; the fresh
    /// auxiliary process covers the stream strictly after `after_ts`.
    pub(crate) fn swap_processes(&mut self, after_ts: u64) {
        self.main = std::mem::replace(
            &mut self.aux,
            Process::fresh(self.fast, self.config.d, after_ts),
        );
    }

    /// Layered-mode absorption at an external timestamp: no swap, no expiry,
    /// no normalization check; both processes ingest the row.
    pub(crate) fn absorb_both(&mut self, a: &[f64], now: u64) -> Result<()> {
        self.check_row(a)?;
        self.step = self.step.max(now);
        self.main.absorb(a, now, &self.config, &mut self.decompositions)?;
        self.aux.absorb(a, now, &self.config, &mut self.decompositions)?;
        Ok(())
    }

    /// Appends the row itself as a snapshot to both queues, bypassing the
    /// sketches; used for rows whose norm already meets the dump threshold.
    pub(crate) fn direct_snapshot(&mut self, a: &[f64], now: u64) {
        self.step = self.step.max(now);
        self.main.queue.push(a.to_vec(), now);
        self.aux.queue.push(a.to_vec(), now);
        self.main.lifetime_mass += row_norm_sq(a);
        self.aux.lifetime_mass += row_norm_sq(a);
    }

    /// Advances logical time without absorbing anything.
    pub(crate) fn note_time(&mut self, now: u64) {
        self.step = self.step.max(now);
    }

    /// Expires and caps both queues against the window ending at `now`.
    pub(crate) fn prune_queues(&mut self, now: u64, cap: usize) {
        for p in [&mut self.main, &mut self.aux] {
            p.queue.expire(now, self.config.window_n);
            p.queue.enforce_cap(cap);
        }
    }

    pub(crate) fn aux_lifetime_mass(&self) -> f64 {
        self.aux.lifetime_mass
    }

    /// Earliest timestamp from which the main process's estimate is
    /// complete (nothing discarded from its queue since then).
    pub fn coverage_since(&self) -> u64 {
        self.main.queue.complete_since()
    }

    pub fn main_queue_len(&self) -> usize {
        self.main.queue.len()
    }

    pub fn aux_queue_len(&self) -> usize {
        self.aux.queue.len()
    }

    #[cfg(test)]
    pub(crate) fn main_queue(&self) -> &SnapshotQueue {
        &self.main.queue
    }

    /// Total d-dimensional rows held: both sketches plus both queues.
    pub fn rows_held(&self) -> usize {
        self.main.engine.rows_held(self.config.ell)
            + self.aux.engine.rows_held(self.config.ell)
            + self.main.queue.len()
            + self.aux.queue.len()
    }

    fn estimate_rows(&self, now: u64) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for snap in self.main.queue.iter() {
            if snap.t + self.config.window_n > now {
                rows.push(snap.v.clone());
            }
        }
        // A sketch that absorbed nothing within the window holds only
        // expired mass; leaving it out keeps idle-window estimates at zero.
        if self.main.last_absorb > 0 && self.main.last_absorb + self.config.window_n > now {
            rows.extend(self.main.engine.live_rows());
        }
        rows
    }

    /// Uncompressed estimate: live snapshots stacked with the residual
    /// sketch rows. The Gram of the result approximates the window Gram.
    pub fn query_rows(&self) -> Mat {
        let rows = self.estimate_rows(self.step);
        if rows.is_empty() {
            return Mat::zeros(0, self.config.d);
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Mat::from_row_slice(rows.len(), self.config.d, &flat)
    }

    /// Estimate merged down to `ell` rows.
    pub fn query_compressed(&self) -> Result<Mat> {
        let stack = self.query_rows();
        fd_merge(self.config.ell, self.config.d, &[&stack])
    }

    /// Largest relative deviation of K from the true buffer Gram across the
    /// two fast processes; None for the eager engine.
    #[cfg(test)]
    pub(crate) fn fast_gram_residual(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for p in [&self.main, &self.aux] {
            if let Engine::Fast(f) = &p.engine {
                let exact = rebuild_gram(&f.d_rows);
                let diff = (&f.k - &exact).norm();
                let rel = diff / (1.0 + exact.norm());
                worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
            }
        }
        worst
    }

    /// Slack of the sigma1 upper bound: min over fast processes of
    /// `sigma1_hat^2 - lambda_max(K)`; None for the eager engine.
    #[cfg(test)]
    pub(crate) fn fast_sigma1_slack(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for p in [&self.main, &self.aux] {
            if let Engine::Fast(f) = &p.engine {
                if f.k.nrows() == 0 {
                    continue;
                }
                let (vals, _) = sym_eig(&f.k).ok()?;
                let slack = f.sigma1_sq_hat - vals[0];
                worst = Some(worst.map_or(slack, |w: f64| w.min(slack)));
            }
        }
        worst
    }
}

/// Removes the direction `v` from the buffer `D` and its Gram `K`.
///
/// With `w = D v` taken from the unmodified buffer, `K - w w^T` is exactly
/// the Gram of `D - w v^T`; when `v` is a right singular vector of `D` this
/// deletes one row of the decomposed form (the rank-1 term `sigma u v^T`).
pub fn deflate(d_mat: &Mat, k: &Mat, v: &[f64]) -> Result<(Mat, Mat)> {
    if v.len() != d_mat.ncols() {
        return Err(Error::Shape(format!(
            "v has {} entries, D has {} columns",
            v.len(),
            d_mat.ncols()
        )));
    }
    let vnorm = row_norm_sq(v);
    if (vnorm - 1.0).abs() > NORMALIZED_TOL {
        return Err(Error::Input(format!(
            "v squared norm {vnorm} is not 1 within {NORMALIZED_TOL:e}"
        )));
    }
    if k.nrows() != d_mat.nrows() || k.ncols() != d_mat.nrows() {
        return Err(Error::Shape(format!(
            "K is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            d_mat.nrows(),
            d_mat.nrows()
        )));
    }
    let m = d_mat.nrows();
    let n = d_mat.ncols();
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut dot = 0.0;
        for c in 0..n {
            dot += d_mat[(i, c)] * v[c];
        }
        w[i] = dot;
    }
    let mut d_out = d_mat.clone();
    for i in 0..m {
        for c in 0..n {
            d_out[(i, c)] -= w[i] * v[c];
        }
    }
    let mut k_out = k.clone();
    for r in 0..m {
        for c in 0..m {
            k_out[(r, c)] -= w[r] * w[c];
        }
    }
    Ok((d_out, k_out))
}
