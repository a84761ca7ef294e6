//! Layered sliding-window sketches for streams with varying row norms.
//!
//! A single sliding-window FD process assumes unit-norm rows. For squared
//! norms in `[1, R]` the structure runs `L + 1` parallel processes with
//! geometrically spaced dump thresholds (`L = ceil(log2 R)` for
//! sequence-based windows, `ceil(log2(epsilon*N*R))` with thresholds `2^i`
//! for time-based windows). Each layer restarts by mass rather than by step
//! count, rows heavy enough to meet a layer's threshold are stored verbatim
//! as snapshots, and per-layer queues are capped so total memory stays
//! within `O((d/epsilon) log R)` rows.
//!
//! A query walks the layers from the finest threshold up and answers from
//! the first one whose queue still covers the whole window; if none does,
//! the top layer answers and the result is flagged incomplete.

use crate::dsfd::{DsFd, DsFdConfig};
use crate::error::{Error, Result};
use crate::fd::fd_merge;
use crate::linalg::{row_norm_sq, Mat, ZERO_ROW_TOL};

/// How window membership is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Window = the most recent `N` rows; each row advances time by one.
    Sequence,
    /// Window = rows whose external timestamp lies in `(now - N, now]`.
    Time,
}

/// Parameters for a layered sketch.
#[derive(Debug, Clone)]
pub struct LayeredConfig {
    pub mode: WindowMode,
    pub d: usize,
    pub epsilon: f64,
    /// Window length: rows in sequence mode, time units in time mode.
    pub window_n: u64,
    /// Upper bound on row squared norms.
    pub big_r: f64,
    /// Error coefficient; the guarantees are validated at beta = 4.
    pub beta: f64,
    /// Use the eager per-layer engine instead of the fast one.
    pub eager: bool,
}

impl LayeredConfig {
    pub fn new(mode: WindowMode, d: usize, epsilon: f64, window_n: u64, big_r: f64) -> Self {
        LayeredConfig {
            mode,
            d,
            epsilon,
            window_n,
            big_r,
            beta: 1.0,
            eager: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon = {}; must be in (0, 1]",
                self.epsilon
            )));
        }
        if self.window_n == 0 {
            return Err(Error::Config("window_n must be >= 1".into()));
        }
        if !(self.big_r >= 1.0) || !self.big_r.is_finite() {
            return Err(Error::Config(format!(
                "R = {}; must be >= 1",
                self.big_r
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta = {}; must be positive",
                self.beta
            )));
        }
        Ok(())
    }

    /// Sketch rows per layer: `min(ceil(1/epsilon), d)`.
    pub fn ell(&self) -> usize {
        ((1.0 / self.epsilon).ceil() as usize).min(self.d).max(1)
    }

    /// Index of the top layer, `L`.
    pub fn top_layer(&self) -> usize {
        match self.mode {
            WindowMode::Sequence => ceil_log2(self.big_r),
            WindowMode::Time => {
                ceil_log2(self.epsilon * self.window_n as f64 * self.big_r)
            }
        }
    }

    /// Dump threshold of layer `j`.
    pub fn theta(&self, j: usize) -> f64 {
        let scale = match self.mode {
            WindowMode::Sequence => self.epsilon * self.window_n as f64,
            WindowMode::Time => 1.0,
        };
        scale * (1u64 << j) as f64
    }

    /// Per-queue snapshot cap, `2 (1 + 4/beta) / epsilon`.
    pub fn snapshot_cap(&self) -> usize {
        (2.0 * (1.0 + 4.0 / self.beta) / self.epsilon).floor() as usize
    }

    /// Mass a layer's auxiliary process absorbs before it takes over,
    /// `theta_j / epsilon`; on unit rows at layer 0 this is one window.
    fn swap_mass(&self, j: usize) -> f64 {
        self.theta(j) / self.epsilon
    }
}

/// Smallest L with 2^L >= x (0 for x <= 1).
pub(crate) fn ceil_log2(x: f64) -> usize {
    let mut level = 0;
    let mut pow = 1.0f64;
    while pow < x {
        pow *= 2.0;
        level += 1;
    }
    level
}

/// Parallel DS-FD layers answering window Gram queries on rows with squared
/// norms in `[1, R]`.
#[derive(Debug, Clone)]
pub struct LayeredDsFd {
    config: LayeredConfig,
    layers: Vec<DsFd>,
    now: u64,
}

impl LayeredDsFd {
    pub fn new(config: LayeredConfig) -> Result<Self> {
        config.validate()?;
        let ell = config.ell();
        let mut layers = Vec::with_capacity(config.top_layer() + 1);
        for j in 0..=config.top_layer() {
            let layer_config =
                DsFdConfig::new(config.d, ell, config.window_n, config.theta(j))?;
            layers.push(if config.eager {
                DsFd::new(layer_config)?
            } else {
                DsFd::new_fast(layer_config)?
            });
        }
        Ok(LayeredDsFd {
            config,
            layers,
            now: 0,
        })
    }

    pub fn config(&self) -> &LayeredConfig {
        &self.config
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Queue lengths (main, aux) of layer `j`.
    pub fn queue_lens(&self, j: usize) -> (usize, usize) {
        (self.layers[j].main_queue_len(), self.layers[j].aux_queue_len())
    }

    /// Total d-dimensional rows held across all layers.
    pub fn rows_held(&self) -> usize {
        self.layers.iter().map(|l| l.rows_held()).sum()
    }

    /// Absorbs one row at timestamp `ts`.
    ///
    /// Sequence mode requires consecutive timestamps and squared norms in
    /// `[1, R]`. Time mode requires non-decreasing timestamps; a zero-norm
    /// row is an idle tick that advances time and expiry only.
    pub fn update(&mut self, a: &[f64], ts: u64) -> Result<()> {
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
        let w = row_norm_sq(a);
        let cap = self.config.snapshot_cap();
        let prev = self.now;
        match self.config.mode {
            WindowMode::Sequence => {
                if ts != prev + 1 {
                    return Err(Error::Input(format!(
                        "sequence timestamps must be consecutive: got {ts} after {prev}"
                    )));
                }
            }
            WindowMode::Time => {
                if ts < prev {
                    return Err(Error::Input(format!(
                        "timestamp {ts} precedes {prev}"
                    )));
                }
                if w <= ZERO_ROW_TOL {
                    self.now = ts;
                    for layer in &mut self.layers {
                        layer.prune_queues(ts, cap);
                        layer.note_time(ts);
                    }
                    return Ok(());
                }
            }
        }
        if w < 1.0 - 1e-9 || w > self.config.big_r * (1.0 + 1e-9) {
            return Err(Error::Input(format!(
                "row squared norm {w} outside [1, {}]",
                self.config.big_r
            )));
        }
        self.now = ts;
        for j in 0..self.layers.len() {
            let swap_mass = self.config.swap_mass(j);
            let theta = self.config.theta(j);
            let layer = &mut self.layers[j];
            // Mass-based restart, checked before the row lands: on unit rows
            // at layer 0 this reproduces the plain every-N swap exactly.
            if layer.aux_lifetime_mass() >= swap_mass {
                layer.swap_processes(prev);
            }
            layer.prune_queues(ts, cap);
            if w >= theta {
                // The row alone meets the dump threshold: store it verbatim,
                // contributing zero error for this row.
                layer.direct_snapshot(a, ts);
            } else {
                layer.absorb_both(a, ts)?;
            }
            layer.prune_queues(ts, cap);
        }
        Ok(())
    }

    fn window_start(&self) -> u64 {
        if self.now >= self.config.window_n {
            self.now - self.config.window_n + 1
        } else {
            1
        }
    }

    /// Smallest layer whose main queue still covers the window, scanning
    /// from the finest threshold up; `(top_layer, false)` if none does.
    pub fn layer_select(&self) -> (usize, bool) {
        let start = self.window_start();
        for (j, layer) in self.layers.iter().enumerate() {
            if layer.coverage_since() <= start {
                return (j, true);
            }
        }
        (self.layers.len() - 1, false)
    }

    /// Binary-search variant of [`layer_select`](Self::layer_select); relies
    /// on coverage extending further back at higher layers, which holds on
    /// the streams tested but is cross-checked rather than assumed.
    pub fn layer_select_binary(&self) -> (usize, bool) {
        let start = self.window_start();
        let (mut lo, mut hi) = (0usize, self.layers.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.layers[mid].coverage_since() <= start {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo < self.layers.len() {
            (lo, true)
        } else {
            (self.layers.len() - 1, false)
        }
    }

    /// Window Gram estimate as an `ell x d` sketch, with a flag that is
    /// false when every layer had discarded part of the window (the top
    /// layer still answers).
    pub fn query(&self) -> Result<(Mat, bool)> {
        let (j, complete) = self.layer_select();
        let estimate = self.layers[j].query_compressed()?;
        Ok((estimate, complete))
    }

    /// Uncompressed estimate rows of the selected layer.
    pub fn query_rows(&self) -> (Mat, bool) {
        let (j, complete) = self.layer_select();
        (self.layers[j].query_rows(), complete)
    }

    /// Merges the selected layer's estimate to `ell` rows; exposed for
    /// callers that need the stack and the merge separately.
    pub fn merge_rows(&self, stack: &Mat) -> Result<Mat> {
        fd_merge(self.config.ell(), self.config.d, &[stack])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram, spectral_norm_sym};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn row_with_norm_sq(rng: &mut ChaCha8Rng, d: usize, nsq: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let scale = (nsq / row_norm_sq(&v)).sqrt();
        for x in &mut v {
            *x *= scale;
        }
        v
    }

    #[test]
    fn sequence_layer_arithmetic() {
        let c = LayeredConfig::new(WindowMode::Sequence, 4, 0.1, 100, 16.0);
        assert_eq!(c.top_layer(), 4);
        let thetas: Vec<f64> = (0..=4).map(|j| c.theta(j)).collect();
        assert_eq!(thetas, vec![10.0, 20.0, 40.0, 80.0, 160.0]);
    }

    #[test]
    fn time_layer_arithmetic() {
        let c = LayeredConfig::new(WindowMode::Time, 4, 0.01, 50_000, 12.0);
        assert_eq!(c.top_layer(), 13);
        assert_eq!(c.theta(0), 1.0);
        assert_eq!(c.theta(13), 8192.0);
    }

    #[test]
    fn cap_arithmetic() {
        let mut c = LayeredConfig::new(WindowMode::Sequence, 4, 0.1, 100, 16.0);
        c.beta = 4.0;
        assert_eq!(c.snapshot_cap(), 40);
    }

    #[test]
    fn rejects_bad_config() {
        let c = LayeredConfig::new(WindowMode::Sequence, 4, 0.1, 100, 0.5);
        assert!(matches!(LayeredDsFd::new(c), Err(Error::Config(_))));
    }

    #[test]
    fn unit_norm_single_layer_matches_plain() {
        // R = 1 collapses to one layer; with the eager engine it must walk
        // in lockstep with the plain sliding-window sketch, including the
        // restart schedule.
        let (d, eps, n_win) = (8, 0.1, 50u64);
        let mut config = LayeredConfig::new(WindowMode::Sequence, d, eps, n_win, 1.0);
        config.beta = 4.0;
        config.eager = true;
        let mut layered = LayeredDsFd::new(config).unwrap();
        assert_eq!(layered.layer_count(), 1);
        let mut plain =
            DsFd::new(DsFdConfig::normalized(d, eps, n_win).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(211);
        for ts in 1..=300u64 {
            let a = row_with_norm_sq(&mut rng, d, 1.0);
            layered.update(&a, ts).unwrap();
            plain.update(&a).unwrap();
            let (est, complete) = layered.query().unwrap();
            assert!(complete);
            let diff = (&est - plain.query_compressed().unwrap()).amax();
            assert_eq!(diff, 0.0, "ts {ts}");
        }
    }

    #[test]
    fn heavy_row_becomes_direct_snapshot() {
        let mut config = LayeredConfig::new(WindowMode::Sequence, 4, 0.1, 100, 16.0);
        config.beta = 4.0;
        let mut s = LayeredDsFd::new(config).unwrap();
        let a = row_with_norm_sq(&mut ChaCha8Rng::seed_from_u64(223), 4, 16.0);
        s.update(&a, 1).unwrap();
        // theta = {10, 20, ...}: only layer 0 takes the row verbatim.
        assert_eq!(s.queue_lens(0), (1, 1));
        for j in 1..s.layer_count() {
            assert_eq!(s.queue_lens(j), (0, 0));
        }
        // The stored row is reproduced exactly in the estimate.
        let (est, complete) = s.query().unwrap();
        assert!(complete);
        let exact = gram(&Mat::from_row_slice(1, 4, &a));
        assert!((gram(&est) - exact).amax() < 1e-12);
    }

    #[test]
    fn queue_caps_and_expiry_hold() {
        let (d, eps, n_win, big_r) = (8, 0.1, 500u64, 16.0);
        let mut config =
            LayeredConfig::new(WindowMode::Sequence, d, eps, n_win, big_r);
        config.beta = 4.0;
        let mut s = LayeredDsFd::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(227);
        for ts in 1..=3000u64 {
            let nsq = 1.0 + rng.random::<f64>() * (big_r - 1.0);
            let a = row_with_norm_sq(&mut rng, d, nsq);
            s.update(&a, ts).unwrap();
            for j in 0..s.layer_count() {
                let (main_len, aux_len) = s.queue_lens(j);
                assert!(main_len <= 40 && aux_len <= 40, "ts {ts} layer {j}");
            }
        }
    }

    #[test]
    fn sequence_error_bound_and_selector_agreement() {
        let (n, d, n_win, eps, big_r) = (1500usize, 8usize, 300u64, 0.1, 16.0);
        let mut config =
            LayeredConfig::new(WindowMode::Sequence, d, eps, n_win, big_r);
        config.beta = 4.0;
        let mut s = LayeredDsFd::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(229);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let nsq = big_r.powf(rng.random::<f64>());
                row_with_norm_sq(&mut rng, d, nsq)
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let ts = (i + 1) as u64;
            s.update(row, ts).unwrap();
            assert_eq!(s.layer_select(), s.layer_select_binary(), "ts {ts}");
            let step = i + 1;
            if step >= n_win as usize && step % 50 == 0 {
                let mut exact = Mat::zeros(d, d);
                let mut frob = 0.0;
                for r in &rows[step - n_win as usize..step] {
                    exact += gram(&Mat::from_row_slice(1, d, r));
                    frob += row_norm_sq(r);
                }
                let (est, complete) = s.query().unwrap();
                assert!(complete, "ts {ts}");
                let err = spectral_norm_sym(&(&exact - gram(&est))).unwrap();
                assert!(
                    err <= 4.0 * eps * frob + 1e-9,
                    "ts {ts}: {err} > {}",
                    4.0 * eps * frob
                );
            }
        }
    }

    #[test]
    fn memory_stays_within_structural_bound() {
        let (d, eps, n_win, big_r) = (8, 0.1, 200u64, 16.0);
        for eager in [true, false] {
            let mut config =
                LayeredConfig::new(WindowMode::Sequence, d, eps, n_win, big_r);
            config.beta = 4.0;
            config.eager = eager;
            let ell = config.ell();
            let cap = config.snapshot_cap();
            let levels = config.top_layer() + 1;
            let sketch_rows = if eager { 2 * ell } else { 2 * (2 * ell - 1) };
            let bound = levels * (sketch_rows + 2 * cap);
            let mut s = LayeredDsFd::new(config).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(233);
            for ts in 1..=1000u64 {
                let nsq = 1.0 + rng.random::<f64>() * (big_r - 1.0);
                let a = row_with_norm_sq(&mut rng, d, nsq);
                s.update(&a, ts).unwrap();
                assert!(s.rows_held() <= bound, "ts {ts}: {}", s.rows_held());
            }
        }
    }

    #[test]
    fn time_mode_idle_window_estimates_zero() {
        let (d, eps, n_win, big_r) = (4, 0.25, 20u64, 4.0);
        let mut config = LayeredConfig::new(WindowMode::Time, d, eps, n_win, big_r);
        config.beta = 4.0;
        let mut s = LayeredDsFd::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(239);
        for ts in 1..=50u64 {
            let a = row_with_norm_sq(&mut rng, d, 2.0);
            s.update(&a, ts).unwrap();
        }
        // Idle tick far past the window: expiry must clear everything and
        // the estimate must be exactly zero, not merely small.
        s.update(&vec![0.0; d], 120).unwrap();
        let (est, _) = s.query().unwrap();
        assert!(est.iter().all(|&x| x == 0.0));
        let (rows, _) = s.query_rows();
        assert_eq!(rows.nrows(), 0);
    }

    #[test]
    fn time_mode_burst_timestamps_are_accepted() {
        let (d, eps, n_win, big_r) = (4, 0.25, 20u64, 4.0);
        let config = LayeredConfig::new(WindowMode::Time, d, eps, n_win, big_r);
        let mut s = LayeredDsFd::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(241);
        for _ in 0..10 {
            let a = row_with_norm_sq(&mut rng, d, 1.5);
            s.update(&a, 5).unwrap();
        }
        let a = row_with_norm_sq(&mut rng, d, 1.5);
        assert!(matches!(s.update(&a, 4), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_out_of_range_norms() {
        let config = LayeredConfig::new(WindowMode::Sequence, 4, 0.1, 100, 16.0);
        let mut s = LayeredDsFd::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(251);
        let small = row_with_norm_sq(&mut rng, 4, 0.25);
        assert!(matches!(s.update(&small, 1), Err(Error::Input(_))));
        let big = row_with_norm_sq(&mut rng, 4, 100.0);
        assert!(matches!(s.update(&big, 1), Err(Error::Input(_))));
        // Zero rows are idle ticks only in time mode.
        assert!(matches!(s.update(&vec![0.0; 4], 1), Err(Error::Input(_))));
    }
}
