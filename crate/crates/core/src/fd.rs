//! FrequentDirections sketching of a whole row stream.
//!
//! An `ell`-row sketch `B` of a stream `A` maintains
//! `||A^T A - B^T B||_2 <= ||A||_F^2 / ell` with the deficit positive
//! semidefinite. Two update disciplines are provided:
//!
//! - **eager**: the sketch holds exactly `ell` rows; an arriving row fills a
//!   zero row when one exists and otherwise triggers a shrink. Every row of
//!   state is live, which suits consumers that inspect the top row after
//!   each update.
//! - **fast**: rows buffer up to `2*ell` before one shrink amortizes the
//!   decomposition cost over `ell` appends.
//!
//! [`fd_merge`] combines several sketches (or raw row blocks) into one
//! `ell`-row sketch with a single shrink.

use crate::error::{Error, Result};
use crate::linalg::{
    fd_shrink, row_norm_sq, stack_nonzero_rows, Mat, RowBuffer, ZERO_ROW_TOL,
};

/// FrequentDirections sketch over rows of dimension `d`.
#[derive(Debug, Clone)]
pub struct FdSketch {
    ell: usize,
    d: usize,
    buf: RowBuffer,
    total_mass: f64,
}

impl FdSketch {
    /// Creates an empty sketch of `ell` rows over dimension `d`.
    pub fn new(ell: usize, d: usize) -> Result<Self> {
        if ell == 0 || d == 0 {
            return Err(Error::Config(format!(
                "FdSketch: ell = {ell}, d = {d}; both must be >= 1"
            )));
        }
        Ok(FdSketch {
            ell,
            d,
            buf: RowBuffer::new(d),
            total_mass: 0.0,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Sum of squared norms of all rows ever absorbed.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Current buffer rows (eager: always `ell`; fast: up to `2*ell - 1`).
    pub fn rows(&self) -> Mat {
        if self.buf.is_empty() {
            Mat::zeros(0, self.d)
        } else {
            self.buf.to_mat()
        }
    }

    pub fn row_count(&self) -> usize {
        self.buf.nrows()
    }

    fn check_row(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.d {
            return Err(Error::Shape(format!(
                "row has {} entries, sketch dimension is {}",
                a.len(),
                self.d
            )));
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("row contains non-finite entries".into()));
        }
        Ok(())
    }

    fn sort_rows_by_norm_desc(&mut self) {
        let n = self.buf.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let norms: Vec<f64> = (0..n).map(|i| self.buf.row_norm_sq(i)).collect();
        order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());
        if order.windows(2).all(|w| w[0] < w[1]) {
            return;
        }
        let mut sorted = RowBuffer::new(self.d);
        for &i in &order {
            sorted.push_row(self.buf.row(i));
        }
        self.buf = sorted;
    }

    /// Eager update: exactly `ell` rows of state at all times.
    ///
    /// The row fills a zero row when one exists (rows are kept sorted by
    /// non-increasing norm, so the last row is zero iff any is); otherwise
    /// the stacked `ell + 1` rows shrink back to `ell`.
    pub fn update_eager(&mut self, a: &[f64]) -> Result<()> {
        self.check_row(a)?;
        while self.buf.nrows() < self.ell {
            self.buf.push_row(&vec![0.0; self.d]);
        }
        let last = self.ell - 1;
        if self.buf.row_norm_sq(last) <= ZERO_ROW_TOL {
            self.buf.row_mut(last).copy_from_slice(a);
            self.sort_rows_by_norm_desc();
        } else {
            let mut stack = self.buf.clone();
            stack.push_row(a);
            let shrunk = fd_shrink(&stack.to_mat(), self.ell)?;
            self.buf.set_from_mat(&shrunk);
        }
        self.total_mass += row_norm_sq(a);
        Ok(())
    }

    /// Buffered update: appends the row and shrinks to `ell` rows only when
    /// the buffer reaches `2*ell` rows.
    pub fn update_fast(&mut self, a: &[f64]) -> Result<()> {
        self.check_row(a)?;
        self.buf.push_row(a);
        if self.buf.nrows() >= 2 * self.ell {
            let shrunk = fd_shrink(&self.buf.to_mat(), self.ell)?;
            self.buf.set_from_mat(&shrunk);
        }
        self.total_mass += row_norm_sq(a);
        Ok(())
    }
}

/// Merges row groups into a single `ell`-row sketch.
///
/// Groups totalling at most `ell` non-zero rows pass through exactly
/// (zero-padded); larger stacks shrink once, so the merged Gram deficit is
/// bounded by `||stack||_F^2 / ell`.
pub fn fd_merge(ell: usize, d: usize, parts: &[&Mat]) -> Result<Mat> {
    if ell == 0 || d == 0 {
        return Err(Error::Config(format!(
            "fd_merge: ell = {ell}, d = {d}; both must be >= 1"
        )));
    }
    let stack = stack_nonzero_rows(d, parts)?;
    if stack.nrows() <= ell {
        let mut out = Mat::zeros(ell, d);
        for i in 0..stack.nrows() {
            for j in 0..d {
                out[(i, j)] = stack.row(i)[j];
            }
        }
        Ok(out)
    } else {
        fd_shrink(&stack.to_mat(), ell)
    }
}
