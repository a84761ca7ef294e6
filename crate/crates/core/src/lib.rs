//! Deterministic matrix sketching over sliding windows.
//!
//! The crate maintains low-rank summaries `B` of the most recent `N` rows of
//! a row stream `A` so that `B^T B` approximates the window Gram matrix
//! `A_W^T A_W` in spectral norm, using a small, bounded number of rows.
//!
//! Modules:
//! - [`linalg`]: dense-matrix decompositions and the FrequentDirections
//!   shrink primitive shared by every sketch.
//! - [`fd`]: whole-stream FrequentDirections (eager and buffered variants)
//!   and sketch merging.
//! - [`dsfd`]: the dump-snapshot sliding-window sketch (DS-FD) for
//!   unit-norm rows, in eager and Gram-accelerated (fast) variants.
//! - [`layered`]: thresholded DS-FD layers for arbitrary row norms, over
//!   sequence-based or time-based windows.
//! - [`baselines`]: exact window oracle, sampling estimators, and an
//!   exponential-histogram FD baseline for comparison runs.
//! - [`streamgen`]: deterministic stream generators and a CSV loader.

pub mod baselines;
pub mod dsfd;
mod error;
pub mod fd;
pub mod layered;
pub mod linalg;
pub mod streamgen;

pub use error::{Error, Result};
