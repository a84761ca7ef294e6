//! Dense linear algebra behind every sketch: thin SVD, symmetric
//! eigendecomposition, spectral norms, and the FrequentDirections shrink.
//!
//! All decompositions return factors sorted by decreasing singular value /
//! eigenvalue regardless of backend ordering, and all consumers in this
//! crate rely only on Gram matrices or `sigma * v^T` products, so the sign
//! ambiguity of singular vectors never leaks into results.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense `f64` matrix used for stream rows, sketches, and Gram matrices.
pub type Mat = DMatrix<f64>;

/// Relative floor under which a singular value is treated as exactly zero.
pub const SINGULAR_FLOOR_REL: f64 = 1e-12;

/// Squared-norm threshold under which a buffer row counts as a zero row.
pub const ZERO_ROW_TOL: f64 = 1e-12;

/// Tolerance for the unit-norm check on normalized-mode stream rows.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Thin SVD factors with singular values sorted in decreasing order.
pub struct SvdResult {
    /// Left factor, `rows x r` with `r = min(rows, cols)`.
    pub u: Mat,
    /// Singular values, length `r`, non-increasing.
    pub singular_values: Vec<f64>,
    /// Right factor, `r x cols`; rows are right singular vectors.
    pub vt: Mat,
}

fn check_finite(m: &Mat, op: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{op}: non-finite entry in input")))
    }
}

/// Thin SVD of an arbitrary dense matrix.
///
/// Returns `r = min(rows, cols)` factors sorted by decreasing singular
/// value. Fails with a numerical error if the backend does not converge or
/// the input contains non-finite entries.
pub fn svd_thin(m: &Mat) -> Result<SvdResult> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Shape(format!(
            "svd_thin: empty matrix {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "svd_thin")?;
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("svd_thin: SVD did not converge".into()))?;
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();

    // Sort defensively; the backend usually returns descending order already.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let sorted = order.iter().map(|&i| sigma[i]).collect::<Vec<_>>();
    let u_sorted = Mat::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let vt_sorted = Mat::from_rows(&order.iter().map(|&i| vt.row(i)).collect::<Vec<_>>());
    Ok(SvdResult {
        u: u_sorted,
        singular_values: sorted,
        vt: vt_sorted,
    })
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(K + K^T) / 2` before decomposing, so small
/// asymmetries from accumulated arithmetic are tolerated. Returns
/// `(eigenvalues, eigenvectors)` with eigenvalues sorted in decreasing
/// order and eigenvectors as the corresponding columns.
pub fn sym_eig(k: &Mat) -> Result<(Vec<f64>, Mat)> {
    if k.nrows() != k.ncols() {
        return Err(Error::Shape(format!(
            "sym_eig: matrix is {}x{}, expected square",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    check_finite(k, "sym_eig")?;
    let sym = (k + k.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let sorted = order.iter().map(|&i| vals[i]).collect::<Vec<_>>();
    let vecs = Mat::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    Ok((sorted, vecs))
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn spectral_norm_sym(m: &Mat) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "spectral_norm_sym: matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let (vals, _) = sym_eig(m)?;
    let hi = vals.first().copied().unwrap_or(0.0);
    let lo = vals.last().copied().unwrap_or(0.0);
    Ok(hi.abs().max(lo.abs()))
}

/// FrequentDirections shrink: rewrite `m` as `Sigma' * V^T` keeping the top
/// `ell` directions, where `Sigma'_i = sqrt(max(sigma_i^2 - sigma_ell^2, 0))`
/// and `sigma_ell` is the `ell`-th largest singular value of `m` (zero if
/// `m` has fewer than `ell` singular values).
///
/// The result always has exactly `ell` rows (zero-padded), sorted by
/// non-increasing norm, with at least one zero row when `m` had `ell` or
/// more rows. The Gram deficit `m^T m - b^T b` is positive semidefinite
/// with spectral norm at most `||m||_F^2 / ell`.
pub fn fd_shrink(m: &Mat, ell: usize) -> Result<Mat> {
    let (rows, cols) = m.shape();
    if ell == 0 || ell > rows {
        return Err(Error::Shape(format!(
            "fd_shrink: ell = {ell} out of range for a {rows}-row matrix"
        )));
    }
    let mut out = Mat::zeros(ell, cols);
    if m.iter().all(|&x| x == 0.0) {
        return Ok(out);
    }
    let svd = svd_thin(m)?;
    let sigma = &svd.singular_values;
    let floor = sigma[0] * SINGULAR_FLOOR_REL;
    let delta_sq = if ell <= sigma.len() {
        let s = sigma[ell - 1];
        if s <= floor {
            0.0
        } else {
            s * s
        }
    } else {
        0.0
    };
    for i in 0..ell.min(sigma.len()) {
        if sigma[i] <= floor {
            break;
        }
        let scaled = (sigma[i] * sigma[i] - delta_sq).max(0.0).sqrt();
        if scaled > 0.0 {
            for j in 0..cols {
                out[(i, j)] = scaled * svd.vt[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Gram matrix `m^T m`.
pub fn gram(m: &Mat) -> Mat {
    m.tr_mul(m)
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Squared Euclidean norm of a row slice.
pub fn row_norm_sq(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum()
}

/// Growable row-major buffer of `d`-dimensional rows.
///
/// Sketch buffers append, drop, and rescale rows far more often than they
/// decompose, so rows are kept contiguous and converted to a [`Mat`] only
/// at decomposition boundaries.
#[derive(Debug, Clone)]
pub(crate) struct RowBuffer {
    d: usize,
    data: Vec<f64>,
}

impl RowBuffer {
    pub fn new(d: usize) -> Self {
        RowBuffer { d, data: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.data.len() / self.d
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.d);
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        row_norm_sq(self.row(i))
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_row_slice(self.nrows(), self.d, &self.data)
    }

    /// Replaces the contents with the rows of `m`.
    pub fn set_from_mat(&mut self, m: &Mat) {
        debug_assert_eq!(m.ncols(), self.d);
        self.data.clear();
        for i in 0..m.nrows() {
            for j in 0..self.d {
                self.data.push(m[(i, j)]);
            }
        }
    }
}

/// Stacks the non-zero rows of `parts` into one buffer, preserving order.
/// Zero rows carry no Gram mass and are dropped.
pub(crate) fn stack_nonzero_rows(d: usize, parts: &[&Mat]) -> Result<RowBuffer> {
    let mut buf = RowBuffer::new(d);
    for part in parts {
        if part.ncols() != d {
            return Err(Error::Shape(format!(
                "row stack: got {} columns, expected {d}",
                part.ncols()
            )));
        }
        for i in 0..part.nrows() {
            let row: Vec<f64> = part.row(i).iter().copied().collect();
            if row_norm_sq(&row) > ZERO_ROW_TOL {
                buf.push_row(&row);
            }
        }
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    /// Independent oracle: largest |eigenvalue| of a symmetric matrix via
    /// power iteration on the squared matrix.
    fn power_iteration_abs_max(m: &Mat, iters: usize) -> f64 {
        let d = m.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut v = nalgebra::DVector::<f64>::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
        v /= v.norm();
        let m2 = m * m;
        for _ in 0..iters {
            let w = &m2 * &v;
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            v = w / n;
        }
        (m * &v).norm()
    }

    #[test]
    fn svd_identity_has_unit_singular_values() {
        let m = Mat::identity(2, 2);
        let r = svd_thin(&m).unwrap();
        assert_abs_diff_eq!(r.singular_values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.singular_values[1], 1.0, epsilon = 1e-12);
        let q = &r.u * &r.vt;
        let qtq = q.tr_mul(&q);
        assert!((qtq - Mat::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn svd_of_diagonal_recovers_entries_sorted() {
        let m = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let r = svd_thin(&m).unwrap();
        assert_abs_diff_eq!(r.singular_values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.singular_values[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mat(&mut rng, 8, 4);
        let r = svd_thin(&m).unwrap();
        let sigma = Mat::from_diagonal(&nalgebra::DVector::from_vec(r.singular_values.clone()));
        let rec = &r.u * sigma * &r.vt;
        let rel = frob_sq(&(&rec - &m)).sqrt() / frob_sq(&m).sqrt();
        assert!(rel <= 1e-8, "relative reconstruction error {rel}");
    }

    #[test]
    fn svd_rejects_non_finite_input() {
        let m = Mat::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(svd_thin(&m), Err(Error::Numerical(_))));
    }

    #[test]
    fn svd_rejects_empty_matrix() {
        let m = Mat::zeros(0, 3);
        assert!(matches!(svd_thin(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn sym_eig_of_diagonal_sorted() {
        let k = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = sym_eig(&k).unwrap();
        assert_abs_diff_eq!(vals[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 1.0, epsilon = 1e-12);
        // Leading eigenvector is +/- e2.
        assert!(vecs[(1, 0)].abs() > 0.999);
    }

    #[test]
    fn sym_eig_matches_svd_on_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = random_mat(&mut rng, 6, 9);
        let k = &d * d.transpose();
        let (vals, _) = sym_eig(&k).unwrap();
        let svd = svd_thin(&d).unwrap();
        for (lambda, sigma) in vals.iter().zip(svd.singular_values.iter()) {
            assert_abs_diff_eq!(*lambda, sigma * sigma, epsilon = 1e-8);
        }
    }

    #[test]
    fn sym_eig_scalar() {
        let k = Mat::from_row_slice(1, 1, &[4.0]);
        let (vals, _) = sym_eig(&k).unwrap();
        assert_abs_diff_eq!(vals[0], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        let k = Mat::zeros(2, 3);
        assert!(matches!(sym_eig(&k), Err(Error::Shape(_))));
    }

    #[test]
    fn spectral_norm_of_zero_is_zero() {
        assert_eq!(spectral_norm_sym(&Mat::zeros(4, 4)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_uses_absolute_eigenvalues() {
        let m = Mat::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(spectral_norm_sym(&m).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_mat(&mut rng, 16, 16);
        let sym = (&a + a.transpose()) * 0.5;
        let got = spectral_norm_sym(&sym).unwrap();
        let oracle = power_iteration_abs_max(&sym, 3000);
        let rel = (got - oracle).abs() / oracle.max(1e-300);
        assert!(rel <= 1e-6, "spectral {got} vs power iteration {oracle}");
    }

    #[test]
    fn fd_shrink_hand_example() {
        // sigma = (3, 2); shrinking by sigma_2^2 = 4 leaves one direction of
        // squared mass 5 and zeroes the rest.
        let m = Mat::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let b = fd_shrink(&m, 2).unwrap();
        assert_eq!(b.shape(), (2, 2));
        let g = gram(&b);
        let expected = Mat::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0]);
        assert!((g - expected).amax() < 1e-9);
    }

    #[test]
    fn fd_shrink_zero_matrix_is_zero() {
        let m = Mat::zeros(5, 3);
        let b = fd_shrink(&m, 2).unwrap();
        assert_eq!(b.shape(), (2, 3));
        assert!(b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fd_shrink_bound_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m = random_mat(&mut rng, 12, 6);
        let b = fd_shrink(&m, 3).unwrap();
        let deficit = gram(&m) - gram(&b);
        let norm = spectral_norm_sym(&deficit).unwrap();
        assert!(norm <= frob_sq(&m) / 3.0 + 1e-9);
        let (vals, _) = sym_eig(&deficit).unwrap();
        assert!(*vals.last().unwrap() >= -1e-12 * frob_sq(&m));
    }

    #[test]
    fn fd_shrink_rejects_ell_above_row_count() {
        let m = Mat::zeros(3, 3);
        assert!(matches!(fd_shrink(&m, 4), Err(Error::Shape(_))));
        assert!(matches!(fd_shrink(&m, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn row_buffer_basics() {
        let mut buf = RowBuffer::new(3);
        buf.push_row(&[1.0, 0.0, 0.0]);
        buf.push_row(&[0.0, 2.0, 0.0]);
        buf.push_row(&[0.0, 0.0, 3.0]);
        assert_eq!(buf.nrows(), 3);
        assert_eq!(buf.row_norm_sq(2), 9.0);
        assert_eq!(buf.row(1), &[0.0, 2.0, 0.0]);
        let m = buf.to_mat();
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(2, 2)], 3.0);
    }

    #[test]
    fn stack_drops_zero_rows() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = Mat::from_row_slice(1, 2, &[0.0, 2.0]);
        let stack = stack_nonzero_rows(2, &[&a, &b]).unwrap();
        assert_eq!(stack.nrows(), 2);
        assert_eq!(stack.row(1), &[0.0, 2.0]);
        assert!(matches!(
            stack_nonzero_rows(3, &[&a]),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fd_shrink_deficit_is_psd_and_bounded(
            seed in 0u64..1_000_000,
            rows in 1usize..24,
            cols in 1usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mat(&mut rng, rows, cols);
            let ell = 1 + (seed as usize) % rows;
            let b = fd_shrink(&m, ell).unwrap();
            prop_assert_eq!(b.shape(), (ell, cols));
            let deficit = gram(&m) - gram(&b);
            let (vals, _) = sym_eig(&deficit).unwrap();
            let scale = frob_sq(&m).max(1e-12);
            prop_assert!(*vals.last().unwrap() >= -1e-11 * scale);
            prop_assert!(vals[0] <= frob_sq(&m) / ell as f64 + 1e-9 * scale);
        }
    }
}
