//! Dense symmetric linear-algebra helpers shared by the closed-form solvers
//! and the baselines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite entries")))
    }
}

/// Flips each column so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn fix_signs(vecs: &mut DMatrix<f64>) {
    for mut col in vecs.column_iter_mut() {
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and the
/// deterministic sign convention applied to the eigenvectors.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "eigenproblem needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "eigenproblem matrix")?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_signs(&mut vecs);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigen-solver produced non-finite values".into()));
    }
    Ok((vals, vecs))
}

/// Eigenpairs in descending order.
pub fn sym_eigen_descending(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (vals, vecs) = sym_eigen_ascending(m)?;
    let n = vals.len();
    let vals = DVector::from_iterator(n, vals.iter().rev().copied());
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        out.set_column(j, &vecs.column(n - 1 - j));
    }
    Ok((vals, out))
}

/// `M^{-1/2}` for symmetric `M`, with eigenvalues clamped from below at `floor`.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_ascending(m)?;
    let scale = DVector::from_iterator(vals.len(), vals.iter().map(|&v| 1.0 / v.max(floor).sqrt()));
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * scale[j]);
    Ok(symmetrize(&(&scaled * vecs.transpose())))
}

/// Solves `A X = B` for symmetric positive (semi)definite `A`: Cholesky first,
/// SVD least squares when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let eps = f64::EPSILON * a.nrows().max(1) as f64 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .map_err(|e| Error::Numeric(format!("linear solve failed: {e}")))
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Index of the maximum entry in a row; ties resolve to the lowest index.
pub fn argmax_row(m: &DMatrix<f64>, row: usize) -> usize {
    let mut best = 0;
    for k in 1..m.ncols() {
        if m[(row, k)] > m[(row, best)] {
            best = k;
        }
    }
    best
}

/// Linear-interpolated percentile of `values` (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    v[lo] * (1.0 - t) + v[hi] * t
}
