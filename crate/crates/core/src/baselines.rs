//! Reference linear filters: random projection, PCA, and a PPLS-style
//! covariance contrast.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::closed_form::compute_moments;
use crate::error::{Error, Result};
use crate::filters::FilterState;
use crate::linalg::{column_means, fix_signs, sym_eigen_descending, symmetrize};
use crate::rng::derived_rng;

pub const DEFAULT_PPLS_LAMBDA: f64 = 1.0;
const RANK_TOL: f64 = 1e-10;
const RAND_TRIES: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Rand,
    Pca,
    Ppls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub dim: usize,
    pub ppls_lambda: f64,
    pub seed: u64,
}

fn check_dim(input: usize, d: usize) -> Result<()> {
    if d == 0 || d > input {
        return Err(Error::InvalidArgument(format!("output dim {d} must be in 1..={input}")));
    }
    Ok(())
}

/// Standard-normal `D x d` projection, redrawn until its smallest singular
/// value exceeds `1e-10`.
pub fn fit_rand(input_dim: usize, d: usize, seed: u64) -> Result<FilterState> {
    check_dim(input_dim, d)?;
    for attempt in 0..RAND_TRIES {
        let mut rng = derived_rng(seed, &[attempt]);
        let u = DMatrix::from_fn(input_dim, d, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let sv = u.clone().svd(false, false).singular_values;
        if sv.min() > RANK_TOL {
            return FilterState::linear(&u);
        }
    }
    Err(Error::Numeric("random projection stayed rank deficient".into()))
}

/// Top-`d` unit eigenvectors of the sample covariance (denominator `N - 1`),
/// with their eigenvalues in descending order.
pub fn pca_components(x: &DMatrix<f64>, d: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_dim(x.ncols(), d)?;
    if x.nrows() < 2 {
        return Err(Error::EmptyData("PCA needs at least two samples".into()));
    }
    let mean = column_means(x);
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = symmetrize(&(centred.transpose() * &centred / (x.nrows() - 1) as f64));
    let (vals, vecs) = sym_eigen_descending(&cov)?;
    Ok((vecs.columns(0, d).into_owned(), vals.iter().take(d).copied().collect()))
}

pub fn fit_pca(x: &DMatrix<f64>, d: usize) -> Result<FilterState> {
    FilterState::linear(&pca_components(x, d)?.0)
}

/// Greedy deflation on `M = C_xz C_xz^T - lambda C_xy C_xy^T`: each column
/// is the top eigenvector of `M` restricted to the orthogonal complement of
/// the previous columns. `y` and `z` are one-hot (or any target) matrices.
pub fn fit_ppls(x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64, d: usize) -> Result<FilterState> {
    check_dim(x.ncols(), d)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("PPLS lambda must be non-negative".into()));
    }
    let m = compute_moments(x, y, z, Some(0.0))?;
    let contrast = symmetrize(&(&m.cxz * m.cxz.transpose() - (&m.cxy * m.cxy.transpose()) * lambda));
    FilterState::linear(&deflated_top_eigenvectors(&contrast, d)?)
}

pub(crate) fn deflated_top_eigenvectors(m: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let dim = m.nrows();
    let eye = DMatrix::<f64>::identity(dim, dim);
    // pushes already-chosen directions below every remaining eigenvalue
    let penalty = 1.0 + 2.0 * m.norm();
    let mut current = m.clone();
    let mut chosen = DMatrix::zeros(dim, d);
    for j in 0..d {
        let (_, vecs) = sym_eigen_descending(&current)?;
        let u = vecs.column(0).into_owned();
        chosen.set_column(j, &u);
        let proj = &eye - &u * u.transpose();
        current = symmetrize(&(&proj * &current * &proj - (&eye - &proj) * penalty));
    }
    fix_signs(&mut chosen);
    Ok(chosen)
}

/// Fits any baseline from a dataset-shaped triple.
pub fn fit_baseline(
    spec: &BaselineSpec,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<FilterState> {
    match spec.kind {
        BaselineKind::Rand => fit_rand(x.ncols(), spec.dim, spec.seed),
        BaselineKind::Pca => fit_pca(x, spec.dim),
        BaselineKind::Ppls => fit_ppls(x, y, z, spec.ppls_lambda, spec.dim),
    }
}
