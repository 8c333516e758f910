//! Closed-form solutions for linear filters: the least-squares minimax
//! problem as a symmetric eigenproblem in whitened coordinates, and the
//! discriminant-style generalized eigenproblem used to initialise linear
//! minimax training.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filters::FilterState;
use crate::heads::one_hot;
use crate::linalg::{fix_signs, inv_sqrt_psd, sym_eigen_ascending, sym_eigen_descending, symmetrize};

/// Uncentred empirical second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub cxx: DMatrix<f64>,
    pub cxy: DMatrix<f64>,
    pub cxz: DMatrix<f64>,
    pub n: usize,
    /// Ridge added to `C_xx` before whitening.
    pub ridge: f64,
    /// `(1/N) sum_i ||y_i||^2`.
    pub y_energy: f64,
    /// `(1/N) sum_i ||z_i||^2`.
    pub z_energy: f64,
}

impl MomentSet {
    pub fn dim(&self) -> usize {
        self.cxx.nrows()
    }

    /// `C_xy C_xy^T - rho C_xz C_xz^T`.
    pub fn contrast(&self, rho: f64) -> DMatrix<f64> {
        symmetrize(&(&self.cxy * self.cxy.transpose() - (&self.cxz * self.cxz.transpose()) * rho))
    }

    pub fn regularized_cxx(&self) -> DMatrix<f64> {
        &self.cxx + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }

    /// Constant separating the least-squares `Phi` from the trace objective:
    /// `Phi(U) = trace_objective(U) - E||y||^2 + rho E||z||^2`.
    pub fn phi_offset(&self, rho: f64) -> f64 {
        -self.y_energy + rho * self.z_energy
    }
}

/// Default whitening ridge, `1e-8 * trace(C_xx) / D`.
pub fn default_ridge(cxx: &DMatrix<f64>) -> f64 {
    1e-8 * cxx.trace() / cxx.nrows().max(1) as f64
}

/// Moments `C_xx = (1/N) X^T X`, `C_xy = (1/N) X^T Y`, `C_xz = (1/N) X^T Z`
/// with `Y`, `Z` given as (one-hot) target matrices. `ridge = None` uses
/// [`default_ridge`].
pub fn compute_moments(x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>, ridge: Option<f64>) -> Result<MomentSet> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyData("moments need at least one sample".into()));
    }
    if y.nrows() != n || z.nrows() != n {
        return Err(Error::Shape("label matrices must have one row per sample".into()));
    }
    let inv_n = 1.0 / n as f64;
    let xt = x.transpose();
    let cxx = symmetrize(&(&xt * x * inv_n));
    let ridge = ridge.unwrap_or_else(|| default_ridge(&cxx));
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("ridge must be non-negative".into()));
    }
    Ok(MomentSet {
        cxy: &xt * y * inv_n,
        cxz: &xt * z * inv_n,
        cxx,
        n,
        ridge,
        y_energy: y.norm_squared() * inv_n,
        z_energy: z.norm_squared() * inv_n,
    })
}

/// Moments from zero-based class labels.
pub fn compute_moments_from_labels(
    x: &DMatrix<f64>,
    y: &[usize],
    ky: usize,
    z: &[usize],
    kz: usize,
    ridge: Option<f64>,
) -> Result<MomentSet> {
    compute_moments(x, &one_hot(y, ky), &one_hot(z, kz), ridge)
}

#[derive(Debug, Clone)]
pub struct LeastSquaresSolution {
    /// `D x d` filter, `U^T (C_xx + ridge I) U = I`.
    pub u: DMatrix<f64>,
    /// Whitened-space eigenvectors.
    pub q: DMatrix<f64>,
    /// All eigenvalues of the whitened contrast, ascending.
    pub eigenvalues: DVector<f64>,
    /// Sum of the `d` smallest eigenvalues.
    pub phi_min: f64,
}

impl LeastSquaresSolution {
    pub fn filter(&self) -> Result<FilterState> {
        FilterState::linear(&self.u)
    }
}

/// Minimizes `Tr[(U^T C U)^{-1} U^T C_xyz U]` over `D x d` matrices, where
/// `C = C_xx + ridge I`: the `d` algebraically smallest eigenpairs of
/// `A = C^{-1/2} C_xyz C^{-1/2}`.
pub fn least_squares_minimax(m: &MomentSet, rho: f64, d: usize) -> Result<LeastSquaresSolution> {
    let dim = m.dim();
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!("output dim {d} must be in 1..={dim}")));
    }
    let floor = m.ridge.max(f64::MIN_POSITIVE);
    let whiten = inv_sqrt_psd(&m.regularized_cxx(), floor)?;
    let a = symmetrize(&(&whiten * m.contrast(rho) * &whiten));
    let (eigenvalues, vecs) = sym_eigen_ascending(&a)
        .map_err(|e| Error::Numeric(format!("least-squares eigenproblem: {e}")))?;
    let q = vecs.columns(0, d).into_owned();
    let u = &whiten * &q;
    let phi_min = eigenvalues.rows(0, d).sum();
    Ok(LeastSquaresSolution { u, q, eigenvalues, phi_min })
}

/// `Tr[(U^T C U)^{-1} U^T C_xyz U]` with `C = C_xx + ridge I`.
pub fn trace_objective(m: &MomentSet, rho: f64, u: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != m.dim() {
        return Err(Error::Shape(format!("U has {} rows, moments are {}-dimensional", u.nrows(), m.dim())));
    }
    let gram = u.transpose() * m.regularized_cxx() * u;
    let inner = u.transpose() * m.contrast(rho) * u;
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("U^T C_xx U is not positive definite".into()))?
        .solve(&inner);
    Ok(sol.trace())
}

/// Between-class scatters of target and private labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub cu: DMatrix<f64>,
    pub cp: DMatrix<f64>,
    pub ridge: f64,
    pub target_counts: Vec<usize>,
    pub target_means: Vec<DVector<f64>>,
    pub private_counts: Vec<usize>,
    pub private_means: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
}

fn class_scatter(x: &DMatrix<f64>, labels: &[usize], mean: &DVector<f64>) -> (DMatrix<f64>, Vec<usize>, Vec<DVector<f64>>) {
    let dim = x.ncols();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    let mut sums = vec![DVector::<f64>::zeros(dim); k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums[l] += x.row(i).transpose();
    }
    let mut scatter = DMatrix::zeros(dim, dim);
    let means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { DVector::zeros(dim) })
        .collect();
    for (mu, &c) in means.iter().zip(&counts) {
        if c > 0 {
            let diff = mu - mean;
            scatter += &diff * diff.transpose() * c as f64;
        }
    }
    (symmetrize(&scatter), counts, means)
}

/// `C_u = sum_k N_k (mu_k - mu)(mu_k - mu)^T` over target classes `z`, and
/// `C_p` likewise over private classes `y`. Absent classes contribute
/// nothing. `ridge = None` uses `1e-3 * trace(C_p) / D`.
pub fn build_scatters(x: &DMatrix<f64>, y: &[usize], z: &[usize], ridge: Option<f64>) -> Result<ScatterSet> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyData("scatters need at least one sample".into()));
    }
    if y.len() != n || z.len() != n {
        return Err(Error::Shape("label vectors must have one entry per sample".into()));
    }
    let mean = crate::linalg::column_means(x);
    let (cu, target_counts, target_means) = class_scatter(x, z, &mean);
    let (cp, private_counts, private_means) = class_scatter(x, y, &mean);
    let ridge = match ridge {
        Some(r) => r,
        None => {
            let r = 1e-3 * cp.trace() / x.ncols() as f64;
            if r > 0.0 { r } else { 1e-3 }
        }
    };
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument("scatter ridge must be positive".into()));
    }
    Ok(ScatterSet { cu, cp, ridge, target_counts, target_means, private_counts, private_means, mean })
}

#[derive(Debug, Clone)]
pub struct LdsSolution {
    /// Unit-norm generalized eigenvectors, one per column.
    pub u: DMatrix<f64>,
    /// Generalized eigenvalues, descending.
    pub values: DVector<f64>,
}

impl LdsSolution {
    pub fn filter(&self) -> Result<FilterState> {
        FilterState::linear(&self.u)
    }
}

/// Top-`d` solutions of `(C_u + l I) u = nu (C_p + l I) u`, normalized to
/// unit Euclidean length.
pub fn privacy_lds(s: &ScatterSet, d: usize) -> Result<LdsSolution> {
    let dim = s.cu.nrows();
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!("output dim {d} must be in 1..={dim}")));
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    let a = &s.cu + &eye * s.ridge;
    let b = &s.cp + &eye * s.ridge;
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("private scatter plus ridge is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let m = symmetrize(&(&l_inv * &a * l_inv.transpose()));
    let (vals, w) = sym_eigen_descending(&m)?;
    let mut u = l_inv.transpose() * w.columns(0, d);
    for mut col in u.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    fix_signs(&mut u);
    Ok(LdsSolution { u, values: vals.rows(0, d).into_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_moments() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 3.0]);
        let y = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let m = compute_moments(&x, &y, &y, Some(0.0)).unwrap();
        assert_eq!(m.cxx, x.transpose() * &x);
        assert_eq!(m.cxy.column(1).into_owned(), x.transpose().column(0).into_owned());
        assert_eq!(m.y_energy, 1.0);
    }

    #[test]
    fn identity_rows_give_scaled_identity() {
        let x = DMatrix::<f64>::identity(4, 4);
        let y = DMatrix::zeros(4, 2);
        let m = compute_moments(&x, &y, &y, Some(0.0)).unwrap();
        assert_eq!(m.cxx, DMatrix::identity(4, 4) * 0.25);
    }

    #[test]
    fn diagonal_contrast() {
        // C_xx = I, C_xyz = diag(3, 1, -2) via C_xy = diag(sqrt3, 1, 0), C_xz = sqrt2 e3, rho = 1
        let m = MomentSet {
            cxx: DMatrix::identity(3, 3),
            cxy: DMatrix::from_row_slice(3, 2, &[3f64.sqrt(), 0.0, 0.0, 1.0, 0.0, 0.0]),
            cxz: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 2f64.sqrt()]),
            n: 1,
            ridge: 0.0,
            y_energy: 0.0,
            z_energy: 0.0,
        };
        let sol = least_squares_minimax(&m, 1.0, 1).unwrap();
        assert!((sol.phi_min + 2.0).abs() < 1e-12);
        assert!((sol.u[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(sol.u[(0, 0)].abs() < 1e-12 && sol.u[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn lds_diagonal_case() {
        let s = ScatterSet {
            cu: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0])),
            cp: DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 4.0])),
            ridge: 1.0,
            target_counts: vec![],
            target_means: vec![],
            private_counts: vec![],
            private_means: vec![],
            mean: DVector::zeros(2),
        };
        let sol = privacy_lds(&s, 1).unwrap();
        assert!((sol.values[0] - 5.0).abs() < 1e-12);
        assert!((sol.u[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sol.u[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn single_class_has_zero_scatter() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, -1.0, 0.0]);
        let s = build_scatters(&x, &[0, 1, 1], &[0, 0, 0], None).unwrap();
        assert!(s.cu.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn symmetric_two_class_scatter() {
        let m = DVector::from_vec(vec![1.0, -2.0]);
        let mut x = DMatrix::zeros(6, 2);
        let mut z = vec![];
        for i in 0..6 {
            let row = if i < 3 { m.clone() } else { -m.clone() };
            x.set_row(i, &row.transpose());
            z.push(if i < 3 { 0 } else { 1 });
        }
        let s = build_scatters(&x, &z, &z, None).unwrap();
        let expect = &m * m.transpose() * 6.0;
        assert!((s.cu - expect).abs().max() < 1e-12);
    }

    #[test]
    fn dimension_checks() {
        let x = DMatrix::<f64>::identity(3, 3);
        let m = compute_moments(&x, &x, &x, None).unwrap();
        assert!(least_squares_minimax(&m, 1.0, 4).is_err());
        assert!(least_squares_minimax(&m, 1.0, 0).is_err());
        assert!(compute_moments(&DMatrix::zeros(0, 3), &DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1), None).is_err());
    }
}
