//! Task heads fitted on filtered features: a multinomial logistic classifier
//! and an affine least-squares regressor (reconstruction or one-hot targets).

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{argmax_row, column_means, solve_spd};
use crate::optim::{lbfgs, SolverOptions};

pub const DEFAULT_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    /// One row per class.
    pub weights: DMatrix<f64>,
    /// Per-class intercept; held at zero when `fit_intercept` is false.
    pub bias: DVector<f64>,
    pub reg_lambda: f64,
    pub fit_intercept: bool,
}

/// Risk and exact gradients of a head.
#[derive(Debug, Clone)]
pub struct HeadEval {
    pub risk: f64,
    pub grad_weights: DMatrix<f64>,
    pub grad_bias: DVector<f64>,
    pub grad_features: DMatrix<f64>,
}

/// Outcome of an inner fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub risk: f64,
}

fn check_features(g: &DMatrix<f64>) -> Result<()> {
    if g.nrows() == 0 {
        return Err(Error::EmptyData("no samples".into()));
    }
    for i in 0..g.nrows() {
        if g.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i });
        }
    }
    Ok(())
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} samples", labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

impl SoftmaxHead {
    pub fn zeros(num_classes: usize, dim: usize, reg_lambda: f64) -> Self {
        Self {
            weights: DMatrix::zeros(num_classes, dim),
            bias: DVector::zeros(num_classes),
            reg_lambda,
            fit_intercept: true,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = g * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }

    pub fn predict(&self, g: &DMatrix<f64>) -> Vec<usize> {
        let z = self.logits(g);
        (0..z.nrows()).map(|i| argmax_row(&z, i)).collect()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = crate::filters::row_major(&self.weights);
        if self.fit_intercept {
            v.extend(self.bias.iter());
        }
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let (k, d) = self.weights.shape();
        for i in 0..k {
            for j in 0..d {
                self.weights[(i, j)] = flat[i * d + j];
            }
        }
        if self.fit_intercept {
            self.bias.copy_from_slice(&flat[k * d..k * d + k]);
        }
    }

    /// Flat parameters in record order: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut v = crate::filters::row_major(&self.weights);
        v.extend(self.bias.iter());
        v
    }
}

/// Mean negative log-likelihood plus `(lambda/2) * ||V||_F^2`. Labels are
/// zero-based class indices.
pub fn softmax_risk(head: &SoftmaxHead, g: &DMatrix<f64>, labels: &[usize]) -> Result<HeadEval> {
    check_features(g)?;
    if g.ncols() != head.dim() {
        return shape_err(format!("head expects {} features, got {}", head.dim(), g.ncols()));
    }
    check_labels(labels, g.nrows(), head.num_classes())?;
    let n = g.nrows() as f64;
    let mut resid = head.logits(g);
    let mut nll = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut row = resid.row_mut(i);
        let shift = row.max();
        let target = row[y];
        row.apply(|v| *v = (*v - shift).exp());
        let total = row.sum();
        nll += shift + total.ln() - target;
        row /= total;
        row[y] -= 1.0;
    }
    resid /= n;
    let risk = nll / n + 0.5 * head.reg_lambda * head.weights.norm_squared();
    let grad_weights = resid.transpose() * g + &head.weights * head.reg_lambda;
    let grad_bias = if head.fit_intercept {
        DVector::from_iterator(head.num_classes(), resid.column_iter().map(|c| c.sum()))
    } else {
        DVector::zeros(head.num_classes())
    };
    let grad_features = &resid * &head.weights;
    Ok(HeadEval { risk, grad_weights, grad_bias, grad_features })
}

/// Whitening for the softmax fit: the fit runs on `(G - 1 c^T) T` with
/// `T = (S + delta I)^{-1/2}`, where `S` is the second moment about `c` (the
/// column means when an intercept is fitted, else zero). Weights `V` in those
/// coordinates map back as `W = V T`, so the objective is unchanged; only
/// its conditioning improves. `delta >= lambda` keeps the transformed
/// penalty no stiffer than the data term.
struct Whitening {
    center: DVector<f64>,
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
}

impl Whitening {
    fn new(g: &DMatrix<f64>, reg_lambda: f64, fit_intercept: bool) -> Result<Self> {
        let (n, d) = g.shape();
        let center = if fit_intercept { column_means(g) } else { DVector::zeros(d) };
        let mut c = g.clone();
        for mut row in c.row_iter_mut() {
            row -= center.transpose();
        }
        let second = (c.transpose() * &c) / n as f64;
        let mut delta = reg_lambda.max(1e-10 * second.trace() / d as f64);
        if !(delta > 0.0) {
            delta = 1.0;
        }
        let shifted = second + DMatrix::identity(d, d) * delta;
        let (vals, vecs) = crate::linalg::sym_eigen_ascending(&shifted)?;
        let scaled = |f: &dyn Fn(f64) -> f64| {
            let cols = DMatrix::from_fn(d, d, |i, j| vecs[(i, j)] * f(vals[j].max(delta)));
            crate::linalg::symmetrize(&(cols * vecs.transpose()))
        };
        Ok(Self { center, t: scaled(&|v| 1.0 / v.sqrt()), t_inv: scaled(&|v| v.sqrt()) })
    }

    fn features(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = g.clone();
        for mut row in c.row_iter_mut() {
            row -= self.center.transpose();
        }
        c * &self.t
    }

    fn to_whitened(&self, head: &SoftmaxHead) -> SoftmaxHead {
        let bias = if head.fit_intercept { &head.bias + &head.weights * &self.center } else { head.bias.clone() };
        SoftmaxHead { weights: &head.weights * &self.t_inv, bias, ..head.clone() }
    }

    fn to_original(&self, head: &SoftmaxHead) -> SoftmaxHead {
        let weights = &head.weights * &self.t;
        let bias = if head.fit_intercept { &head.bias - &weights * &self.center } else { head.bias.clone() };
        SoftmaxHead { weights, bias, ..head.clone() }
    }
}

/// Fits a softmax head by L-BFGS from `warm` (or from zero weights). The
/// solver works in whitened coordinates, so `opts.tol` bounds the gradient
/// norm there.
pub fn fit_softmax(
    g: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
    reg_lambda: f64,
    opts: SolverOptions,
    warm: Option<&SoftmaxHead>,
) -> Result<(SoftmaxHead, FitStats)> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("softmax head needs at least two classes".into()));
    }
    if !(reg_lambda >= 0.0) {
        return Err(Error::InvalidArgument("regularization must be non-negative".into()));
    }
    check_features(g)?;
    check_labels(labels, g.nrows(), num_classes)?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::InvalidArgument("labels contain a single class".into()));
    }
    let start = match warm {
        Some(w) if w.weights.shape() == (num_classes, g.ncols()) => SoftmaxHead { reg_lambda, ..w.clone() },
        _ => SoftmaxHead::zeros(num_classes, g.ncols(), reg_lambda),
    };
    let white = Whitening::new(g, reg_lambda, start.fit_intercept)?;
    let gw = white.features(g);
    // penalty (lambda/2) tr(V P V^T) with P = T T
    let penalty = &white.t * &white.t;
    let mut head = SoftmaxHead { reg_lambda: 0.0, ..white.to_whitened(&start) };
    let mut scratch = head.clone();
    let x0 = head.to_flat();
    let kd = num_classes * g.ncols();
    let min = lbfgs(
        |flat, grad| {
            scratch.set_flat(flat);
            match softmax_risk(&scratch, &gw, labels) {
                Ok(eval) => {
                    let vp = &scratch.weights * &penalty;
                    let gw_total = eval.grad_weights + &vp * reg_lambda;
                    grad[..kd].copy_from_slice(&crate::filters::row_major(&gw_total));
                    if scratch.fit_intercept {
                        grad[kd..].copy_from_slice(eval.grad_bias.as_slice());
                    }
                    eval.risk + 0.5 * reg_lambda * scratch.weights.dot(&vp)
                }
                Err(_) => f64::NAN,
            }
        },
        x0,
        opts,
    )?;
    if !min.value.is_finite() {
        return Err(Error::Numeric("softmax fit diverged".into()));
    }
    head.set_flat(&min.x);
    let head = SoftmaxHead { reg_lambda, ..white.to_original(&head) };
    Ok((
        head,
        FitStats { iterations: min.iterations, grad_norm: min.grad_norm, converged: min.converged, risk: min.value },
    ))
}

/// Fraction of rows whose arg-max class (lowest index on ties) equals the label.
pub fn accuracy(head: &SoftmaxHead, g: &DMatrix<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = head.predict(g).iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Affine least-squares map `G W + 1 b^T` from filtered features to a target
/// matrix: the original features for reconstruction, or one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionHead {
    /// `d x D_out` decoder.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub reg_lambda: f64,
    pub fit_intercept: bool,
}

impl ReconstructionHead {
    pub fn predict(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = g * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = crate::filters::row_major(&self.weights);
        v.extend(self.bias.iter());
        v
    }
}

/// `(1/N) sum_i ||G_i W + b - t_i||^2 + (lambda/2) ||W||_F^2` with exact gradients.
pub fn reconstruction_risk(head: &ReconstructionHead, g: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<HeadEval> {
    if g.nrows() != targets.nrows() || g.ncols() != head.weights.nrows() || targets.ncols() != head.weights.ncols() {
        return shape_err(format!(
            "features {}x{}, targets {}x{} incompatible with decoder {}x{}",
            g.nrows(),
            g.ncols(),
            targets.nrows(),
            targets.ncols(),
            head.weights.nrows(),
            head.weights.ncols()
        ));
    }
    if g.nrows() == 0 {
        return Err(Error::EmptyData("no samples".into()));
    }
    let n = g.nrows() as f64;
    let resid = head.predict(g) - targets;
    let risk = resid.norm_squared() / n + 0.5 * head.reg_lambda * head.weights.norm_squared();
    let scaled = resid * (2.0 / n);
    let grad_weights = g.transpose() * &scaled + &head.weights * head.reg_lambda;
    let grad_bias = if head.fit_intercept {
        DVector::from_iterator(scaled.ncols(), scaled.column_iter().map(|c| c.sum()))
    } else {
        DVector::zeros(scaled.ncols())
    };
    let grad_features = &scaled * head.weights.transpose();
    Ok(HeadEval { risk, grad_weights, grad_bias, grad_features })
}

/// Exact minimizer of [`reconstruction_risk`]: ridge regression on centered
/// data (`(G_c^T G_c + (N lambda / 2) I) W = G_c^T T_c`) with the intercept
/// recovered from the means. Without an intercept the data are not centered.
pub fn fit_reconstruction(
    g: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    reg_lambda: f64,
    fit_intercept: bool,
) -> Result<ReconstructionHead> {
    if g.nrows() != targets.nrows() {
        return shape_err(format!("{} feature rows vs {} target rows", g.nrows(), targets.nrows()));
    }
    if g.nrows() == 0 {
        return Err(Error::EmptyData("no samples".into()));
    }
    if !(reg_lambda >= 0.0) {
        return Err(Error::InvalidArgument("regularization must be non-negative".into()));
    }
    let n = g.nrows() as f64;
    let (gc, tc, g_mean, t_mean) = if fit_intercept {
        let gm = column_means(g);
        let tm = column_means(targets);
        let mut gc = g.clone();
        let mut tc = targets.clone();
        for mut row in gc.row_iter_mut() {
            row -= gm.transpose();
        }
        for mut row in tc.row_iter_mut() {
            row -= tm.transpose();
        }
        (gc, tc, gm, tm)
    } else {
        (g.clone(), targets.clone(), DVector::zeros(g.ncols()), DVector::zeros(targets.ncols()))
    };
    let mut gram = gc.transpose() * &gc;
    for i in 0..gram.nrows() {
        gram[(i, i)] += 0.5 * n * reg_lambda;
    }
    let weights = solve_spd(&gram, &(gc.transpose() * &tc))?;
    let bias = if fit_intercept { t_mean - weights.transpose() * g_mean } else { DVector::zeros(targets.ncols()) };
    Ok(ReconstructionHead { weights, bias, reg_lambda, fit_intercept })
}

/// One-hot encoding with zero-based labels.
pub fn one_hot(labels: &[usize], classes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    m
}
