//! Local differential privacy for filter outputs: bounding functions, the
//! radial Laplace-like noise `p(xi) ∝ exp(-(eps/S) ||xi||)`, the two release
//! chains, and the between/within-subject diameters.
//!
//! Norms are Euclidean throughout. In spherical coordinates the density
//! factors into a uniform direction and a radius with density
//! `∝ r^{d-1} exp(-(eps/S) r)` (the `r^{d-1}` is the surface-area Jacobian),
//! i.e. `Gamma(shape = d, scale = S/eps)`. The sampler draws exactly that.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::filters::FilterState;
use crate::linalg::percentile;

/// Sensitivity of any output confined to the unit ball.
pub const UNIT_BALL_SENSITIVITY: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Clip,
    Squash,
    Normalize,
}

impl std::str::FromStr for BoundKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(Self::Clip),
            "squash" => Ok(Self::Squash),
            "normalize" => Ok(Self::Normalize),
            other => Err(Error::Parse(format!("unknown bound kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// `1/eps`; zero means no noise.
    pub epsilon_inverse: f64,
    pub sensitivity: f64,
    pub bound_kind: BoundKind,
    pub bound_scale: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(epsilon_inverse: f64, bound_kind: BoundKind, bound_scale: f64, seed: u64) -> Result<Self> {
        let cfg = Self { epsilon_inverse, sensitivity: UNIT_BALL_SENSITIVITY, bound_kind, bound_scale, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_inverse >= 0.0) || !self.epsilon_inverse.is_finite() {
            return Err(Error::InvalidArgument("epsilon inverse must be finite and non-negative".into()));
        }
        if !(self.sensitivity > 0.0) {
            return Err(Error::InvalidArgument("sensitivity must be positive".into()));
        }
        if !(self.bound_scale > 0.0) {
            return Err(Error::InvalidArgument("bound scale must be positive".into()));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.epsilon_inverse == 0.0
    }

    pub fn epsilon(&self) -> Option<f64> {
        (!self.is_noiseless()).then(|| 1.0 / self.epsilon_inverse)
    }

    /// Rate `eps / S` of the radial density.
    pub fn rate(&self) -> Option<f64> {
        self.epsilon().map(|e| e / self.sensitivity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounded {
    pub value: DVector<f64>,
    /// Normalization of a (numerically) zero vector.
    pub degenerate: bool,
}

const NORMALIZE_FLOOR: f64 = 1e-300;

/// Maps `h` into the closed unit ball.
///
/// * `Clip`: `min{1/a, 1/||h||} h`
/// * `Squash`: `tanh(a ||h||) h / ||h||`
/// * `Normalize`: `h / ||h||`; a zero input returns zero, flagged degenerate.
pub fn bound(kind: BoundKind, a: f64, h: &DVector<f64>) -> Bounded {
    let norm = stable_norm(h);
    let (mut value, degenerate) = match kind {
        BoundKind::Clip => {
            if norm == 0.0 {
                (h.clone(), false)
            } else {
                (h * (1.0 / a).min(1.0 / norm), false)
            }
        }
        BoundKind::Squash => {
            if norm == 0.0 {
                (h.clone(), false)
            } else {
                (h * ((a * norm).tanh() / norm), false)
            }
        }
        BoundKind::Normalize => {
            if norm < NORMALIZE_FLOOR {
                log::warn!("normalizing a vector of norm {norm:e}; returning zero");
                (DVector::zeros(h.len()), true)
            } else {
                (h / norm, false)
            }
        }
    };
    // rounding can leave the result a few ulps outside the ball under either norm
    let outside = |v: &DVector<f64>| stable_norm(v) > 1.0 || v.norm() > 1.0;
    if outside(&value) {
        value /= stable_norm(&value);
        while outside(&value) {
            value *= 1.0 - f64::EPSILON;
        }
    }
    Bounded { value, degenerate }
}

/// Euclidean norm without intermediate overflow or underflow.
fn stable_norm(h: &DVector<f64>) -> f64 {
    let scale = h.amax();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * (h / scale).norm()
}

/// Applies [`bound`] to every row.
pub fn bound_rows(kind: BoundKind, a: f64, h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = h.clone();
    for i in 0..h.nrows() {
        let b = bound(kind, a, &h.row(i).transpose());
        out.set_row(i, &b.value.transpose());
    }
    out
}

/// Bound scale from training outputs: for `Clip`, the 95th percentile of
/// row norms (the clipping radius); for `Squash`, its reciprocal. `Normalize`
/// ignores the scale and gets 1.
pub fn default_bound_scale(kind: BoundKind, outputs: &DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = outputs.row_iter().map(|r| r.norm()).collect();
    let p95 = percentile(&norms, 0.95);
    let p95 = if p95 > 0.0 && p95.is_finite() { p95 } else { 1.0 };
    match kind {
        BoundKind::Clip => p95,
        BoundKind::Squash => 1.0 / p95,
        BoundKind::Normalize => 1.0,
    }
}

/// Draws `xi` in `R^d`; exactly zero when noiseless.
pub fn sample_noise<R: Rng + ?Sized>(cfg: &NoiseConfig, d: usize, rng: &mut R) -> DVector<f64> {
    let Some(rate) = cfg.rate() else {
        return DVector::zeros(d);
    };
    let radius = Gamma::new(d as f64, 1.0 / rate).expect("positive shape and scale").sample(rng);
    let mut dir = DVector::from_fn(d, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
    let mut norm = dir.norm();
    while norm == 0.0 {
        dir = DVector::from_fn(d, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
        norm = dir.norm();
    }
    dir * (radius / norm)
}

/// `log p(xi) = -(eps/S) ||xi|| + d log(eps/S) - ln Gamma(d) - ln(2 pi^{d/2} / Gamma(d/2))`.
pub fn log_density(xi: &DVector<f64>, cfg: &NoiseConfig) -> Result<f64> {
    let rate = cfg
        .rate()
        .ok_or_else(|| Error::InvalidArgument("noise density is undefined without noise".into()))?;
    Ok(-rate * xi.norm() + log_normalizer(xi.len(), rate))
}

fn log_normalizer(d: usize, rate: f64) -> f64 {
    let d_f = d as f64;
    let log_surface = std::f64::consts::LN_2 + 0.5 * d_f * std::f64::consts::PI.ln() - ln_gamma(0.5 * d_f);
    d_f * rate.ln() - ln_gamma(d_f) - log_surface
}

/// Preprocessing chain: `b(g(x)) + xi`, row by row, fresh noise per row.
pub fn release_pre<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    filter: &FilterState,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut out = bound_rows(cfg.bound_kind, cfg.bound_scale, &filter.apply(x)?);
    for i in 0..out.nrows() {
        let xi = sample_noise(cfg, out.ncols(), rng);
        let mut row = out.row_mut(i);
        row += xi.transpose();
    }
    Ok(out)
}

/// Perturbation half of the postprocessing chain: `b(x) + xi` on raw rows.
pub fn perturb_raw<R: Rng + ?Sized>(x: &DMatrix<f64>, cfg: &NoiseConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut out = bound_rows(cfg.bound_kind, cfg.bound_scale, x);
    for i in 0..out.nrows() {
        let xi = sample_noise(cfg, out.ncols(), rng);
        let mut row = out.row_mut(i);
        row += xi.transpose();
    }
    Ok(out)
}

/// Postprocessing chain: `g(b(x) + xi)`.
pub fn release_post<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    filter: &FilterState,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if x.ncols() != filter.input_dim() {
        return Err(Error::Shape(format!("filter expects {} inputs, got {}", filter.input_dim(), x.ncols())));
    }
    filter.apply(&perturb_raw(x, cfg, rng)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterReport {
    /// Largest distance between samples of different subjects sharing a target label.
    pub between: f64,
    /// Largest distance between samples of one subject with different target labels.
    pub within: f64,
    pub between_pair: Option<(usize, usize)>,
    pub within_pair: Option<(usize, usize)>,
}

impl DiameterReport {
    pub fn between_found(&self) -> bool {
        self.between_pair.is_some()
    }
    pub fn within_found(&self) -> bool {
        self.within_pair.is_some()
    }
}

/// Exhaustive `O(N^2)` scan. A diameter with no qualifying pair is 0 and its
/// pair is `None`.
pub fn compute_diameters(x: &DMatrix<f64>, y: &[usize], z: &[usize]) -> Result<DiameterReport> {
    let n = x.nrows();
    if y.len() != n || z.len() != n {
        return Err(Error::Shape("label vectors must have one entry per sample".into()));
    }
    let mut report = DiameterReport { between: 0.0, within: 0.0, between_pair: None, within_pair: None };
    for i in 0..n {
        for j in i + 1..n {
            let same_subject = y[i] == y[j];
            let same_target = z[i] == z[j];
            if same_subject == same_target {
                continue;
            }
            let dist = (x.row(i) - x.row(j)).norm();
            let (best, pair) = if same_target {
                (&mut report.between, &mut report.between_pair)
            } else {
                (&mut report.within, &mut report.within_pair)
            };
            if pair.is_none() || dist > *best {
                *best = dist;
                *pair = Some((i, j));
            }
        }
    }
    Ok(report)
}
