//! Filter families `g(x; u)` mapping `D`-dimensional features to `d` outputs.
//!
//! Parameters are stored flat. A linear filter holds the `D x d` projection
//! `U` row-major, so `g(x) = x^T U`. A sigmoid network holds, in order,
//! `W1, b1, W2, b2, ..., W_out, b_out`, each weight matrix row-major with
//! shape `fan_in x fan_out`. Hidden layers use the logistic sigmoid and the
//! output layer is affine.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::{derived_rng, rng_from_seed};

pub const DEFAULT_HIDDEN: [usize; 2] = [20, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Linear,
    TwoLayerSigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    kind: FilterKind,
    params: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
    hidden_dims: Vec<usize>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Number of parameters of a sigmoid network with the given layer sizes.
pub fn mlp_param_count(input_dim: usize, hidden: &[usize], output_dim: usize) -> usize {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(output_dim);
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl FilterState {
    pub fn new(
        kind: FilterKind,
        input_dim: usize,
        output_dim: usize,
        hidden_dims: Vec<usize>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument("filter dimensions must be positive".into()));
        }
        let expected = match kind {
            FilterKind::Linear => {
                if !hidden_dims.is_empty() {
                    return Err(Error::InvalidArgument("linear filter takes no hidden layers".into()));
                }
                if output_dim > input_dim {
                    return Err(Error::InvalidArgument(format!(
                        "linear filter output dim {output_dim} exceeds input dim {input_dim}"
                    )));
                }
                input_dim * output_dim
            }
            FilterKind::TwoLayerSigmoid => {
                if hidden_dims.is_empty() || hidden_dims.contains(&0) {
                    return Err(Error::InvalidArgument("sigmoid network needs positive hidden sizes".into()));
                }
                mlp_param_count(input_dim, &hidden_dims, output_dim)
            }
        };
        if params.len() != expected {
            return shape_err(format!("expected {expected} parameters, got {}", params.len()));
        }
        Ok(Self { kind, params, input_dim, output_dim, hidden_dims })
    }

    /// Linear filter from a `D x d` projection matrix.
    pub fn linear(u: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = u.shape();
        let params = (0..rows).flat_map(|i| (0..cols).map(move |j| u[(i, j)])).collect();
        Self::new(FilterKind::Linear, rows, cols, Vec::new(), params)
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(&DMatrix::identity(dim, dim)).expect("identity is a valid filter")
    }

    /// Linear filter with i.i.d. entries uniform in `[-scale, scale]`; the
    /// harness uses `scale = 1/sqrt(input_dim)`.
    pub fn random_linear(input_dim: usize, output_dim: usize, scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("init scale must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let params = (0..input_dim * output_dim).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(FilterKind::Linear, input_dim, output_dim, Vec::new(), params)
    }

    /// Sigmoid network with weights and biases uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random_mlp(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(output_dim);
        let mut params = Vec::with_capacity(mlp_param_count(input_dim, hidden, output_dim));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self::new(FilterKind::TwoLayerSigmoid, input_dim, output_dim, hidden.to_vec(), params)
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return shape_err(format!("expected {} parameters, got {}", self.params.len(), params.len()));
        }
        Ok(Self { params, ..self.clone() })
    }

    /// `u + step * direction`.
    pub fn stepped(&self, direction: &[f64], step: f64) -> Result<Self> {
        if direction.len() != self.params.len() {
            return shape_err("direction length differs from parameter count");
        }
        let params = self.params.iter().zip(direction).map(|(p, q)| p + step * q).collect();
        Ok(Self { params, ..self.clone() })
    }

    /// The projection matrix of a linear filter.
    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        match self.kind {
            FilterKind::Linear => Some(DMatrix::from_row_slice(self.input_dim, self.output_dim, &self.params)),
            FilterKind::TwoLayerSigmoid => None,
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend_from_slice(&self.hidden_dims);
        sizes.push(self.output_dim);
        sizes
    }

    /// `(weights, bias)` for every layer of a sigmoid network.
    pub(crate) fn mlp_layers(&self) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let mut offset = 0;
        self.layer_sizes()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = DMatrix::from_row_slice(fan_in, fan_out, &self.params[offset..offset + fan_in * fan_out]);
                offset += fan_in * fan_out;
                let bias = DVector::from_column_slice(&self.params[offset..offset + fan_out]);
                offset += fan_out;
                (weights, bias)
            })
            .collect()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return shape_err(format!("filter expects {} input columns, got {}", self.input_dim, x.ncols()));
        }
        Ok(())
    }

    /// Activations of every layer: `acts[0] = x`, the last entry is the output.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let layers = self.mlp_layers();
        let last = layers.len() - 1;
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.clone());
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = acts[l].clone() * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if l < last {
                z.apply(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Row `i` of the result is `g(x_i; u)`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(match self.kind {
            FilterKind::Linear => x * self.linear_matrix().expect("linear"),
            FilterKind::TwoLayerSigmoid => self.forward(x).pop().expect("output layer"),
        })
    }

    /// Vector-Jacobian product: gradient of `sum_i <upstream_i, g(x_i; u)>`
    /// with respect to the flat parameters.
    pub fn param_grad(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.nrows() != x.nrows() || upstream.ncols() != self.output_dim {
            return shape_err(format!(
                "upstream must be {}x{}, got {}x{}",
                x.nrows(),
                self.output_dim,
                upstream.nrows(),
                upstream.ncols()
            ));
        }
        match self.kind {
            FilterKind::Linear => {
                let g = x.transpose() * upstream;
                Ok(row_major(&g))
            }
            FilterKind::TwoLayerSigmoid => Ok(self.backprop(x, upstream).0),
        }
    }

    /// Gradient of `sum_i <upstream_i, g(x_i; u)>` with respect to the inputs.
    pub fn input_grad(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        if upstream.shape() != (x.nrows(), self.output_dim) {
            return shape_err("upstream shape does not match filter output");
        }
        match self.kind {
            FilterKind::Linear => Ok(upstream * self.linear_matrix().expect("linear").transpose()),
            FilterKind::TwoLayerSigmoid => Ok(self.backprop(x, upstream).1),
        }
    }

    fn backprop(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let layers = self.mlp_layers();
        let acts = self.forward(x);
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
        let mut delta = upstream.clone();
        for l in (0..layers.len()).rev() {
            let input = &acts[l];
            let gw = input.transpose() * &delta;
            let mut g = row_major(&gw);
            g.extend(delta.column_iter().map(|c| c.sum()));
            grads[l] = g;
            let mut back = &delta * layers[l].0.transpose();
            if l > 0 {
                back.zip_apply(input, |d, a| *d *= a * (1.0 - a));
            }
            delta = back;
        }
        (grads.concat(), delta)
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Settings for greedy layerwise denoising-autoencoder pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Standard deviation of the isotropic Gaussian input corruption.
    pub noise_level: f64,
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { noise_level: 0.1, epochs: 50, step: 0.01, seed: 0 }
    }
}

/// Pretrained network plus the clean reconstruction loss of each hidden
/// layer, measured before training and after every epoch.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub filter: FilterState,
    pub layer_losses: Vec<Vec<f64>>,
}

pub fn pretrain_autoencoder(
    x: &DMatrix<f64>,
    hidden_dims: &[usize],
    output_dim: usize,
    cfg: &PretrainConfig,
) -> Result<FilterState> {
    pretrain_autoencoder_with_losses(x, hidden_dims, output_dim, cfg).map(|p| p.filter)
}

/// Greedy layerwise pretraining. Each hidden layer is the encoder of a
/// denoising autoencoder with an affine decoder, trained by full-batch
/// gradient descent on squared reconstruction of its clean input. The output
/// layer keeps its random initialization.
pub fn pretrain_autoencoder_with_losses(
    x: &DMatrix<f64>,
    hidden_dims: &[usize],
    output_dim: usize,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyData("pretraining needs at least one sample".into()));
    }
    if !(cfg.noise_level >= 0.0) {
        return Err(Error::InvalidArgument("noise level must be non-negative".into()));
    }
    let init = FilterState::random_mlp(x.ncols(), hidden_dims, output_dim, cfg.seed)?;
    let mut layers = init.mlp_layers();
    let n = x.nrows() as f64;
    let mut input = x.clone();
    let mut layer_losses = Vec::with_capacity(hidden_dims.len());

    for (l, (w, b)) in layers.iter_mut().take(hidden_dims.len()).enumerate() {
        let (fan_in, width) = w.shape();
        let mut rng = derived_rng(cfg.seed, &[1, l as u64]);
        let bound = 1.0 / (width as f64).sqrt();
        let mut dec_w = DMatrix::from_fn(width, fan_in, |_, _| rng.random_range(-bound..=bound));
        let mut dec_b = DVector::<f64>::zeros(fan_in);

        let encode = |h: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>| {
            let mut z = h * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            z.apply(|v| *v = sigmoid(*v));
            z
        };
        let recon_loss = |a: &DMatrix<f64>, dec_w: &DMatrix<f64>, dec_b: &DVector<f64>| {
            let mut r = a * dec_w;
            for mut row in r.row_iter_mut() {
                row += dec_b.transpose();
            }
            r -= &input;
            (r.norm_squared() / n, r)
        };

        let mut losses = vec![recon_loss(&encode(&input, w, b), &dec_w, &dec_b).0];
        for _ in 0..cfg.epochs {
            let corrupted = if cfg.noise_level > 0.0 {
                input.map(|v| v + cfg.noise_level * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            } else {
                input.clone()
            };
            let a = encode(&corrupted, w, b);
            let (_, resid) = recon_loss(&a, &dec_w, &dec_b);
            let d_out = resid * (2.0 / n);
            let g_dec_w = a.transpose() * &d_out;
            let g_dec_b = DVector::from_iterator(fan_in, d_out.column_iter().map(|c| c.sum()));
            let mut d_hidden = &d_out * dec_w.transpose();
            d_hidden.zip_apply(&a, |d, act| *d *= act * (1.0 - act));
            let g_w = corrupted.transpose() * &d_hidden;
            let g_b = DVector::from_iterator(width, d_hidden.column_iter().map(|c| c.sum()));

            dec_w -= g_dec_w * cfg.step;
            dec_b -= g_dec_b * cfg.step;
            *w -= g_w * cfg.step;
            *b -= g_b * cfg.step;

            let loss = recon_loss(&encode(&input, w, b), &dec_w, &dec_b).0;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("autoencoder layer {l} diverged")));
            }
            losses.push(loss);
        }
        layer_losses.push(losses);
        input = encode(&input, w, b);
    }

    let mut params = Vec::with_capacity(init.params.len());
    for (w, b) in &layers {
        params.extend(row_major(w));
        params.extend(b.iter());
    }
    Ok(Pretrained { filter: init.with_params(params)?, layer_losses })
}
