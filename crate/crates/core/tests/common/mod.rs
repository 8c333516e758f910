#![allow(dead_code)]

use minimax_filter::dataset::Dataset;
use minimax_filter::rng::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng))
}

/// Labelled Gaussian data whose class means depend on both labels.
pub fn labelled(n: usize, dim: usize, ky: usize, kz: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let y: Vec<usize> = (0..n).map(|i| i % ky).collect();
    let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..kz)).collect();
    let mut x = gaussian(n, dim, seed.wrapping_add(1));
    for i in 0..n {
        x[(i, 0)] += 2.0 * y[i] as f64;
        x[(i, 1 % dim)] += 1.5 * z[i] as f64;
        x[(i, 2 % dim)] += 0.5 * (y[i] + z[i]) as f64;
    }
    Dataset::new("gauss", x, y.clone(), Some(z), y).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
