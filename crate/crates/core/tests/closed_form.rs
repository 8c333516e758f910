mod common;

use common::{gaussian, labelled, rel_err};
use minimax_filter::closed_form::*;
use minimax_filter::filters::FilterState;
use minimax_filter::heads::one_hot;
use minimax_filter::minimax::{joint_objective, LabelSource, Task, TradeoffConfig};
use nalgebra::{DMatrix, DVector};

fn least_squares_cfg(rho: f64) -> TradeoffConfig {
    TradeoffConfig::single(
        Task::LeastSquares { labels: LabelSource::Private },
        Task::LeastSquares { labels: LabelSource::Target },
        rho,
        0.0,
    )
}

fn moments(seed: u64, n: usize, dim: usize) -> (minimax_filter::dataset::Dataset, MomentSet) {
    let data = labelled(n, dim, 3, 2, seed);
    let m = compute_moments_from_labels(
        &data.features,
        &data.private_labels,
        data.num_private_classes,
        data.target().unwrap(),
        data.num_target_classes,
        Some(0.0),
    )
    .unwrap();
    (data, m)
}

#[test]
fn moments_match_naive_sums() {
    let (data, m) = moments(1, 50, 4);
    let n = data.len() as f64;
    for a in 0..4 {
        for b in 0..4 {
            let s: f64 = (0..data.len()).map(|i| data.features[(i, a)] * data.features[(i, b)]).sum();
            assert!((m.cxx[(a, b)] - s / n).abs() < 1e-12);
        }
        for k in 0..3 {
            let s: f64 = (0..data.len()).filter(|&i| data.private_labels[i] == k).map(|i| data.features[(i, a)]).sum();
            assert!((m.cxy[(a, k)] - s / n).abs() < 1e-12);
        }
    }
    // one-hot rows have unit energy
    assert!((m.y_energy - 1.0).abs() < 1e-15 && (m.z_energy - 1.0).abs() < 1e-15);
}

#[test]
fn trace_objective_plus_offset_is_the_fitted_phi() {
    for seed in 0..5 {
        let (data, m) = moments(seed, 120, 6);
        for &rho in &[0.3, 1.0, 7.0] {
            let u = gaussian(6, 2, 100 + seed);
            let phi = joint_objective(&FilterState::linear(&u).unwrap(), &data, &least_squares_cfg(rho)).unwrap().phi;
            let closed = trace_objective(&m, rho, &u).unwrap() + m.phi_offset(rho);
            assert!(rel_err(phi, closed) < 1e-9, "seed {seed} rho {rho}: {phi} vs {closed}");
        }
    }
}

#[test]
fn objective_depends_only_on_the_column_space() {
    let (_, m) = moments(3, 80, 5);
    let u = gaussian(5, 3, 7);
    let r = gaussian(3, 3, 8);
    assert!(r.determinant().abs() > 1e-3);
    let a = trace_objective(&m, 2.0, &u).unwrap();
    let b = trace_objective(&m, 2.0, &(&u * &r)).unwrap();
    assert!(rel_err(a, b) < 1e-10);
}

#[test]
fn eigen_solution_is_whitened_orthonormal_and_attains_phi_min() {
    for seed in 0..4 {
        let (_, m) = moments(seed, 100, 6);
        for d in 1..=4 {
            let sol = least_squares_minimax(&m, 1.5, d).unwrap();
            let gram = sol.u.transpose() * m.regularized_cxx() * &sol.u;
            assert!((gram - DMatrix::identity(d, d)).amax() < 1e-9);
            let at = trace_objective(&m, 1.5, &sol.u).unwrap();
            assert!((at - sol.phi_min).abs() < 1e-9 * (1.0 + sol.phi_min.abs()));
            assert!(sol.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn no_random_subspace_beats_the_eigen_solution() {
    let (_, m) = moments(11, 150, 5);
    let sol = least_squares_minimax(&m, 4.0, 2).unwrap();
    for trial in 0..3000 {
        let u = gaussian(5, 2, 1000 + trial);
        let v = trace_objective(&m, 4.0, &u).unwrap();
        assert!(v >= sol.phi_min - 1e-10, "trial {trial}: {v} < {}", sol.phi_min);
    }
}

#[test]
fn zero_contrast_weight_reduces_to_private_fit() {
    // with rho -> 0 the objective is the private trace term, whose minimum is
    // the sum of the smallest eigenvalues of C^{-1/2} C_xy C_xy^T C^{-1/2}
    let (_, m) = moments(5, 90, 4);
    let sol = least_squares_minimax(&m, 1e-300, 2).unwrap();
    let c = m.regularized_cxx();
    let chol = c.clone().cholesky().unwrap();
    // generalized eigenvalues of (C_xy C_xy^T, C) via the Cholesky factor
    let l_inv = chol.l().try_inverse().unwrap();
    let a = &l_inv * &m.cxy * m.cxy.transpose() * l_inv.transpose();
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!((sol.phi_min - (ev[0] + ev[1])).abs() < 1e-10);
}

fn naive_scatter(x: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let dim = x.ncols();
    let mean: DVector<f64> = DVector::from_fn(dim, |j, _| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64);
    let k = labels.iter().max().unwrap() + 1;
    let mut s = DMatrix::zeros(dim, dim);
    for c in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let mu = DVector::from_fn(dim, |j, _| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64);
        for a in 0..dim {
            for b in 0..dim {
                s[(a, b)] += rows.len() as f64 * (mu[a] - mean[a]) * (mu[b] - mean[b]);
            }
        }
    }
    s
}

#[test]
fn scatters_match_naive_loops() {
    let data = labelled(70, 4, 4, 3, 9);
    let s = build_scatters(&data.features, &data.private_labels, data.target().unwrap(), None).unwrap();
    assert!((&s.cp - naive_scatter(&data.features, &data.private_labels)).amax() < 1e-10);
    assert!((&s.cu - naive_scatter(&data.features, data.target().unwrap())).amax() < 1e-10);
    assert!((s.ridge - 1e-3 * s.cp.trace() / 4.0).abs() < 1e-15);
}

#[test]
fn lds_solves_the_generalized_eigenproblem() {
    let data = labelled(90, 5, 3, 3, 4);
    let s = build_scatters(&data.features, &data.private_labels, data.target().unwrap(), None).unwrap();
    let sol = privacy_lds(&s, 3).unwrap();
    let eye = DMatrix::<f64>::identity(5, 5);
    let a = &s.cu + &eye * s.ridge;
    let b = &s.cp + &eye * s.ridge;
    for j in 0..3 {
        let u = sol.u.column(j);
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let resid = &a * u - (&b * u) * sol.values[j];
        assert!(resid.norm() < 1e-8 * a.norm(), "column {j} residual {}", resid.norm());
    }
    // the leading value is the maximal Rayleigh quotient
    for t in 0..2000 {
        let v = gaussian(5, 1, 500 + t).column(0).into_owned();
        let q = v.dot(&(&a * &v)) / v.dot(&(&b * &v));
        assert!(q <= sol.values[0] * (1.0 + 1e-10));
    }
}

#[test]
fn lds_directions_are_scale_invariant() {
    let data = labelled(60, 4, 3, 2, 6);
    let z = data.target().unwrap();
    let base = privacy_lds(&build_scatters(&data.features, &data.private_labels, z, None).unwrap(), 2).unwrap();
    let scaled = privacy_lds(&build_scatters(&(&data.features * 37.0), &data.private_labels, z, None).unwrap(), 2).unwrap();
    assert!((&base.u - &scaled.u).amax() < 1e-8);
    assert!((&base.values - &scaled.values).amax() < 1e-8 * base.values.amax());
}

#[test]
fn one_hot_moments_agree_with_matrix_moments() {
    let data = labelled(40, 3, 2, 2, 2);
    let via_labels = compute_moments_from_labels(&data.features, &data.private_labels, 2, data.target().unwrap(), 2, None).unwrap();
    let via_matrix = compute_moments(&data.features, &one_hot(&data.private_labels, 2), &one_hot(data.target().unwrap(), 2), None).unwrap();
    assert_eq!(via_labels, via_matrix);
    assert!((via_matrix.ridge - default_ridge(&via_matrix.cxx)).abs() == 0.0);
}
