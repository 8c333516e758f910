mod common;

use common::{gaussian, labelled};
use minimax_filter::closed_form::{compute_moments_from_labels, least_squares_minimax};
use minimax_filter::dataset::{gen_synthetic, SyntheticSpec};
use minimax_filter::experiment::max_increase;
use minimax_filter::filters::{pretrain_autoencoder_with_losses, FilterState, PretrainConfig};
use minimax_filter::minimax::*;
use minimax_filter::optim::SolverOptions;

fn ls_cfg(rho: f64) -> TradeoffConfig {
    TradeoffConfig::single(
        Task::LeastSquares { labels: LabelSource::Private },
        Task::LeastSquares { labels: LabelSource::Target },
        rho,
        0.0,
    )
}

fn fd_gradient(u: &FilterState, data: &minimax_filter::dataset::Dataset, cfg: &TradeoffConfig, h: f64) -> Vec<f64> {
    (0..u.params().len())
        .map(|k| {
            let mut e = vec![0.0; u.params().len()];
            e[k] = 1.0;
            let plus = joint_objective(&u.stepped(&e, h).unwrap(), data, cfg).unwrap().phi;
            let minus = joint_objective(&u.stepped(&e, -h).unwrap(), data, cfg).unwrap().phi;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn direction_is_negative_gradient_of_least_squares_phi() {
    for seed in 0..4 {
        let data = labelled(100, 5, 3, 2, seed);
        let cfg = ls_cfg(0.5 + seed as f64);
        let u = FilterState::linear(&gaussian(5, 2, 40 + seed)).unwrap();
        let obj = joint_objective(&u, &data, &cfg).unwrap();
        let q = descent_direction(&u, &obj.heads, &data, &cfg).unwrap();
        let fd = fd_gradient(&u, &data, &cfg, 1e-6);
        let diff: Vec<f64> = q.iter().zip(&fd).map(|(a, b)| a + b).collect();
        assert!(norm(&diff) <= 1e-4 * norm(&fd), "seed {seed}: |q + grad| = {}", norm(&diff));
        let inner: f64 = q.iter().zip(&fd).map(|(a, b)| a * b).sum();
        assert!(inner < 0.0);
    }
}

#[test]
fn direction_matches_softmax_envelope_gradient() {
    let data = labelled(80, 4, 3, 2, 21);
    let mut cfg = TradeoffConfig::classification(2.0);
    cfg.inner = SolverOptions { tol: 1e-12, max_iter: 5000 };
    for t in &mut cfg.private_tasks {
        t.reg_lambda = 1e-2;
    }
    for t in &mut cfg.utility_tasks {
        t.reg_lambda = 1e-2;
    }
    let u = FilterState::linear(&(gaussian(4, 2, 3) * 0.5)).unwrap();
    let obj = joint_objective(&u, &data, &cfg).unwrap();
    let q = descent_direction(&u, &obj.heads, &data, &cfg).unwrap();
    let fd = fd_gradient(&u, &data, &cfg, 1e-5);
    let diff: Vec<f64> = q.iter().zip(&fd).map(|(a, b)| a + b).collect();
    assert!(norm(&diff) <= 1e-4 * norm(&fd), "|q + grad| = {} vs {}", norm(&diff), norm(&fd));
}

#[test]
fn eigen_solution_is_stationary() {
    let data = labelled(150, 6, 3, 2, 8);
    let rho = 3.0;
    let m = compute_moments_from_labels(&data.features, &data.private_labels, 3, data.target().unwrap(), 2, Some(0.0)).unwrap();
    let sol = least_squares_minimax(&m, rho, 2).unwrap();
    let u = sol.filter().unwrap();
    let cfg = ls_cfg(rho);
    let obj = joint_objective(&u, &data, &cfg).unwrap();
    let q = descent_direction(&u, &obj.heads, &data, &cfg).unwrap();
    assert!(norm(&q) <= 1e-6 * (1.0 + obj.phi.abs()), "|q| = {}", norm(&q));
    assert!((obj.phi - (sol.phi_min + m.phi_offset(rho))).abs() < 1e-9);
}

#[test]
fn training_is_monotone_and_stops_with_a_reason() {
    let data = gen_synthetic(&SyntheticSpec { dim: 6, n_subjects: 4, per_subject: 30, seed: 3, ..Default::default() }).unwrap();
    let cfg = TradeoffConfig::classification(5.0).with_max_iter(40);
    let init = FilterState::random_linear(6, 2, 1.0 / 6f64.sqrt(), 5).unwrap();
    let report = train_minimax(&init, &data, &cfg).unwrap();
    assert!(max_increase(&report) <= 0.0, "phi rose by {}", max_increase(&report));
    assert!(report.final_phi() < report.records[0].phi);
    assert!(report.records.iter().all(|r| r.step > 0.0 || r.grad_norm <= cfg.grad_tol));
    if report.converged {
        assert_ne!(report.stop_reason, StopReason::MaxIterations);
    } else {
        assert_eq!(report.iterations(), 40);
    }
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).unwrap();
    let lines: Vec<serde_json::Value> =
        String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), report.iterations());
    assert!(lines.iter().all(|v| v["schema_version"] == SCHEMA_VERSION));
    assert_eq!(lines[0]["phi"].as_f64().unwrap().to_bits(), report.records[0].phi.to_bits());
}

#[test]
fn weighted_form_with_unit_rho_is_bit_identical_to_single_pair() {
    let data = gen_synthetic(&SyntheticSpec { dim: 5, n_subjects: 3, per_subject: 20, seed: 9, ..Default::default() }).unwrap();
    let rho = 4.0;
    let single = TradeoffConfig::classification(rho).with_max_iter(8);
    let lambda = single.private_tasks[0].reg_lambda;
    let multi = TradeoffConfig::multi(
        vec![(Task::Softmax { labels: LabelSource::Private }, 1.0)],
        vec![(Task::Softmax { labels: LabelSource::Target }, rho)],
        lambda,
    )
    .with_max_iter(8);
    let init = FilterState::random_linear(5, 2, 0.4, 1).unwrap();
    let a = train_minimax(&init, &data, &single).unwrap();
    let b = train_minimax(&init, &data, &multi).unwrap();
    // phi_util carries the per-task weight in the weighted form
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(IterationRecord { phi_util: rb.phi_util / rho, ..rb.clone() }, *ra);
    }
    assert_eq!(a.filter, b.filter);
    assert_eq!(a.final_phi().to_bits(), b.final_phi().to_bits());
}

#[test]
fn reconstruction_utility_trains_without_target_labels() {
    let mut data = gen_synthetic(&SyntheticSpec { dim: 5, n_subjects: 3, per_subject: 20, seed: 2, ..Default::default() }).unwrap();
    data.target_labels = None;
    let cfg = TradeoffConfig::single(Task::Softmax { labels: LabelSource::Private }, Task::Reconstruction, 1.0, 1e-3)
        .with_max_iter(10);
    let init = FilterState::random_linear(5, 3, 0.4, 2).unwrap();
    let report = train_minimax(&init, &data, &cfg).unwrap();
    assert!(report.final_phi() <= report.records[0].phi);
    assert!(joint_objective(&init, &data, &TradeoffConfig::classification(1.0)).is_err());
}

#[test]
fn mlp_filter_trains_and_pretraining_lowers_reconstruction() {
    let data = gen_synthetic(&SyntheticSpec { dim: 6, n_subjects: 3, per_subject: 20, seed: 5, ..Default::default() }).unwrap();
    let pre = pretrain_autoencoder_with_losses(&data.features, &[8], 2, &PretrainConfig { epochs: 100, ..Default::default() }).unwrap();
    let losses = &pre.layer_losses[0];
    assert!(losses.last().unwrap() < &losses[0], "{:?} -> {:?}", losses[0], losses.last());
    let cfg = TradeoffConfig::classification(2.0).with_max_iter(10);
    let report = train_minimax(&pre.filter, &data, &cfg).unwrap();
    assert!(max_increase(&report) <= 0.0);
    assert_eq!(report.filter.hidden_dims(), &[8]);
}

#[test]
fn invalid_configurations_are_rejected() {
    let data = labelled(20, 3, 2, 2, 0);
    let u = FilterState::random_linear(3, 2, 0.5, 0).unwrap();
    assert!(train_minimax(&u, &data, &ls_cfg(0.0)).is_err());
    assert!(train_minimax(&u, &data, &ls_cfg(1.0).with_max_iter(0)).is_err());
    let wrong = FilterState::random_linear(4, 2, 0.5, 0).unwrap();
    assert!(train_minimax(&wrong, &data, &ls_cfg(1.0)).is_err());
    assert!(train_minimax(&u, &data, &TradeoffConfig::multi(vec![], vec![], 0.0)).is_err());
}
