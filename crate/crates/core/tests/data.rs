mod common;

use std::io::Write;

use common::{gaussian, labelled};
use minimax_filter::baselines::{fit_pca, fit_ppls, pca_components};
use minimax_filter::dataset::*;
use minimax_filter::filters::{mlp_param_count, FilterKind, FilterState};
use minimax_filter::heads::{one_hot, SoftmaxHead};
use minimax_filter::minimax::FittedHead;
use minimax_filter::record::{read_record, write_record};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn har_shaped_csv_loads_with_contiguous_labels() {
    // 561 features, activities 1..6, 15 of 30 possible subject ids
    let dim = 561;
    let subject_ids: Vec<i64> = (1..=30).filter(|s| s % 2 == 1).collect();
    let x = gaussian(subject_ids.len() * 12, dim, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("har.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    let header: Vec<String> = (0..dim).map(|k| format!("f{k}")).chain(["activity".into(), "subject".into()]).collect();
    writeln!(f, "{}", header.join(",")).unwrap();
    let mut rows = Vec::new();
    for (s_idx, &s) in subject_ids.iter().enumerate() {
        for j in 0..12 {
            let i = s_idx * 12 + j;
            let activity = (j % 6) as i64 + 1;
            let feats: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{},{activity},{s}", feats.join(",")).unwrap();
            rows.push((activity, s));
        }
    }
    drop(f);
    let schema = CsvSchema {
        private_column: "subject".into(),
        target_column: Some("activity".into()),
        subject_column: "subject".into(),
        ..Default::default()
    };
    let data = load_csv(&path, &schema).unwrap();
    assert_eq!((data.len(), data.dim()), (180, 561));
    assert_eq!((data.num_private_classes, data.num_target_classes), (15, 6));
    assert_eq!(data.features, x);
    for (i, &(activity, s)) in rows.iter().enumerate() {
        assert_eq!(data.target().unwrap()[i] as i64, activity - 1);
        let rank = subject_ids.iter().position(|&id| id == s).unwrap();
        assert_eq!(data.private_labels[i], rank);
        assert_eq!(data.subject_ids[i], rank);
    }
}

#[test]
fn canonical_csv_round_trips_exactly() {
    let mut data = labelled(30, 4, 3, 2, 1);
    data.features[(0, 0)] = 1e-300;
    data.features[(1, 1)] = -0.1 + 0.2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    save_csv(&data, &path).unwrap();
    let back = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(back.features, data.features);
    assert_eq!(back.private_labels, data.private_labels);
    assert_eq!(back.target_labels, data.target_labels);
    assert_eq!(back.subject_ids, data.subject_ids);
}

#[test]
fn malformed_csv_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let schema = CsvSchema::default();
    assert!(load_csv(write("a.csv", "f0,y,z,subject\nabc,1,1,1\n"), &schema).is_err());
    assert!(load_csv(write("b.csv", "f0,y,z,subject\ninf,1,1,1\n"), &schema).is_err());
    assert!(load_csv(write("c.csv", "f0,z,subject\n1.0,1,1\n"), &schema).is_err());
    assert!(load_csv(write("d.csv", "y,z,subject\n1,1,1\n"), &schema).is_err());
    assert!(load_csv(write("e.csv", "f0,y,z,subject\n1.0,1.5,1,1\n"), &schema).is_err());
    let no_target = load_csv(write("f.csv", "f0,y,subject\n1.0,1,1\n2.0,2,1\n"), &schema).unwrap();
    assert!(no_target.target_labels.is_none());
}

#[test]
fn per_subject_split_partitions_every_subject() {
    let data = gen_synthetic(&SyntheticSpec { n_subjects: 5, per_subject: 17, ..Default::default() }).unwrap();
    let (train, test) = split_per_subject(&data, 0.8, 4).unwrap();
    assert_eq!(train.len() + test.len(), data.len());
    for s in 0..5 {
        let tr = train.subject_ids.iter().filter(|&&v| v == s).count();
        let te = test.subject_ids.iter().filter(|&&v| v == s).count();
        assert_eq!((tr, te), (14, 3));
    }
    let mut rows: Vec<Vec<u64>> = train
        .features
        .row_iter()
        .chain(test.features.row_iter())
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    assert_eq!(rows.len(), data.len());
    assert_eq!(split_per_subject(&data, 0.8, 4).unwrap().0, train);
    assert_ne!(split_per_subject(&data, 0.8, 5).unwrap().0, train);
    assert!(split_per_subject(&data, 1.0, 0).is_err());
}

#[test]
fn synthetic_geometry_follows_the_angle() {
    let spec = SyntheticSpec { noise: 0.0, n_subjects: 2, angle_deg: 60.0, ..Default::default() };
    let data = gen_synthetic(&spec).unwrap();
    let z = data.target().unwrap();
    // same subject, different class: offset along the target direction
    let i = (0..data.len()).find(|&i| data.private_labels[i] == 0 && z[i] == 0).unwrap();
    let j = (0..data.len()).find(|&j| data.private_labels[j] == 0 && z[j] == 1).unwrap();
    let diff = data.features.row(j) - data.features.row(i);
    let t = 60f64.to_radians();
    assert!((diff[0] - 4.0 * t.cos()).abs() < 1e-12 && (diff[1] - 4.0 * t.sin()).abs() < 1e-12);
    assert!(diff.iter().skip(2).all(|v| *v == 0.0));
}

#[test]
fn pca_components_capture_projected_variance() {
    let x = gaussian(200, 5, 2) * DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 2.0, 1.0, 0.5]));
    let (u, vals) = pca_components(&x, 3).unwrap();
    assert!((u.transpose() * &u - DMatrix::identity(3, 3)).amax() < 1e-12);
    for (j, val) in vals.iter().enumerate() {
        let p = &x * u.column(j);
        let mean = p.mean();
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0;
        assert!((var - val).abs() < 1e-9 * val);
    }
    assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(fit_pca(&x, 3).unwrap().linear_matrix().unwrap(), u);
}

#[test]
fn ppls_without_penalty_maximizes_target_covariance() {
    let data = labelled(120, 5, 3, 2, 7);
    let y = one_hot(&data.private_labels, 3);
    let z = one_hot(data.target().unwrap(), 2);
    let u = fit_ppls(&data.features, &y, &z, 0.0, 2).unwrap().linear_matrix().unwrap();
    assert!((u.transpose() * &u - DMatrix::identity(2, 2)).amax() < 1e-12);
    let cxz = data.features.transpose() * &z / 120.0;
    let score = |v: &DVector<f64>| (cxz.transpose() * v).norm_squared() / v.norm_squared();
    let best = score(&u.column(0).into_owned());
    for t in 0..2000 {
        let v = gaussian(5, 1, 300 + t).column(0).into_owned();
        assert!(score(&v) <= best * (1.0 + 1e-10));
    }
    // a large private penalty turns the leading direction away from y
    let cxy = data.features.transpose() * &y / 120.0;
    let penalized = fit_ppls(&data.features, &y, &z, 100.0, 1).unwrap().linear_matrix().unwrap();
    let leak = |v: DVector<f64>| (cxy.transpose() * v).norm();
    assert!(leak(penalized.column(0).into_owned()) < leak(u.column(0).into_owned()));
}

fn filter_strategy() -> impl Strategy<Value = FilterState> {
    prop_oneof![
        (1usize..6, 1usize..4, prop::collection::vec(-1e6f64..1e6, 24))
            .prop_map(|(input, out, p)| {
                let out = out.min(input);
                FilterState::new(FilterKind::Linear, input, out, vec![], p[..input * out].to_vec()).unwrap()
            }),
        (1usize..5, 1usize..4, 1usize..3, any::<u64>())
            .prop_map(|(input, hidden, out, seed)| FilterState::random_mlp(input, &[hidden], out, seed).unwrap()),
    ]
}

proptest! {
    #[test]
    fn records_round_trip_bit_exactly(filter in filter_strategy(), k in 2usize..4, w in -50f64..50.0) {
        let d = filter.output_dim();
        let mut head = SoftmaxHead::zeros(k, d, 1e-3);
        head.weights.iter_mut().enumerate().for_each(|(i, v)| *v = w * i as f64);
        head.bias[0] = -w;
        let heads = vec![FittedHead::Softmax(head)];
        let mut buf = Vec::new();
        write_record(&mut buf, &filter, &heads).unwrap();
        let back = read_record(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.filter, &filter);
        prop_assert_eq!(&back.heads, &heads);
        if filter.kind() == FilterKind::TwoLayerSigmoid {
            prop_assert_eq!(filter.params().len(), mlp_param_count(filter.input_dim(), filter.hidden_dims(), d));
        }
    }

    #[test]
    fn truncated_records_are_rejected(cut in 1usize..40) {
        let filter = FilterState::random_linear(4, 2, 0.5, 1).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &filter, &[]).unwrap();
        let cut = cut.min(buf.len() - 1);
        prop_assert!(read_record(&buf[..buf.len() - cut]).is_err());
    }
}
