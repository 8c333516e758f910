use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use minimax_filter_ffi::*;

fn last_error() -> String {
    let p = mmf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn linear(u: &[f64], input_dim: usize, output_dim: usize) -> *mut MmfFilter {
    let mut f = ptr::null_mut();
    let status = unsafe { mmf_filter_linear(u.as_ptr(), input_dim, output_dim, &mut f) };
    assert_eq!(status, MmfStatus::Ok);
    f
}

#[test]
fn linear_filter_applies_u_transpose_x() {
    // U = [[1, 0], [0, 2], [1, 1]] (3 x 2)
    let f = linear(&[1.0, 0.0, 0.0, 2.0, 1.0, 1.0], 3, 2);
    unsafe {
        assert_eq!(mmf_filter_input_dim(f), 3);
        assert_eq!(mmf_filter_output_dim(f), 2);
        let x = [1.0, 2.0, 3.0, 0.0, 0.0, 1.0];
        let mut out = [0.0; 4];
        assert_eq!(mmf_filter_apply(f, x.as_ptr(), 2, 3, out.as_mut_ptr(), 4), MmfStatus::Ok);
        assert_eq!(out, [4.0, 7.0, 1.0, 1.0]);
        mmf_filter_free(f);
    }
}

#[test]
fn null_handles_and_bad_buffers_report_status() {
    unsafe {
        let mut out = [0.0; 2];
        let x = [1.0, 2.0];
        assert_eq!(mmf_filter_apply(ptr::null(), x.as_ptr(), 1, 2, out.as_mut_ptr(), 2), MmfStatus::NullPointer);
        assert!(last_error().contains("filter"));
        assert_eq!(mmf_filter_input_dim(ptr::null()), 0);
        mmf_filter_free(ptr::null_mut());
        mmf_dataset_free(ptr::null_mut());

        let f = linear(&[1.0, 0.0, 0.0, 1.0], 2, 2);
        assert_eq!(mmf_filter_apply(f, x.as_ptr(), 1, 2, out.as_mut_ptr(), 1), MmfStatus::Shape);
        assert!(last_error().contains("output buffer"));
        let wide = [1.0, 2.0, 3.0];
        assert_eq!(mmf_filter_apply(f, wide.as_ptr(), 1, 3, out.as_mut_ptr(), 2), MmfStatus::Shape);
        mmf_filter_free(f);

        let mut g = ptr::null_mut();
        assert_eq!(mmf_filter_linear(x.as_ptr(), 1, 2, ptr::null_mut()), MmfStatus::NullPointer);
        assert_eq!(mmf_filter_random_linear(4, 2, 1, &mut g), MmfStatus::Ok);
        mmf_filter_free(g);
    }
}

#[test]
fn filter_record_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.rec").to_str().unwrap()).unwrap();
    let u = [0.5, -1.25, 3.0, 1e-17, -0.0, 7.0];
    let f = linear(&u, 3, 2);
    unsafe {
        assert_eq!(mmf_filter_save(f, path.as_ptr()), MmfStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(mmf_filter_load(path.as_ptr(), &mut g), MmfStatus::Ok);
        let x = [1.0, -2.0, 0.25];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        mmf_filter_apply(f, x.as_ptr(), 1, 3, a.as_mut_ptr(), 2);
        mmf_filter_apply(g, x.as_ptr(), 1, 3, b.as_mut_ptr(), 2);
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        mmf_filter_free(f);
        mmf_filter_free(g);

        let missing = CString::new(dir.path().join("missing.rec").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(mmf_filter_load(missing.as_ptr(), &mut h), MmfStatus::Io);
        assert!(h.is_null());
    }
}

#[test]
fn bound_keeps_outputs_in_unit_ball() {
    let h = [3.0, 4.0];
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(mmf_bound(MmfBound::Normalize, 1.0, h.as_ptr(), 2, out.as_mut_ptr()), MmfStatus::Ok);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
        assert_eq!(mmf_bound(MmfBound::Clip, 10.0, h.as_ptr(), 2, out.as_mut_ptr()), MmfStatus::Ok);
        assert!((out[0] - 0.3).abs() < 1e-15 && (out[1] - 0.4).abs() < 1e-15);
        assert_eq!(mmf_bound(MmfBound::Squash, 0.0, h.as_ptr(), 2, out.as_mut_ptr()), MmfStatus::InvalidArgument);
    }
}

#[test]
fn noiseless_release_is_bounded_filter_output() {
    let f = linear(&[1.0, 0.0, 0.0, 1.0], 2, 2);
    let x = [3.0, 4.0, 0.3, 0.4];
    let mut out = [0.0; 4];
    unsafe {
        assert_eq!(
            mmf_release_pre(f, x.as_ptr(), 2, 2, 0.0, MmfBound::Clip, 1.0, 9, out.as_mut_ptr(), 4),
            MmfStatus::Ok
        );
        let expected = [0.6, 0.8, 0.3, 0.4];
        assert!(out.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));

        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        mmf_release_pre(f, x.as_ptr(), 2, 2, 1.0, MmfBound::Clip, 1.0, 5, a.as_mut_ptr(), 4);
        mmf_release_pre(f, x.as_ptr(), 2, 2, 1.0, MmfBound::Clip, 1.0, 5, b.as_mut_ptr(), 4);
        assert_eq!(a, b);
        assert_ne!(a, out);
        assert_eq!(
            mmf_release_pre(f, x.as_ptr(), 2, 2, -1.0, MmfBound::Clip, 1.0, 5, a.as_mut_ptr(), 4),
            MmfStatus::InvalidArgument
        );
        mmf_filter_free(f);
    }
}

#[test]
fn training_through_the_abi_lowers_the_objective() {
    // two subjects separated on axis 0, two target classes on axis 1
    let mut features = Vec::new();
    let (mut y, mut z, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..40usize {
        let subject = i % 2;
        let class = (i / 2) % 2;
        let jitter = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        features.extend([subject as f64 * 4.0 + jitter, class as f64 * 4.0 - jitter, jitter * 0.5]);
        y.push(subject);
        z.push(class);
        s.push(subject);
    }
    unsafe {
        let mut data = ptr::null_mut();
        let status = mmf_dataset_new(features.as_ptr(), 40, 3, y.as_ptr(), z.as_ptr(), s.as_ptr(), &mut data);
        assert_eq!(status, MmfStatus::Ok);
        assert_eq!((mmf_dataset_len(data), mmf_dataset_dim(data)), (40, 3));
        let mut init = ptr::null_mut();
        assert_eq!(mmf_filter_random_linear(3, 2, 3, &mut init), MmfStatus::Ok);
        let mut trained = ptr::null_mut();
        let mut phi = f64::NAN;
        assert_eq!(mmf_train_minimax(init, data, 1.0, 1e-3, 30, &mut trained, &mut phi), MmfStatus::Ok);
        assert!(phi.is_finite());
        assert_eq!(mmf_filter_output_dim(trained), 2);

        let bad = [5usize; 40];
        let mut other = ptr::null_mut();
        let status = mmf_dataset_new(features.as_ptr(), 40, 3, y.as_ptr(), ptr::null(), bad.as_ptr(), &mut other);
        assert_eq!(status, MmfStatus::Ok);
        assert_eq!(mmf_train_minimax(init, other, 0.0, 1e-3, 5, &mut trained, ptr::null_mut()), MmfStatus::InvalidArgument);

        mmf_dataset_free(other);
        mmf_filter_free(trained);
        mmf_filter_free(init);
        mmf_dataset_free(data);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/minimax_filter.h");
    assert!(header.exists(), "header not generated");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ MmfFilter *f = NULL; MmfStatus s = mmf_filter_random_linear(4, 2, 1, &f); mmf_filter_free(f); return s == MMF_STATUS_OK ? 0 : 1; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let out = Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
