//! C ABI over the minimax-filter library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`MmfStatus`]; on failure, [`mmf_last_error`] describes the most
//! recent error on the calling thread. Matrices are dense, row-major `double`
//! buffers. Panics never unwind into the caller; they surface as
//! `MMF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use minimax_filter::dp::{self, BoundKind, NoiseConfig};
use minimax_filter::minimax::{train_minimax, LabelSource, Task, TradeoffConfig};
use minimax_filter::rng::rng_from_seed;
use minimax_filter::{Dataset, Error, FilterState};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfBound {
    Clip = 0,
    Squash = 1,
    Normalize = 2,
}

impl From<MmfBound> for BoundKind {
    fn from(b: MmfBound) -> Self {
        match b {
            MmfBound::Clip => BoundKind::Clip,
            MmfBound::Squash => BoundKind::Squash,
            MmfBound::Normalize => BoundKind::Normalize,
        }
    }
}

/// Opaque filter handle.
pub struct MmfFilter(FilterState);

/// Opaque dataset handle.
pub struct MmfDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MmfStatus {
    match err {
        Error::Shape(_) => MmfStatus::Shape,
        Error::InvalidArgument(_) | Error::LabelOutOfRange { .. } | Error::EmptyData(_) | Error::NonFinite { .. } => {
            MmfStatus::InvalidArgument
        }
        Error::Numeric(_) => MmfStatus::Numeric,
        Error::Io(_) => MmfStatus::Io,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => MmfStatus::Parse,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MmfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MmfStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MmfStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MmfStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Lib(Error::InvalidArgument("path is not valid UTF-8".into())))
}

unsafe fn matrix(data: *const f64, rows: usize, cols: usize) -> Result<DMatrix<f64>, Failure> {
    let len = rows.checked_mul(cols).ok_or_else(|| Error::InvalidArgument("matrix size overflows".into()))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(data, len, "matrix data")?))
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) -> Result<(), Failure> {
    if out.len() != m.len() {
        return Err(Error::Shape(format!("output buffer holds {} values, need {}", out.len(), m.len())).into());
    }
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[i * m.ncols() + j] = *v;
        }
    }
    Ok(())
}

fn need_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Linear filter from a row-major `input_dim x output_dim` matrix `U`
/// (`g(x) = U^T x`).
///
/// # Safety
/// `u` must point to `input_dim * output_dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_linear(
    u: *const f64,
    input_dim: usize,
    output_dim: usize,
    out: *mut *mut MmfFilter,
) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let m = matrix(u, input_dim, output_dim)?;
        put(out, MmfFilter(FilterState::linear(&m)?))
    })
}

/// Linear filter with entries uniform in `[-1/sqrt(input_dim), 1/sqrt(input_dim)]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_random_linear(
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    out: *mut *mut MmfFilter,
) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let scale = 1.0 / (input_dim.max(1) as f64).sqrt();
        put(out, MmfFilter(FilterState::random_linear(input_dim, output_dim, scale, seed)?))
    })
}

/// Loads a filter record written by `mmf_filter_save` or the `mmf train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_load(path: *const c_char, out: *mut *mut MmfFilter) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let record = minimax_filter::record::load_record(c_path(path)?)?;
        put(out, MmfFilter(record.filter))
    })
}

/// # Safety
/// `filter` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_save(filter: *const MmfFilter, path: *const c_char) -> MmfStatus {
    guard(|| {
        let f = as_ref(filter, "filter")?;
        minimax_filter::record::save_record(c_path(path)?, &f.0, &[])?;
        Ok(())
    })
}

/// Input dimension, or 0 for a NULL handle.
///
/// # Safety
/// `filter` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_input_dim(filter: *const MmfFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.0.input_dim())
}

/// Output dimension, or 0 for a NULL handle.
///
/// # Safety
/// `filter` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_output_dim(filter: *const MmfFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.0.output_dim())
}

/// Applies the filter to `rows` row-major samples of width `input_dim`,
/// writing `rows * output_dim` values to `out`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_apply(
    filter: *const MmfFilter,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> MmfStatus {
    guard(|| {
        let f = as_ref(filter, "filter")?;
        let g = f.0.apply(&matrix(x, rows, cols)?)?;
        write_row_major(&g, slice_mut(out, out_len, "output buffer")?)
    })
}

/// # Safety
/// `filter` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmf_filter_free(filter: *mut MmfFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Dataset from row-major features and zero-based labels. `target_labels`
/// may be NULL when there is no target task.
///
/// # Safety
/// `features` must hold `rows * cols` doubles; each label array `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_new(
    features: *const f64,
    rows: usize,
    cols: usize,
    private_labels: *const usize,
    target_labels: *const usize,
    subject_ids: *const usize,
    out: *mut *mut MmfDataset,
) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let x = matrix(features, rows, cols)?;
        let y = slice(private_labels, rows, "private labels")?.to_vec();
        let z = if target_labels.is_null() { None } else { Some(slice(target_labels, rows, "target labels")?.to_vec()) };
        let s = slice(subject_ids, rows, "subject ids")?.to_vec();
        put(out, MmfDataset(Dataset::new("ffi", x, y, z, s)?))
    })
}

/// Loads a CSV with columns `f0..f{D-1}, y, z, subject`. `has_target = 0`
/// ignores any `z` column.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_load_csv(path: *const c_char, has_target: i32, out: *mut *mut MmfDataset) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let schema = minimax_filter::dataset::CsvSchema {
            target_column: (has_target != 0).then(|| "z".into()),
            ..Default::default()
        };
        put(out, MmfDataset(minimax_filter::dataset::load_csv(c_path(path)?, &schema)?))
    })
}

/// Number of samples, or 0 for a NULL handle.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_len(data: *const MmfDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Feature dimension, or 0 for a NULL handle.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_dim(data: *const MmfDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_free(data: *mut MmfDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Trains a filter from `init` against a softmax adversary on the private
/// labels and a softmax analyst on the target labels (reconstruction when
/// the dataset has none). Writes the trained filter to `out` and the final
/// objective to `final_phi` when it is not NULL.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_train_minimax(
    init: *const MmfFilter,
    data: *const MmfDataset,
    rho: f64,
    reg_lambda: f64,
    max_iter: usize,
    out: *mut *mut MmfFilter,
    final_phi: *mut f64,
) -> MmfStatus {
    guard(|| {
        need_out(out)?;
        let init = as_ref(init, "init filter")?;
        let data = as_ref(data, "dataset")?;
        let utility = if data.0.target_labels.is_some() { Task::Softmax { labels: LabelSource::Target } } else { Task::Reconstruction };
        let cfg = TradeoffConfig::single(Task::Softmax { labels: LabelSource::Private }, utility, rho, reg_lambda)
            .with_max_iter(max_iter);
        let report = train_minimax(&init.0, &data.0, &cfg)?;
        if !final_phi.is_null() {
            *final_phi = report.final_phi();
        }
        put(out, MmfFilter(report.filter))
    })
}

/// Bounds one vector of length `d` into the unit ball.
///
/// # Safety
/// `h` and `out` must each hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mmf_bound(kind: MmfBound, scale: f64, h: *const f64, d: usize, out: *mut f64) -> MmfStatus {
    guard(|| {
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::InvalidArgument("bound scale must be positive".into()).into());
        }
        let v = DVector::from_column_slice(slice(h, d, "input vector")?);
        let b = dp::bound(kind.into(), scale, &v);
        slice_mut(out, d, "output vector")?.copy_from_slice(b.value.as_slice());
        Ok(())
    })
}

/// Preprocessing release `b(g(x)) + xi` for `rows` samples. `epsilon_inverse
/// = 0` bounds without adding noise. Noise is drawn from a generator seeded
/// with `seed`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn mmf_release_pre(
    filter: *const MmfFilter,
    x: *const f64,
    rows: usize,
    cols: usize,
    epsilon_inverse: f64,
    kind: MmfBound,
    scale: f64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> MmfStatus {
    guard(|| {
        let f = as_ref(filter, "filter")?;
        let cfg = NoiseConfig::new(epsilon_inverse, kind.into(), scale, seed)?;
        let mut rng = rng_from_seed(seed);
        let released = dp::release_pre(&matrix(x, rows, cols)?, &f.0, &cfg, &mut rng)?;
        write_row_major(&released, slice_mut(out, out_len, "output buffer")?)
    })
}
