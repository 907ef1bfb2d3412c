//! C ABI over the `condcov` estimators.
//!
//! Objects are opaque handles created by `cc_*_new`/`cc_*_fit`/`cc_*_load`
//! and released with the matching `cc_*_free`. Every fallible function
//! returns a [`CcStatus`]; on failure [`cc_last_error_message`] describes the
//! error on the calling thread. Matrices cross the boundary as row-major
//! `double` buffers. Panics never unwind into C: they become
//! `CC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use condcov::forest::{fit_forest, CovForest, ForestConfig};
use condcov::kernel::{select_bandwidth, BandwidthSearch, CombineRule, KernelModel, KernelSpec};
use condcov::{cov_to_corr, Dataset, Error, SymMatrix};
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    TooFewRows = 4,
    DegenerateData = 5,
    ZeroWeightSum = 6,
    Infeasible = 7,
    Io = 8,
    Format = 9,
    Panic = 10,
}

/// Units of a returned covariance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcScale {
    /// Covariance of the standardized residuals.
    Standardized = 0,
    /// Rescaled by the marginal output standard deviations.
    Output = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcCombineRule {
    FrobeniusOnly = 0,
    TraceOnly = 1,
    GeomMeanOfMinimizers = 2,
    MinimizerOfGeomMeanLoss = 3,
}

impl From<CcCombineRule> for CombineRule {
    fn from(r: CcCombineRule) -> Self {
        match r {
            CcCombineRule::FrobeniusOnly => CombineRule::FrobeniusOnly,
            CcCombineRule::TraceOnly => CombineRule::TraceOnly,
            CcCombineRule::GeomMeanOfMinimizers => CombineRule::GeomMeanOfMinimizers,
            CcCombineRule::MinimizerOfGeomMeanLoss => CombineRule::MinimizerOfGeomMeanLoss,
        }
    }
}

/// Training data: covariates `z` (n×q) and outputs `x` (n×p).
pub struct CcDataset(Dataset);

/// Fitted Nadaraya-Watson model.
pub struct CcKernelModel(KernelModel);

/// Fitted covariance forest.
pub struct CcForest(CovForest);

struct Failure(CcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.category() {
            "dimension" => CcStatus::DimensionMismatch,
            "too-few-rows" | "empty" => CcStatus::TooFewRows,
            "degenerate-column" | "non-positive-diagonal" | "cholesky" => CcStatus::DegenerateData,
            "zero-weight-sum" => CcStatus::ZeroWeightSum,
            "infeasible" => CcStatus::Infeasible,
            "io" => CcStatus::Io,
            "format" | "parse" => CcStatus::Format,
            _ => CcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: Option<String>) {
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    });
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            CcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(Some(format!("internal panic: {msg}")));
            CcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(CcStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(fail(CcStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(CcStatus::NullPointer, format!("{what} is NULL")));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(fail(CcStatus::NullPointer, "path is NULL"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_string)
        .map_err(|_| fail(CcStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Copies a symmetric matrix into a row-major `p×p` buffer.
unsafe fn write_matrix(m: &SymMatrix, out: *mut f64, out_len: usize) -> Result<(), Failure> {
    let p = m.dim();
    if out.is_null() {
        return Err(fail(CcStatus::NullPointer, "output buffer is NULL"));
    }
    if out_len < p * p {
        return Err(fail(
            CcStatus::DimensionMismatch,
            format!("output buffer holds {out_len} values, need {}", p * p),
        ));
    }
    let buf = std::slice::from_raw_parts_mut(out, p * p);
    for j in 0..p {
        for k in 0..p {
            buf[j * p + k] = m.get(j, k);
        }
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies row-major `z` (n×q) and `x` (n×p) into a new dataset.
///
/// # Safety
/// `z` and `x` must point to `n*q` and `n*p` readable doubles; `out` must be
/// a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cc_dataset_new(
    z: *const f64,
    x: *const f64,
    n: usize,
    q: usize,
    p: usize,
    out: *mut *mut CcDataset,
) -> CcStatus {
    guard(|| {
        let len = |a: usize| {
            n.checked_mul(a)
                .ok_or_else(|| fail(CcStatus::InvalidArgument, "dimensions overflow"))
        };
        let zv = slice(z, len(q)?, "z")?.to_vec();
        let xv = slice(x, len(p)?, "x")?.to_vec();
        let za = Array2::from_shape_vec((n, q), zv).map_err(|e| fail(CcStatus::DimensionMismatch, e.to_string()))?;
        let xa = Array2::from_shape_vec((n, p), xv).map_err(|e| fail(CcStatus::DimensionMismatch, e.to_string()))?;
        write_out(out, CcDataset(Dataset::from_arrays(za, xa)?), "out")
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`cc_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_dataset_free(ds: *mut CcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_dataset_dims(
    ds: *const CcDataset,
    n: *mut usize,
    q: *mut usize,
    p: *mut usize,
) -> CcStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        for (ptr, v) in [(n, d.n()), (q, d.q()), (p, d.p())] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// Cross-validates the covariance bandwidth over the default grid. A
/// positive `mean_bandwidth` fixes the pilot mean bandwidth, otherwise it is
/// cross-validated too; both chosen values are written out.
///
/// # Safety
/// `ds` must be a live dataset handle; `out_bandwidth` must be writable;
/// `out_mean_bandwidth` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_select_bandwidth(
    ds: *const CcDataset,
    rule: CcCombineRule,
    mean_bandwidth: f64,
    out_bandwidth: *mut f64,
    out_mean_bandwidth: *mut f64,
) -> CcStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        if out_bandwidth.is_null() {
            return Err(fail(CcStatus::NullPointer, "out_bandwidth is NULL"));
        }
        let mut search = BandwidthSearch::for_data(d)?;
        search.combine = rule.into();
        search.mean_bandwidth = (mean_bandwidth > 0.0).then_some(mean_bandwidth);
        let sel = select_bandwidth(d, &search)?;
        *out_bandwidth = sel.bandwidth;
        if let Some(m) = out_mean_bandwidth.as_mut() {
            *m = sel.mean_bandwidth.unwrap_or(mean_bandwidth);
        }
        Ok(())
    })
}

/// Fits the kernel model: conditional mean with `mean_bandwidth`, covariance
/// of standardized residuals with `bandwidth`.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_kernel_fit(
    ds: *const CcDataset,
    mean_bandwidth: f64,
    bandwidth: f64,
    out: *mut *mut CcKernelModel,
) -> CcStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        let m = KernelModel::fit(d, mean_bandwidth, KernelSpec::gaussian(bandwidth))?;
        write_out(out, CcKernelModel(m), "out")
    })
}

/// Conditional covariance at `z` (length q) into `out` (row-major p×p).
///
/// # Safety
/// `model` must be live, `z` readable for `q` doubles, `out` writable for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_kernel_covariance(
    model: *const CcKernelModel,
    z: *const f64,
    q: usize,
    scale: CcScale,
    out: *mut f64,
    out_len: usize,
) -> CcStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let s = m.covariance(slice(z, q, "z")?)?.matrix;
        let s = match scale {
            CcScale::Standardized => s,
            CcScale::Output => m.to_output_scale(&s),
        };
        write_matrix(&s, out, out_len)
    })
}

/// Conditional correlation at `z` into `out` (row-major p×p).
///
/// # Safety
/// As for [`cc_kernel_covariance`].
#[no_mangle]
pub unsafe extern "C" fn cc_kernel_correlation(
    model: *const CcKernelModel,
    z: *const f64,
    q: usize,
    out: *mut f64,
    out_len: usize,
) -> CcStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        write_matrix(&m.correlation(slice(z, q, "z")?)?.matrix, out, out_len)
    })
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_kernel_free(model: *mut CcKernelModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grows a forest on the standardized residuals of a kernel mean fit with
/// `mean_bandwidth`. `min_node_size` and `mtry` of 0 select the defaults.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_fit(
    ds: *const CcDataset,
    mean_bandwidth: f64,
    n_trees: usize,
    min_node_size: usize,
    mtry: usize,
    seed: u64,
    out: *mut *mut CcForest,
) -> CcStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        let model = KernelModel::fit(d, mean_bandwidth, KernelSpec::gaussian(mean_bandwidth))?;
        let config = ForestConfig {
            n_trees,
            min_node_size: (min_node_size > 0).then_some(min_node_size),
            mtry: (mtry > 0).then_some(mtry),
            seed,
            ..ForestConfig::default()
        };
        let forest = fit_forest(d, model.residuals(), &config)?.with_output_scale(model.sigma_hat().to_vec())?;
        write_out(out, CcForest(forest), "out")
    })
}

/// Forest covariance at `z` into `out` (row-major p×p).
///
/// # Safety
/// `forest` must be live, `z` readable for `q` doubles, `out` writable for
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_predict_cov(
    forest: *const CcForest,
    z: *const f64,
    q: usize,
    scale: CcScale,
    out: *mut f64,
    out_len: usize,
) -> CcStatus {
    guard(|| {
        let f = &deref(forest, "forest")?.0;
        let z = slice(z, q, "z")?;
        let s = match scale {
            CcScale::Standardized => f.predict_cov(z)?,
            CcScale::Output => f.predict_cov_output_scale(z)?,
        };
        write_matrix(&s, out, out_len)
    })
}

/// Forest correlation at `z` into `out` (row-major p×p).
///
/// # Safety
/// As for [`cc_forest_predict_cov`].
#[no_mangle]
pub unsafe extern "C" fn cc_forest_predict_corr(
    forest: *const CcForest,
    z: *const f64,
    q: usize,
    out: *mut f64,
    out_len: usize,
) -> CcStatus {
    guard(|| {
        let f = &deref(forest, "forest")?.0;
        let s = f.predict_cov(slice(z, q, "z")?)?;
        write_matrix(&cov_to_corr(&s)?, out, out_len)
    })
}

/// Number of covariates and outputs the forest was trained on.
///
/// # Safety
/// `forest` must be live; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_dims(forest: *const CcForest, q: *mut usize, p: *mut usize) -> CcStatus {
    guard(|| {
        let f = &deref(forest, "forest")?.0;
        if let Some(r) = q.as_mut() {
            *r = f.q();
        }
        if let Some(r) = p.as_mut() {
            *r = f.p();
        }
        Ok(())
    })
}

/// Writes the forest as JSON.
///
/// # Safety
/// `forest` must be live and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_save(forest: *const CcForest, path: *const c_char) -> CcStatus {
    guard(|| {
        let f = &deref(forest, "forest")?.0;
        f.save(Path::new(&path_arg(path)?))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_load(path: *const c_char, out: *mut *mut CcForest) -> CcStatus {
    guard(|| {
        let f = CovForest::load(Path::new(&path_arg(path)?))?;
        write_out(out, CcForest(f), "out")
    })
}

/// # Safety
/// `forest` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_forest_free(forest: *mut CcForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}
