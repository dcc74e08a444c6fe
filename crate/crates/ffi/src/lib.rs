//! C interface to the painfuse library.
//!
//! Every fallible function returns a [`PfStatus`]. On failure a message is kept
//! per thread and can be read with [`pf_last_error_message`]. Models are opaque
//! [`PfRvmModel`] handles released with [`pf_rvm_free`].
//!
//! Matrices are dense, row-major `f64` arrays of `rows * cols` elements.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use painfuse::evaluation::{compute_metrics, postprocess, EvalError, PostMethod};
use painfuse::facs::{compute_pspi, validate_au_coding, FacsError};
use painfuse::rvm::{median_pairwise_distance, rvm_train, DataMatrix, KernelSpec, RvmError, RvmModel, RvmOptions};
use thiserror::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

/// Kernel codes accepted by [`pf_rvm_train`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfKernel {
    Rbf = 0,
    Linear = 1,
}

/// Method codes accepted by [`pf_postprocess`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfMethod {
    Original = 0,
    Rebase = 1,
    Threshold = 2,
    RebaseThreshold = 3,
}

/// Opaque trained relevance vector regressor.
pub struct PfRvmModel {
    inner: RvmModel,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("null pointer argument: {0}")]
    Null(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Rvm(#[from] RvmError),
    #[error(transparent)]
    Facs(#[from] FacsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl FfiError {
    fn status(&self) -> PfStatus {
        match self {
            FfiError::Null(_) => PfStatus::NullPointer,
            FfiError::Io { .. } => PfStatus::Io,
            FfiError::Format(_) | FfiError::Rvm(RvmError::FormatVersion(_)) => PfStatus::Format,
            FfiError::Rvm(RvmError::NumericalFailure) => PfStatus::Numerical,
            _ => PfStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> PfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], FfiError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(x: *const f64, rows: usize, cols: usize) -> Result<DataMatrix, FfiError> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FfiError::Invalid("matrix size overflows".into()))?;
    Ok(DataMatrix::new(rows, cols, slice(x, n, "x")?.to_vec())?)
}

unsafe fn model_ref<'a>(model: *const PfRvmModel) -> Result<&'a RvmModel, FfiError> {
    model.as_ref().map(|m| &m.inner).ok_or(FfiError::Null("model"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, FfiError> {
    if path.is_null() {
        return Err(FfiError::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| FfiError::Invalid("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next painfuse call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// PSPI score from the six action-unit intensities (AU4, AU6, AU7, AU9, AU10 in 0..=5, AU43 in 0..=1).
///
/// # Safety
/// `out` must be a valid pointer to one `uint8_t`.
#[no_mangle]
pub unsafe extern "C" fn pf_pspi(au4: u8, au6: u8, au7: u8, au9: u8, au10: u8, au43: u8, out: *mut u8) -> PfStatus {
    guard(|| {
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        let raw: BTreeMap<String, f64> = [("AU4", au4), ("AU6", au6), ("AU7", au7), ("AU9", au9), ("AU10", au10), ("AU43", au43)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), f64::from(v)))
            .collect();
        *out = compute_pspi(&validate_au_coding(&raw)?).value();
        Ok(())
    })
}

/// Trains a relevance vector regressor on `rows` samples of `cols` features.
/// `kernel` is a [`PfKernel`] code.
///
/// For the RBF kernel, `gamma <= 0` selects the median pairwise distance of the
/// standardized inputs. `gamma` is ignored for the linear kernel. On success
/// `*out` receives a new handle owned by the caller.
///
/// # Safety
/// `x` must hold `rows * cols` doubles, `y` must hold `rows` doubles and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_train(
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const f64,
    kernel: i32,
    gamma: f64,
    out: *mut *mut PfRvmModel,
) -> PfStatus {
    guard(|| {
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        *out = ptr::null_mut();
        let x = matrix(x, rows, cols)?;
        let y = slice(y, rows, "y")?;
        let spec = match kernel {
            k if k == PfKernel::Linear as i32 => KernelSpec::linear(),
            k if k != PfKernel::Rbf as i32 => return Err(FfiError::Invalid(format!("unknown kernel code {k}"))),
            _ if gamma > 0.0 => KernelSpec::rbf(gamma),
            _ => {
                let standardized = painfuse::rvm::Standardizer::fit(&x).apply(&x);
                KernelSpec::rbf(median_pairwise_distance(&standardized))
            }
        };
        let trained = rvm_train(&x, y, spec, &RvmOptions::default())?;
        *out = Box::into_raw(Box::new(PfRvmModel { inner: trained.model }));
        Ok(())
    })
}

/// Predictive means (and, when `var_out` is not NULL, variances) for `rows` samples.
///
/// # Safety
/// `model` must be a live handle, `x` must hold `rows * cols` doubles and
/// `mean_out` (and `var_out` if given) must have room for `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_predict(
    model: *const PfRvmModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = matrix(x, rows, cols)?;
        let means = slice_mut(mean_out, rows, "mean_out")?;
        let (mean, var) = m.predict(&x)?;
        means.copy_from_slice(&mean);
        if !var_out.is_null() {
            slice_mut(var_out, rows, "var_out")?.copy_from_slice(&var);
        }
        Ok(())
    })
}

/// Number of input features, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_input_dim(model: *const PfRvmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Number of retained relevance vectors, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_num_relevance_vectors(model: *const PfRvmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_relevance_vectors())
}

/// Writes the model as JSON to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_save(model: *const PfRvmModel, path: *const c_char) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path)?;
        std::fs::write(path, m.to_json()).map_err(|source| FfiError::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

/// Reads a model saved by [`pf_rvm_save`]. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_load(path: *const c_char, out: *mut *mut PfRvmModel) -> PfStatus {
    guard(|| {
        let out = out.as_mut().ok_or(FfiError::Null("out"))?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let text = std::fs::read_to_string(path).map_err(|source| FfiError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let inner = RvmModel::from_json(&text).map_err(|e| FfiError::Format(format!("{}: {e}", path.display())))?;
        inner.check_version()?;
        *out = Box::into_raw(Box::new(PfRvmModel { inner }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_rvm_free(model: *mut PfRvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Applies a post-processing method (a [`PfMethod`] code) to one subject's `n` predictions.
///
/// # Safety
/// `preds` and `out` must each hold `n` doubles; they may be the same buffer.
#[no_mangle]
pub unsafe extern "C" fn pf_postprocess(preds: *const f64, n: usize, method: i32, out: *mut f64) -> PfStatus {
    guard(|| {
        let p = slice(preds, n, "preds")?.to_vec();
        let method = [
            (PfMethod::Original, PostMethod::Original),
            (PfMethod::Rebase, PostMethod::Rebase),
            (PfMethod::Threshold, PostMethod::Threshold),
            (PfMethod::RebaseThreshold, PostMethod::RebaseThreshold),
        ]
        .into_iter()
        .find(|(code, _)| *code as i32 == method)
        .map(|(_, m)| m)
        .ok_or_else(|| FfiError::Invalid(format!("unknown method code {method}")))?;
        slice_mut(out, n, "out")?.copy_from_slice(&postprocess(&p, method));
        Ok(())
    })
}

/// RMSE and Pearson correlation of `n` predictions against ground truth.
///
/// `*corr_out` is NaN when either side is constant.
///
/// # Safety
/// `preds` and `truth` must hold `n` doubles; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_metrics(
    preds: *const f64,
    truth: *const f64,
    n: usize,
    rmse_out: *mut f64,
    corr_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let rmse_out = rmse_out.as_mut().ok_or(FfiError::Null("rmse_out"))?;
        let corr_out = corr_out.as_mut().ok_or(FfiError::Null("corr_out"))?;
        let m = compute_metrics(slice(preds, n, "preds")?, slice(truth, n, "truth")?)?;
        *rmse_out = m.rmse;
        *corr_out = m.corr.unwrap_or(f64::NAN);
        Ok(())
    })
}
