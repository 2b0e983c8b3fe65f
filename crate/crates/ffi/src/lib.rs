//! C interface to the rbsem estimators.
//!
//! Conventions:
//!
//! - Handles (`RbsemModel`, `RbsemData`, `RbsemFit`) are opaque; create them
//!   through the constructors here and release each with its `_free`
//!   function. Passing null to a `_free` is a no-op; passing null anywhere
//!   else fails cleanly with an error status or sentinel return.
//! - Functions that can fail return a status (`RBSEM_OK`, `RBSEM_REJECTED`,
//!   `RBSEM_ERROR`) or a null pointer; the thread-local message from
//!   [`rbsem_last_error`] describes the most recent failure on the calling
//!   thread.
//! - Every entry point catches panics, so no unwinding crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rbsem::data::Dataset;
use rbsem::datagen::{self, DistributionSpec};
use rbsem::estimators::{self, Estimator, FitOptions, FitResult, RejectionReason};
use rbsem::model::{json as model_json, presets, ModelSpec};
use rbsem::DVector;

/// Success.
pub const RBSEM_OK: c_int = 0;
/// The operation itself failed; see `rbsem_last_error`.
pub const RBSEM_ERROR: c_int = 1;
/// The fit ran but was rejected by the acceptability screen.
pub const RBSEM_REJECTED: c_int = 2;

/// Estimator codes accepted by `rbsem_fit`.
pub const RBSEM_ESTIMATOR_ML: c_int = 0;
pub const RBSEM_ESTIMATOR_ERBM: c_int = 1;
pub const RBSEM_ESTIMATOR_IRBM: c_int = 2;
pub const RBSEM_ESTIMATOR_BOOT: c_int = 3;
pub const RBSEM_ESTIMATOR_JACK: c_int = 4;
pub const RBSEM_ESTIMATOR_REML: c_int = 5;

/// A model specification.
pub struct RbsemModel(ModelSpec);
/// An n×p dataset.
pub struct RbsemData(Dataset);
/// A finished fit.
pub struct RbsemFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap_or_default());
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; copy it if you need
/// to keep it.
#[no_mangle]
pub extern "C" fn rbsem_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rbsem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Runs `f` with a panic barrier; a panic records an error message and
/// returns `fallback` instead of unwinding into the caller.
fn guard_or<T, F: FnOnce() -> T>(fallback: T, f: F) -> T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic");
            fallback
        }
    }
}

fn guard_ptr<T, F: FnOnce() -> *mut T>(f: F) -> *mut T {
    guard_or(ptr::null_mut(), f)
}

fn guard_status<F: FnOnce() -> c_int>(f: F) -> c_int {
    guard_or(RBSEM_ERROR, f)
}

/// # Safety
/// `text` must be a valid NUL-terminated string or null.
unsafe fn cstr<'a>(text: *const c_char, what: &str) -> Option<&'a str> {
    if text.is_null() {
        set_error(&format!("{what} is null"));
        return None;
    }
    match CStr::from_ptr(text).to_str() {
        Ok(s) => Some(s),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Models.
// ---------------------------------------------------------------------------

/// Two-factor confirmatory factor model preset (6 indicators, 19 parameters).
#[no_mangle]
pub extern "C" fn rbsem_model_two_factor() -> *mut RbsemModel {
    guard_ptr(|| Box::into_raw(Box::new(RbsemModel(presets::two_factor()))))
}

/// Linear growth-curve model preset (10 occasions, 6 parameters).
#[no_mangle]
pub extern "C" fn rbsem_model_gcm() -> *mut RbsemModel {
    guard_ptr(|| Box::into_raw(Box::new(RbsemModel(presets::gcm()))))
}

/// Parses a model from the JSON cell format. Returns null on error.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rbsem_model_from_json(text: *const c_char) -> *mut RbsemModel {
    guard_ptr(|| {
        let Some(text) = cstr(text, "model JSON") else { return ptr::null_mut() };
        match model_json::from_json_str(text) {
            Ok(spec) => Box::into_raw(Box::new(RbsemModel(spec))),
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    })
}

/// Number of free parameters, or 0 for a null model.
///
/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_model_n_params(model: *const RbsemModel) -> usize {
    guard_or(0, || model.as_ref().map_or(0, |m| m.0.n_params()))
}

/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_model_free(model: *mut RbsemModel) {
    guard_or((), || {
        if !model.is_null() {
            drop(Box::from_raw(model));
        }
    });
}

// ---------------------------------------------------------------------------
// Data.
// ---------------------------------------------------------------------------

/// Wraps a row-major n×p array of observations. The values are copied.
///
/// # Safety
/// `values` must point to at least `n * p` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsem_data_from_rows(
    values: *const c_double,
    n: usize,
    p: usize,
) -> *mut RbsemData {
    guard_ptr(|| {
        if values.is_null() {
            set_error("values pointer is null");
            return ptr::null_mut();
        }
        let total = match n.checked_mul(p) {
            Some(t) if t > 0 => t,
            _ => {
                set_error("n and p must both be positive");
                return ptr::null_mut();
            }
        };
        let flat = std::slice::from_raw_parts(values, total);
        let rows: Vec<Vec<f64>> = flat.chunks_exact(p).map(<[f64]>::to_vec).collect();
        match Dataset::from_rows(&rows) {
            Ok(data) => Box::into_raw(Box::new(RbsemData(data))),
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    })
}

/// Reads a dataset from a CSV file (one row per case, optional header line).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rbsem_data_from_csv(path: *const c_char) -> *mut RbsemData {
    guard_ptr(|| {
        let Some(path) = cstr(path, "path") else { return ptr::null_mut() };
        match Dataset::read_csv_path(Path::new(path)) {
            Ok(data) => Box::into_raw(Box::new(RbsemData(data))),
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    })
}

/// Draws an n-case dataset from `model` at the parameter values `theta`
/// (length `n_theta`), with marginal skewness/excess kurtosis applied to the
/// latent and residual drivers. Zero skewness and excess kurtosis give
/// exact multivariate normal data.
///
/// # Safety
/// `model` must be a live handle; `theta` must point to `n_theta` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsem_simulate_data(
    model: *const RbsemModel,
    theta: *const c_double,
    n_theta: usize,
    n: usize,
    skewness: c_double,
    excess_kurtosis: c_double,
    seed: u64,
) -> *mut RbsemData {
    guard_ptr(|| {
        let Some(model) = model.as_ref() else {
            set_error("model is null");
            return ptr::null_mut();
        };
        if theta.is_null() {
            set_error("theta pointer is null");
            return ptr::null_mut();
        }
        let theta = DVector::from_column_slice(std::slice::from_raw_parts(theta, n_theta));
        let result = DistributionSpec::new(skewness, excess_kurtosis)
            .and_then(|dist| datagen::simulate(&model.0, &theta, n, &dist, seed));
        match result {
            Ok(data) => Box::into_raw(Box::new(RbsemData(data))),
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    })
}

/// Number of cases, or 0 for a null dataset.
///
/// # Safety
/// `data` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_data_n(data: *const RbsemData) -> usize {
    guard_or(0, || data.as_ref().map_or(0, |d| d.0.n()))
}

/// Number of observed variables, or 0 for a null dataset.
///
/// # Safety
/// `data` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_data_p(data: *const RbsemData) -> usize {
    guard_or(0, || data.as_ref().map_or(0, |d| d.0.p()))
}

/// # Safety
/// `data` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_data_free(data: *mut RbsemData) {
    guard_or((), || {
        if !data.is_null() {
            drop(Box::from_raw(data));
        }
    });
}

// ---------------------------------------------------------------------------
// Fitting.
// ---------------------------------------------------------------------------

fn estimator_from_code(code: c_int) -> Option<Estimator> {
    match code {
        RBSEM_ESTIMATOR_ML => Some(Estimator::Ml),
        RBSEM_ESTIMATOR_ERBM => Some(Estimator::Erbm),
        RBSEM_ESTIMATOR_IRBM => Some(Estimator::Irbm),
        RBSEM_ESTIMATOR_BOOT => Some(Estimator::Boot),
        RBSEM_ESTIMATOR_JACK => Some(Estimator::Jack),
        RBSEM_ESTIMATOR_REML => Some(Estimator::Reml),
        _ => None,
    }
}

/// Fits `model` to `data` with the requested estimator and writes a fit
/// handle to `*out`. Returns `RBSEM_OK` for an acceptable fit,
/// `RBSEM_REJECTED` when the fit ran but failed the acceptability screen
/// (`*out` is still set; inspect the rejection reason), and `RBSEM_ERROR`
/// when nothing could be fitted (`*out` is null).
///
/// # Safety
/// `model` and `data` must be live handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit(
    model: *const RbsemModel,
    data: *const RbsemData,
    estimator: c_int,
    seed: u64,
    out: *mut *mut RbsemFit,
) -> c_int {
    guard_status(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return RBSEM_ERROR;
        }
        *out = ptr::null_mut();
        let (Some(model), Some(data)) = (model.as_ref(), data.as_ref()) else {
            set_error("model or data handle is null");
            return RBSEM_ERROR;
        };
        let Some(estimator) = estimator_from_code(estimator) else {
            set_error(&format!("unknown estimator code {estimator} (expected 0..=5)"));
            return RBSEM_ERROR;
        };
        let opts = FitOptions { seed, ..FitOptions::default() };
        match estimators::fit(&model.0, &data.0, estimator, &opts) {
            Ok(fit) => {
                let acceptable = fit.acceptable;
                *out = Box::into_raw(Box::new(RbsemFit(fit)));
                if acceptable {
                    RBSEM_OK
                } else {
                    RBSEM_REJECTED
                }
            }
            Err(e) => {
                set_error(&e.to_string());
                RBSEM_ERROR
            }
        }
    })
}

/// Number of parameters in the fit, or 0 for a null handle.
///
/// # Safety
/// `fit` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_n_params(fit: *const RbsemFit) -> usize {
    guard_or(0, || fit.as_ref().map_or(0, |f| f.0.theta_hat.len()))
}

unsafe fn copy_vector(
    src: &DVector<f64>,
    dst: *mut c_double,
    len: usize,
    what: &str,
) -> c_int {
    if dst.is_null() {
        set_error(&format!("{what} output pointer is null"));
        return RBSEM_ERROR;
    }
    if len != src.len() {
        set_error(&format!("{what} buffer holds {len} values, fit has {}", src.len()));
        return RBSEM_ERROR;
    }
    std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src.as_slice());
    RBSEM_OK
}

/// Copies the parameter estimates into `out` (length `len == n_params`).
///
/// # Safety
/// `fit` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_estimates(
    fit: *const RbsemFit,
    out: *mut c_double,
    len: usize,
) -> c_int {
    guard_status(|| {
        let Some(fit) = fit.as_ref() else {
            set_error("fit handle is null");
            return RBSEM_ERROR;
        };
        copy_vector(&fit.0.theta_hat, out, len, "estimates")
    })
}

/// Copies the standard errors into `out` (length `len == n_params`).
///
/// # Safety
/// `fit` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_ses(
    fit: *const RbsemFit,
    out: *mut c_double,
    len: usize,
) -> c_int {
    guard_status(|| {
        let Some(fit) = fit.as_ref() else {
            set_error("fit handle is null");
            return RBSEM_ERROR;
        };
        copy_vector(&fit.0.se, out, len, "standard errors")
    })
}

/// Maximized log-likelihood (NaN for a null handle or a failed fit).
///
/// # Safety
/// `fit` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_loglik(fit: *const RbsemFit) -> c_double {
    guard_or(f64::NAN, || fit.as_ref().map_or(f64::NAN, |f| f.0.loglik))
}

/// 1 when the fit passed the acceptability screen, 0 otherwise.
///
/// # Safety
/// `fit` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_acceptable(fit: *const RbsemFit) -> c_int {
    guard_or(0, || fit.as_ref().map_or(0, |f| c_int::from(f.0.acceptable)))
}

/// Static string naming why the fit was rejected: "none", "no_convergence",
/// "sigma_not_pd", or "se_out_of_range".
///
/// # Safety
/// `fit` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_rejection_reason(fit: *const RbsemFit) -> *const c_char {
    guard_or(c"none".as_ptr(), || {
        let reason = fit.as_ref().map_or(RejectionReason::None, |f| f.0.rejection_reason);
        match reason {
            RejectionReason::None => c"none",
            RejectionReason::NoConvergence => c"no_convergence",
            RejectionReason::SigmaNotPd => c"sigma_not_pd",
            RejectionReason::SeOutOfRange => c"se_out_of_range",
        }
        .as_ptr()
    })
}

/// # Safety
/// `fit` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rbsem_fit_free(fit: *mut RbsemFit) {
    guard_or((), || {
        if !fit.is_null() {
            drop(Box::from_raw(fit));
        }
    });
}

// ---------------------------------------------------------------------------
