//! C ABI over the EDM library: opaque handles, status codes, and string
//! results. All strings returned through out-parameters are owned by the
//! caller and must be released with [`edm_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::c_char;

use edm_core::cli::{eval_report, nll_report, sample_dataset, ModelBundle};
use edm_core::dataio;
use edm_core::diffusion::DecodeMode;
use edm_core::EdmError;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdmStatus {
    Ok = 0,
    /// Configuration, parsing, or I/O failure.
    Error = 2,
    /// Numerical failure (non-finite values).
    Numerical = 3,
    /// Contract violation, e.g. conditional sampling from an unconditional
    /// checkpoint.
    Contract = 4,
    /// Null pointer or malformed UTF-8 argument.
    InvalidArgument = 5,
}

/// Opaque handle to a loaded model checkpoint.
pub struct EdmModel {
    bundle: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&ch| ch != '\0').collect();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &EdmError) -> EdmStatus {
    match edm_core::cli::exit_code(err) {
        3 => EdmStatus::Numerical,
        4 => EdmStatus::Contract,
        _ => EdmStatus::Error,
    }
}

fn fail(err: EdmError) -> EdmStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, EdmStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be null"));
        return Err(EdmStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        EdmStatus::InvalidArgument
    })
}

fn return_string(s: String, out: *mut *mut c_char) -> EdmStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            EdmStatus::Ok
        }
        Err(_) => {
            set_error("result contained an interior NUL byte");
            EdmStatus::Error
        }
    }
}

/// Library version string; static storage, do not free.
#[no_mangle]
pub extern "C" fn edm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread; static until
/// the next failing call, do not free.
#[no_mangle]
pub extern "C" fn edm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an `edm_*` function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn edm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a checkpoint file into an opaque model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edm_model_load(path: *const c_char, out: *mut *mut EdmModel) -> EdmStatus {
    if out.is_null() {
        set_error("out must not be null");
        return EdmStatus::InvalidArgument;
    }
    let path = match read_str(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match ModelBundle::load(Path::new(path)) {
        Ok(bundle) => {
            *out = Box::into_raw(Box::new(EdmModel { bundle }));
            EdmStatus::Ok
        }
        Err(err) => fail(err),
    }
}

/// Release a model handle.
///
/// # Safety
/// `model` must come from [`edm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn edm_model_free(model: *mut EdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample `n` molecules and return them as extended-XYZ text.
///
/// `condition` may be null (unconditional model), `"auto"`, or a property
/// value rendered as text.
///
/// # Safety
/// `model` must be a live handle; `out_xyz` must be a valid pointer; the
/// optional `condition` must be NUL-terminated when non-null.
#[no_mangle]
pub unsafe extern "C" fn edm_model_sample_xyz(
    model: *const EdmModel,
    n: usize,
    seed: u64,
    condition: *const c_char,
    out_xyz: *mut *mut c_char,
) -> EdmStatus {
    if model.is_null() || out_xyz.is_null() {
        set_error("model and out_xyz must not be null");
        return EdmStatus::InvalidArgument;
    }
    let condition = if condition.is_null() {
        None
    } else {
        match read_str(condition, "condition") {
            Ok(c) => Some(c),
            Err(status) => return status,
        }
    };
    let bundle = &(*model).bundle;
    match sample_dataset(bundle, n, seed, condition, DecodeMode::Sample) {
        Ok(dataset) => return_string(dataio::emit_extended_xyz(&dataset), out_xyz),
        Err(err) => fail(err),
    }
}

/// Mean and standard error of the log-likelihood estimator over all
/// molecules in `xyz` (extended-XYZ text), `estimates` draws per molecule.
///
/// # Safety
/// `model` must be a live handle; `xyz` NUL-terminated; `out_mean` and
/// `out_se` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn edm_model_nll(
    model: *const EdmModel,
    xyz: *const c_char,
    estimates: usize,
    seed: u64,
    out_mean: *mut f64,
    out_se: *mut f64,
) -> EdmStatus {
    if model.is_null() || out_mean.is_null() || out_se.is_null() {
        set_error("model, out_mean and out_se must not be null");
        return EdmStatus::InvalidArgument;
    }
    let xyz = match read_str(xyz, "xyz") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let bundle = &(*model).bundle;
    let result = dataio::parse_extended_xyz(xyz, Some(&bundle.vocab))
        .and_then(|dataset| nll_report(bundle, &dataset, estimates.max(1), seed));
    match result {
        Ok(report) => {
            let mut mean = f64::NAN;
            let mut se = f64::NAN;
            for line in report.lines() {
                if let Some(v) = line.strip_prefix("mean_nll: ") {
                    mean = v.parse().unwrap_or(f64::NAN);
                } else if let Some(v) = line.strip_prefix("se_nll: ") {
                    se = v.parse().unwrap_or(f64::NAN);
                }
            }
            *out_mean = mean;
            *out_se = se;
            EdmStatus::Ok
        }
        Err(err) => fail(err),
    }
}

/// Stability/uniqueness/distance-metric report for extended-XYZ text, with
/// an optional reference set for the distribution metrics.
///
/// # Safety
/// `xyz` must be NUL-terminated; `reference` may be null; `out_report` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edm_eval_report(
    xyz: *const c_char,
    reference: *const c_char,
    out_report: *mut *mut c_char,
) -> EdmStatus {
    if out_report.is_null() {
        set_error("out_report must not be null");
        return EdmStatus::InvalidArgument;
    }
    let xyz = match read_str(xyz, "xyz") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let reference = if reference.is_null() {
        None
    } else {
        match read_str(reference, "reference") {
            Ok(s) => Some(s),
            Err(status) => return status,
        }
    };
    let result = (|| {
        let dataset = dataio::parse_extended_xyz(xyz, None)?;
        let reference = match reference {
            None => None,
            Some(text) => Some(dataio::parse_extended_xyz(text, None)?),
        };
        eval_report(&dataset, reference.as_ref())
    })();
    match result {
        Ok(report) => return_string(report, out_report),
        Err(err) => fail(err),
    }
}
