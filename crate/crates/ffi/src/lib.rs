//! C ABI over `qgr-core`.
//!
//! A scenario is loaded from JSON into an opaque [`QgrScenario`] handle. Every
//! fallible call returns a [`QgrStatus`]; on failure the message is kept in
//! thread-local storage and read back with [`qgr_last_error_message`].
//! Strings handed to the caller must be released with [`qgr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qgr_core::cli::{to_json, ReportDocument};
use qgr_core::scenarios::{
    build_scenario, load_config, run_suite, ScenarioBundle, ScenarioConfig, Summary,
};
use qgr_core::QgrError;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum QgrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Numerical = 5,
    Panic = 6,
}

/// Opaque scenario handle.
pub struct QgrScenario {
    config: ScenarioConfig,
    bundle: ScenarioBundle,
}

/// Pass/fail counts of one suite run.
#[repr(C)]
#[derive(Debug, Copy, Clone, Default, PartialEq)]
pub struct QgrSummary {
    pub pass: usize,
    pub fail: usize,
    /// Relative residual of the check closest to (or furthest past) its tolerance.
    pub worst_rel_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &QgrError) -> QgrStatus {
    match err {
        QgrError::Parse { .. } => QgrStatus::Parse,
        QgrError::Validation { .. }
        | QgrError::UnknownParamPath(_)
        | QgrError::TooFewSteps
        | QgrError::InvalidRange { .. }
        | QgrError::TooSmall(_)
        | QgrError::NonpositiveWidth(_)
        | QgrError::SpectralOnDirichlet
        | QgrError::InvalidConstant(_) => QgrStatus::Validation,
        _ => QgrStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (QgrStatus, String)>) -> QgrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QgrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QgrStatus::Panic
        }
    }
}

fn core_err(e: QgrError) -> (QgrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QgrStatus, String) {
    (QgrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn scenario_ref<'a>(h: *const QgrScenario) -> Result<&'a QgrScenario, (QgrStatus, String)> {
    h.as_ref().ok_or_else(|| null("scenario"))
}

fn run(s: &QgrScenario) -> Result<ReportDocument, (QgrStatus, String)> {
    let results = run_suite(&s.bundle, &s.config).map_err(core_err)?;
    let summary = Summary::of(&results.residuals);
    Ok(ReportDocument {
        version: qgr_core::VERSION.to_string(),
        seed: s.config.seed,
        scenario: s.config.clone(),
        results,
        summary,
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("NULs removed")
        .into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qgr_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next fallible call on the same thread.
#[no_mangle]
pub extern "C" fn qgr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parse and build a scenario from a JSON config.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qgr_scenario_from_json(
    json: *const c_char,
    out: *mut *mut QgrScenario,
) -> QgrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (QgrStatus::InvalidUtf8, e.to_string()))?;
        let config = load_config(text).map_err(core_err)?;
        let bundle = build_scenario(&config).map_err(core_err)?;
        *out = Box::into_raw(Box::new(QgrScenario { config, bundle }));
        Ok(())
    })
}

/// Release a scenario. NULL is ignored.
///
/// # Safety
/// `h` must come from [`qgr_scenario_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qgr_scenario_free(h: *mut QgrScenario) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of grid points of the scenario, or 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qgr_scenario_grid_n(h: *const QgrScenario) -> usize {
    h.as_ref().map_or(0, |s| s.bundle.grid.n())
}

/// Run the verification suite and write the pass/fail summary.
///
/// # Safety
/// `h` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qgr_scenario_run(
    h: *const QgrScenario,
    out: *mut QgrSummary,
) -> QgrStatus {
    guard(|| {
        let s = scenario_ref(h)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let doc = run(s)?;
        *out = QgrSummary {
            pass: doc.summary.pass,
            fail: doc.summary.fail,
            worst_rel_residual: doc.summary.worst_rel_residual,
        };
        Ok(())
    })
}

/// Run the suite and return the full JSON report, identical to `qgr verify`.
///
/// # Safety
/// `h` must be a live handle and `out` a writable pointer. The string written
/// to `out` must be released with [`qgr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn qgr_scenario_report_json(
    h: *const QgrScenario,
    out: *mut *mut c_char,
) -> QgrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = scenario_ref(h)?;
        *out = into_c_string(to_json(&run(s)?));
        Ok(())
    })
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qgr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
