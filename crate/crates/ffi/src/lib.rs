//! C ABI over the `dyneval` pipeline.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_from_*`
//! functions and released by the matching `*_free`. Every fallible function
//! returns a [`DynevalStatus`]; on failure a message is available from
//! [`dyneval_last_error`] on the same thread until the next failing call.
//! Strings returned to the caller must be released with [`dyneval_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dyneval::harness::{self, EvaluationReport, ExperimentConfig, ReportFormat};
use dyneval::metrics::{ndcg_at_k, AffinityTruth};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynevalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Pipeline = 6,
    NotFound = 7,
    Panic = 8,
}

/// Output format selector for [`dyneval_report_emit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynevalFormat {
    Json = 0,
    Csv = 1,
    Markdown = 2,
}

/// Opaque experiment configuration.
pub struct DynevalConfig {
    inner: ExperimentConfig,
}

/// Opaque evaluation report.
pub struct DynevalReport {
    inner: EvaluationReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn classify(err: &dyneval::Error) -> DynevalStatus {
    use dyneval::Error as E;
    match err {
        E::Stage { source, .. } => classify(source),
        E::Parse { .. } | E::Json(_) | E::Version { .. } => DynevalStatus::Parse,
        E::Io(_) => DynevalStatus::Io,
        E::InvalidArgument(_) | E::OffsetOutOfRange { .. } | E::LengthMismatch { .. } => {
            DynevalStatus::InvalidArgument
        }
        _ => DynevalStatus::Pipeline,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DynevalStatus>) -> DynevalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DynevalStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            DynevalStatus::Panic
        }
    }
}

fn fail(err: dyneval::Error) -> DynevalStatus {
    set_error(err.to_string());
    classify(&err)
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, DynevalStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(DynevalStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        DynevalStatus::InvalidUtf8
    })
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, DynevalStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        DynevalStatus::NullPointer
    })
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), DynevalStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(DynevalStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

/// Message of the last failure on this thread, or NULL. Owned by the library;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dyneval_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dyneval_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dyneval_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New configuration with every field at its default.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_config_new(out: *mut *mut DynevalConfig) -> DynevalStatus {
    guard(|| {
        let cfg = Box::new(DynevalConfig {
            inner: ExperimentConfig::default(),
        });
        write_out(out, Box::into_raw(cfg))
    })
}

/// Parse a JSON configuration document; absent fields take defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_config_from_json(
    json: *const c_char,
    out: *mut *mut DynevalConfig,
) -> DynevalStatus {
    guard(|| {
        let text = str_arg(json)?;
        let inner = ExperimentConfig::from_json(text).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DynevalConfig { inner })))
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dyneval_config_set_master_seed(
    cfg: *mut DynevalConfig,
    seed: u64,
) -> DynevalStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| {
            set_error("null handle");
            DynevalStatus::NullPointer
        })?;
        cfg.inner.master_seed = seed;
        Ok(())
    })
}

/// Serialize a configuration to JSON. Free the result with
/// [`dyneval_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_config_to_json(
    cfg: *const DynevalConfig,
    out: *mut *mut c_char,
) -> DynevalStatus {
    guard(|| {
        let cfg = handle(cfg)?;
        let text = cfg.inner.to_json().map_err(fail)?;
        write_out(out, CString::new(text).expect("json has no NUL").into_raw())
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dyneval_config_free(cfg: *mut DynevalConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the whole pipeline.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_run_pipeline(
    cfg: *const DynevalConfig,
    out: *mut *mut DynevalReport,
) -> DynevalStatus {
    guard(|| {
        let cfg = handle(cfg)?;
        let inner = harness::run_pipeline(&cfg.inner).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DynevalReport { inner })))
    })
}

/// Parse a report previously emitted as JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_from_json(
    json: *const c_char,
    out: *mut *mut DynevalReport,
) -> DynevalStatus {
    guard(|| {
        let inner = EvaluationReport::from_json(str_arg(json)?).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DynevalReport { inner })))
    })
}

/// # Safety
/// `report` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_free(report: *mut DynevalReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Serialize a report. Free the result with [`dyneval_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_emit(
    report: *const DynevalReport,
    format: DynevalFormat,
    out: *mut *mut c_char,
) -> DynevalStatus {
    guard(|| {
        let report = handle(report)?;
        let fmt = match format {
            DynevalFormat::Json => ReportFormat::Json,
            DynevalFormat::Csv => ReportFormat::Csv,
            DynevalFormat::Markdown => ReportFormat::Markdown,
        };
        let text = harness::emit_report(&report.inner, fmt).map_err(fail)?;
        write_out(
            out,
            CString::new(text).expect("report has no NUL").into_raw(),
        )
    })
}

/// Number of test variants in the primary model's rows.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_num_variants(
    report: *const DynevalReport,
    out: *mut usize,
) -> DynevalStatus {
    guard(|| {
        let report = handle(report)?;
        write_out(out, report.inner.primary().variants.len())
    })
}

/// Ground-truth NDCG of variant `index` for the primary model.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_ground_truth(
    report: *const DynevalReport,
    index: usize,
    out: *mut f64,
) -> DynevalStatus {
    guard(|| {
        let report = handle(report)?;
        let row = report.inner.primary().variants.get(index).ok_or_else(|| {
            set_error(format!("variant index {index} out of range"));
            DynevalStatus::NotFound
        })?;
        write_out(out, row.gt_ndcg)
    })
}

/// Estimate of `method` on variant `index` for the primary model.
///
/// # Safety
/// `report` must be a live handle, `method` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_estimate(
    report: *const DynevalReport,
    index: usize,
    method: *const c_char,
    out: *mut f64,
) -> DynevalStatus {
    guard(|| {
        let report = handle(report)?;
        let method = str_arg(method)?;
        let row = report.inner.primary().variants.get(index).ok_or_else(|| {
            set_error(format!("variant index {index} out of range"));
            DynevalStatus::NotFound
        })?;
        let e = row
            .estimates
            .iter()
            .find(|e| e.method == method)
            .ok_or_else(|| {
                set_error(format!("no method `{method}` in report"));
                DynevalStatus::NotFound
            })?;
        write_out(out, e.estimate)
    })
}

/// Mean absolute error of `method` for the primary model.
///
/// # Safety
/// `report` must be a live handle, `method` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dyneval_report_mae(
    report: *const DynevalReport,
    method: *const c_char,
    out: *mut f64,
) -> DynevalStatus {
    guard(|| {
        let report = handle(report)?;
        let method = str_arg(method)?;
        let mae = report.inner.primary().mae_of(method).ok_or_else(|| {
            set_error(format!("no method `{method}` in report"));
            DynevalStatus::NotFound
        })?;
        write_out(out, mae)
    })
}

/// NDCG@k of `scores` against the relevance vector `truth`, both of length `n`.
///
/// # Safety
/// `scores` and `truth` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dyneval_ndcg_at_k(
    scores: *const f64,
    truth: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> DynevalStatus {
    guard(|| {
        if scores.is_null() || truth.is_null() {
            set_error("null array argument");
            return Err(DynevalStatus::NullPointer);
        }
        if n == 0 {
            set_error("empty candidate list");
            return Err(DynevalStatus::InvalidArgument);
        }
        let scores = std::slice::from_raw_parts(scores, n);
        let values = std::slice::from_raw_parts(truth, n).to_vec();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            set_error("relevances must be finite and non-negative");
            return Err(DynevalStatus::InvalidArgument);
        }
        let all_zero = values.iter().all(|&v| v == 0.0);
        let t = AffinityTruth { values, all_zero };
        write_out(out, ndcg_at_k(scores, &t, k).map_err(fail)?)
    })
}
