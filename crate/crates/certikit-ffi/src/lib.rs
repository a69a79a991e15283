//! C ABI for embedding the certified model checker.
//!
//! The surface is deliberately small: parse a model into an opaque
//! [`CkModel`], run the full solve-and-certify pipeline with
//! [`certikit_certify`], and read the results out of the opaque
//! [`CkReport`]. Every handle returned by this library must be released
//! with its matching `_free` function, and every `char*` the library
//! allocates must be released with [`certikit_string_free`]. Passing a
//! pointer obtained anywhere else to those functions is undefined
//! behaviour, as is using a handle after freeing it.
//!
//! Fallible entry points return a [`CkStatus`] and write their result
//! through an out-pointer only on `CK_OK`. On any other status the
//! out-pointer is left untouched and a human-readable message is
//! available from [`certikit_last_error`] until the next call on the
//! same thread.
//!
//! Handles are not synchronized; share them across threads only with
//! external locking. Distinct handles are independent.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::fmt::Write as _;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use certikit::circuit::CompiledTrace;
use certikit::modelcheck::{check_all, parse_model, Model};
use certikit::protocol::{
    run_verification, LocalChannel, ProverSession, Retention, VerifyOptions,
};

/// Result code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CkStatus {
    /// The call succeeded.
    CkOk = 0,
    /// A required pointer argument was null.
    CkNullArgument = 1,
    /// A string argument was not valid UTF-8.
    CkInvalidUtf8 = 2,
    /// The model text was rejected; see `certikit_last_error`.
    CkParseError = 3,
    /// Solving or certification failed; see `certikit_last_error`.
    CkProtocolError = 4,
    /// An index argument was out of range.
    CkOutOfRange = 5,
    /// The library panicked internally; the handle state is unspecified.
    CkInternal = 6,
}

/// A parsed transition system together with its specifications.
pub struct CkModel {
    model: Model,
}

/// The outcome of one certified model-checking run.
pub struct CkReport {
    answers: Vec<bool>,
    accepted: bool,
    stats: String,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let owned = CString::new(bytes).expect("nul bytes were stripped");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Runs `f`, converting a panic into `CkInternal` instead of unwinding
/// across the C boundary.
fn guarded(f: impl FnOnce() -> CkStatus) -> CkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CkStatus::CkInternal
        }
    }
}

/// Returns the library version as a static nul-terminated string.
///
/// The pointer is valid for the lifetime of the process and must not be
/// freed.
#[no_mangle]
pub extern "C" fn certikit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message for the most recent failure on this thread, or
/// null if the most recent call succeeded.
///
/// The pointer is owned by the library and is invalidated by the next
/// certikit call on the same thread; copy it if it needs to outlive
/// that. Do not free it.
#[no_mangle]
pub extern "C" fn certikit_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Parses model text into a new handle.
///
/// `text` must be a nul-terminated UTF-8 string in the model language.
/// On `CK_OK`, `*out` receives a handle that must eventually be passed
/// to `certikit_model_free`.
///
/// # Safety
///
/// `text` must point to a valid nul-terminated string and `out` to a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn certikit_model_parse(
    text: *const c_char,
    out: *mut *mut CkModel,
) -> CkStatus {
    clear_error();
    if text.is_null() || out.is_null() {
        set_error("null argument");
        return CkStatus::CkNullArgument;
    }
    let bytes = CStr::from_ptr(text);
    guarded(|| {
        let text = match bytes.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("model text is not valid UTF-8");
                return CkStatus::CkInvalidUtf8;
            }
        };
        match parse_model(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(CkModel { model }));
                CkStatus::CkOk
            }
            Err(e) => {
                set_error(e.to_string());
                CkStatus::CkParseError
            }
        }
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
///
/// `model` must be null or a handle from `certikit_model_parse` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn certikit_model_free(model: *mut CkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Returns the number of specifications the model declares, which is
/// also the number of answers a report for it will carry. Null yields 0.
///
/// # Safety
///
/// `model` must be null or a live handle from `certikit_model_parse`.
#[no_mangle]
pub unsafe extern "C" fn certikit_model_spec_count(model: *const CkModel) -> u32 {
    match model.as_ref() {
        Some(m) => m.model.specs.len() as u32,
        None => 0,
    }
}

/// Checks every specification of the model and certifies the run.
///
/// The solver records its work as a trace, the prover compiles the trace
/// into a circuit, and the verifier interrogates the prover in-process;
/// `seed` drives all verifier randomness, `gc` selects incremental
/// certification with prover-side garbage collection, and `repetitions`
/// (clamped to at least 1) repeats the interrogation to sharpen the
/// error bound. On `CK_OK`, `*out` receives a report that must
/// eventually be passed to `certikit_report_free`; the certification
/// verdict — including a rejection — is reported there, not as a status
/// code.
///
/// # Safety
///
/// `model` must be a live handle from `certikit_model_parse` and `out` a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn certikit_certify(
    model: *const CkModel,
    seed: u64,
    gc: bool,
    repetitions: u32,
    out: *mut *mut CkReport,
) -> CkStatus {
    clear_error();
    let model = match model.as_ref() {
        Some(m) => &m.model,
        None => {
            set_error("null argument");
            return CkStatus::CkNullArgument;
        }
    };
    if out.is_null() {
        set_error("null argument");
        return CkStatus::CkNullArgument;
    }
    guarded(|| {
        let repetitions = repetitions.max(1);
        let (answers, trace) = check_all(model);
        let inputs = model.macro_inputs();
        let retention = if gc {
            Retention::FragmentGc
        } else {
            Retention::KeepAll
        };
        let mut prover = match ProverSession::new(&trace, &inputs, retention, None) {
            Ok(p) => p,
            Err(e) => {
                set_error(format!("prover: {e}"));
                return CkStatus::CkProtocolError;
            }
        };
        let compiled = match CompiledTrace::build(&trace, &inputs) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("compiling trace: {e}"));
                return CkStatus::CkProtocolError;
            }
        };
        let opts = VerifyOptions {
            seed,
            repetitions,
            gc,
        };
        let outcome = {
            let mut channel = LocalChannel::new(&mut prover);
            match run_verification(&compiled, &mut channel, &opts) {
                Ok(o) => o,
                Err(e) => {
                    set_error(format!("verification transport: {e}"));
                    return CkStatus::CkProtocolError;
                }
            }
        };

        let mut stats = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(stats, "{k}={v}");
        };
        let answer = answers.iter().all(|&a| a);
        let csv = answers
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",");
        put("answer", answer.to_string());
        put("answers", csv);
        put("specs", answers.len().to_string());
        put("trace_len", compiled.trace.steps.len().to_string());
        put("plain_gates", compiled.plain.len().to_string());
        put("circuit_gates", compiled.circuit.len().to_string());
        put("n", compiled.n_vars.to_string());
        put("seed", seed.to_string());
        put("repetitions", repetitions.to_string());
        put("gc", gc.to_string());
        put("messages", outcome.stats.messages.to_string());
        put("bytes", outcome.stats.bytes.to_string());
        put("verifier_field_ops", outcome.stats.field_ops.to_string());
        put("error_bound", format!("{:e}", outcome.stats.error_bound));
        put("verdict", outcome.verdict.reason.clone());
        put("accepted", outcome.verdict.accept.to_string());
        put("prover_peak_nodes", prover.peak_nodes().to_string());
        put("prover_replays", prover.replays().to_string());

        let report = CkReport {
            answers,
            accepted: outcome.verdict.accept,
            stats,
        };
        *out = Box::into_raw(Box::new(report));
        CkStatus::CkOk
    })
}

/// Returns whether the verifier accepted the certification. Null yields
/// false.
///
/// # Safety
///
/// `report` must be null or a live handle from `certikit_certify`.
#[no_mangle]
pub unsafe extern "C" fn certikit_report_accepted(report: *const CkReport) -> bool {
    match report.as_ref() {
        Some(r) => r.accepted,
        None => false,
    }
}

/// Returns the number of per-specification answers in the report. Null
/// yields 0.
///
/// # Safety
///
/// `report` must be null or a live handle from `certikit_certify`.
#[no_mangle]
pub unsafe extern "C" fn certikit_report_answer_count(report: *const CkReport) -> u32 {
    match report.as_ref() {
        Some(r) => r.answers.len() as u32,
        None => 0,
    }
}

/// Writes the answer for the `index`-th specification (in declaration
/// order) to `*out`.
///
/// # Safety
///
/// `report` must be a live handle from `certikit_certify` and `out` a
/// writable bool slot.
#[no_mangle]
pub unsafe extern "C" fn certikit_report_answer(
    report: *const CkReport,
    index: u32,
    out: *mut bool,
) -> CkStatus {
    clear_error();
    let report = match report.as_ref() {
        Some(r) => r,
        None => {
            set_error("null argument");
            return CkStatus::CkNullArgument;
        }
    };
    if out.is_null() {
        set_error("null argument");
        return CkStatus::CkNullArgument;
    }
    match report.answers.get(index as usize) {
        Some(&a) => {
            *out = a;
            CkStatus::CkOk
        }
        None => {
            set_error(format!(
                "answer index {index} out of range for {} specification(s)",
                report.answers.len()
            ));
            CkStatus::CkOutOfRange
        }
    }
}

/// Returns the report's statistics as a newly allocated `key=value`
/// block, one pair per line — the same keys the command-line tool
/// prints, minus timings. Free it with `certikit_string_free`. Null
/// yields null.
///
/// # Safety
///
/// `report` must be null or a live handle from `certikit_certify`.
#[no_mangle]
pub unsafe extern "C" fn certikit_report_stats(report: *const CkReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => match CString::new(r.stats.clone()) {
            Ok(s) => s.into_raw(),
            Err(_) => std::ptr::null_mut(),
        },
        None => std::ptr::null_mut(),
    }
}

/// Releases a report handle. Null is ignored.
///
/// # Safety
///
/// `report` must be null or a handle from `certikit_certify` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn certikit_report_free(report: *mut CkReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Releases a string allocated by this library. Null is ignored.
///
/// # Safety
///
/// `s` must be null or a pointer returned by `certikit_report_stats`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn certikit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
