//! C ABI for the simulator: opaque handles, integer status codes, and
//! JSON-string reporting. The header `include/ahym.h` is generated by
//! cbindgen at build time.
//!
//! Ownership rules: every `*_new`/`*_from_*`/`run` output handle must be
//! released with the matching `*_free`; strings returned through `char**`
//! must be released with `ahym_string_free`. All entry points are
//! panic-safe and return `AHYM_STATUS_PANIC` instead of unwinding.

use ahym_core::scenario::{Scenario, ScenarioOutcome, run_scenario, scenario_preset};
use ahym_core::verify::run_suite;
use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::Path;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AhymStatus {
    /// success
    Ok = 0,
    /// unusable arguments or configuration
    Usage = 1,
    /// numeric failure while running
    Numeric = 2,
    /// an invariant battery reported failures
    Invariant = 3,
    /// a required pointer argument was null
    NullArg = 4,
    /// a string argument was not valid UTF-8
    Utf8 = 5,
    /// an internal panic was caught
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ahym_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque scenario handle.
pub struct AhymScenario {
    inner: Scenario,
}

/// Opaque run-outcome handle.
pub struct AhymOutcome {
    inner: ScenarioOutcome,
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, AhymStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(AhymStatus::NullArg);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        AhymStatus::Utf8
    })
}

fn guarded(f: impl FnOnce() -> AhymStatus) -> AhymStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            AhymStatus::Panic
        }
    }
}

fn scenario_out(
    out: *mut *mut AhymScenario,
    result: Result<Scenario, ahym_core::scenario::ScenarioError>,
) -> AhymStatus {
    match result {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(AhymScenario { inner })) };
            AhymStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            AhymStatus::Usage
        }
    }
}

/// Parse a scenario from TOML text.
#[no_mangle]
pub extern "C" fn ahym_scenario_from_toml(
    text: *const c_char,
    out: *mut *mut AhymScenario,
) -> AhymStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        let text = match unsafe { read_str(text) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        scenario_out(out, Scenario::from_toml(text))
    })
}

/// Load a scenario from a TOML file.
#[no_mangle]
pub extern "C" fn ahym_scenario_from_file(
    path: *const c_char,
    out: *mut *mut AhymScenario,
) -> AhymStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        let path = match unsafe { read_str(path) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        scenario_out(out, Scenario::from_file(Path::new(path)))
    })
}

/// Load one of the built-in scenario presets by name.
#[no_mangle]
pub extern "C" fn ahym_scenario_from_preset(
    name: *const c_char,
    out: *mut *mut AhymScenario,
) -> AhymStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        let name = match unsafe { read_str(name) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        scenario_out(out, scenario_preset(name))
    })
}

/// Release a scenario handle.
#[no_mangle]
pub extern "C" fn ahym_scenario_free(scn: *mut AhymScenario) {
    if !scn.is_null() {
        drop(unsafe { Box::from_raw(scn) });
    }
}

/// Execute a scenario; CSV series, JSON summaries and field dumps are
/// written under `out_dir`.
#[no_mangle]
pub extern "C" fn ahym_run(
    scn: *const AhymScenario,
    out_dir: *const c_char,
    out: *mut *mut AhymOutcome,
) -> AhymStatus {
    guarded(|| {
        if scn.is_null() || out.is_null() {
            set_error("null argument");
            return AhymStatus::NullArg;
        }
        let dir = match unsafe { read_str(out_dir) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        if let Err(e) = std::fs::create_dir_all(dir) {
            set_error(&format!("cannot create {dir}: {e}"));
            return AhymStatus::Usage;
        }
        let scenario = unsafe { &(*scn).inner };
        match run_scenario(scenario, Path::new(dir)) {
            Ok(outcome) => {
                unsafe { *out = Box::into_raw(Box::new(AhymOutcome { inner: outcome })) };
                AhymStatus::Ok
            }
            Err(e) => {
                let code = e.exit_code();
                set_error(&e.to_string());
                if code == 1 { AhymStatus::Usage } else { AhymStatus::Numeric }
            }
        }
    })
}

/// Release an outcome handle.
#[no_mangle]
pub extern "C" fn ahym_outcome_free(outcome: *mut AhymOutcome) {
    if !outcome.is_null() {
        drop(unsafe { Box::from_raw(outcome) });
    }
}

/// Exit code implied by the outcome (0 ok, 2 numeric failure, ...).
#[no_mangle]
pub extern "C" fn ahym_outcome_exit_code(outcome: *const AhymOutcome) -> i32 {
    if outcome.is_null() {
        return -1;
    }
    unsafe { &(*outcome).inner }.exit_code
}

fn string_out(out: *mut *mut c_char, text: String) -> AhymStatus {
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            AhymStatus::Ok
        }
        Err(_) => {
            set_error("interior NUL in output");
            AhymStatus::Panic
        }
    }
}

/// JSON summary of a run outcome. Free with `ahym_string_free`.
#[no_mangle]
pub extern "C" fn ahym_outcome_summary_json(
    outcome: *const AhymOutcome,
    out: *mut *mut c_char,
) -> AhymStatus {
    guarded(|| {
        if outcome.is_null() || out.is_null() {
            set_error("null argument");
            return AhymStatus::NullArg;
        }
        let json = serde_json::to_string_pretty(unsafe { &(*outcome).inner })
            .unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"));
        string_out(out, json)
    })
}

/// Run a named invariant battery; the JSON report is returned through
/// `report` (free with `ahym_string_free`). Returns `Invariant` when any
/// check fails, `Usage` for unknown suite names.
#[no_mangle]
pub extern "C" fn ahym_verify(suite: *const c_char, report: *mut *mut c_char) -> AhymStatus {
    guarded(|| {
        if report.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        let name = match unsafe { read_str(suite) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match run_suite(name) {
            Ok(rep) => {
                let passed = rep.passed;
                let json = serde_json::to_string_pretty(&rep).unwrap_or_default();
                let s = string_out(report, json);
                if s != AhymStatus::Ok {
                    return s;
                }
                if passed { AhymStatus::Ok } else { AhymStatus::Invariant }
            }
            Err(e) => {
                set_error(&e);
                AhymStatus::Usage
            }
        }
    })
}

/// Newline-separated list of built-in scenario preset names.
/// Free with `ahym_string_free`.
#[no_mangle]
pub extern "C" fn ahym_preset_names(out: *mut *mut c_char) -> AhymStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        let names: Vec<&str> =
            ahym_core::scenario::SCENARIO_PRESETS.iter().map(|(n, _)| *n).collect();
        string_out(out, names.join("\n"))
    })
}

/// The byte-exact field-dump layout and CSV schema documentation.
/// Free with `ahym_string_free`.
#[no_mangle]
pub extern "C" fn ahym_dump_schema(out: *mut *mut c_char) -> AhymStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AhymStatus::NullArg;
        }
        string_out(out, ahym_core::scenario::dump_schema_text())
    })
}

/// Release a string returned by this library.
#[no_mangle]
pub extern "C" fn ahym_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static string (no free needed).
#[no_mangle]
pub extern "C" fn ahym_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
