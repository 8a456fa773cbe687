//! Exercise the C surface through the extern "C" signatures.

use ahym_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn scenario_lifecycle_and_run() {
    let dir = std::env::temp_dir().join("ahym-ffi-smoke");
    let _ = std::fs::remove_dir_all(&dir);
    let name = cstr("stationary");
    let mut scn: *mut AhymScenario = ptr::null_mut();
    assert_eq!(ahym_scenario_from_preset(name.as_ptr(), &mut scn), AhymStatus::Ok);
    assert!(!scn.is_null());

    let out_dir = cstr(dir.to_str().unwrap());
    let mut outcome: *mut AhymOutcome = ptr::null_mut();
    assert_eq!(ahym_run(scn, out_dir.as_ptr(), &mut outcome), AhymStatus::Ok);
    assert_eq!(ahym_outcome_exit_code(outcome), 0);

    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(ahym_outcome_summary_json(outcome, &mut json), AhymStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    assert!(text.contains("\"mode\": \"closed\""), "{text}");
    ahym_string_free(json);

    ahym_outcome_free(outcome);
    ahym_scenario_free(scn);
    assert!(dir.join("series.csv").exists());
    assert!(dir.join("summary.json").exists());
}

#[test]
fn error_paths_and_messages() {
    let mut scn: *mut AhymScenario = ptr::null_mut();
    let bad = cstr("no-such-preset");
    assert_eq!(ahym_scenario_from_preset(bad.as_ptr(), &mut scn), AhymStatus::Usage);
    let msg = unsafe { CStr::from_ptr(ahym_last_error_message()) }.to_str().unwrap();
    assert!(msg.contains("no-such-preset"), "{msg}");

    assert_eq!(
        ahym_scenario_from_toml(ptr::null(), &mut scn),
        AhymStatus::NullArg
    );
    let garbage = cstr("not toml [");
    assert_eq!(ahym_scenario_from_toml(garbage.as_ptr(), &mut scn), AhymStatus::Usage);

    // frees are null-tolerant
    ahym_scenario_free(ptr::null_mut());
    ahym_outcome_free(ptr::null_mut());
    ahym_string_free(ptr::null_mut());
}

#[test]
fn verify_suite_through_ffi() {
    let mut report: *mut std::ffi::c_char = ptr::null_mut();
    let suite = cstr("key-identity");
    let status = ahym_verify(suite.as_ptr(), &mut report);
    assert_eq!(status, AhymStatus::Ok);
    let text = unsafe { CStr::from_ptr(report) }.to_str().unwrap();
    assert!(text.contains("\"passed\": true"), "{text}");
    ahym_string_free(report);

    let unknown = cstr("bogus");
    assert_eq!(ahym_verify(unknown.as_ptr(), &mut report), AhymStatus::Usage);
}

#[test]
fn schema_and_presets_strings() {
    let mut s: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(ahym_preset_names(&mut s), AhymStatus::Ok);
    let names = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    ahym_string_free(s);
    assert!(names.lines().any(|l| l == "heat-circle"));

    assert_eq!(ahym_dump_schema(&mut s), AhymStatus::Ok);
    let schema = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    ahym_string_free(s);
    assert!(schema.contains("AHYM"));

    let version = unsafe { CStr::from_ptr(ahym_version()) }.to_str().unwrap();
    assert!(!version.is_empty());
}
