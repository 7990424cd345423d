//! Exercises the C ABI exactly as a foreign caller would: raw pointers,
//! status codes, fixed-size name buffers, and explicit frees.

use libc::{c_char, c_int};
use lyapta_capi::*;
use std::ffi::{CStr, CString};
use std::ptr;

const PROBLEM: &str = r#"
name = "1d-stable"
mode = "sound"

[system]
kind = "linear"
matrix = [[-1.0]]

[domain]
box = [[-2.5, 2.5]]
grid_step = 0.01

[[lyapunov]]
p = [[1.0]]
levels = [1.0, 2.0, 4.0]

[initial]
box = [[1.415, 1.995]]
"#;

fn build_handle(mode: c_int) -> *mut lyapta_abstraction {
    let text = CString::new(PROBLEM).unwrap();
    let mut handle: *mut lyapta_abstraction = ptr::null_mut();
    let status = unsafe { lyapta_abstraction_build(text.as_ptr(), mode, &mut handle) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    assert!(!handle.is_null());
    handle
}

fn name_at(result: *const lyapta_reach_result, i: usize) -> String {
    let mut buf = [0 as c_char; 64];
    let status = unsafe { lyapta_reach_result_name(result, i, buf.as_mut_ptr(), buf.len()) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn build_query_free_cycle() {
    let handle = build_handle(0);
    assert_eq!(unsafe { lyapta_abstraction_location_count(handle) }, 6);
    assert_eq!(unsafe { lyapta_abstraction_predicate(handle, 0) }, 1);
    assert_eq!(unsafe { lyapta_abstraction_predicate(handle, 1) }, 1);
    assert_eq!(unsafe { lyapta_abstraction_predicate(handle, 2) }, 1);
    assert_eq!(unsafe { lyapta_abstraction_predicate(handle, 9) }, -1);

    let mut buf = [0 as c_char; 64];
    let status =
        unsafe { lyapta_abstraction_fingerprint(handle, buf.as_mut_ptr(), buf.len()) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    let fp = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes();
    assert_eq!(fp.len(), 32);

    let mut result: *mut lyapta_reach_result = ptr::null_mut();
    let status = unsafe { lyapta_reach(handle, 0.0, 0.4, 0, &mut result) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    assert_eq!(unsafe { lyapta_reach_result_count(result) }, 2);
    assert_eq!(name_at(result, 0), "e(1)#1");
    assert_eq!(name_at(result, 1), "e(2)#1");
    let vol = unsafe { lyapta_reach_result_volume(result) };
    assert!((vol - 1.0).abs() < 0.05, "volume {vol}");
    unsafe { lyapta_reach_result_free(result) };

    // Wider window picks up the core.
    let mut result: *mut lyapta_reach_result = ptr::null_mut();
    let status = unsafe { lyapta_reach(handle, 0.0, 0.5, 0, &mut result) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    assert_eq!(unsafe { lyapta_reach_result_count(result) }, 3);
    unsafe { lyapta_reach_result_free(result) };

    unsafe { lyapta_abstraction_free(handle) };
}

#[test]
fn serialization_surfaces() {
    let handle = build_handle(0);
    let mut json: *mut c_char = ptr::null_mut();
    assert!(matches!(
        unsafe { lyapta_abstraction_to_json(handle, &mut json) },
        lyapta_status::LYAPTA_OK
    ));
    let text = unsafe { CStr::from_ptr(json) }.to_string_lossy().into_owned();
    assert!(text.contains("lyapta-automaton-v1"));
    unsafe { lyapta_string_free(json) };

    let mut xml: *mut c_char = ptr::null_mut();
    assert!(matches!(
        unsafe { lyapta_abstraction_to_xml(handle, &mut xml) },
        lyapta_status::LYAPTA_OK
    ));
    let text = unsafe { CStr::from_ptr(xml) }.to_string_lossy().into_owned();
    assert!(text.contains("<nta scale=\"1/4\""));
    unsafe { lyapta_string_free(xml) };
    unsafe { lyapta_abstraction_free(handle) };
}

#[test]
fn validation_through_ffi() {
    let handle = build_handle(0);
    let mut violations: usize = 99;
    let status = unsafe { lyapta_validate(handle, 100, 1.0, 42, &mut violations) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    assert_eq!(violations, 0);
    unsafe { lyapta_abstraction_free(handle) };
}

#[test]
fn error_paths_set_message() {
    let bad = CString::new("name = 3").unwrap();
    let mut handle: *mut lyapta_abstraction = ptr::null_mut();
    let status = unsafe { lyapta_abstraction_build(bad.as_ptr(), 0, &mut handle) };
    assert!(matches!(status, lyapta_status::LYAPTA_SPEC_ERROR));
    assert!(handle.is_null());
    let mut buf = [0 as c_char; 256];
    assert!(matches!(
        unsafe { lyapta_last_error(buf.as_mut_ptr(), buf.len()) },
        lyapta_status::LYAPTA_OK
    ));
    let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert!(!msg.is_empty());

    // Null-argument handling.
    let status = unsafe { lyapta_abstraction_build(ptr::null(), 0, &mut handle) };
    assert!(matches!(status, lyapta_status::LYAPTA_INVALID_ARGUMENT));
    let status = unsafe { lyapta_reach(ptr::null(), 0.0, 1.0, 0, ptr::null_mut()) };
    assert!(matches!(status, lyapta_status::LYAPTA_INVALID_ARGUMENT));
    assert_eq!(unsafe { lyapta_abstraction_location_count(ptr::null()) }, 0);
    unsafe { lyapta_reach_result_free(ptr::null_mut()) };
    unsafe { lyapta_abstraction_free(ptr::null_mut()) };
}

#[test]
fn complete_mode_through_ffi() {
    let handle = build_handle(2);
    let mut result: *mut lyapta_reach_result = ptr::null_mut();
    // Core needs 2 * 0.5 ln 2 = 0.693; at 0.6 only the two chain cells.
    let status = unsafe { lyapta_reach(handle, 0.0, 0.6, 0, &mut result) };
    assert!(matches!(status, lyapta_status::LYAPTA_OK));
    assert_eq!(unsafe { lyapta_reach_result_count(result) }, 2);
    unsafe { lyapta_reach_result_free(result) };
    unsafe { lyapta_abstraction_free(handle) };
}
