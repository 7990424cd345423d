//! C ABI over the abstraction pipeline: build an abstraction from a problem
//! document, query reachability, validate against simulation, and export.
//!
//! Conventions: handles are opaque pointers freed by the matching `*_free`
//! function; strings returned through `char**` are NUL-terminated and freed
//! with `lyapta_string_free`; every fallible call returns a status code and
//! stores a per-thread message readable via `lyapta_last_error`.

#![allow(non_camel_case_types)]

use libc::{c_char, c_double, c_int, size_t};
use lyapta::bounds::Mode;
use lyapta::error::Error;
use lyapta::export::{to_xml, AutomatonFile, AUTOMATON_FORMAT};
use lyapta::oracle::mc_soundness_check;
use lyapta::partition::RegionId;
use lyapta::problem::{build, parse_problem, Abstraction};
use lyapta::rat::Rat;
use lyapta::reach::{reach, InitMode, ReachResult};
use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Status codes mirroring the CLI exit contract.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum lyapta_status {
    /// Success.
    LYAPTA_OK = 0,
    /// Null pointer, non-UTF-8 input, or an out-of-range index.
    LYAPTA_INVALID_ARGUMENT = 1,
    /// Problem-document parse or schema error.
    LYAPTA_SPEC_ERROR = 2,
    /// Pipeline build error (Lyapunov check, grid, bounds, automaton).
    LYAPTA_BUILD_ERROR = 3,
    /// A validation run finished with violations.
    LYAPTA_VALIDATION_FAILED = 4,
    /// Unexpected internal failure.
    LYAPTA_INTERNAL_ERROR = 5,
}

use lyapta_status::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> lyapta_status {
    match err.exit_code() {
        2 => LYAPTA_SPEC_ERROR,
        3 => LYAPTA_BUILD_ERROR,
        4 => LYAPTA_VALIDATION_FAILED,
        _ => LYAPTA_INTERNAL_ERROR,
    }
}

/// Opaque abstraction handle: the built partition, bounds, automaton, and
/// abstraction map.
pub struct lyapta_abstraction {
    built: Abstraction,
    mode: Mode,
}

/// Opaque reach-result handle.
pub struct lyapta_reach_result {
    names: Vec<CString>,
    volume: c_double,
    result: ReachResult,
}

unsafe fn cstr_arg<'a>(s: *const c_char) -> Result<&'a str, lyapta_status> {
    if s.is_null() {
        set_error("null string argument");
        return Err(LYAPTA_INVALID_ARGUMENT);
    }
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        LYAPTA_INVALID_ARGUMENT
    })
}

fn guarded<F: FnOnce() -> lyapta_status>(f: F) -> lyapta_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            LYAPTA_INTERNAL_ERROR
        }
    }
}

fn write_out<T>(out: *mut *mut T, value: T) -> lyapta_status {
    if out.is_null() {
        set_error("null output pointer");
        return LYAPTA_INVALID_ARGUMENT;
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    LYAPTA_OK
}

fn copy_string(s: &CStr, buf: *mut c_char, len: size_t) -> lyapta_status {
    if buf.is_null() {
        set_error("null buffer");
        return LYAPTA_INVALID_ARGUMENT;
    }
    let bytes = s.to_bytes_with_nul();
    if bytes.len() > len {
        set_error("buffer too small");
        return LYAPTA_INVALID_ARGUMENT;
    }
    unsafe { ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len()) };
    LYAPTA_OK
}

fn return_string(text: String, out: *mut *mut c_char) -> lyapta_status {
    if out.is_null() {
        set_error("null output pointer");
        return LYAPTA_INVALID_ARGUMENT;
    }
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            LYAPTA_OK
        }
        Err(_) => {
            set_error("output contains interior NUL");
            LYAPTA_INTERNAL_ERROR
        }
    }
}

fn file_of(h: &lyapta_abstraction) -> AutomatonFile {
    let built = &h.built;
    let volumes: Vec<f64> = (0..built.ta.locations.len())
        .map(|l| {
            built
                .map
                .region_of(l)
                .and_then(|id| built.partition.region_index_of(id))
                .map(|idx| built.partition.region_volume(idx))
                .unwrap_or(0.0)
        })
        .collect();
    let points: Vec<usize> = (0..built.ta.locations.len())
        .map(|l| {
            built
                .map
                .region_of(l)
                .and_then(|id| built.partition.region_index_of(id))
                .map(|idx| built.partition.region(idx).mask.len())
                .unwrap_or(0)
        })
        .collect();
    AutomatonFile {
        format: AUTOMATON_FORMAT.into(),
        name: built.spec.name.clone(),
        fingerprint: built.partition.fingerprint().into(),
        mode: h.mode,
        automaton: built.ta.clone(),
        map: built.map.clone(),
        bounds: built.bounds.clone(),
        location_volumes: volumes,
        location_grid_points: points,
        summary: built.summary.clone(),
    }
}

/// Build an abstraction from a problem document (TOML text).
/// `mode`: 0 keeps the document's mode, 1 forces sound, 2 forces complete.
///
/// # Safety
/// `problem_toml` must be a NUL-terminated string; `out` must be a valid
/// pointer. The returned handle is freed with `lyapta_abstraction_free`.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_build(
    problem_toml: *const c_char,
    mode: c_int,
    out: *mut *mut lyapta_abstraction,
) -> lyapta_status {
    guarded(|| {
        let text = match unsafe { cstr_arg(problem_toml) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mode_override = match mode {
            0 => None,
            1 => Some(Mode::Sound),
            2 => Some(Mode::Complete),
            _ => {
                set_error("mode must be 0 (document), 1 (sound), or 2 (complete)");
                return LYAPTA_INVALID_ARGUMENT;
            }
        };
        let spec = match parse_problem(text) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        let effective = mode_override.unwrap_or(spec.mode);
        match build(&spec, mode_override, None, None) {
            Ok(built) => write_out(
                out,
                lyapta_abstraction {
                    built,
                    mode: effective,
                },
            ),
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `handle` must come from `lyapta_abstraction_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_free(handle: *mut lyapta_abstraction) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of automaton locations; 0 for a null handle.
///
/// # Safety
/// `handle` must be a live abstraction handle or null.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_location_count(
    handle: *const lyapta_abstraction,
) -> size_t {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.built.ta.locations.len()
}

/// Copy the name of one location into `buf` (NUL-terminated).
///
/// # Safety
/// `handle` live, `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_location_name(
    handle: *const lyapta_abstraction,
    index: size_t,
    buf: *mut c_char,
    len: size_t,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        let h = unsafe { &*handle };
        match h.built.ta.locations.get(index) {
            Some(loc) => {
                let c = CString::new(loc.name.clone()).unwrap_or_default();
                copy_string(&c, buf, len)
            }
            None => {
                set_error("location index out of range");
                LYAPTA_INVALID_ARGUMENT
            }
        }
    })
}

/// Structural predicates: 1 or 0. `which`: 0 deterministic, 1 bisimilarity
/// condition, 2 refinability precondition. Returns -1 on a bad argument.
///
/// # Safety
/// `handle` must be a live abstraction handle or null.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_predicate(
    handle: *const lyapta_abstraction,
    which: c_int,
) -> c_int {
    if handle.is_null() {
        return -1;
    }
    let s = &unsafe { &*handle }.built.summary;
    match which {
        0 => s.deterministic as c_int,
        1 => s.bisimilarity_condition as c_int,
        2 => s.refinable_precondition as c_int,
        _ => -1,
    }
}

/// Fingerprint of the partition the abstraction was built on.
///
/// # Safety
/// `handle` live, `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_fingerprint(
    handle: *const lyapta_abstraction,
    buf: *mut c_char,
    len: size_t,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        let h = unsafe { &*handle };
        let c = CString::new(h.built.partition.fingerprint().to_string()).unwrap_or_default();
        copy_string(&c, buf, len)
    })
}

/// Serialize the abstraction as the native automaton file (JSON).
///
/// # Safety
/// `handle` live; `out` valid. Free the string with `lyapta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_to_json(
    handle: *const lyapta_abstraction,
    out: *mut *mut c_char,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        let file = file_of(unsafe { &*handle });
        match file.to_json() {
            Ok(json) => return_string(json, out),
            Err(e) => {
                set_error(&e.to_string());
                LYAPTA_INTERNAL_ERROR
            }
        }
    })
}

/// Serialize the abstraction as model-checker XML with integer-scaled
/// constants.
///
/// # Safety
/// `handle` live; `out` valid. Free the string with `lyapta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn lyapta_abstraction_to_xml(
    handle: *const lyapta_abstraction,
    out: *mut *mut c_char,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        return_string(to_xml(&file_of(unsafe { &*handle })), out)
    })
}

/// Reachable locations over `[t1, t2]` from the document's initial set.
/// `phase_unknown != 0` uses the sound volume-initial-set semantics.
///
/// # Safety
/// `handle` live; `out` valid. Free with `lyapta_reach_result_free`.
#[no_mangle]
pub unsafe extern "C" fn lyapta_reach(
    handle: *const lyapta_abstraction,
    t1: c_double,
    t2: c_double,
    phase_unknown: c_int,
    out: *mut *mut lyapta_reach_result,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        let h = unsafe { &*handle };
        let (Some(r1), Some(r2)) = (Rat::from_f64(t1), Rat::from_f64(t2)) else {
            set_error("window endpoints must be finite");
            return LYAPTA_INVALID_ARGUMENT;
        };
        let init = if phase_unknown != 0 {
            InitMode::PhaseUnknown
        } else {
            InitMode::ZeroClocks
        };
        match reach(&h.built.ta, &h.built.ta.initial, &r1, &r2, init) {
            Ok(result) => {
                let names: Vec<CString> = result
                    .locations
                    .iter()
                    .map(|&l| {
                        CString::new(h.built.ta.locations[l].name.clone()).unwrap_or_default()
                    })
                    .collect();
                let volume = result
                    .locations
                    .iter()
                    .filter_map(|&l| {
                        h.built
                            .map
                            .region_of(l)
                            .and_then(|id| h.built.partition.region_index_of(id))
                            .map(|idx| h.built.partition.region_volume(idx))
                    })
                    .sum();
                write_out(
                    out,
                    lyapta_reach_result {
                        names,
                        volume,
                        result,
                    },
                )
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `result` must come from `lyapta_reach` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lyapta_reach_result_free(result: *mut lyapta_reach_result) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Number of reached locations.
///
/// # Safety
/// `result` must be a live reach-result handle or null.
#[no_mangle]
pub unsafe extern "C" fn lyapta_reach_result_count(
    result: *const lyapta_reach_result,
) -> size_t {
    if result.is_null() {
        return 0;
    }
    unsafe { &*result }.names.len()
}

/// Copy the name of one reached location (sorted order) into `buf`.
///
/// # Safety
/// `result` live, `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lyapta_reach_result_name(
    result: *const lyapta_reach_result,
    index: size_t,
    buf: *mut c_char,
    len: size_t,
) -> lyapta_status {
    guarded(|| {
        if result.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        match unsafe { &*result }.names.get(index) {
            Some(name) => copy_string(name, buf, len),
            None => {
                set_error("location index out of range");
                LYAPTA_INVALID_ARGUMENT
            }
        }
    })
}

/// Concretized state-space volume of the reached locations.
///
/// # Safety
/// `result` must be a live reach-result handle or null.
#[no_mangle]
pub unsafe extern "C" fn lyapta_reach_result_volume(
    result: *const lyapta_reach_result,
) -> c_double {
    if result.is_null() {
        return 0.0;
    }
    let r = unsafe { &*result };
    let _ = &r.result; // full result retained for future accessors
    r.volume
}

/// Monte-Carlo soundness validation; writes the violation count and returns
/// `LYAPTA_VALIDATION_FAILED` when it is nonzero.
///
/// # Safety
/// `handle` live; `violations_out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn lyapta_validate(
    handle: *const lyapta_abstraction,
    trajectories: size_t,
    horizon: c_double,
    seed: u64,
    violations_out: *mut size_t,
) -> lyapta_status {
    guarded(|| {
        if handle.is_null() {
            set_error("null handle");
            return LYAPTA_INVALID_ARGUMENT;
        }
        let h = unsafe { &*handle };
        let x0: BTreeSet<RegionId> = h
            .built
            .ta
            .initial
            .iter()
            .filter_map(|&l| h.built.map.region_of(l).cloned())
            .collect();
        let v = &h.built.spec.validate;
        match mc_soundness_check(
            &h.built.field,
            &h.built.partition,
            &h.built.ta,
            &h.built.map,
            &x0,
            horizon,
            trajectories,
            v.dt,
            v.times_per_trajectory,
            seed,
        ) {
            Ok(report) => {
                if !violations_out.is_null() {
                    unsafe { *violations_out = report.violations };
                }
                if report.passed() {
                    LYAPTA_OK
                } else {
                    set_error("soundness violations found");
                    LYAPTA_VALIDATION_FAILED
                }
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must come from a `lyapta_*` call that documents this free function.
#[no_mangle]
pub unsafe extern "C" fn lyapta_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Copy the current thread's last error message into `buf`.
///
/// # Safety
/// `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lyapta_last_error(buf: *mut c_char, len: size_t) -> lyapta_status {
    LAST_ERROR.with(|e| copy_string(&e.borrow(), buf, len))
}
