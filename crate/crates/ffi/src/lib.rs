//! C ABI over the sandbench core.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible function returns an
//! [`SbStatus`]; on failure `sb_last_error()` describes the problem for the
//! calling thread. Strings returned from an item stay valid until the item
//! is freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sandbench::score::{score_item, ScoreOptions};
use sandbench::stats::{self, RunAccuracy};
use sandbench::suite::{parse_suite, TestSuite};
use sandbench::{instantiate, DataPools, InstantiateOptions, ResolvedTestItem, REFERENCE_SUITE};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    InstantiateError = 5,
    StatsError = 6,
    Panic = 7,
}

/// A parsed and validated suite.
pub struct SbSuite {
    suite: TestSuite,
    pools: DataPools,
}

/// One instantiated sample with its sandbox on disk.
pub struct SbItem {
    item: ResolvedTestItem,
    question: CString,
    expected: Option<CString>,
    qs_id: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn fail(status: SbStatus, msg: impl Into<String>) -> SbStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SbStatus) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SbStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SbStatus> {
    if p.is_null() {
        return Err(fail(SbStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SbStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn cstring(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).unwrap_or_default()
}

/// Message for the last failed call on this thread. Never NULL.
#[no_mangle]
pub extern "C" fn sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn parse_into(text: Result<&str, SbStatus>, out: *mut *mut SbSuite) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return fail(SbStatus::NullArgument, "out is NULL");
        }
        *out = ptr::null_mut();
        let text = match text {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_suite(text) {
            Ok(suite) => {
                *out = Box::into_raw(Box::new(SbSuite { suite, pools: DataPools::default_pools() }));
                SbStatus::Ok
            }
            Err(e) => fail(SbStatus::ParseError, e.to_string()),
        }
    })
}

/// Load the bundled reference suite.
#[no_mangle]
pub unsafe extern "C" fn sb_suite_reference(out: *mut *mut SbSuite) -> SbStatus {
    parse_into(Ok(REFERENCE_SUITE), out)
}

/// Parse and validate a suite from YAML text.
#[no_mangle]
pub unsafe extern "C" fn sb_suite_parse(yaml: *const c_char, out: *mut *mut SbSuite) -> SbStatus {
    parse_into(str_arg(yaml, "yaml"), out)
}

#[no_mangle]
pub unsafe extern "C" fn sb_suite_free(suite: *mut SbSuite) {
    if !suite.is_null() {
        drop(Box::from_raw(suite));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sb_suite_template_count(suite: *const SbSuite) -> usize {
    suite.as_ref().map_or(0, |s| s.suite.templates.len())
}

/// Question id of template `index`, or 0 when out of range.
#[no_mangle]
pub unsafe extern "C" fn sb_suite_question_id(suite: *const SbSuite, index: usize) -> u32 {
    suite.as_ref().and_then(|s| s.suite.templates.get(index)).map_or(0, |q| q.question_id)
}

/// Items per run; `samples_override` of 0 keeps each template's count.
#[no_mangle]
pub unsafe extern "C" fn sb_suite_item_count(suite: *const SbSuite, samples_override: u32) -> u64 {
    suite.as_ref().map_or(0, |s| {
        s.suite
            .templates
            .iter()
            .map(|q| u64::from(if samples_override > 0 { samples_override } else { q.samples }))
            .sum()
    })
}

/// Instantiate one sample under `artifacts_root`, building its sandbox.
#[no_mangle]
pub unsafe extern "C" fn sb_item_instantiate(
    suite: *const SbSuite,
    question_id: u32,
    sample_index: u32,
    master_seed: u64,
    artifacts_root: *const c_char,
    out: *mut *mut SbItem,
) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return fail(SbStatus::NullArgument, "out is NULL");
        }
        *out = ptr::null_mut();
        let Some(s) = suite.as_ref() else {
            return fail(SbStatus::NullArgument, "suite is NULL");
        };
        let root = match str_arg(artifacts_root, "artifacts_root") {
            Ok(r) => PathBuf::from(r),
            Err(st) => return st,
        };
        let Some(q) = s.suite.templates.iter().find(|q| q.question_id == question_id) else {
            return fail(SbStatus::InvalidArgument, format!("no question {question_id}"));
        };
        match instantiate(q, sample_index, &s.pools, &InstantiateOptions::new(master_seed, root)) {
            Ok(item) => {
                let boxed = SbItem {
                    question: cstring(&item.question),
                    expected: item.expected.as_deref().map(cstring),
                    qs_id: cstring(&item.qs_id),
                    item,
                };
                *out = Box::into_raw(Box::new(boxed));
                SbStatus::Ok
            }
            Err(e) => fail(SbStatus::InstantiateError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_item_free(item: *mut SbItem) {
    if !item.is_null() {
        drop(Box::from_raw(item));
    }
}

/// Rendered question text.
#[no_mangle]
pub unsafe extern "C" fn sb_item_question(item: *const SbItem) -> *const c_char {
    item.as_ref().map_or(ptr::null(), |i| i.question.as_ptr())
}

/// Expected answer or file content; NULL when the scoring type has none.
#[no_mangle]
pub unsafe extern "C" fn sb_item_expected(item: *const SbItem) -> *const c_char {
    item.as_ref().and_then(|i| i.expected.as_ref()).map_or(ptr::null(), |e| e.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn sb_item_qs_id(item: *const SbItem) -> *const c_char {
    item.as_ref().map_or(ptr::null(), |i| i.qs_id.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn sb_item_seed(item: *const SbItem) -> u64 {
    item.as_ref().map_or(0, |i| i.item.seed)
}

/// Score a final assistant message against the item and its sandbox.
/// `reason` receives a static verdict-reason string such as `"match"`.
#[no_mangle]
pub unsafe extern "C" fn sb_item_score(
    item: *const SbItem,
    final_message: *const c_char,
    strict_json: bool,
    correct: *mut bool,
    reason: *mut *const c_char,
) -> SbStatus {
    guard(|| {
        let Some(i) = item.as_ref() else {
            return fail(SbStatus::NullArgument, "item is NULL");
        };
        if correct.is_null() {
            return fail(SbStatus::NullArgument, "correct is NULL");
        }
        let msg = match str_arg(final_message, "final_message") {
            Ok(m) => m,
            Err(s) => return s,
        };
        let v = score_item(&i.item, msg, ScoreOptions { strict_json });
        *correct = v.correct;
        if !reason.is_null() {
            *reason = reason_cstr(v.reason.as_str());
        }
        SbStatus::Ok
    })
}

fn reason_cstr(r: &str) -> *const c_char {
    let s: &'static str = match r {
        "match" => "match\0",
        "string_mismatch" => "string_mismatch\0",
        "json_mismatch" => "json_mismatch\0",
        "missing_file" => "missing_file\0",
        "missing_path" => "missing_path\0",
        "bad_json" => "bad_json\0",
        "sandbox_tampered" => "sandbox_tampered\0",
        "agent_error" => "agent_error\0",
        _ => "step_limit\0",
    };
    s.as_ptr().cast()
}

/// Per-sample seed from the master seed.
#[no_mangle]
pub extern "C" fn sb_derive_seed(master_seed: u64, question_id: u32, sample_index: u32) -> u64 {
    sandbench::template::derive_seed(master_seed, question_id, sample_index)
}

/// Pooled accuracy over `n` runs given per-run correct and total counts.
#[no_mangle]
pub unsafe extern "C" fn sb_pooled_accuracy(correct: *const u64, total: *const u64, n: usize, out: *mut f64) -> SbStatus {
    guard(|| {
        if correct.is_null() || total.is_null() || out.is_null() {
            return fail(SbStatus::NullArgument, "NULL argument");
        }
        let c = std::slice::from_raw_parts(correct, n);
        let t = std::slice::from_raw_parts(total, n);
        let runs: Vec<RunAccuracy> =
            c.iter().zip(t).enumerate().map(|(i, (&c, &t))| RunAccuracy::new(i as u32 + 1, c, t)).collect();
        match stats::pooled_accuracy(&runs) {
            Ok(p) => {
                *out = p;
                SbStatus::Ok
            }
            Err(e) => fail(SbStatus::StatsError, e.to_string()),
        }
    })
}

/// Relative standard error of the standard deviation for `runs` runs.
#[no_mangle]
pub unsafe extern "C" fn sb_rse(runs: u32, out: *mut f64) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return fail(SbStatus::NullArgument, "out is NULL");
        }
        match stats::rse(runs as usize) {
            Ok(v) => {
                *out = v;
                SbStatus::Ok
            }
            Err(e) => fail(SbStatus::StatsError, e.to_string()),
        }
    })
}

/// 95% t interval for a mean run accuracy.
#[no_mangle]
pub unsafe extern "C" fn sb_t_interval(mean: f64, std_dev: f64, runs: u32, low: *mut f64, high: *mut f64) -> SbStatus {
    guard(|| {
        if low.is_null() || high.is_null() {
            return fail(SbStatus::NullArgument, "NULL output");
        }
        match stats::t_interval(mean, std_dev, runs as usize) {
            Ok((l, h)) => {
                *low = l;
                *high = h;
                SbStatus::Ok
            }
            Err(e) => fail(SbStatus::StatsError, e.to_string()),
        }
    })
}
