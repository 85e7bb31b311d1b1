use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sandbench_ffi::*;

fn cstr(p: *const std::ffi::c_char) -> String {
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn reference_suite_through_handles() {
    unsafe {
        let mut suite = ptr::null_mut();
        assert_eq!(sb_suite_reference(&mut suite), SbStatus::Ok);
        assert_eq!(sb_suite_template_count(suite), 19);
        assert_eq!(sb_suite_item_count(suite, 0), 570);
        assert_eq!(sb_suite_item_count(suite, 2), 38);
        assert_eq!(sb_suite_question_id(suite, 0), 101);
        assert_eq!(sb_suite_question_id(suite, 99), 0);

        let dir = tempfile::tempdir().unwrap();
        let root = CString::new(dir.path().to_str().unwrap()).unwrap();
        let mut item = ptr::null_mut();
        assert_eq!(sb_item_instantiate(suite, 101, 3, 42, root.as_ptr(), &mut item), SbStatus::Ok);
        assert_eq!(cstr(sb_item_qs_id(item)), "q101_s03");
        assert_eq!(sb_item_seed(item), sb_derive_seed(42, 101, 3));
        let expected = cstr(sb_item_expected(item));
        assert!(!cstr(sb_item_question(item)).is_empty());

        let mut correct = false;
        let mut reason = ptr::null();
        let answer = CString::new(format!("  {expected}\n")).unwrap();
        assert_eq!(sb_item_score(item, answer.as_ptr(), false, &mut correct, &mut reason), SbStatus::Ok);
        assert!(correct);
        assert_eq!(cstr(reason), "match");
        let wrong = CString::new("nope").unwrap();
        assert_eq!(sb_item_score(item, wrong.as_ptr(), false, &mut correct, &mut reason), SbStatus::Ok);
        assert!(!correct);
        assert_ne!(cstr(reason), "match");

        sb_item_free(item);

        // File-scored items look at the sandbox, not the message.
        assert_eq!(sb_item_instantiate(suite, 401, 1, 42, root.as_ptr(), &mut item), SbStatus::Ok);
        assert!(cstr(sb_item_question(item)).contains(dir.path().to_str().unwrap()));
        assert_eq!(sb_item_score(item, answer.as_ptr(), false, &mut correct, &mut reason), SbStatus::Ok);
        assert!(!correct);
        assert_eq!(cstr(reason), "missing_file");
        sb_item_free(item);
        sb_suite_free(suite);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut suite = ptr::null_mut();
        assert_eq!(sb_suite_parse(ptr::null(), &mut suite), SbStatus::NullArgument);
        assert!(suite.is_null());
        let bad = CString::new("tests: [ {question_id: 1} ]").unwrap();
        assert_eq!(sb_suite_parse(bad.as_ptr(), &mut suite), SbStatus::ParseError);
        assert!(!cstr(sb_last_error()).is_empty());

        assert_eq!(sb_suite_reference(&mut suite), SbStatus::Ok);
        let root = CString::new("/tmp").unwrap();
        let mut item = ptr::null_mut();
        assert_eq!(sb_item_instantiate(suite, 999, 1, 0, root.as_ptr(), &mut item), SbStatus::InvalidArgument);
        assert!(cstr(sb_last_error()).contains("999"));
        assert!(item.is_null());
        sb_suite_free(suite);
        sb_suite_free(ptr::null_mut());
        sb_item_free(ptr::null_mut());

        let mut x = 0.0;
        assert_eq!(sb_rse(1, &mut x), SbStatus::StatsError);
        assert_eq!(sb_rse(8, &mut x), SbStatus::Ok);
        assert!((x - 1.0 / 14f64.sqrt()).abs() < 1e-15);
    }
}

#[test]
fn statistics_entry_points() {
    unsafe {
        let c = [3u64, 1];
        let t = [4u64, 2];
        let mut p = 0.0;
        assert_eq!(sb_pooled_accuracy(c.as_ptr(), t.as_ptr(), 2, &mut p), SbStatus::Ok);
        assert!((p - 4.0 / 6.0).abs() < 1e-15);
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(sb_t_interval(0.5, 0.0, 8, &mut lo, &mut hi), SbStatus::Ok);
        assert_eq!((lo, hi), (0.5, 0.5));
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("sandbench.h").is_file());
    let lib = target_dir().join("libsandbench_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "sandbench.h"
int main(void) {
    SbSuite *suite = NULL;
    if (sb_suite_reference(&suite) != SB_STATUS_OK) { puts(sb_last_error()); return 1; }
    double rse = 0;
    if (sb_rse(3, &rse) != SB_STATUS_OK) return 2;
    printf("%zu %llu %.3f\n", sb_suite_template_count(suite),
           (unsigned long long)sb_suite_item_count(suite, 0), rse);
    sb_suite_free(suite);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "19 570 0.500\n");
}
