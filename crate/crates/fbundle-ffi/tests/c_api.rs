use fbundle_ffi::*;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

const RANK_ONE: &str = r#"{
  "rank": 1,
  "vars": [{"name": "t", "kind": "base"}, {"name": "u", "kind": "u"}],
  "caps": {"t": 5, "u": 3},
  "U": [{"mono": [1, 0], "coeff": [["-1"]]}],
  "directions": {"t": [{"mono": [0, 0], "coeff": [["1"]]}, {"mono": [0, 1], "coeff": [["1"]]}]}
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fb_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn connection_round_trip_and_framing() {
    let json = CString::new(RANK_ONE).unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(fb_connection_from_json(json.as_ptr(), &mut c), FbStatus::Ok, "{}", last_error());
        let mut rank = 0usize;
        assert_eq!(fb_connection_rank(c, &mut rank), FbStatus::Ok);
        assert_eq!(rank, 1);
        let mut flat = false;
        assert_eq!(fb_connection_is_flat(c, &mut flat), FbStatus::Ok);
        assert!(flat);
        let mut framed = ptr::null_mut();
        assert_eq!(fb_connection_frame(c, &mut framed), FbStatus::Ok, "{}", last_error());
        let mut text = ptr::null_mut();
        assert_eq!(fb_connection_to_json(framed, &mut text), FbStatus::Ok);
        let s = CStr::from_ptr(text).to_str().unwrap().to_string();
        assert!(s.contains("\"rank\":1"), "{s}");
        fb_string_free(text);
        fb_connection_free(framed);
        fb_connection_free(c);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(fb_connection_from_json(ptr::null(), &mut c), FbStatus::NullPointer);
        let bad = CString::new("{\"rank\": 1").unwrap();
        assert_eq!(fb_connection_from_json(bad.as_ptr(), &mut c), FbStatus::Parse);
        assert!(c.is_null());
        assert!(!last_error().is_empty());
        let log_only = CString::new(
            r#"{"rank": 1, "vars": [{"name": "q", "kind": "log"}, {"name": "u", "kind": "u"}], "caps": {"t": 3, "u": 3},
                "U": [], "directions": {"q": [{"mono": [0, 1], "coeff": [["1"]]}]}}"#,
        )
        .unwrap();
        assert_eq!(fb_connection_from_json(log_only.as_ptr(), &mut c), FbStatus::Ok, "{}", last_error());
        let mut framed = ptr::null_mut();
        assert_eq!(fb_connection_frame(c, &mut framed), FbStatus::Computation);
        assert!(framed.is_null());
        assert!(last_error().contains("not framed"), "{}", last_error());
        fb_connection_free(c);
        assert_eq!(fb_connection_rank(ptr::null(), ptr::null_mut()), FbStatus::NullPointer);
    }
}

#[test]
fn batch_job_through_c_abi() {
    let dir = std::env::temp_dir().join(format!("fbundle-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let input = dir.join("flat.json");
    std::fs::write(&input, RANK_ONE).unwrap();
    let args: Vec<CString> = ["check-flat", input.to_str().unwrap()].iter().map(|a| CString::new(*a).unwrap()).collect();
    let argv: Vec<*const std::ffi::c_char> = args.iter().map(|a| a.as_ptr()).collect();
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(fb_run_job(argv.len(), argv.as_ptr(), &mut r), FbStatus::Ok, "{}", last_error());
        assert_eq!(fb_report_exit_code(r), 0);
        let json = CStr::from_ptr(fb_report_json(r)).to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(v["result"]["flat"], serde_json::json!(true));
        fb_report_free(r);
        let unknown = [CString::new("no-such-command").unwrap()];
        let argv2 = [unknown[0].as_ptr()];
        assert_eq!(fb_run_job(1, argv2.as_ptr(), &mut r), FbStatus::Parse);
        assert!(r.is_null());
    }
}

#[test]
fn header_compiles_as_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include").join("fbundle.h");
    assert!(header.exists());
    let src = std::env::temp_dir().join(format!("fbundle-header-{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"fbundle.h\"\nint main(void) { FbConnection *c = 0; return fb_connection_rank(c, 0) == FB_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler available; skipping header check");
            return;
        }
    };
    assert!(status.success());
}

#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(|d| d.parent()).map(|d| d.join("libfbundle_ffi.a"));
    let Some(lib) = lib.filter(|p| p.exists()) else {
        eprintln!("static library not built; skipping link check");
        return;
    };
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = std::env::temp_dir().join(format!("fbundle-link-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    std::fs::write(
        &src,
        r#"#include <string.h>
#include "fbundle.h"
int main(void) {
  FbConnection *c = 0;
  if (fb_connection_from_json("{\"rank\":1", &c) != FB_STATUS_PARSE) return 1;
  if (c != 0 || strlen(fb_last_error_message()) == 0) return 2;
  return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.join("main");
    let Ok(status) = Command::new("cc")
        .arg("-I")
        .arg(root.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
    else {
        eprintln!("no C compiler available; skipping link check");
        return;
    };
    assert!(status.success());
    assert_eq!(Command::new(&bin).status().unwrap().code(), Some(0));
}
