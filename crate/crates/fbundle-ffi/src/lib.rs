//! C ABI for fbundle.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every call returns an [`FbStatus`];
//! on failure a message is kept per thread and read with
//! [`fb_last_error_message`]. Strings returned through out-pointers are
//! NUL-terminated UTF-8 and released with [`fb_string_free`].

use fbundle::cli::{run_job, Cli, JobOutcome, JobSpec};
use fbundle::connection::{is_flat, Connection, ConnectionJson};
use fbundle::framing::extend_framing;
use clap::Parser;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Invalid = 4,
    Computation = 5,
    Panic = 6,
}

/// A flat connection with a pole along u = 0.
pub struct FbConnection {
    inner: Connection,
}

/// The outcome of a batch job.
pub struct FbReport {
    outcome: JobOutcome,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<(), (FbStatus, String)>) -> FbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FbStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, (FbStatus, String)> {
    if p.is_null() {
        return Err((FbStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (FbStatus::InvalidUtf8, e.to_string()))
}

fn to_c_string(s: String) -> Result<CString, (FbStatus, String)> {
    CString::new(s).map_err(|e| (FbStatus::Invalid, e.to_string()))
}

fn null_out() -> (FbStatus, String) {
    (FbStatus::NullPointer, "null output pointer".into())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` is null or a string returned through an out-pointer of this library,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a connection from JSON.
///
/// # Safety
/// `json` is a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_from_json(json: *const c_char, out: *mut *mut FbConnection) -> FbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out());
        }
        *out = ptr::null_mut();
        let text = read_str(json)?;
        let j: ConnectionJson = serde_json::from_str(text).map_err(|e| (FbStatus::Parse, e.to_string()))?;
        let inner = Connection::from_json(&j).map_err(|e| (FbStatus::Invalid, e.to_string()))?;
        *out = Box::into_raw(Box::new(FbConnection { inner }));
        Ok(())
    })
}

/// Release a connection handle.
///
/// # Safety
/// `c` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_free(c: *mut FbConnection) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Fiber rank of a connection.
///
/// # Safety
/// `c` is a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_rank(c: *const FbConnection, out: *mut usize) -> FbStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(null_out)?;
        *out.as_mut().ok_or_else(null_out)? = c.inner.rank();
        Ok(())
    })
}

/// Whether the connection is flat to its caps.
///
/// # Safety
/// `c` is a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_is_flat(c: *const FbConnection, out: *mut bool) -> FbStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(null_out)?;
        *out.as_mut().ok_or_else(null_out)? = is_flat(&c.inner);
        Ok(())
    })
}

/// Serialize a connection to JSON; free the result with [`fb_string_free`].
///
/// # Safety
/// `c` is a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_to_json(c: *const FbConnection, out: *mut *mut c_char) -> FbStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(null_out)?;
        let out = out.as_mut().ok_or_else(null_out)?;
        let text = serde_json::to_string(&c.inner.to_json()).map_err(|e| (FbStatus::Invalid, e.to_string()))?;
        *out = to_c_string(text)?.into_raw();
        Ok(())
    })
}

/// Extend the framing at the center and return the framed connection.
///
/// # Safety
/// `c` is a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_connection_frame(c: *const FbConnection, out: *mut *mut FbConnection) -> FbStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(null_out)?;
        let out = out.as_mut().ok_or_else(null_out)?;
        *out = ptr::null_mut();
        let f = extend_framing(&c.inner).map_err(|e| (FbStatus::Computation, e.to_string()))?;
        *out = Box::into_raw(Box::new(FbConnection { inner: f.connection }));
        Ok(())
    })
}

/// Run a batch job given as command-line arguments (without the program
/// name), e.g. `{"projbundle", "input.json", "--order-u", "8"}`.
///
/// Fails only on unusable arguments; a job whose stages fail still yields a
/// report with a nonzero exit code.
///
/// # Safety
/// `argv` points to `argc` valid NUL-terminated strings and `out` is a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_run_job(argc: usize, argv: *const *const c_char, out: *mut *mut FbReport) -> FbStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null_out)?;
        *out = ptr::null_mut();
        if argv.is_null() && argc > 0 {
            return Err(null_out());
        }
        let mut args = vec!["fbundle".to_string()];
        for i in 0..argc {
            args.push(read_str(*argv.add(i))?.to_string());
        }
        let cli = Cli::try_parse_from(&args).map_err(|e| (FbStatus::Parse, e.to_string()))?;
        let outcome = run_job(&JobSpec::from_cli(&cli));
        let json = to_c_string(fbundle::cli::report_json(&outcome.report))?;
        *out = Box::into_raw(Box::new(FbReport { outcome, json }));
        Ok(())
    })
}

/// Process exit code the job would have: 0 iff every verification passed.
///
/// # Safety
/// `r` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn fb_report_exit_code(r: *const FbReport) -> i32 {
    r.as_ref().map_or(-1, |r| r.outcome.exit_code)
}

/// JSON text of a report, owned by the handle.
///
/// # Safety
/// `r` is null or a live report handle; the string dies with the handle.
#[no_mangle]
pub unsafe extern "C" fn fb_report_json(r: *const FbReport) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// Release a report handle.
///
/// # Safety
/// `r` is null or a report handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fb_report_free(r: *mut FbReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
