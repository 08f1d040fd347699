//! C interface to the simgap toolkit.
//!
//! Every fallible function returns a [`SimgapStatus`]. On failure the message
//! is available from [`simgap_last_error_message`] on the same thread. Handles
//! are opaque and owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use simgap::kernel::KernelSet;
use simgap::manager::select_kernel;
use simgap::state::{ActionVector, Schema, StateVector};
use simgap::transition::{estimate, ingest_log, Corpus, EmpiricalTransition};
use simgap::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimgapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Computation = 5,
    Invariant = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimgapCorpus {
    Sim = 0,
    Phy = 1,
}

pub struct SimgapSchema(Schema);
pub struct SimgapKernelSet(KernelSet);
pub struct SimgapTransition(EmpiricalTransition);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> SimgapStatus {
    match e {
        Error::Dimension { .. } | Error::Input(_) | Error::Schema(_) | Error::Usage(_) => {
            SimgapStatus::InvalidArgument
        }
        Error::Parse { .. } | Error::Format { .. } => SimgapStatus::Format,
        Error::Io { .. } => SimgapStatus::Io,
        Error::Invariant(_) => SimgapStatus::Invariant,
        _ => SimgapStatus::Computation,
    }
}

struct Fail(SimgapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SimgapStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SimgapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SimgapStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SimgapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            SimgapStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T: Copy>(
    dst: *mut T,
    cap: usize,
    src: &[T],
    out_len: *mut usize,
) -> Result<(), Fail> {
    if !out_len.is_null() {
        *out_len = src.len();
    }
    if cap < src.len() {
        return Err(Fail(
            SimgapStatus::InvalidArgument,
            format!("output buffer holds {cap} values, need {}", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn simgap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next simgap call on the same thread.
#[no_mangle]
pub extern "C" fn simgap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse a schema from TOML text.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_from_toml(
    text: *const c_char,
    out: *mut *mut SimgapSchema,
) -> SimgapStatus {
    guard(|| {
        let schema = Schema::from_toml_str(str_arg(text, "text")?)?;
        put(out, SimgapSchema(schema))
    })
}

/// Load a schema from a TOML file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_load(
    path: *const c_char,
    out: *mut *mut SimgapSchema,
) -> SimgapStatus {
    guard(|| {
        let schema = Schema::load(Path::new(str_arg(path, "path")?))?;
        put(out, SimgapSchema(schema))
    })
}

/// # Safety
/// `schema` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_free(schema: *mut SimgapSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Number of state channels, or 0 for a null handle.
///
/// # Safety
/// `schema` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_state_dim(schema: *const SimgapSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.state_dim())
}

/// Number of action channels, or 0 for a null handle.
///
/// # Safety
/// `schema` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_action_dim(schema: *const SimgapSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.action_dim())
}

/// Weighted L1 distance between two states of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_distance(
    schema: *const SimgapSchema,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> SimgapStatus {
    guard(|| {
        let schema = &ref_arg(schema, "schema")?.0;
        let a = StateVector(slice_arg(a, len, "a")?.to_vec());
        let b = StateVector(slice_arg(b, len, "b")?.to_vec());
        let d = schema.distance(&a, &b)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = d;
        Ok(())
    })
}

/// Quantize a state into `out_bins` (capacity `cap`). The required length is
/// written to `out_len` when it is non-null, even on a short buffer.
///
/// # Safety
/// `s` must point to `len` doubles and `out_bins` to `cap` int64 slots.
#[no_mangle]
pub unsafe extern "C" fn simgap_schema_quantize(
    schema: *const SimgapSchema,
    s: *const f64,
    len: usize,
    out_bins: *mut i64,
    cap: usize,
    out_len: *mut usize,
) -> SimgapStatus {
    guard(|| {
        let schema = &ref_arg(schema, "schema")?.0;
        let q = schema.quantize(&StateVector(slice_arg(s, len, "s")?.to_vec()))?;
        write_out(out_bins, cap, q.bins(), out_len)
    })
}

/// Parse a kernel set from JSON text.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simgap_kernels_from_json(
    text: *const c_char,
    out: *mut *mut SimgapKernelSet,
) -> SimgapStatus {
    guard(|| {
        let ks = KernelSet::from_json(str_arg(text, "text")?)?;
        put(out, SimgapKernelSet(ks))
    })
}

/// Load a kernel set from a JSON file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simgap_kernels_load(
    path: *const c_char,
    out: *mut *mut SimgapKernelSet,
) -> SimgapStatus {
    guard(|| {
        let ks = KernelSet::load(Path::new(str_arg(path, "path")?))?;
        put(out, SimgapKernelSet(ks))
    })
}

/// # Safety
/// `ks` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn simgap_kernels_free(ks: *mut SimgapKernelSet) {
    if !ks.is_null() {
        drop(Box::from_raw(ks));
    }
}

/// Number of kernels, or 0 for a null handle.
///
/// # Safety
/// `ks` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_kernels_len(ks: *const SimgapKernelSet) -> usize {
    ks.as_ref().map_or(0, |k| k.0.len())
}

/// Lowest-id kernel active at `s` with activation at least `theta_act`.
/// Writes its id to `out_id`, or -1 when none is active.
///
/// # Safety
/// Handles must be live, `s` must point to `len` doubles, `out_id` valid.
#[no_mangle]
pub unsafe extern "C" fn simgap_kernels_select(
    ks: *const SimgapKernelSet,
    schema: *const SimgapSchema,
    s: *const f64,
    len: usize,
    theta_act: f64,
    out_id: *mut i64,
) -> SimgapStatus {
    guard(|| {
        let ks = &ref_arg(ks, "kernel set")?.0;
        let schema = &ref_arg(schema, "schema")?.0;
        if out_id.is_null() {
            return Err(null("out_id"));
        }
        ks.check_schema(schema)?;
        let s = StateVector(slice_arg(s, len, "s")?.to_vec());
        schema.check_state(&s)?;
        *out_id = select_kernel(ks, &s, schema, theta_act).map_or(-1, |k| i64::from(k.id));
        Ok(())
    })
}

/// Apply kernel `id` to state `s` and action `a`, writing the predicted next
/// state into `out` (capacity `cap`). Output is not clamped.
///
/// # Safety
/// `s` must point to `len` doubles, `a` to `alen` doubles, `out` to `cap`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn simgap_kernels_predict(
    ks: *const SimgapKernelSet,
    id: u32,
    s: *const f64,
    len: usize,
    a: *const f64,
    alen: usize,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> SimgapStatus {
    guard(|| {
        let ks = &ref_arg(ks, "kernel set")?.0;
        let k = ks.kernels.iter().find(|k| k.id == id).ok_or_else(|| {
            Fail(
                SimgapStatus::InvalidArgument,
                format!("no kernel with id {id}"),
            )
        })?;
        let s = StateVector(slice_arg(s, len, "s")?.to_vec());
        let a = ActionVector(slice_arg(a, alen, "a")?.to_vec());
        let input = k.transfer.map.input_dim();
        if s.values().len() != k.mean.values().len() || s.values().len() + a.values().len() != input
        {
            return Err(Error::Dimension {
                expected: input,
                got: s.values().len() + a.values().len(),
            }
            .into());
        }
        let next = k.predict(&s, &a);
        write_out(out, cap, next.values(), out_len)
    })
}

/// Build an empirical transition table from a JSONL transition log.
///
/// # Safety
/// `schema` must be live, `path` a valid NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn simgap_transition_from_log(
    schema: *const SimgapSchema,
    path: *const c_char,
    corpus: SimgapCorpus,
    out: *mut *mut SimgapTransition,
) -> SimgapStatus {
    guard(|| {
        let schema = &ref_arg(schema, "schema")?.0;
        let corpus = match corpus {
            SimgapCorpus::Sim => Corpus::Sim,
            SimgapCorpus::Phy => Corpus::Phy,
        };
        let h = ingest_log(Path::new(str_arg(path, "path")?), schema, corpus)?;
        put(out, SimgapTransition(estimate(&h, schema)?))
    })
}

/// # Safety
/// `t` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn simgap_transition_free(t: *mut SimgapTransition) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Records the table was estimated from, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_transition_record_count(t: *const SimgapTransition) -> usize {
    t.as_ref().map_or(0, |t| t.0.record_count())
}

/// Distinct source states, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_transition_source_count(t: *const SimgapTransition) -> usize {
    t.as_ref().map_or(0, |t| t.0.source_count())
}

/// Distinct (source, successor) edges, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn simgap_transition_edge_count(t: *const SimgapTransition) -> usize {
    t.as_ref().map_or(0, |t| t.0.edge_count())
}
