//! C ABI over the re-ranker.
//!
//! Every fallible call returns a [`PearStatus`]; on failure a one-line
//! message is kept per thread and read back with
//! [`pear_last_error_message`]. Models are opaque [`PearModel`] handles
//! owned by the caller and released with [`pear_model_free`]. Panics never
//! cross the boundary: they surface as `PEAR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pear_core::checkpoint::{Checkpoint, SavedModel};
use pear_core::datasim::{generate, parse_session, SynthConfig};
use pear_core::kv::KvMap;
use pear_core::metrics::{auc, ndcg_at_k, RankedList};
use pear_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PearStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was malformed or out of range.
    InvalidArgument = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A file or session line did not parse.
    Format = 4,
    /// Session fields disagree with the checkpoint's feature schema.
    SchemaMismatch = 5,
    /// The output buffer holds fewer slots than the result needs.
    BufferTooSmall = 6,
    /// The metric is undefined for this list (for example, no positives).
    Undefined = 7,
    /// A computation produced NaN or infinity.
    NonFinite = 8,
    /// An internal panic was caught.
    Panic = 9,
}

/// A loaded checkpoint: either a re-ranker or an initial ranker.
pub struct PearModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    // interior NULs cannot be represented; keep the message readable
    let clean = msg.replace(['\0', '\n'], " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).ok());
}

fn fail(status: PearStatus, msg: &str) -> PearStatus {
    set_error(msg);
    status
}

fn classify(e: &Error) -> PearStatus {
    match e {
        Error::Io { .. } => PearStatus::Io,
        Error::Parse { .. } => PearStatus::Format,
        Error::SchemaMismatch(_) => PearStatus::SchemaMismatch,
        Error::NonFinite(_) | Error::Divergence { .. } => PearStatus::NonFinite,
        Error::IndexOutOfRange { .. } => PearStatus::SchemaMismatch,
        Error::Shape { .. } | Error::Empty(_) | Error::Invalid(_) => PearStatus::InvalidArgument,
    }
}

fn from_core(e: Error) -> PearStatus {
    fail(classify(&e), &e.to_string())
}

/// Runs `body` with the thread's error cleared, converting panics.
fn guard(body: impl FnOnce() -> PearStatus) -> PearStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(body))
        .unwrap_or_else(|_| fail(PearStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, PearStatus> {
    if s.is_null() {
        return Err(fail(PearStatus::NullArgument, &format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PearStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

/// Message for the most recent failure on this thread, or null after a
/// successful call. The pointer stays valid until the next call into this
/// library from the same thread.
#[no_mangle]
pub extern "C" fn pear_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pear_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer
/// to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn pear_model_load(
    path: *const c_char,
    out: *mut *mut PearModel,
) -> PearStatus {
    guard(|| {
        if out.is_null() {
            return fail(PearStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match text(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(Path::new(path)) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(PearModel { checkpoint }));
                PearStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a handle from [`pear_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pear_model_free(model: *mut PearModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 1 when the handle holds a re-ranker with a list head, 0 for an initial
/// ranker, -1 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pear_model_is_reranker(model: *const PearModel) -> i32 {
    match model.as_ref() {
        None => -1,
        Some(m) => i32::from(matches!(m.checkpoint.model, SavedModel::Pear(_))),
    }
}

/// Scores one session given as a single line of the session file format
/// (without the file header). Writes one click probability per candidate,
/// in the given order, to `scores`, and the count to `*written`. When
/// `list_prob` is non-null it receives the list-level click probability,
/// or NaN for a model without a list head.
///
/// If `capacity` is too small, `*written` still receives the required
/// count and the call returns `PEAR_STATUS_BUFFER_TOO_SMALL`.
///
/// # Safety
/// `model` must be a live handle, `session` a NUL-terminated string,
/// `scores` valid for `capacity` writes and `written` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pear_model_score(
    model: *const PearModel,
    session: *const c_char,
    scores: *mut f64,
    capacity: usize,
    written: *mut usize,
    list_prob: *mut f64,
) -> PearStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(PearStatus::NullArgument, "model is null");
        };
        if written.is_null() || (scores.is_null() && capacity > 0) {
            return fail(PearStatus::NullArgument, "output pointer is null");
        }
        let line = match text(session, "session") {
            Ok(l) => l,
            Err(s) => return s,
        };
        let record = match parse_session(line.trim_end_matches(['\r', '\n'])) {
            Ok(r) => r,
            Err(msg) => return fail(PearStatus::Format, &format!("session: {msg}")),
        };
        if let Err(e) = record.validate(model.checkpoint.model.schema()) {
            return from_core(e);
        }
        let pred = match model
            .checkpoint
            .model
            .predict_many(std::slice::from_ref(&record))
        {
            Ok(mut p) => p.remove(0),
            Err(e) => return from_core(e),
        };
        *written = pred.item_probs.len();
        if capacity < pred.item_probs.len() {
            return fail(
                PearStatus::BufferTooSmall,
                &format!(
                    "{} scores need a buffer of that size, got {capacity}",
                    pred.item_probs.len()
                ),
            );
        }
        ptr::copy_nonoverlapping(pred.item_probs.as_ptr(), scores, pred.item_probs.len());
        if !list_prob.is_null() {
            *list_prob = pred.list_prob.unwrap_or(f64::NAN);
        }
        PearStatus::Ok
    })
}

/// # Safety
/// `scores` and `labels` must each be valid for `len` reads.
unsafe fn list(
    scores: *const f64,
    labels: *const u8,
    len: usize,
) -> Result<RankedList, PearStatus> {
    if len > 0 && (scores.is_null() || labels.is_null()) {
        return Err(fail(PearStatus::NullArgument, "scores or labels is null"));
    }
    let (s, y) = if len == 0 {
        (Vec::new(), Vec::new())
    } else {
        (
            std::slice::from_raw_parts(scores, len).to_vec(),
            std::slice::from_raw_parts(labels, len)
                .iter()
                .map(|&b| b != 0)
                .collect(),
        )
    };
    if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
        return Err(fail(
            PearStatus::NonFinite,
            &format!("score {bad} is not finite"),
        ));
    }
    RankedList::new(s, y).map_err(from_core)
}

fn write_metric(value: Option<f64>, out: *mut f64, what: &str) -> PearStatus {
    match value {
        Some(v) => {
            // SAFETY: checked non-null by the caller of this helper
            unsafe { *out = v };
            PearStatus::Ok
        }
        None => fail(
            PearStatus::Undefined,
            &format!("{what} is undefined for this list"),
        ),
    }
}

/// AUC of one list (ties count one half). Labels are nonzero for clicks.
/// Returns `PEAR_STATUS_UNDEFINED` when the list has a single class.
///
/// # Safety
/// `scores` and `labels` must be valid for `len` reads; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pear_auc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> PearStatus {
    guard(|| {
        if out.is_null() {
            return fail(PearStatus::NullArgument, "out is null");
        }
        match list(scores, labels, len) {
            Ok(l) => write_metric(auc(&l), out, "AUC"),
            Err(s) => s,
        }
    })
}

/// nDCG@`k` of one list with binary gains. Returns
/// `PEAR_STATUS_UNDEFINED` when the list has no positive.
///
/// # Safety
/// `scores` and `labels` must be valid for `len` reads; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pear_ndcg_at_k(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    k: usize,
    out: *mut f64,
) -> PearStatus {
    guard(|| {
        if out.is_null() {
            return fail(PearStatus::NullArgument, "out is null");
        }
        let l = match list(scores, labels, len) {
            Ok(l) => l,
            Err(s) => return s,
        };
        match ndcg_at_k(&l, k) {
            Ok(v) => write_metric(v, out, "nDCG"),
            Err(e) => from_core(e),
        }
    })
}

/// Simulates a planted click log into directory `out_dir`. `config_path`
/// may be null for the defaults, otherwise it names a `key = value` file.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out_dir` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pear_generate(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> PearStatus {
    guard(|| {
        let dir = match text(out_dir, "out_dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let config = if config_path.is_null() {
            Ok(SynthConfig::default())
        } else {
            match text(config_path, "config_path") {
                Ok(p) => KvMap::load(Path::new(p)).and_then(|kv| SynthConfig::from_kv(&kv)),
                Err(s) => return s,
            }
        };
        match config
            .and_then(|c| generate(&c))
            .and_then(|d| d.write(Path::new(dir)))
        {
            Ok(()) => PearStatus::Ok,
            Err(e) => from_core(e),
        }
    })
}
