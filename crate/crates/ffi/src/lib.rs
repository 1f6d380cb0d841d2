//! C ABI over `score-core`.
//!
//! Every fallible function returns a [`ScoreStatus`]; on failure the message
//! is available from [`score_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`score_string_free`], corpora
//! with [`score_corpus_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use score_core::config::RunConfig;
use score_core::corpus::{IngestOptions, InteractionCorpus, UserIx};
use score_core::eval::auc;
use score_core::experiment::run_experiment;
use score_core::providers::hash_embed;
use score_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    UndefinedMetric = 6,
    Provider = 7,
    Internal = 8,
}

/// Opaque handle to a loaded interaction corpus.
pub struct ScoreCorpus {
    inner: InteractionCorpus,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> ScoreStatus {
    match err {
        Error::Io { .. } => ScoreStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Artifact { .. } | Error::MissingMetadata(_) => ScoreStatus::Parse,
        Error::Config { .. } => ScoreStatus::Config,
        Error::UndefinedMetric(_) => ScoreStatus::UndefinedMetric,
        Error::Transport { .. } | Error::Protocol(_) | Error::MissingToken => ScoreStatus::Provider,
        _ => ScoreStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (ScoreStatus, String)>) -> ScoreStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScoreStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ScoreStatus::Internal
        }
    }
}

fn core<T>(r: score_core::Result<T>) -> Result<T, (ScoreStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (ScoreStatus, String) {
    (ScoreStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn utf8<'a>(p: *const c_char, name: &str) -> Result<&'a str, (ScoreStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ScoreStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn score_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn score_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// AUC of `len` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn score_auc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> ScoreStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null("scores/labels/out"));
        }
        let scores = std::slice::from_raw_parts(scores, len);
        let labels: Vec<bool> = std::slice::from_raw_parts(labels, len).iter().map(|&l| l != 0).collect();
        *out = core(auc(scores, &labels))?;
        Ok(())
    })
}

/// Deterministic hashed embedding of `text`, written as `dim` floats.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` must hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn score_hash_embed(text: *const c_char, dim: usize, out: *mut f32) -> ScoreStatus {
    guard(|| {
        let text = utf8(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if dim < 2 {
            return Err((ScoreStatus::InvalidArgument, "`dim` must be at least 2".into()));
        }
        let v = hash_embed(text, dim);
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(v.values());
        Ok(())
    })
}

/// Loads interactions and item metadata (TSV) with the default positive
/// threshold. On success `*out` owns a new corpus.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn score_corpus_load(
    interactions: *const c_char,
    items: *const c_char,
    out: *mut *mut ScoreCorpus,
) -> ScoreStatus {
    guard(|| {
        let interactions = utf8(interactions, "interactions")?;
        let items = utf8(items, "items")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = core(InteractionCorpus::ingest(interactions, items, &IngestOptions::default()))?;
        *out = Box::into_raw(Box::new(ScoreCorpus { inner }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`score_corpus_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn score_corpus_free(corpus: *mut ScoreCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of users; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn score_corpus_user_count(corpus: *const ScoreCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.num_users())
}

/// Behaviour text of the user at `user_index`, at most `max_items` recent
/// positives. On success `*out` owns a new string.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn score_corpus_behavior_text(
    corpus: *const ScoreCorpus,
    user_index: usize,
    max_items: usize,
    out: *mut *mut c_char,
) -> ScoreStatus {
    guard(|| {
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = corpus.inner.num_users();
        if user_index >= n {
            return Err((
                ScoreStatus::InvalidArgument,
                format!("user index {user_index} out of range (size {n})"),
            ));
        }
        let text = core(corpus.inner.behavior_text(UserIx(user_index as u32), max_items))?;
        *out = into_c_string(text);
        Ok(())
    })
}

/// Runs every stage for the TOML config at `config_path` and hands back the
/// evaluation report as JSON in `*out`.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn score_experiment_run(config_path: *const c_char, out: *mut *mut c_char) -> ScoreStatus {
    guard(|| {
        let path = utf8(config_path, "config_path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = core(RunConfig::load(Path::new(path), &[]))?;
        let report = core(run_experiment(&cfg))?;
        let json = core(serde_json::to_string(&report).map_err(Error::from))?;
        *out = into_c_string(json);
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn score_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
