use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use score_ffi::*;

fn last_error() -> String {
    let p = score_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn bundled(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

#[test]
fn auc_and_its_errors() {
    let scores = [0.9, 0.8, 0.7, 0.6];
    let labels = [1u8, 0, 1, 0];
    let mut out = 0.0;
    let status = unsafe { score_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) };
    assert_eq!(status, ScoreStatus::Ok);
    assert_eq!(out, 0.75);
    assert!(score_last_error().is_null());

    let status = unsafe { score_auc(scores.as_ptr(), [1u8; 4].as_ptr(), 4, &mut out) };
    assert_eq!(status, ScoreStatus::UndefinedMetric);
    assert!(last_error().contains("both label classes"));

    let status = unsafe { score_auc(ptr::null(), labels.as_ptr(), 4, &mut out) };
    assert_eq!(status, ScoreStatus::NullArgument);
}

#[test]
fn hash_embedding_is_unit_length() {
    let text = CString::new("Amber Saga 1 (1984)").unwrap();
    let mut v = [0f32; 64];
    assert_eq!(unsafe { score_hash_embed(text.as_ptr(), 64, v.as_mut_ptr()) }, ScoreStatus::Ok);
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);
    assert_eq!(unsafe { score_hash_embed(text.as_ptr(), 1, v.as_mut_ptr()) }, ScoreStatus::InvalidArgument);
}

#[test]
fn corpus_handle_lifecycle() {
    let mut corpus = ptr::null_mut();
    let status = unsafe {
        score_corpus_load(c(&bundled("interactions.tsv")).as_ptr(), c(&bundled("items.tsv")).as_ptr(), &mut corpus)
    };
    assert_eq!(status, ScoreStatus::Ok);
    let users = unsafe { score_corpus_user_count(corpus) };
    assert_eq!(users, 80);

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { score_corpus_behavior_text(corpus, 0, 3, &mut text) }, ScoreStatus::Ok);
    let s = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
    assert!(s.starts_with('\'') && s.ends_with('\''), "{s}");
    assert_eq!(s.matches("', '").count(), 2, "three most recent titles: {s}");
    unsafe { score_string_free(text) };

    let status = unsafe { score_corpus_behavior_text(corpus, users, 3, &mut text) };
    assert_eq!(status, ScoreStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe { score_corpus_free(corpus) };
    assert_eq!(unsafe { score_corpus_user_count(ptr::null()) }, 0);
}

#[test]
fn missing_files_report_io() {
    let mut corpus = ptr::null_mut();
    let missing = CString::new("/nonexistent/interactions.tsv").unwrap();
    let status = unsafe { score_corpus_load(missing.as_ptr(), missing.as_ptr(), &mut corpus) };
    assert_eq!(status, ScoreStatus::Io);
    assert!(corpus.is_null());
    assert!(last_error().contains("/nonexistent"));
}

#[test]
fn experiment_run_returns_the_report() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["interactions.tsv", "items.tsv", "score.toml"] {
        std::fs::copy(bundled(name), dir.path().join(name)).unwrap();
    }
    let mut json = ptr::null_mut();
    let status = unsafe { score_experiment_run(c(&dir.path().join("score.toml")).as_ptr(), &mut json) };
    assert_eq!(status, ScoreStatus::Ok);
    let report: serde_json::Value =
        serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { score_string_free(json) };
    assert!(report["auc"].as_f64().unwrap() > 0.5);
    assert!(dir.path().join("artifacts/report.json").exists());
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/score.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["score_auc", "score_corpus_load", "score_experiment_run", "SCORE_STATUS_OK"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    match std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() {
        Ok(status) => assert!(status.success()),
        Err(_) => eprintln!("no C compiler; header syntax not checked"),
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(score_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
