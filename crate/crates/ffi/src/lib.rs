//! C interface to a trained verifier.
//!
//! Every function returns a [`VtStatus`]. On failure the message is kept per
//! thread and read with [`vt_last_error`]. Handles and strings handed out by
//! this library are released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::Deserialize;
use veritopic::capsule::Label;
use veritopic::model::Verifier;
use veritopic::pipeline::corpus::read_jsonl;
use veritopic::pipeline::train::{prepare_example, select_evidence};
use veritopic::pipeline::{evaluate, load_corpus, Candidate, ClaimInstance, Prediction, RunConfig};
use veritopic::topic_model::{file as topic_file, TopicModel};
use veritopic::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed model, topic file, corpus or JSON input.
    Parse = 4,
    /// Inputs that are well formed but incompatible, e.g. a topic model
    /// whose vocabulary does not match the checkpoint.
    Invalid = 5,
    NonFinite = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VtLabel {
    Supports = 0,
    Refutes = 1,
    NotEnoughInfo = 2,
}

impl From<Label> for VtLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Supports => VtLabel::Supports,
            Label::Refutes => VtLabel::Refutes,
            Label::NotEnoughInfo => VtLabel::NotEnoughInfo,
        }
    }
}

/// A loaded checkpoint together with its topic model.
pub struct VtVerifier {
    verifier: Verifier,
    topics: TopicModel,
    evidence_per_claim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            // Undecodable file contents surface as an I/O error.
            Error::Io(io) if io.kind() == std::io::ErrorKind::InvalidData => VtStatus::Parse,
            Error::Io(_) => VtStatus::Io,
            Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => VtStatus::Parse,
            Error::NonFinite(_) => VtStatus::NonFinite,
            Error::Shape { .. } | Error::Contract(_) | Error::UnknownParameter(_) => VtStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(VtStatus::Parse, e.to_string())
    }
}

fn set_last_error(msg: String) {
    // Interior NULs cannot cross the boundary.
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            VtStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VtStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(VtStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(VtStatus::Internal, e.to_string()))?;
    // SAFETY: callers check `out` for null before producing output.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint and its topic model. `evidence_per_claim` is the number
/// of evidence slots per claim; 0 selects the default.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vt_verifier_load(
    model_path: *const c_char,
    topics_path: *const c_char,
    evidence_per_claim: usize,
    out: *mut *mut VtVerifier,
) -> VtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model_path = str_arg(model_path, "model_path")?;
        let topics_path = str_arg(topics_path, "topics_path")?;
        let verifier = Verifier::load(Path::new(model_path))?;
        let topics = topic_file::load(Path::new(topics_path))?;
        verifier.check_topics(&topics)?;
        let evidence_per_claim = match evidence_per_claim {
            0 => RunConfig::default().evidence_per_claim,
            n => n,
        };
        *out = Box::into_raw(Box::new(VtVerifier {
            verifier,
            topics,
            evidence_per_claim,
        }));
        Ok(())
    })
}

/// Release a handle from [`vt_verifier_load`]. Null is ignored.
///
/// # Safety
/// `v` must come from [`vt_verifier_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vt_verifier_free(v: *mut VtVerifier) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

fn predict_instance(v: &VtVerifier, inst: &ClaimInstance) -> Result<Prediction, Failure> {
    let (ex, slots) = prepare_example(&v.verifier, &v.topics, inst, v.evidence_per_claim)?;
    let verdict = v.verifier.predict(&ex, &v.topics.topic_word_matrix())?;
    Ok(Prediction {
        id: inst.id.clone(),
        label: verdict.label,
        evidence: select_evidence(&verdict.evidence_scores, &slots),
        rho: verdict.rho,
    })
}

/// Verify `claim` against `n_evidence` candidate sentences.
///
/// Writes the verdict to `out_label` and the three class-capsule lengths
/// (SUPPORTS, REFUTES, NOT ENOUGH INFO) to `out_rho`. If `out_selected` is
/// not null it receives `n_evidence` bytes, 1 for each sentence reported
/// as evidence. Sentences beyond the handle's slot count are ignored.
///
/// # Safety
/// `evidence` must point to `n_evidence` NUL-terminated strings, `out_rho`
/// to 3 doubles and `out_selected`, if not null, to `n_evidence` bytes.
#[no_mangle]
pub unsafe extern "C" fn vt_verifier_predict(
    v: *const VtVerifier,
    claim: *const c_char,
    evidence: *const *const c_char,
    n_evidence: usize,
    out_label: *mut VtLabel,
    out_rho: *mut f64,
    out_selected: *mut u8,
) -> VtStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("verifier"))?;
        if out_label.is_null() {
            return Err(null("out_label"));
        }
        if out_rho.is_null() {
            return Err(null("out_rho"));
        }
        if evidence.is_null() && n_evidence > 0 {
            return Err(null("evidence"));
        }
        let claim = str_arg(claim, "claim")?;
        let mut candidates = Vec::with_capacity(n_evidence);
        for i in 0..n_evidence {
            candidates.push(Candidate {
                doc_id: String::new(),
                sent_id: i,
                text: str_arg(*evidence.add(i), &format!("evidence[{i}]"))?.to_string(),
            });
        }
        let inst = ClaimInstance {
            version: None,
            id: String::new(),
            claim: claim.to_string(),
            label: Label::NotEnoughInfo,
            candidates,
            gold_sets: vec![],
        };
        let pred = predict_instance(v, &inst)?;
        *out_label = pred.label.into();
        std::ptr::copy_nonoverlapping(pred.rho.as_ptr(), out_rho, 3);
        if !out_selected.is_null() {
            let selected = std::slice::from_raw_parts_mut(out_selected, n_evidence);
            selected.fill(0);
            for e in &pred.evidence {
                selected[e.1] = 1;
            }
        }
        Ok(())
    })
}

/// A claim record without a gold label.
#[derive(Deserialize)]
struct ClaimInput {
    id: String,
    claim: String,
    #[serde(default)]
    candidates: Vec<Candidate>,
}

/// Predict one claim given as a JSON object with `id`, `claim` and
/// `candidates` (`doc_id`, `sent_id`, `text`). The prediction is written to
/// `out_json` as a JSON object in the CLI's prediction format and must be
/// released with [`vt_string_free`].
///
/// # Safety
/// `claim_json` must be a NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vt_verifier_predict_json(
    v: *const VtVerifier,
    claim_json: *const c_char,
    out_json: *mut *mut c_char,
) -> VtStatus {
    guard(|| {
        let v = v.as_ref().ok_or_else(|| null("verifier"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let input: ClaimInput = serde_json::from_str(str_arg(claim_json, "claim_json")?)?;
        let inst = ClaimInstance {
            version: None,
            id: input.id,
            claim: input.claim,
            label: Label::NotEnoughInfo,
            candidates: input.candidates,
            gold_sets: vec![],
        };
        let pred = predict_instance(v, &inst)?;
        out_string(serde_json::to_string(&pred)?, out_json)
    })
}

/// Score a predictions file against a gold corpus, both JSON Lines, and
/// write the report as JSON to `out_json`. Release it with
/// [`vt_string_free`].
///
/// # Safety
/// Paths must be NUL-terminated strings; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vt_evaluate_files(
    predictions_path: *const c_char,
    gold_path: *const c_char,
    out_json: *mut *mut c_char,
) -> VtStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let preds: Vec<Prediction> = read_jsonl(Path::new(str_arg(predictions_path, "predictions_path")?))?;
        let gold = load_corpus(Path::new(str_arg(gold_path, "gold_path")?))?;
        let report = evaluate(&preds, &gold)?;
        out_string(serde_json::to_string(&report)?, out_json)
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
