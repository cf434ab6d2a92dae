//! C interface to the recognizer: load a checkpoint, build a speaker
//! inventory, beam-search decode a feature matrix and read back the
//! speaker-attributed utterances.
//!
//! Every function returns a [`SasrStatus`]; on failure a message is kept
//! per thread and can be read with [`sasr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sasr::decode::{attribute, beam_search, AssignMode, BeamConfig};
use sasr::features::{FeatureSequence, SpeakerId};
use sasr::metrics::{score_mixture, TranscriptUtterance};
use sasr::model::{Checkpoint, ModelError, ModelParams, SpeakerInventory};
use sasr::numerics::NumericsError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SasrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numeric = 5,
    Panic = 6,
}

/// Loaded model parameters.
pub struct SasrModel {
    params: ModelParams,
}

/// Growable list of named speaker profiles.
pub struct SasrInventory {
    dim: usize,
    ids: Vec<SpeakerId>,
    profiles: Vec<Vec<f64>>,
}

struct ResultUtterance {
    speaker: CString,
    tokens: Vec<u32>,
}

/// Outcome of one decode.
pub struct SasrResult {
    tokens: Vec<u32>,
    score: f64,
    truncated: bool,
    utterances: Vec<ResultUtterance>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(SasrStatus, String);

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match &e {
            ModelError::Io(_) => SasrStatus::Io,
            ModelError::Numerics(NumericsError::NonFinite { .. } | NumericsError::ZeroNorm)
            | ModelError::DegenerateQuery => SasrStatus::Numeric,
            _ => SasrStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SasrStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SasrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SasrStatus::Ok
        }
        Ok(Err(Failure(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SasrStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SasrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(SasrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SasrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SasrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the most recent failure on this thread, or null. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sasr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sasr_model_load(path: *const c_char, out: *mut *mut SasrModel) -> SasrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(SasrModel { params: ck.params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sasr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sasr_model_free(model: *mut SasrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raw frame width expected by the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_model_feature_dim(model: *const SasrModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config().feature_dim)
}

/// Output vocabulary size including the delimiter tokens, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_model_vocab_size(model: *const SasrModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config().vocab_size)
}

/// Creates an empty inventory of `dim`-dimensional profiles.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sasr_inventory_new(dim: usize, out: *mut *mut SasrInventory) -> SasrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if dim == 0 {
            return Err(invalid("profile dimension must be positive"));
        }
        *out = Box::into_raw(Box::new(SasrInventory { dim, ids: Vec::new(), profiles: Vec::new() }));
        Ok(())
    })
}

/// Appends a named profile of `len` values; `len` must equal the inventory dimension.
///
/// # Safety
/// `inv` must be a live handle, `id` a NUL-terminated string and `profile` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sasr_inventory_add(
    inv: *mut SasrInventory,
    id: *const c_char,
    profile: *const f64,
    len: usize,
) -> SasrStatus {
    guard(|| {
        let inv = out_ptr(inv, "inventory")?;
        let id = c_str(id, "id")?;
        let profile = slice(profile, len, "profile")?;
        if len != inv.dim {
            return Err(invalid(format!("profile has {len} values, inventory expects {}", inv.dim)));
        }
        let id = SpeakerId::new(id);
        if inv.ids.contains(&id) {
            return Err(invalid(format!("duplicate speaker {id}")));
        }
        inv.ids.push(id);
        inv.profiles.push(profile.to_vec());
        Ok(())
    })
}

/// Number of profiles, or 0 for a null handle.
///
/// # Safety
/// `inv` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_inventory_len(inv: *const SasrInventory) -> usize {
    inv.as_ref().map_or(0, |i| i.ids.len())
}

/// # Safety
/// `inv` must come from [`sasr_inventory_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sasr_inventory_free(inv: *mut SasrInventory) {
    if !inv.is_null() {
        drop(Box::from_raw(inv));
    }
}

/// Beam-search decodes a row-major `frames x dim` feature matrix against the
/// inventory and attributes each utterance to a profile. `max_steps` 0 selects
/// the default limit. Repeated speakers are merged.
///
/// # Safety
/// Handles must be live, `features` must point to `frames * dim` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sasr_decode(
    model: *const SasrModel,
    features: *const f64,
    frames: usize,
    dim: usize,
    inv: *const SasrInventory,
    beam_width: usize,
    max_steps: usize,
    out: *mut *mut SasrResult,
) -> SasrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = nonnull(model, "model")?;
        let inv = nonnull(inv, "inventory")?;
        let n = frames.checked_mul(dim).ok_or_else(|| invalid("feature size overflows"))?;
        let data = slice(features, n, "features")?;
        if beam_width == 0 {
            return Err(invalid("beam width must be positive"));
        }
        let x = FeatureSequence::new(frames, dim, data.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let inventory = SpeakerInventory::new(inv.ids.clone(), inv.profiles.clone())?;
        let cfg = BeamConfig { width: beam_width, max_steps: (max_steps > 0).then_some(max_steps), length_norm: None };
        let hyp = beam_search(&model.params, &x, &inventory, &cfg).map_err(|e| match e {
            sasr::decode::DecodeError::Model(m) => Failure::from(m),
            e => invalid(e.to_string()),
        })?;
        let utts =
            attribute(&hyp, &inventory, AssignMode::Merge).map_err(|e| Failure(SasrStatus::Data, e.to_string()))?;
        let utterances = utts
            .into_iter()
            .map(|u| ResultUtterance {
                speaker: CString::new(u.speaker.as_str()).unwrap_or_default(),
                tokens: u.tokens.iter().map(|&t| t as u32).collect(),
            })
            .collect();
        *out = Box::into_raw(Box::new(SasrResult {
            tokens: hyp.tokens.iter().map(|&t| t as u32).collect(),
            score: hyp.score,
            truncated: hyp.truncated,
            utterances,
        }));
        Ok(())
    })
}

/// # Safety
/// `res` must come from [`sasr_decode`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_free(res: *mut SasrResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Log probability of the chosen hypothesis, NaN for a null handle.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_score(res: *const SasrResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.score)
}

/// 1 when decoding hit the step limit and EOS was forced.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_truncated(res: *const SasrResult) -> i32 {
    res.as_ref().is_some_and(|r| r.truncated) as i32
}

/// Full serialized token stream including delimiters and EOS.
///
/// # Safety
/// `res` must be a live handle and `len` a valid pointer. The returned
/// array lives as long as `res`.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_tokens(res: *const SasrResult, len: *mut usize) -> *const u32 {
    match (res.as_ref(), len.as_mut()) {
        (Some(r), Some(n)) => {
            *n = r.tokens.len();
            r.tokens.as_ptr()
        }
        (_, n) => {
            if let Some(n) = n {
                *n = 0;
            }
            ptr::null()
        }
    }
}

/// Number of attributed utterances.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_utterance_count(res: *const SasrResult) -> usize {
    res.as_ref().map_or(0, |r| r.utterances.len())
}

/// Speaker id of utterance `i`, or null when out of range.
///
/// # Safety
/// `res` must be null or a live handle. The string lives as long as `res`.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_speaker(res: *const SasrResult, i: usize) -> *const c_char {
    res.as_ref().and_then(|r| r.utterances.get(i)).map_or(ptr::null(), |u| u.speaker.as_ptr())
}

/// Word tokens of utterance `i`, or null when out of range.
///
/// # Safety
/// `res` must be null or a live handle and `len` a valid pointer. The array lives as long as `res`.
#[no_mangle]
pub unsafe extern "C" fn sasr_result_utterance_tokens(res: *const SasrResult, i: usize, len: *mut usize) -> *const u32 {
    let u = res.as_ref().and_then(|r| r.utterances.get(i));
    if let Some(n) = len.as_mut() {
        *n = u.map_or(0, |u| u.tokens.len());
    }
    u.map_or(ptr::null(), |u| u.tokens.as_ptr())
}

/// One side of a scoring call: `count` utterances with speaker ids and
/// token arrays.
#[repr(C)]
pub struct SasrTranscript {
    pub count: usize,
    pub speakers: *const *const c_char,
    pub tokens: *const *const u32,
    pub lengths: *const usize,
}

/// Error counts of one mixture.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SasrScore {
    pub ref_utterances: usize,
    pub ref_words: usize,
    pub ser_errors: usize,
    pub wer_errors: usize,
    pub sa_wer_errors: usize,
    pub actual_speakers: usize,
    pub estimated_speakers: usize,
}

unsafe fn transcript(t: &SasrTranscript, what: &str) -> Result<Vec<TranscriptUtterance>, Failure> {
    let speakers = slice(t.speakers, t.count, what)?;
    let tokens = slice(t.tokens, t.count, what)?;
    let lengths = slice(t.lengths, t.count, what)?;
    (0..t.count)
        .map(|i| {
            let s = c_str(speakers[i], "speaker")?;
            let toks = slice(tokens[i], lengths[i], "tokens")?;
            Ok(TranscriptUtterance::new(s, toks.iter().map(|&v| v as usize).collect()))
        })
        .collect()
}

/// Scores a hypothesis transcript against a reference: permutation-optimal
/// SER and WER error counts and speaker-attributed word errors.
///
/// # Safety
/// Both transcripts must be valid for their declared counts and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sasr_score(
    hyp: *const SasrTranscript,
    reference: *const SasrTranscript,
    out: *mut SasrScore,
) -> SasrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let h = transcript(nonnull(hyp, "hyp")?, "hyp")?;
        let r = transcript(nonnull(reference, "reference")?, "reference")?;
        let s = score_mixture(&h, &r);
        *out = SasrScore {
            ref_utterances: s.ref_utterances,
            ref_words: s.ref_words,
            ser_errors: s.ser_errors,
            wer_errors: s.wer_errors,
            sa_wer_errors: s.sa_wer_errors,
            actual_speakers: s.actual_speakers,
            estimated_speakers: s.estimated_speakers,
        };
        Ok(())
    })
}
