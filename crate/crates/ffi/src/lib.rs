//! C ABI over the quality model.
//!
//! Handles are opaque heap objects owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`QnStatus`];
//! on failure, [`qn_last_error_message`] describes the error for the calling
//! thread. Panics never cross the boundary: they are reported as
//! [`QnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qualitynet::features::{extract, FeatureConfig};
use qualitynet::net::{forward, AssessmentResult, ModelParams};
use qualitynet::optim::load_checkpoint;
use qualitynet::signal::{read_wav, AudioClip};
use qualitynet::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    DimensionMismatch = 5,
    InvalidAudio = 6,
    TooShort = 7,
    Internal = 8,
    Panic = 9,
}

/// A loaded model. Safe to share between threads for scoring.
pub struct QnModel {
    params: ModelParams,
}

/// Scores produced by one call to a scoring function.
pub struct QnResult {
    inner: AssessmentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> QnStatus {
    match e {
        Error::Io { .. } => QnStatus::Io,
        Error::CorruptCheckpoint(_) | Error::CheckpointDims { .. } => QnStatus::CorruptCheckpoint,
        Error::DimensionMismatch(_) => QnStatus::DimensionMismatch,
        Error::TooShort { .. } => QnStatus::TooShort,
        Error::MalformedWav(_)
        | Error::UnsupportedEncoding(_)
        | Error::UnsupportedChannels(_)
        | Error::UnsupportedBitDepth(_)
        | Error::UnsupportedSampleRate { .. }
        | Error::InvalidAudio(_)
        | Error::Empty(_) => QnStatus::InvalidAudio,
        Error::InvalidConfig(_) | Error::InvalidEpsilon(_) => QnStatus::InvalidArgument,
        _ => QnStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (QnStatus, String)>) -> QnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (QnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QnStatus, String) {
    (QnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (QnStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (QnStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

fn score(model: &QnModel, clip: &AudioClip) -> Result<AssessmentResult, (QnStatus, String)> {
    let spec = extract(clip, &FeatureConfig::default()).map_err(lib_err)?;
    forward(&spec, &model.params).map(|(r, _)| r).map_err(lib_err)
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` receives a handle to free with [`qn_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qn_model_load(path: *const c_char, out: *mut *mut QnModel) -> QnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null above.
        unsafe { *out = ptr::null_mut() };
        let path = unsafe { path_arg(path) }?;
        let params = load_checkpoint(&path).map_err(lib_err)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(QnModel { params })) };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`qn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qn_model_free(model: *mut QnModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Input bins per frame and LSTM units per direction.
///
/// # Safety
/// `model` must be a live handle; `input` and `hidden` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qn_model_dims(model: *const QnModel, input: *mut u32, hidden: *mut u32) -> QnStatus {
    guard(|| {
        // SAFETY: caller guarantees validity when non-null.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if input.is_null() || hidden.is_null() {
            return Err(null("output pointer"));
        }
        unsafe {
            *input = m.params.dims.input as u32;
            *hidden = m.params.dims.hidden as u32;
        }
        Ok(())
    })
}

/// Scores mono samples in [-1, 1]. The rate must be 16 kHz.
///
/// # Safety
/// `samples` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qn_score_samples(
    model: *const QnModel,
    samples: *const f64,
    len: usize,
    sample_rate_hz: u32,
    out: *mut *mut QnResult,
) -> QnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = ptr::null_mut() };
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        // SAFETY: caller guarantees `len` readable doubles.
        let data = unsafe { std::slice::from_raw_parts(samples, len) }.to_vec();
        let clip = AudioClip::new(data, sample_rate_hz).map_err(lib_err)?;
        clip.require_corpus_rate().map_err(lib_err)?;
        let inner = score(m, &clip)?;
        unsafe { *out = Box::into_raw(Box::new(QnResult { inner })) };
        Ok(())
    })
}

/// Scores a 16-bit PCM mono 16 kHz WAV file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qn_score_wav(model: *const QnModel, path: *const c_char, out: *mut *mut QnResult) -> QnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = ptr::null_mut() };
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let path = unsafe { path_arg(path) }?;
        let clip = read_wav(&path).map_err(lib_err)?;
        let inner = score(m, &clip)?;
        unsafe { *out = Box::into_raw(Box::new(QnResult { inner })) };
        Ok(())
    })
}

/// Utterance score, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qn_result_utterance(result: *const QnResult) -> f64 {
    unsafe { result.as_ref() }.map_or(f64::NAN, |r| r.inner.utterance_score())
}

/// Number of frame scores, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qn_result_frame_count(result: *const QnResult) -> usize {
    unsafe { result.as_ref() }.map_or(0, |r| r.inner.frame_scores().len())
}

/// Copies up to `capacity` frame scores into `buf`; `*written` receives the count.
///
/// # Safety
/// `buf` must have room for `capacity` doubles; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qn_result_frames(
    result: *const QnResult,
    buf: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> QnStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        if buf.is_null() || written.is_null() {
            return Err(null("output pointer"));
        }
        let q = r.inner.frame_scores();
        let n = q.len().min(capacity);
        // SAFETY: caller guarantees `capacity` writable doubles.
        unsafe {
            ptr::copy_nonoverlapping(q.as_ptr(), buf, n);
            *written = n;
        }
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `result` must come from a scoring call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qn_result_free(result: *mut QnResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}
