//! C ABI over `seqprune`.
//!
//! Objects cross the boundary as opaque handles created by `sp_*_new`,
//! `sp_*_read` or `sp_*_load` and released with the matching `sp_*_free`.
//! Every fallible call returns an [`SpStatus`]; on failure a description is
//! available from [`sp_last_error_message`] on the same thread. Strings are
//! NUL-terminated UTF-8. Strings returned by the library must be released
//! with [`sp_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use seqprune::compress::{apply_prune, CompressError};
use seqprune::corpus::{read_features, write_features, CorpusError};
use seqprune::metrics::{cer, edit_distance, predicted_sr, CostModel, MetricsError};
use seqprune::toyasr::ToyError;
use seqprune::{cosine_sim, prune_indices, CentroidModel, FeatureSequence, PruneConfig, PrunePolicy, PruneResult};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Panic = 6,
}

/// Reference frame used when deciding whether to drop a frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpPolicy {
    OriginalAdjacent = 0,
    LastKept = 1,
}

fn policy_from(code: u32) -> Result<PrunePolicy, Failure> {
    match code {
        c if c == SpPolicy::OriginalAdjacent as u32 => Ok(PrunePolicy::OriginalAdjacent),
        c if c == SpPolicy::LastKept as u32 => Ok(PrunePolicy::LastKept),
        c => Err(Failure::invalid(format!("unknown policy {c}"))),
    }
}

/// A row-major sequence of `f32` frames.
pub struct SpFeatures(FeatureSequence);

/// Kept frame indices for one sequence.
pub struct SpPruneResult(PruneResult);

/// A nearest-centroid transcriber.
pub struct SpModel(CentroidModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let mut text = message.into().into_bytes();
    text.retain(|&b| b != 0);
    let c = CString::new(text).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SpStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(SpStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure(SpStatus::InvalidArgument, message.into())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::Io { .. } => SpStatus::Io,
            CorpusError::DimMismatch { .. } => SpStatus::DimensionMismatch,
            CorpusError::ZeroDim | CorpusError::Ragged { .. } | CorpusError::NonFinite { .. } | CorpusError::IndexOutOfRange { .. } => {
                SpStatus::InvalidArgument
            }
            _ => SpStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<CompressError> for Failure {
    fn from(e: CompressError) -> Self {
        let status = match e {
            CompressError::DimMismatch { .. } | CompressError::LengthMismatch { .. } => SpStatus::DimensionMismatch,
            _ => SpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(SpStatus::InvalidArgument, e.to_string())
    }
}

impl From<ToyError> for Failure {
    fn from(e: ToyError) -> Self {
        let status = match e {
            ToyError::Corpus(c) => return c.into(),
            ToyError::Io { .. } => SpStatus::Io,
            ToyError::DimMismatch { .. } => SpStatus::DimensionMismatch,
            ToyError::Json { .. } | ToyError::Invalid(_) => SpStatus::Format,
            _ => SpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            SpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- features

/// Copies `frames·dim` floats from `data` into a new sequence.
#[no_mangle]
pub unsafe extern "C" fn sp_features_new(data: *const f32, frames: usize, dim: usize, out: *mut *mut SpFeatures) -> SpStatus {
    guard(|| {
        let values = if frames == 0 {
            Vec::new()
        } else {
            if data.is_null() {
                return Err(Failure::null("data"));
            }
            let n = frames
                .checked_mul(dim)
                .ok_or_else(|| Failure::invalid("frames * dim overflows"))?;
            std::slice::from_raw_parts(data, n).to_vec()
        };
        put(out, SpFeatures(FeatureSequence::new(dim, values)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_features_read(path: *const c_char, out: *mut *mut SpFeatures) -> SpStatus {
    guard(|| put(out, SpFeatures(read_features(text(path, "path")?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn sp_features_write(features: *const SpFeatures, path: *const c_char) -> SpStatus {
    guard(|| Ok(write_features(&get(features, "features")?.0, text(path, "path")?)?))
}

/// Number of frames; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sp_features_len(features: *const SpFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.0.len())
}

/// Frame dimension; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sp_features_dim(features: *const SpFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.0.dim())
}

/// Borrowed row-major frame data, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn sp_features_data(features: *const SpFeatures) -> *const f32 {
    features.as_ref().map_or(ptr::null(), |f| f.0.as_slice().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn sp_features_free(features: *mut SpFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

// ---------------------------------------------------------------- pruning

/// Cosine similarity of two `dim`-component frames, 0 when either norm is
/// below `epsilon`.
#[no_mangle]
pub unsafe extern "C" fn sp_cosine_sim(x: *const f32, y: *const f32, dim: usize, epsilon: f64, out: *mut f64) -> SpStatus {
    guard(|| {
        if dim > 0 && (x.is_null() || y.is_null()) {
            return Err(Failure::null("frame"));
        }
        let (a, b) = if dim == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(x, dim), std::slice::from_raw_parts(y, dim))
        };
        if !(epsilon > 0.0) {
            return Err(Failure::invalid("epsilon must be positive"));
        }
        write(out, cosine_sim(a, b, epsilon)?)
    })
}

/// Drops every frame whose similarity to its reference frame exceeds
/// `theta` (in [-1, 1]). `policy` is an `SpPolicy` value.
#[no_mangle]
pub unsafe extern "C" fn sp_prune(features: *const SpFeatures, theta: f64, policy: u32, out: *mut *mut SpPruneResult) -> SpStatus {
    guard(|| {
        let f = get(features, "features")?;
        let cfg = PruneConfig::new(theta, policy_from(policy)?)?;
        put(out, SpPruneResult(prune_indices(&f.0, &cfg)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_prune_result_original_count(result: *const SpPruneResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.original_count)
}

#[no_mangle]
pub unsafe extern "C" fn sp_prune_result_kept_count(result: *const SpPruneResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.kept_indices.len())
}

/// Kept over original frame count; 1.0 for an empty sequence.
#[no_mangle]
pub unsafe extern "C" fn sp_prune_result_kept_fraction(result: *const SpPruneResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.kept_fraction)
}

/// Borrowed ascending kept indices, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn sp_prune_result_kept_indices(result: *const SpPruneResult) -> *const usize {
    result.as_ref().map_or(ptr::null(), |r| r.0.kept_indices.as_ptr())
}

/// New sequence holding only the kept frames of `features`.
#[no_mangle]
pub unsafe extern "C" fn sp_prune_apply(features: *const SpFeatures, result: *const SpPruneResult, out: *mut *mut SpFeatures) -> SpStatus {
    guard(|| {
        let f = get(features, "features")?;
        let r = get(result, "result")?;
        put(out, SpFeatures(apply_prune(&f.0, &r.0)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_prune_result_free(result: *mut SpPruneResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

// ---------------------------------------------------------------- metrics

/// Character-level Levenshtein distance.
#[no_mangle]
pub unsafe extern "C" fn sp_edit_distance(a: *const c_char, b: *const c_char, out: *mut usize) -> SpStatus {
    guard(|| write(out, edit_distance(text(a, "a")?, text(b, "b")?)))
}

/// Edit distance over reference length; fails for an empty reference.
#[no_mangle]
pub unsafe extern "C" fn sp_cer(hypothesis: *const c_char, reference: *const c_char, out: *mut f64) -> SpStatus {
    guard(|| write(out, cer(text(hypothesis, "hypothesis")?, text(reference, "reference")?)?))
}

/// `cost(length) / cost(max(1, round(kept·length)))` under
/// `cost(L) = quad·L² + lin·L + constant`.
#[no_mangle]
pub unsafe extern "C" fn sp_predicted_sr(quad: f64, lin: f64, constant: f64, length: usize, kept: f64, out: *mut f64) -> SpStatus {
    guard(|| {
        let model = CostModel::new(quad, lin, constant)?;
        write(out, predicted_sr(&model, length, kept)?)
    })
}

// ---------------------------------------------------------------- model

/// Loads a model saved as a JSON header plus sibling `.efea` table.
#[no_mangle]
pub unsafe extern "C" fn sp_model_load(path: *const c_char, out: *mut *mut SpModel) -> SpStatus {
    guard(|| put(out, SpModel(CentroidModel::load(text(path, "path")?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn sp_model_save(model: *const SpModel, path: *const c_char) -> SpStatus {
    guard(|| Ok(get(model, "model")?.0.save(text(path, "path")?)?))
}

/// Decodes `features` into a new string; release it with `sp_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sp_model_transcribe(model: *const SpModel, features: *const SpFeatures, out: *mut *mut c_char) -> SpStatus {
    guard(|| {
        let m = get(model, "model")?;
        let f = get(features, "features")?;
        if out.is_null() {
            return Err(Failure::null("output pointer"));
        }
        let hyp = m.0.transcribe(&f.0)?;
        *out = CString::new(hyp)
            .map_err(|_| Failure::invalid("transcript contains NUL"))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sp_model_free(model: *mut SpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
