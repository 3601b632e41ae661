//! C ABI over `force-effect`.
//!
//! Handles are opaque pointers created by `*_load` and released by `*_free`. Every
//! fallible function returns an [`FeStatus`]; on failure a message is stored in a
//! thread-local slot readable with [`fe_last_error_message`]. Token sequences are written
//! as class indices (`0..=16` directions, `17` stop) into caller-provided buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use force_effect::cli::model_file::{LoadedModel, ModelFile, ModelHeader};
use force_effect::dataset::Dataset;
use force_effect::eval::edit_distance;
use force_effect::net;
use force_effect::quantize::{build_vocabulary, quantize_velocity, Token, VelocitySequence};
use force_effect::scene::Vec3;
use force_effect::train;
use force_effect::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// Loaded dataset.
pub struct FeDataset {
    inner: Dataset,
}

/// Loaded model of any kind.
pub struct FeModel {
    header: ModelHeader,
    model: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

struct Failure(FeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => FeStatus::Io,
            Error::Format(_) | Error::Json(_) => FeStatus::Format,
            Error::NumericAbort { .. } => FeStatus::Numeric,
            Error::InvalidToken(_) | Error::InvalidSequence(_) | Error::Config(_) => {
                FeStatus::InvalidArgument
            }
            _ => FeStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside force-effect");
            FeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(FeStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_tokens(
    seq: &VelocitySequence,
    out: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> Result<(), Failure> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = seq.len();
    if capacity < seq.len() {
        return Err(Failure(
            FeStatus::BufferTooSmall,
            format!("sequence needs {} slots, buffer has {capacity}", seq.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out_tokens"));
    }
    for (i, t) in seq.tokens().iter().enumerate() {
        *out.add(i) = t.index() as u8;
    }
    Ok(())
}

unsafe fn read_tokens(p: *const u8, len: usize) -> Result<VelocitySequence, Failure> {
    if p.is_null() && len > 0 {
        return Err(null("token buffer"));
    }
    let raw = if len == 0 { &[][..] } else { std::slice::from_raw_parts(p, len) };
    let tokens = raw
        .iter()
        .map(|&b| Token::new(b as usize))
        .collect::<force_effect::Result<Vec<_>>>()?;
    Ok(VelocitySequence::new(tokens)?)
}

fn record_index(ds: &Dataset, index: usize) -> Result<&force_effect::dataset::Record, Failure> {
    ds.records.get(index).ok_or_else(|| {
        Failure(
            FeStatus::OutOfRange,
            format!("record index {index} out of range (dataset has {})", ds.len()),
        )
    })
}

/// Message of the last failed call on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn fe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fe_dataset_load(path: *const c_char, out: *mut *mut FeDataset) -> FeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = Dataset::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FeDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`fe_dataset_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fe_dataset_free(ds: *mut FeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle and `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fe_dataset_len(ds: *const FeDataset, out_len: *mut usize) -> FeStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        *out_len.as_mut().ok_or_else(|| null("out_len"))? = ds.inner.len();
        Ok(())
    })
}

/// Stored ground-truth label of record `index`.
///
/// # Safety
/// `ds` must be a live handle; `out_tokens` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn fe_dataset_label(
    ds: *const FeDataset,
    index: usize,
    out_tokens: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> FeStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let rec = record_index(&ds.inner, index)?;
        write_tokens(&rec.label, out_tokens, capacity, out_len)
    })
}

/// Re-simulates record `index` and writes the extracted label.
///
/// # Safety
/// As [`fe_dataset_label`].
#[no_mangle]
pub unsafe extern "C" fn fe_simulate_record(
    ds: *const FeDataset,
    index: usize,
    out_tokens: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> FeStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let rec = record_index(&ds.inner, index)?;
        let label = rec.resimulate(&ds.inner.header.config.sim)?;
        write_tokens(&label, out_tokens, capacity, out_len)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fe_model_load(path: *const c_char, out: *mut *mut FeModel) -> FeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file = ModelFile::load(&path_arg(path)?)?;
        let header = file.header.clone();
        let model = file.into_model()?;
        *out = Box::into_raw(Box::new(FeModel { header, model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`fe_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fe_model_free(model: *mut FeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicted sequence for record `index` of `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles; `out_tokens` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn fe_model_predict(
    model: *const FeModel,
    ds: *const FeDataset,
    index: usize,
    out_tokens: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> FeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let rec = record_index(&ds.inner, index)?;
        let sample = rec.encode(&m.header.encode)?;
        let seq = match &m.model {
            LoadedModel::Sequence(p) => net::decode_greedy(&net::forward(p, &sample)?.0),
            LoadedModel::Regression(p) => {
                train::predict_regression(p, &sample, &build_vocabulary(), m.header.stop_speed)?
            }
            LoadedModel::Nn(p, idx) => train::nn_predict(idx, p, &sample)?,
        };
        write_tokens(&seq, out_tokens, capacity, out_len)
    })
}

/// Token for velocity `(x, y, z)`: nearest direction, or stop below `stop_speed`.
///
/// # Safety
/// `out_token` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fe_quantize_velocity(
    x: f64,
    y: f64,
    z: f64,
    stop_speed: f64,
    out_token: *mut u8,
) -> FeStatus {
    guard(|| {
        let out = out_token.as_mut().ok_or_else(|| null("out_token"))?;
        if !(x.is_finite() && y.is_finite() && z.is_finite() && stop_speed >= 0.0) {
            return Err(Failure(FeStatus::InvalidArgument, "non-finite velocity or negative stop speed".into()));
        }
        *out = quantize_velocity(Vec3::new(x, y, z), &build_vocabulary(), stop_speed).index() as u8;
        Ok(())
    })
}

/// Levenshtein distance between two valid token sequences.
///
/// # Safety
/// `a` and `b` must point to `a_len` and `b_len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fe_edit_distance(
    a: *const u8,
    a_len: usize,
    b: *const u8,
    b_len: usize,
    out: *mut usize,
) -> FeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = edit_distance(&read_tokens(a, a_len)?, &read_tokens(b, b_len)?);
        Ok(())
    })
}
