//! C ABI over the sardino engine.
//!
//! Every function returns a [`SardinoStatus`]; on failure a message is readable through
//! [`sardino_last_error`] on the same thread. Handles are opaque and must be released
//! with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sardino::ensemble::{classify_many, decide_with_classes, EnsembleVerdict};
use sardino::hypernet::{generate_ensemble, load_model, replay_ensemble, HyperNetParams, SeedRecord, SEED_RECORD_BYTES};
use sardino::pipeline::split_seed_for;
use sardino::planner::{compute_deadline, plan_size, LatencyPredictor, PredictorModel, TelemetrySnapshot};
use sardino::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SardinoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    BadConfig = 5,
    BadTelemetry = 6,
    NoBudget = 7,
    ShapeMismatch = 8,
    Panic = 9,
    Internal = 10,
}

/// A loaded HyperNet.
pub struct SardinoModel {
    hypernet: HyperNetParams<f32>,
}

/// A loaded latency predictor (tree or linear).
pub struct SardinoPredictor {
    model: PredictorModel,
}

/// Ensemble decision for one input.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SardinoVerdict {
    /// Majority label, lowest index on ties; reported for flagged inputs too.
    pub label: u32,
    /// 1 when the input goes to the operator.
    pub flagged: u8,
    pub consistency: f64,
    pub n: u16,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SardinoStatus {
    match e {
        Error::SpecMismatch(_) | Error::BadLabel { .. } => SardinoStatus::ShapeMismatch,
        Error::BadArgument(_) => SardinoStatus::InvalidArgument,
        Error::BadTelemetry(_) => SardinoStatus::BadTelemetry,
        Error::NoBudget { .. } => SardinoStatus::NoBudget,
        Error::FormatError(_) | Error::Json(_) | Error::Csv(_) => SardinoStatus::Format,
        Error::BadConfig(_) => SardinoStatus::BadConfig,
        Error::Io(_) => SardinoStatus::Io,
        Error::NonFinite(_) | Error::TrainingDiverged { .. } => SardinoStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SardinoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SardinoStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SardinoStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SardinoStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SardinoStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn to_c(v: &EnsembleVerdict, n: u16) -> SardinoVerdict {
    SardinoVerdict { label: v.label as u32, flagged: v.is_flagged() as u8, consistency: v.consistency, n }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sardino_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn sardino_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sardino_model_load(path: *const c_char, out: *mut *mut SardinoModel) -> SardinoStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let m = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SardinoModel { hypernet: m.hypernet }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `sardino_model_load` and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sardino_model_free(model: *mut SardinoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Floats per input image, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sardino_model_input_len(model: *const SardinoModel) -> usize {
    model.as_ref().map_or(0, |m| m.hypernet.spec.target.input.len())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sardino_model_classes(model: *const SardinoModel) -> usize {
    model.as_ref().map_or(0, |m| m.hypernet.spec.target.classes)
}

/// Generate frame `frame_id`'s ensemble of `n` members from `base_seed` and decide
/// `count` crops (`count · input_len` floats in `images`) at threshold `t_s`.
/// `out` receives `count` verdicts; `record_out`, if not NULL, the 26-byte seed
/// record that replays this ensemble.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sardino_classify_frame(
    model: *const SardinoModel,
    frame_id: u64,
    base_seed: u64,
    n: u16,
    t_s: f64,
    images: *const f32,
    count: usize,
    out: *mut SardinoVerdict,
    record_out: *mut u8,
) -> SardinoStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = &m.hypernet.spec.target;
        let x = slice_arg(images, count * spec.input.len(), "images")?;
        let (members, record) = generate_ensemble(&m.hypernet, frame_id, split_seed_for(base_seed, frame_id), n as usize)?;
        let votes = classify_many(spec, &members, x, count)?;
        let out = std::slice::from_raw_parts_mut(out, count);
        for (o, v) in out.iter_mut().zip(&votes) {
            *o = to_c(&decide_with_classes(v, spec.classes, t_s)?, n);
        }
        if !record_out.is_null() {
            ptr::copy_nonoverlapping(record.to_bytes().as_ptr(), record_out, SEED_RECORD_BYTES);
        }
        Ok(())
    })
}

/// Regenerate the ensemble described by a 26-byte seed record and decide one image.
///
/// # Safety
/// `record` must point to 26 bytes and `image` to `input_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sardino_replay_verdict(
    model: *const SardinoModel,
    record: *const u8,
    t_s: f64,
    image: *const f32,
    out: *mut SardinoVerdict,
) -> SardinoStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let bytes: &[u8; SEED_RECORD_BYTES] = slice_arg(record, SEED_RECORD_BYTES, "record")?.try_into().expect("fixed length");
        let rec = SeedRecord::from_bytes(bytes);
        let spec = &m.hypernet.spec.target;
        let x = slice_arg(image, spec.input.len(), "image")?;
        let members = replay_ensemble(&m.hypernet, &rec)?;
        let votes = classify_many(spec, &members, x, 1)?;
        *out = to_c(&decide_with_classes(&votes[0], spec.classes, t_s)?, rec.n);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sardino_predictor_load(path: *const c_char, out: *mut *mut SardinoPredictor) -> SardinoStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = PredictorModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SardinoPredictor { model }));
        Ok(())
    })
}

/// # Safety
/// `predictor` must come from `sardino_predictor_load`. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sardino_predictor_free(predictor: *mut SardinoPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

unsafe fn snapshot(util: *const f64, power: *const f64, len: usize) -> Result<TelemetrySnapshot, Fail> {
    let u = slice_arg(util, len, "utilization")?.to_vec();
    let p = slice_arg(power, len, "power")?.to_vec();
    Ok(TelemetrySnapshot::new(u, p)?)
}

/// Predicted latency (ms) of an `n`-member ensemble. Telemetry traces are `len`
/// samples each (10), oldest first; `power` is read even if the model ignores it.
///
/// # Safety
/// `util` and `power` must hold `len` doubles each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sardino_predict_latency(
    predictor: *const SardinoPredictor,
    n: u32,
    util: *const f64,
    power: *const f64,
    len: usize,
    out: *mut f64,
) -> SardinoStatus {
    guard(|| {
        let p = handle(predictor, "predictor")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = p.model.predict(n as usize, &snapshot(util, power, len)?)?;
        Ok(())
    })
}

/// Largest `N` in `[n_min, n_max]` predicted to meet `deadline_ms`. When none does,
/// `*n_out = n_min` and `*met_out = 0`.
///
/// # Safety
/// As for `sardino_predict_latency`; `n_out` and `met_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sardino_plan_size(
    predictor: *const SardinoPredictor,
    util: *const f64,
    power: *const f64,
    len: usize,
    deadline_ms: f64,
    n_min: u32,
    n_max: u32,
    n_out: *mut u32,
    met_out: *mut u8,
) -> SardinoStatus {
    guard(|| {
        let p = handle(predictor, "predictor")?;
        if n_out.is_null() || met_out.is_null() {
            return Err(Fail::Null("n_out/met_out"));
        }
        let (n, met) = plan_size(&p.model, &snapshot(util, power, len)?, deadline_ms, n_min as usize, n_max as usize)?;
        *n_out = n as u32;
        *met_out = met as u8;
        Ok(())
    })
}

/// Per-crop deadline `(1000/fps − t_d) / k`; `NO_BUDGET` when detection uses the period.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sardino_compute_deadline(fps: f64, t_d_ms: f64, k: u32, out: *mut f64) -> SardinoStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = compute_deadline(fps, t_d_ms, k as usize)?;
        Ok(())
    })
}
