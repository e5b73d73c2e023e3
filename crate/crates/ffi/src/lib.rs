//! C ABI over the shiftseq engine.
//!
//! Every fallible call returns a [`ShiftseqStatus`]; on failure the message is
//! available from [`shiftseq_last_error`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftseq::activity::{ActivityType, DayGrid, ObservationMask, Split, SLOTS_PER_DAY};
use shiftseq::corpus::{load_corpus, save_corpus, Corpus};
use shiftseq::eval::{evaluate, EvalOptions};
use shiftseq::model::{period_of, Decoding, Model};
use shiftseq::numerics::ParamStore;
use shiftseq::synthgen::{generate_corpus, Preset, SynthConfig};
use shiftseq::train::load_checkpoint;
use shiftseq::Error;

/// Number of 15-minute slots in a day.
pub const SHIFTSEQ_SLOTS: usize = 96;
const _: () = assert!(SHIFTSEQ_SLOTS == SLOTS_PER_DAY);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftseqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Checkpoint = 6,
    Numerics = 7,
    Diverged = 8,
    Usage = 9,
    Panic = 10,
}

impl ShiftseqStatus {
    fn of(err: &Error) -> Self {
        match err {
            Error::Io { .. } => ShiftseqStatus::Io,
            Error::Parse { .. } | Error::Record(_) | Error::Chain(_) => ShiftseqStatus::Parse,
            Error::Config(_) => ShiftseqStatus::Config,
            Error::Checkpoint(_) => ShiftseqStatus::Checkpoint,
            Error::Numerics(_) => ShiftseqStatus::Numerics,
            Error::Diverged { .. } => ShiftseqStatus::Diverged,
            Error::Usage(_) => ShiftseqStatus::Usage,
        }
    }
}

/// Opaque corpus handle.
pub struct ShiftseqCorpus(Corpus);

/// Opaque handle to a trained model and its parameters.
pub struct ShiftseqModel {
    model: Model,
    params: ParamStore<f32>,
}

/// Divergences between reference and generated distributions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShiftseqEvalReport {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    pub activity_type: f64,
    pub work_start: f64,
    pub work_end: f64,
    pub average: f64,
    pub pairs: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ShiftseqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ShiftseqStatus::of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(ShiftseqStatus::NullArgument, format!("{name} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(ShiftseqStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ShiftseqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ShiftseqStatus::Ok,
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
            ShiftseqStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn out_slots<'a>(p: *mut u8, name: &str) -> Result<&'a mut [u8], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, SLOTS_PER_DAY))
}

fn write_mask(mask: &ObservationMask, out: &mut [u8]) {
    for (o, &m) in out.iter_mut().zip(&mask.0) {
        *o = m as u8;
    }
}

fn write_day(grid: &DayGrid, out: &mut [u8]) {
    for (o, slot) in out.iter_mut().zip(grid.slots()) {
        *o = slot.map_or(0, ActivityType::code);
    }
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn shiftseq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a JSON-lines corpus.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_load(
    path: *const c_char,
    out: *mut *mut ShiftseqCorpus,
) -> ShiftseqStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let corpus = load_corpus(path)?;
        *out = Box::into_raw(Box::new(ShiftseqCorpus(corpus)));
        Ok(())
    })
}

/// Draws `n` synthetic pairs from a preset ("shift_only" or "population").
///
/// # Safety
/// `preset` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_synth(
    n: usize,
    preset: *const c_char,
    seed: u64,
    out: *mut *mut ShiftseqCorpus,
) -> ShiftseqStatus {
    guard(|| {
        let preset = Preset::parse(str_arg(preset, "preset")?)?;
        let out = out_arg(out, "out")?;
        let corpus = generate_corpus(n, &SynthConfig::preset(preset), seed)?;
        *out = Box::into_raw(Box::new(ShiftseqCorpus(corpus)));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_save(
    corpus: *const ShiftseqCorpus,
    path: *const c_char,
) -> ShiftseqStatus {
    guard(|| {
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        save_corpus(&corpus.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of pairs, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_len(corpus: *const ShiftseqCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Copies pair `index` into four caller buffers of [`SHIFTSEQ_SLOTS`] bytes.
/// Days hold activity codes 1..=15 with 0 for unobserved slots; masks hold 0/1.
///
/// # Safety
/// Every buffer must hold at least [`SHIFTSEQ_SLOTS`] bytes.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_pair(
    corpus: *const ShiftseqCorpus,
    index: usize,
    day1: *mut u8,
    mask1: *mut u8,
    day2: *mut u8,
    mask2: *mut u8,
) -> ShiftseqStatus {
    guard(|| {
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let pair = corpus
            .0
            .pairs
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range {}", corpus.0.len())))?;
        let d1 = out_slots(day1, "day1")?;
        let m1 = out_slots(mask1, "mask1")?;
        let d2 = out_slots(day2, "day2")?;
        let m2 = out_slots(mask2, "mask2")?;
        write_day(&pair.day1, d1);
        write_day(&pair.day2, d2);
        write_mask(&pair.mask1, m1);
        write_mask(&pair.mask2, m2);
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_corpus_free(corpus: *mut ShiftseqCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_model_load(
    path: *const c_char,
    out: *mut *mut ShiftseqModel,
) -> ShiftseqStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let state = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(ShiftseqModel {
            model: state.model,
            params: state.params,
        }));
        Ok(())
    })
}

/// Generates day 2 from day 1.
///
/// `day1` holds codes 1..=15 (0 = unobserved) and `mask1` 0/1 flags, both
/// [`SHIFTSEQ_SLOTS`] long; `out` receives codes 1..=15. A `temperature` of
/// 0 or less decodes greedily.
///
/// # Safety
/// All buffers must hold at least [`SHIFTSEQ_SLOTS`] bytes.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_model_generate(
    model: *const ShiftseqModel,
    day1: *const u8,
    mask1: *const u8,
    temperature: f64,
    seed: u64,
    out: *mut u8,
) -> ShiftseqStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let codes = slice_arg(day1, SLOTS_PER_DAY, "day1")?;
        let flags = slice_arg(mask1, SLOTS_PER_DAY, "mask1")?;
        let out = out_slots(out, "out")?;
        let mut grid = DayGrid::unobserved();
        let mut mask = ObservationMask::empty();
        for t in 0..SLOTS_PER_DAY {
            mask.0[t] = flags[t] != 0;
            grid.0[t] = match (codes[t], mask.0[t]) {
                (0, false) => None,
                (c, true) if c != 0 => Some(ActivityType::from_code(c)?),
                (c, m) => {
                    return Err(invalid(format!(
                        "slot {t}: code {c} inconsistent with mask {}",
                        m as u8
                    )))
                }
            };
        }
        let decoding = if temperature > 0.0 {
            Decoding::Temperature(temperature)
        } else if temperature.is_nan() {
            return Err(invalid("temperature is NaN"));
        } else {
            Decoding::Greedy
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let day2 = model
            .model
            .generate(&model.params, &grid, &mask, decoding, &mut rng)?;
        write_day(&day2, out);
        Ok(())
    })
}

/// Greedy evaluation of a model on the corpus test split, scored on the
/// reference's observed slots.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_model_evaluate(
    model: *const ShiftseqModel,
    corpus: *const ShiftseqCorpus,
    seed: u64,
    out: *mut ShiftseqEvalReport,
) -> ShiftseqStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let corpus = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let out = out_arg(out, "out")?;
        let test = corpus.0.split_owned(Split::Test);
        let options = EvalOptions {
            seed,
            ..EvalOptions::default()
        };
        let r = evaluate(&model.model, &model.params, &test, &options)?.report;
        *out = ShiftseqEvalReport {
            start: r.start,
            end: r.end,
            duration: r.duration,
            activity_type: r.activity_type,
            work_start: r.work_start,
            work_end: r.work_end,
            average: r.average,
            pairs: r.pairs,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_model_free(model: *mut ShiftseqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Base-2 Jensen-Shannon divergence between two histograms of equal length.
///
/// # Safety
/// `p` and `q` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_jsd(
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> ShiftseqStatus {
    guard(|| {
        let p = slice_arg(p, len, "p")?;
        let q = slice_arg(q, len, "q")?;
        let out = out_arg(out, "out")?;
        if p.iter().chain(q).any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid("histograms must be finite and non-negative"));
        }
        *out = shiftseq::loss::jsd(p, q);
        Ok(())
    })
}

/// Period of a slot: 0 evening start, 1 overnight, 2 morning, 3 other.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn shiftseq_period_of(slot: usize, out: *mut u8) -> ShiftseqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = shiftseq::activity::TimeSlot::new(slot)?;
        *out = period_of(t) as u8;
        Ok(())
    })
}
