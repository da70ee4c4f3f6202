//! C ABI over the `evad` library.
//!
//! All objects cross the boundary as opaque pointers that the caller owns and
//! releases with the matching `*_free` function. Every fallible function
//! returns an [`EvadStatus`]; on failure a description is available from
//! [`evad_last_error`] on the same thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use evad::events::{parse_event_csv, Event, EventStream, Polarity};
use evad::gan::GanParams;
use evad::msnet::MsNet;
use evad::oracle::verify_math;
use evad::pipeline::{self, Models, PipelineConfig, ScoreSeries, Sequence};
use evad::tensor::read_checkpoint;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    ShapeMismatch = 5,
    Domain = 6,
    Panic = 7,
}

/// Validated event stream.
pub struct EvadStream(EventStream);

/// Memory-surface network, generator and the configuration they were
/// trained with.
pub struct EvadModel {
    models: Models,
    config: PipelineConfig,
}

/// Per-frame anomaly scores, optionally with labels.
pub struct EvadScores(ScoreSeries);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

struct Failure(EvadStatus, String);

impl Failure {
    fn new(status: EvadStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EvadStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EvadStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            EvadStatus::NullPointer,
            format!("{what} is NULL"),
        ));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(EvadStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn read(path: &PathBuf) -> Result<Vec<u8>, Failure> {
    std::fs::read(path)
        .map_err(|e| Failure::new(EvadStatus::Io, format!("{}: {e}", path.display())))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(EvadStatus::NullPointer, "output pointer is NULL"))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(EvadStatus::NullPointer, format!("{what} is NULL")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn evad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `t_us,x,y,p` CSV file for a `width x height` sensor.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evad_stream_load_csv(
    path: *const c_char,
    width: u32,
    height: u32,
    out: *mut *mut EvadStream,
) -> EvadStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let path = path_arg(path, "path")?;
        let text = String::from_utf8(read(&path)?)
            .map_err(|_| Failure::new(EvadStatus::Parse, "event file is not UTF-8"))?;
        let stream = parse_event_csv(&text, width, height)
            .map_err(|e| Failure::new(EvadStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(EvadStream(stream)));
        Ok(())
    })
}

/// Builds a stream from parallel arrays of length `n`. Polarities are +1 or
/// -1; events need not be sorted.
///
/// # Safety
/// Each array must hold `n` readable elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_stream_from_arrays(
    width: u32,
    height: u32,
    t_us: *const u64,
    x: *const u16,
    y: *const u16,
    p: *const i8,
    n: usize,
    out: *mut *mut EvadStream,
) -> EvadStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let mut events = Vec::with_capacity(n);
        if n > 0 {
            if t_us.is_null() || x.is_null() || y.is_null() || p.is_null() {
                return Err(Failure::new(EvadStatus::NullPointer, "event array is NULL"));
            }
            let (t, xs, ys, ps) = (
                std::slice::from_raw_parts(t_us, n),
                std::slice::from_raw_parts(x, n),
                std::slice::from_raw_parts(y, n),
                std::slice::from_raw_parts(p, n),
            );
            for i in 0..n {
                let pol = Polarity::from_sign(i64::from(ps[i])).ok_or_else(|| {
                    Failure::new(
                        EvadStatus::InvalidArgument,
                        format!("event {i}: polarity {} is not +-1", ps[i]),
                    )
                })?;
                events.push(Event::new(xs[i], ys[i], t[i], pol));
            }
        }
        let stream = EventStream::new(width, height, events)
            .map_err(|e| Failure::new(EvadStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(EvadStream(stream)));
        Ok(())
    })
}

/// Number of events in the stream.
///
/// # Safety
/// `stream` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_stream_len(stream: *const EvadStream, out: *mut usize) -> EvadStatus {
    guard(|| {
        *out_ptr(out)? = in_ref(stream, "stream")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `stream` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn evad_stream_free(stream: *mut EvadStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Loads both checkpoints. `config_path` may be NULL for the defaults; it
/// must match the configuration used for training.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evad_model_load(
    config_path: *const c_char,
    ms_ckpt: *const c_char,
    gan_ckpt: *const c_char,
    out: *mut *mut EvadModel,
) -> EvadStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let config = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            let bytes = read(&path_arg(config_path, "config_path")?)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Failure::new(EvadStatus::Parse, "config is not UTF-8"))?;
            PipelineConfig::parse(&text).map_err(|e| Failure::new(EvadStatus::Parse, e))?
        };
        let load = |p: *const c_char, what: &str| -> Result<_, Failure> {
            let bytes = read(&path_arg(p, what)?)?;
            read_checkpoint(&bytes[..]).map_err(|e| Failure::new(EvadStatus::Parse, e))
        };
        let ms = MsNet::from_params(&load(ms_ckpt, "ms_ckpt")?)
            .map_err(|e| Failure::new(EvadStatus::ShapeMismatch, e))?;
        let gan = GanParams::from_param_set(
            &load(gan_ckpt, "gan_ckpt")?,
            config.height as usize,
            config.width as usize,
        )
        .map_err(|e| Failure::new(EvadStatus::ShapeMismatch, e))?;
        *out = Box::into_raw(Box::new(EvadModel {
            models: Models { ms, gan },
            config,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn evad_model_free(model: *mut EvadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores every window in `[t_start_us, t_end_us)` of the stream.
///
/// # Safety
/// Handles must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_score(
    model: *const EvadModel,
    stream: *const EvadStream,
    t_start_us: u64,
    t_end_us: u64,
    out: *mut *mut EvadScores,
) -> EvadStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let model = in_ref(model, "model")?;
        let stream = &in_ref(stream, "stream")?.0;
        let seq = Sequence {
            stream,
            t_start: t_start_us,
            t_end: t_end_us,
        };
        let series = pipeline::score_sequence(&model.models, seq, &model.config).map_err(|e| {
            let status = match e {
                pipeline::PipelineError::ShapeMismatch { .. } => EvadStatus::ShapeMismatch,
                _ => EvadStatus::Domain,
            };
            Failure::new(status, e)
        })?;
        *out = Box::into_raw(Box::new(EvadScores(series)));
        Ok(())
    })
}

/// Number of scored frames.
///
/// # Safety
/// `scores` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_len(scores: *const EvadScores, out: *mut usize) -> EvadStatus {
    guard(|| {
        *out_ptr(out)? = in_ref(scores, "scores")?.0.scores.len();
        Ok(())
    })
}

/// Copies up to `cap` scores into `buf` and stores the count in `written`.
///
/// # Safety
/// `buf` must hold `cap` writable doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_copy(
    scores: *const EvadScores,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> EvadStatus {
    guard(|| {
        let written = out_ptr(written)?;
        let s = &in_ref(scores, "scores")?.0.scores;
        let n = s.len().min(cap);
        if n > 0 {
            if buf.is_null() {
                return Err(Failure::new(EvadStatus::NullPointer, "buf is NULL"));
            }
            std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&s[..n]);
        }
        *written = n;
        Ok(())
    })
}

/// Start time of the first scored frame and the frame spacing, microseconds.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_timing(
    scores: *const EvadScores,
    t0_us: *mut u64,
    frame_dt_us: *mut u64,
) -> EvadStatus {
    guard(|| {
        let s = &in_ref(scores, "scores")?.0;
        *out_ptr(t0_us)? = s.t0;
        *out_ptr(frame_dt_us)? = s.frame_dt;
        Ok(())
    })
}

/// Attaches 0/1 frame labels; `n` must equal the number of frames.
///
/// # Safety
/// `labels` must hold `n` readable bytes; `scores` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_set_labels(
    scores: *mut EvadScores,
    labels: *const u8,
    n: usize,
) -> EvadStatus {
    guard(|| {
        let s = scores
            .as_mut()
            .ok_or_else(|| Failure::new(EvadStatus::NullPointer, "scores is NULL"))?;
        if n != s.0.scores.len() {
            return Err(Failure::new(
                EvadStatus::ShapeMismatch,
                format!("{n} labels for {} frames", s.0.scores.len()),
            ));
        }
        let l = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(labels, n)
        };
        if l.iter().any(|&v| v > 1) {
            return Err(Failure::new(
                EvadStatus::InvalidArgument,
                "labels must be 0 or 1",
            ));
        }
        s.0.labels = Some(l.to_vec());
        Ok(())
    })
}

/// Frame-level ROC AUC and best F1. Requires labels with both classes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_evaluate(
    scores: *const EvadScores,
    auc: *mut f64,
    best_f1: *mut f64,
) -> EvadStatus {
    guard(|| {
        let s = &in_ref(scores, "scores")?.0;
        let m = pipeline::evaluate(s).map_err(|e| Failure::new(EvadStatus::Domain, e))?;
        *out_ptr(auc)? = m.auc;
        *out_ptr(best_f1)? = m.best_f1;
        Ok(())
    })
}

/// # Safety
/// `scores` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn evad_scores_free(scores: *mut EvadScores) {
    if !scores.is_null() {
        drop(Box::from_raw(scores));
    }
}

/// Runs the discrete objective checks; `all_passed` receives 1 or 0.
///
/// # Safety
/// `all_passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn evad_verify_math(
    instances: usize,
    seed: u64,
    all_passed: *mut i32,
) -> EvadStatus {
    guard(|| {
        let out = out_ptr(all_passed)?;
        *out = i32::from(verify_math(instances, seed).all_passed());
        Ok(())
    })
}
