//! C interface to `dlvkl`.
//!
//! Models live behind the opaque [`DlvklModel`] handle. Every fallible call
//! returns a [`DlvklStatus`]; on failure a message is available from
//! [`dlvkl_last_error`] until the next failing call on the same thread.
//! Matrices are row-major `double` arrays. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dlvkl::cli::{exit_code, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE};
use dlvkl::likelihood::Predictive;
use dlvkl::model::{Model, ModelConfig, Task, Variant};
use dlvkl::rng::{stream, Stream};
use dlvkl::train::{fit, TrainSchedule};
use dlvkl::{Error, Matrix};

/// Result of an FFI call. The first codes match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlvklStatus {
    Ok = 0,
    /// Bad settings, unknown keys or a malformed model file.
    Config = 1,
    /// Bad shapes, labels or files.
    Data = 2,
    /// Non-finite loss or gradient, failed factorization.
    Numerical = 3,
    /// A required pointer argument was NULL.
    NullPointer = 4,
    /// The library panicked; the handle involved should be freed.
    Panic = 5,
}

/// Opaque model handle.
pub struct DlvklModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DlvklStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlvklStatus::Ok,
        Ok(Err(Failure::Null(arg))) => {
            set_last_error(format!("null pointer passed for '{arg}'"));
            DlvklStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            match exit_code(&e) {
                EXIT_USAGE => DlvklStatus::Config,
                EXIT_DATA => DlvklStatus::Data,
                EXIT_NUMERICAL => DlvklStatus::Numerical,
                _ => DlvklStatus::Config,
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DlvklStatus::Panic
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Failure {
    Failure::Lib(Error::Config {
        field: field.into(),
        message: message.into(),
    })
}

unsafe fn text<'a>(p: *const c_char, arg: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(arg));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| config_error(arg, "not valid UTF-8"))
}

/// Copies an `rows×cols` row-major array. A NULL pointer is accepted only
/// for an empty matrix.
unsafe fn matrix(p: *const f64, rows: usize, cols: usize, arg: &'static str) -> Result<Matrix, Failure> {
    let len = rows.checked_mul(cols).ok_or_else(|| config_error(arg, "size overflows"))?;
    if len == 0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    if p.is_null() {
        return Err(Failure::Null(arg));
    }
    Ok(Matrix::from_vec(rows, cols, std::slice::from_raw_parts(p, len).to_vec())?)
}

unsafe fn handle<'a>(p: *const DlvklModel) -> Result<&'a DlvklModel, Failure> {
    p.as_ref().ok_or(Failure::Null("model"))
}

unsafe fn handle_mut<'a>(p: *mut DlvklModel) -> Result<&'a mut DlvklModel, Failure> {
    p.as_mut().ok_or(Failure::Null("model"))
}

/// `key = value` lines; `#` starts a comment.
fn parse_settings(s: &str) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Failure::Lib(Error::Parse {
            line: i + 1,
            message: "expected key = value".into(),
        }))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

fn encoder_columns(c: &ModelConfig) -> usize {
    c.input_dim()
}

fn output_columns(c: &ModelConfig) -> usize {
    c.task.likelihood_kind().classes().unwrap_or(c.d_y)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlvkl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn dlvkl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a model for `n` training rows.
///
/// `settings` holds `key = value` lines with the model keys of the CLI
/// (`variant`, `task`, `prior`, `beta`, `m`, `seed`, ...); it may be empty.
/// `x` is `n×d_x`; for the `unsupervised` task pass `d_x = 0` and the
/// `n×d_y` outputs in `x` instead, as they feed the encoder.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `settings` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_new(
    settings: *const c_char,
    x: *const f64,
    n: usize,
    d_x: usize,
    d_y: usize,
    out: *mut *mut DlvklModel,
) -> DlvklStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let mut pairs = parse_settings(text(settings, "settings")?)?;
        let take = |pairs: &mut Vec<(String, String)>, key: &str| {
            pairs.iter().position(|(k, _)| k == key).map(|i| pairs.remove(i).1)
        };
        let variant = Variant::parse(take(&mut pairs, "variant").as_deref().unwrap_or("dlvkl-nsde"))?;
        let task = Task::parse(take(&mut pairs, "task").as_deref().unwrap_or("regression"))?;
        if let Some((k, _)) = pairs.iter().find(|(k, _)| k == "d_x" || k == "d_y") {
            return Err(config_error(k, "given by the function arguments"));
        }
        let config = ModelConfig::new(variant, task, d_x, d_y).with_overrides(&pairs)?;
        let input = matrix(x, n, encoder_columns(&config), "x")?;
        let model = Model::init(config, &input)?;
        *out = Box::into_raw(Box::new(DlvklModel { model }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_free(model: *mut DlvklModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Encoder input columns and prediction columns (outputs, or classes).
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_dims(
    model: *const DlvklModel,
    input_cols: *mut usize,
    output_cols: *mut usize,
) -> DlvklStatus {
    guard(|| {
        let h = handle(model)?;
        if input_cols.is_null() || output_cols.is_null() {
            return Err(Failure::Null("dims"));
        }
        *input_cols = encoder_columns(&h.model.config);
        *output_cols = output_columns(&h.model.config);
        Ok(())
    })
}

/// Runs Adam on all parameters. `x` is `n×d_x` (the encoder input for
/// unsupervised models, which ignore `y`), `y` is `n×d_y` targets or one
/// label column. On failure the model keeps its previous parameters.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `final_elbo` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_fit(
    model: *mut DlvklModel,
    x: *const f64,
    y: *const f64,
    n: usize,
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    final_elbo: *mut f64,
) -> DlvklStatus {
    guard(|| {
        let h = handle_mut(model)?;
        let (input, y) = batch(&h.model, x, y, n)?;
        let sched = TrainSchedule::new(iterations, batch_size, learning_rate, seed);
        let fitted = fit(h.model.clone(), &input, &y, &sched).map_err(|a| Failure::Lib(a.error))?;
        h.model = fitted.model;
        if !final_elbo.is_null() {
            *final_elbo = fitted.trace.last().map_or(f64::NAN, |t| t.elbo);
        }
        Ok(())
    })
}

unsafe fn batch(model: &Model, x: *const f64, y: *const f64, n: usize) -> Result<(Matrix, Matrix), Failure> {
    let c = &model.config;
    let y_cols = if c.task.is_classification() { 1 } else { c.d_y };
    let input = matrix(x, n, encoder_columns(c), "x")?;
    let targets = if c.task == Task::Unsupervised {
        input.clone()
    } else {
        matrix(y, n, y_cols, "y")?
    };
    Ok((input, targets))
}

/// Full-data ELBO with latent noise drawn from `seed`.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_elbo(
    model: *const DlvklModel,
    x: *const f64,
    y: *const f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> DlvklStatus {
    guard(|| {
        let h = handle(model)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let (input, y) = batch(&h.model, x, y, n)?;
        let noise = h.model.draw_noise(&mut stream(seed, Stream::Noise), n);
        *out = h.model.elbo(&input, &y, &noise, n)?;
        Ok(())
    })
}

/// Predicts `n` rows with `draws` latent samples. `mean` receives
/// `n×output_cols` predictive means, or class probabilities for
/// classification. `var` receives predictive variances for Gaussian
/// outputs and may be NULL; it is left untouched for classification.
///
/// # Safety
/// `x` must hold `n×input_cols` values and `mean`/`var` room for
/// `n×output_cols`.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_predict(
    model: *const DlvklModel,
    x: *const f64,
    n: usize,
    draws: usize,
    seed: u64,
    mean: *mut f64,
    var: *mut f64,
) -> DlvklStatus {
    guard(|| {
        let h = handle(model)?;
        if mean.is_null() {
            return Err(Failure::Null("mean"));
        }
        let input = matrix(x, n, encoder_columns(&h.model.config), "x")?;
        let pred = h.model.predict(&input, draws, &mut stream(seed, Stream::Predict))?;
        let write = |src: &Matrix, dst: *mut f64| {
            std::ptr::copy_nonoverlapping(src.as_slice().as_ptr(), dst, src.len());
        };
        match &pred.summary {
            Predictive::Gaussian { mean: m, var: v } => {
                write(m, mean);
                if !var.is_null() {
                    write(v, var);
                }
            }
            Predictive::Classes { probs } => write(probs, mean),
        }
        Ok(())
    })
}

/// Writes the model in the library's text format.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_save(model: *const DlvklModel, path: *const c_char) -> DlvklStatus {
    guard(|| {
        let h = handle(model)?;
        h.model.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Reads a model written by [`dlvkl_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlvkl_model_load(path: *const c_char, out: *mut *mut DlvklModel) -> DlvklStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = Model::load(&PathBuf::from(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(DlvklModel { model }));
        Ok(())
    })
}
