//! C interface to the sparselab dictionaries, solvers and support
//! classifier.
//!
//! Every function returns an [`SlStatus`]. On failure the message is kept
//! per thread and can be copied out with [`sl_last_error_message`].
//! Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sparselab::model::{Dictionary, Observation, RecoveryResult};
use sparselab::netlab::{load_checkpoint, parse_checkpoint, Network};
use sparselab::solvers::{self, SolverConfig};
use sparselab::{dictgen, rip, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    ShapeMismatch = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Numerical = 6,
    BudgetExceeded = 7,
    MissingCheckpoint = 8,
    Panic = 9,
}

/// Opaque dictionary handle.
pub struct SlDictionary(Dictionary);

/// Opaque network handle.
pub struct SlNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::ShapeMismatch(_) => SlStatus::ShapeMismatch,
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::InvalidPhase(_) | Error::OverlappingGates(_) => {
            SlStatus::InvalidArgument
        }
        Error::Io(_) => SlStatus::Io,
        Error::Parse { .. } => SlStatus::Parse,
        Error::BudgetExceeded { .. } | Error::EnumerationTooLarge(_) => SlStatus::BudgetExceeded,
        Error::MissingCheckpoint(_) => SlStatus::MissingCheckpoint,
        _ => SlStatus::Numerical,
    }
}

struct Failure(SlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: SlStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SlStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| fail(SlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SlStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes, excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn sl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Gaussian dictionary with unit-norm columns.
#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_gaussian(n: usize, m: usize, seed: u64, out: *mut *mut SlDictionary) -> SlStatus {
    guard(|| {
        if n == 0 || m == 0 {
            return Err(fail(SlStatus::InvalidArgument, "dimensions must be positive"));
        }
        store(out, SlDictionary(dictgen::gaussian_unit_columns(n, m, seed)))
    })
}

/// Dictionary with a geometrically decaying spectrum and unit columns.
#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_decaying(n: usize, m: usize, seed: u64, out: *mut *mut SlDictionary) -> SlStatus {
    guard(|| {
        if n == 0 || m == 0 {
            return Err(fail(SlStatus::InvalidArgument, "dimensions must be positive"));
        }
        store(out, SlDictionary(dictgen::decaying_spectrum(n, m, seed)))
    })
}

/// Wraps a caller-supplied row-major `n × m` matrix. The data is copied.
#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_from_rows(
    data: *const f64,
    n: usize,
    m: usize,
    out: *mut *mut SlDictionary,
) -> SlStatus {
    guard(|| {
        let values = slice(data, n * m, "data")?;
        if n == 0 || m == 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(fail(SlStatus::InvalidArgument, "matrix must be non-empty and finite"));
        }
        store(out, SlDictionary(Dictionary::new(DMatrix::from_row_slice(n, m, values))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_shape(dict: *const SlDictionary, n: *mut usize, m: *mut usize) -> SlStatus {
    guard(|| {
        let d = &handle(dict, "dictionary")?.0;
        if n.is_null() || m.is_null() {
            return Err(fail(SlStatus::NullPointer, "shape outputs are null"));
        }
        *n = d.rows();
        *m = d.cols();
        Ok(())
    })
}

/// Copies the dictionary into `out` in row-major order; `len` must be
/// `n * m`.
#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_copy(dict: *const SlDictionary, out: *mut f64, len: usize) -> SlStatus {
    guard(|| {
        let d = &handle(dict, "dictionary")?.0;
        if len != d.rows() * d.cols() {
            return Err(fail(SlStatus::ShapeMismatch, format!("buffer holds {len}, need {}", d.rows() * d.cols())));
        }
        let buf = slice_mut(out, len, "out")?;
        for i in 0..d.rows() {
            for j in 0..d.cols() {
                buf[i * d.cols() + j] = d.matrix()[(i, j)];
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sl_dictionary_free(dict: *mut SlDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Exhaustive restricted isometry constant `δ_k`.
#[no_mangle]
pub unsafe extern "C" fn sl_delta_k(dict: *const SlDictionary, k: usize, delta: *mut f64) -> SlStatus {
    guard(|| {
        let d = &handle(dict, "dictionary")?.0;
        if delta.is_null() {
            return Err(fail(SlStatus::NullPointer, "delta is null"));
        }
        *delta = rip::delta_k_exhaustive(d, k)?.delta;
        Ok(())
    })
}

/// Solver limits. Zero fields take the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SlSolverOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// IHT step size; zero selects `1 / ‖Φ‖₂²`.
    pub step_size: f64,
}

fn config(opts: Option<&SlSolverOptions>, k: usize) -> SolverConfig {
    let mut c = SolverConfig::new(k);
    if let Some(o) = opts {
        if o.max_iterations > 0 {
            c = c.with_max_iterations(o.max_iterations);
        }
        if o.tolerance > 0.0 {
            c = c.with_tolerance(o.tolerance);
        }
        if o.step_size > 0.0 {
            c = c.with_step_size(o.step_size);
        }
    }
    c
}

unsafe fn solve(
    dict: *const SlDictionary,
    y: *const f64,
    y_len: usize,
    x_out: *mut f64,
    x_len: usize,
    iterations: *mut usize,
    run: impl FnOnce(&Dictionary, &Observation) -> Result<RecoveryResult, Failure>,
) -> SlStatus {
    guard(|| {
        let d = &handle(dict, "dictionary")?.0;
        if y_len != d.rows() || x_len != d.cols() {
            return Err(fail(
                SlStatus::ShapeMismatch,
                format!("dictionary is {}x{}, got y of {y_len} and x of {x_len}", d.rows(), d.cols()),
            ));
        }
        let y = Observation::new(DVector::from_column_slice(slice(y, y_len, "y")?));
        let out = slice_mut(x_out, x_len, "x_out")?;
        let r = run(d, &y)?;
        out.copy_from_slice(r.estimate.values().as_slice());
        if !iterations.is_null() {
            *iterations = r.iterations_used;
        }
        Ok(())
    })
}

/// Iterative hard thresholding to sparsity `k`. `options` may be null;
/// `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn sl_iht(
    dict: *const SlDictionary,
    y: *const f64,
    y_len: usize,
    k: usize,
    options: *const SlSolverOptions,
    x_out: *mut f64,
    x_len: usize,
    iterations: *mut usize,
) -> SlStatus {
    let opts = options.as_ref().copied();
    solve(dict, y, y_len, x_out, x_len, iterations, |d, y| {
        let mut c = config(opts.as_ref(), k);
        if opts.map_or(true, |o| o.step_size <= 0.0) {
            c = c.with_step_size(1.0 / d.spectral_norm().powi(2));
        }
        c.validate()?;
        Ok(solvers::iht(y, d, &c))
    })
}

/// ISTA with penalty `lambda`.
#[no_mangle]
pub unsafe extern "C" fn sl_ista(
    dict: *const SlDictionary,
    y: *const f64,
    y_len: usize,
    lambda: f64,
    options: *const SlSolverOptions,
    x_out: *mut f64,
    x_len: usize,
    iterations: *mut usize,
) -> SlStatus {
    let opts = options.as_ref().copied();
    solve(dict, y, y_len, x_out, x_len, iterations, |d, y| {
        if !(lambda >= 0.0) {
            return Err(fail(SlStatus::InvalidArgument, "lambda must be non-negative"));
        }
        let c = config(opts.as_ref(), 1);
        c.validate()?;
        Ok(solvers::ista(y, d, lambda, &c))
    })
}

/// Orthogonal matching pursuit with `k` atoms.
#[no_mangle]
pub unsafe extern "C" fn sl_omp(
    dict: *const SlDictionary,
    y: *const f64,
    y_len: usize,
    k: usize,
    x_out: *mut f64,
    x_len: usize,
    iterations: *mut usize,
) -> SlStatus {
    solve(dict, y, y_len, x_out, x_len, iterations, |d, y| Ok(solvers::omp(y, d, k)?))
}

/// Loads a network checkpoint file. `path` is a NUL-terminated UTF-8
/// string.
#[no_mangle]
pub unsafe extern "C" fn sl_network_load(path: *const c_char, out: *mut *mut SlNetwork) -> SlStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(SlStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SlStatus::InvalidArgument, "path is not UTF-8"))?;
        store(out, SlNetwork(load_checkpoint(Path::new(path))?))
    })
}

/// Parses a checkpoint held in memory (`len` bytes of UTF-8 JSON).
#[no_mangle]
pub unsafe extern "C" fn sl_network_parse(text: *const u8, len: usize, out: *mut *mut SlNetwork) -> SlStatus {
    guard(|| {
        let bytes = slice(text, len, "text")?;
        let text = std::str::from_utf8(bytes).map_err(|_| fail(SlStatus::Parse, "checkpoint is not UTF-8"))?;
        store(out, SlNetwork(parse_checkpoint(text)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sl_network_shape(net: *const SlNetwork, input_dim: *mut usize, output_dim: *mut usize) -> SlStatus {
    guard(|| {
        let c = handle(net, "network")?.0.config();
        if input_dim.is_null() || output_dim.is_null() {
            return Err(fail(SlStatus::NullPointer, "shape outputs are null"));
        }
        *input_dim = c.input_dim;
        *output_dim = c.output_dim;
        Ok(())
    })
}

/// Per-atom support probabilities for one observation, in inference mode.
#[no_mangle]
pub unsafe extern "C" fn sl_network_predict(
    net: *const SlNetwork,
    y: *const f64,
    y_len: usize,
    probs_out: *mut f64,
    probs_len: usize,
) -> SlStatus {
    guard(|| {
        let net = &handle(net, "network")?.0;
        let c = net.config();
        if y_len != c.input_dim || probs_len != c.output_dim {
            return Err(fail(
                SlStatus::ShapeMismatch,
                format!("network maps {} -> {}, got {y_len} -> {probs_len}", c.input_dim, c.output_dim),
            ));
        }
        let y = DVector::from_column_slice(slice(y, y_len, "y")?);
        let out = slice_mut(probs_out, probs_len, "probs_out")?;
        out.copy_from_slice(net.predict(&y)?.values().as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sl_network_free(net: *mut SlNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
