//! C ABI over the demix solver.
//!
//! Objects are opaque handles created by `demix_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`DemixStatus`];
//! on failure a description is available from [`demix_last_error`] on the
//! same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use demix::{io, solver, DemixError, Dimensions, ProblemInstance, RunOutput, SolverConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemixStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    Diverged = 6,
    Numerical = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// A generated or loaded problem instance.
pub struct DemixInstance {
    inner: ProblemInstance,
}

/// The result of a solver run: final estimate plus recorded trajectory.
pub struct DemixRun {
    inner: RunOutput,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DemixDims {
    pub s: usize,
    pub m: usize,
    pub k: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemixSolverConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Relative-error stopping threshold; 0 disables early stopping.
    pub stop_tol: f64,
    pub record_every: usize,
}

/// One trajectory record. Fields that need ground truth are NaN without it.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemixRecord {
    pub iter: usize,
    pub loss: f64,
    pub relative_error: f64,
    pub dist: f64,
    pub inc_a: f64,
    pub inc_b: f64,
    pub max_alignment_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &DemixError) -> DemixStatus {
    match e {
        DemixError::Dimension(_) | DemixError::Shape(_) | DemixError::TooLarge { .. } => DemixStatus::Dimension,
        DemixError::InvalidParameter(_) | DemixError::MissingTruth(_) | DemixError::MissingAlignment { .. } => {
            DemixStatus::InvalidArgument
        }
        DemixError::IndexOutOfRange { .. } => DemixStatus::OutOfRange,
        DemixError::Io(_) => DemixStatus::Io,
        DemixError::Format(_) | DemixError::Json(_) => DemixStatus::Format,
        DemixError::Diverged { .. } => DemixStatus::Diverged,
        DemixError::InfiniteSnr
        | DemixError::ZeroVector(_)
        | DemixError::DegenerateIterate { .. }
        | DemixError::NoConvergence => DemixStatus::Numerical,
    }
}

fn fail(status: DemixStatus, msg: impl Into<String>) -> DemixStatus {
    set_error(msg);
    status
}

fn from_error(e: DemixError) -> DemixStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, converting panics into [`DemixStatus::Panic`].
fn guard(f: impl FnOnce() -> DemixStatus) -> DemixStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(DemixStatus::Panic, "internal panic"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, DemixStatus> {
    if path.is_null() {
        return Err(fail(DemixStatus::NullPointer, "path is null"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| fail(DemixStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

fn box_out<T>(out: *mut *mut T, value: T) {
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Generates an instance with ground truth from a master seed.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_generate(
    s: usize,
    m: usize,
    k: usize,
    kappa: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut DemixInstance,
) -> DemixStatus {
    guard(|| {
        if out.is_null() {
            return fail(DemixStatus::NullPointer, "out is null");
        }
        unsafe { *out = ptr::null_mut() };
        let inst = Dimensions::new(s, m, k).and_then(|d| ProblemInstance::generate(d, kappa, sigma, seed));
        match inst {
            Ok(inner) => {
                box_out(out, DemixInstance { inner });
                DemixStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads an instance file written by [`demix_instance_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_load(path: *const c_char, out: *mut *mut DemixInstance) -> DemixStatus {
    guard(|| {
        if out.is_null() {
            return fail(DemixStatus::NullPointer, "out is null");
        }
        unsafe { *out = ptr::null_mut() };
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::load_instance(path) {
            Ok(inner) => {
                box_out(out, DemixInstance { inner });
                DemixStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the binary instance file and its JSON sidecar.
///
/// # Safety
/// `inst` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_save(inst: *const DemixInstance, path: *const c_char) -> DemixStatus {
    guard(|| {
        let Some(inst) = (unsafe { inst.as_ref() }) else {
            return fail(DemixStatus::NullPointer, "instance is null");
        };
        let path = match unsafe { path_arg(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::save_instance(&inst.inner, path) {
            Ok(()) => DemixStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_free(inst: *mut DemixInstance) {
    if !inst.is_null() {
        drop(unsafe { Box::from_raw(inst) });
    }
}

/// # Safety
/// `inst` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_dims(inst: *const DemixInstance, out: *mut DemixDims) -> DemixStatus {
    guard(|| {
        let (Some(inst), false) = (unsafe { inst.as_ref() }, out.is_null()) else {
            return fail(DemixStatus::NullPointer, "null argument");
        };
        let d = inst.inner.dims;
        unsafe { *out = DemixDims { s: d.s, m: d.m, k: d.k } };
        DemixStatus::Ok
    })
}

/// Realized SNR in dB; fails with `Numerical` for noiseless instances.
///
/// # Safety
/// `inst` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn demix_instance_snr_db(inst: *const DemixInstance, out: *mut f64) -> DemixStatus {
    guard(|| {
        let (Some(inst), false) = (unsafe { inst.as_ref() }, out.is_null()) else {
            return fail(DemixStatus::NullPointer, "null argument");
        };
        match inst.inner.snr_db() {
            Ok(v) => {
                unsafe { *out = v };
                DemixStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Spectral initialization followed by Wirtinger-flow iterations.
///
/// When the iteration fails after it started (for example `Diverged`), the
/// error status is returned and `*out` still receives the partial run.
///
/// # Safety
/// `inst` and `cfg` must be valid pointers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn demix_solve(
    inst: *const DemixInstance,
    cfg: *const DemixSolverConfig,
    out: *mut *mut DemixRun,
) -> DemixStatus {
    guard(|| {
        let (Some(inst), Some(cfg), false) = (unsafe { inst.as_ref() }, unsafe { cfg.as_ref() }, out.is_null()) else {
            return fail(DemixStatus::NullPointer, "null argument");
        };
        unsafe { *out = ptr::null_mut() };
        let config = SolverConfig {
            eta: cfg.eta,
            max_iters: cfg.max_iters,
            stop_tol: cfg.stop_tol,
            record_every: cfg.record_every,
            seed: inst.inner.seed,
        };
        let (run, err) = solver::run_partial(&inst.inner, &config);
        if let Some(inner) = run {
            box_out(out, DemixRun { inner });
        }
        match err {
            Some(e) => from_error(e),
            None => DemixStatus::Ok,
        }
    })
}

/// Number of trajectory records; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn demix_run_len(run: *const DemixRun) -> usize {
    unsafe { run.as_ref() }.map_or(0, |r| r.inner.trajectory.len())
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn demix_run_record(run: *const DemixRun, index: usize, out: *mut DemixRecord) -> DemixStatus {
    guard(|| {
        let (Some(run), false) = (unsafe { run.as_ref() }, out.is_null()) else {
            return fail(DemixStatus::NullPointer, "null argument");
        };
        let Some(r) = run.inner.trajectory.get(index) else {
            return fail(
                DemixStatus::OutOfRange,
                format!("record {index} out of range for length {}", run.inner.trajectory.len()),
            );
        };
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        unsafe {
            *out = DemixRecord {
                iter: r.iter,
                loss: r.loss,
                relative_error: nan(r.relative_error),
                dist: nan(r.dist),
                inc_a: nan(r.incoherence_a),
                inc_b: nan(r.incoherence_b),
                max_alignment_ratio: nan(r.max_alignment_ratio()),
            }
        };
        DemixStatus::Ok
    })
}

/// Copies the final `h_i` and `x_i` as interleaved `re, im` pairs; each
/// buffer must hold `2 K` doubles.
///
/// # Safety
/// `run` must be a live handle; `h_out` and `x_out` must each point to `2 K`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn demix_run_estimate(
    run: *const DemixRun,
    source: usize,
    h_out: *mut f64,
    x_out: *mut f64,
) -> DemixStatus {
    guard(|| {
        let (Some(run), false, false) = (unsafe { run.as_ref() }, h_out.is_null(), x_out.is_null()) else {
            return fail(DemixStatus::NullPointer, "null argument");
        };
        let sources = &run.inner.state.sources;
        let Some(pair) = sources.get(source) else {
            return fail(DemixStatus::OutOfRange, format!("source {source} out of range for s = {}", sources.len()));
        };
        for (v, dst) in [(&pair.h, h_out), (&pair.x, x_out)] {
            let buf = unsafe { std::slice::from_raw_parts_mut(dst, 2 * v.len()) };
            for (n, z) in v.iter().enumerate() {
                buf[2 * n] = z.re;
                buf[2 * n + 1] = z.im;
            }
        }
        DemixStatus::Ok
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn demix_run_free(run: *mut DemixRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn demix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn demix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
