//! C interface to the `massflow` library.
//!
//! Every fallible function returns an [`MfStatus`] and writes its result
//! through an out-pointer. After a non-`OK` status, [`mf_last_error`] holds a
//! message for the calling thread. Handles are opaque and must be released
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use massflow::ldp::rate_function;
use massflow::observables::{pushforward, wasserstein2, Atom, AtomicMeasure};
use massflow::{simulate_path, DriftPath, Error, ExperimentConfig, FlowPath};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    GridMismatch = 4,
    NonFinite = 5,
    Io = 6,
    Parse = 7,
    OutOfRange = 8,
    Panic = 99,
}

/// Experiment configuration handle.
pub struct MfConfig(ExperimentConfig);

/// Simulated path handle.
pub struct MfPath(FlowPath);

/// Finitely supported probability measure handle.
pub struct MfMeasure(AtomicMeasure);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig(_) => MfStatus::InvalidConfig,
            Error::InvalidArgument(_) => MfStatus::InvalidArgument,
            Error::GridMismatch(_) => MfStatus::GridMismatch,
            Error::NonFinite(_) => MfStatus::NonFinite,
            Error::Io { .. } => MfStatus::Io,
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => MfStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MfStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MfStatus::Ok
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
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MfStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn as_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn state_index(path: &FlowPath, j: usize) -> Result<usize, Failure> {
    if j >= path.states().len() {
        return Err(Failure(
            MfStatus::OutOfRange,
            format!("time index {j} out of range 0..{}", path.states().len()),
        ));
    }
    Ok(j)
}

/// Message for the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with `n` particles on `[0, t_max]` with step `dt` and
/// the library defaults for everything else.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mf_config_new(
    n: usize,
    t_max: f64,
    dt: f64,
    out: *mut *mut MfConfig,
) -> MfStatus {
    guard(|| {
        let config = ExperimentConfig::new(n, t_max, dt);
        config.validate()?;
        write_out(out, Box::into_raw(Box::new(MfConfig(config))))
    })
}

/// Read a `key = value` configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_config_from_file(
    path: *const c_char,
    out: *mut *mut MfConfig,
) -> MfStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let (config, _) = ExperimentConfig::from_file(Path::new(path))?;
        config.validate()?;
        write_out(out, Box::into_raw(Box::new(MfConfig(config))))
    })
}

/// Set one field by its configuration-file key (`n`, `T`, `dt`, `epsilon`,
/// `beta`, `replicas`, `seed`, `convention`). The result is validated; on
/// failure the configuration is left unchanged.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mf_config_set(
    config: *mut MfConfig,
    key: *const c_char,
    value: *const c_char,
) -> MfStatus {
    guard(|| {
        let config = as_mut(config, "config")?;
        let mut next = config.0.clone();
        next.set(as_str(key, "key")?, as_str(value, "value")?)?;
        next.validate()?;
        config.0 = next;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_config_free(config: *mut MfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Simulate one path from stream `seed`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_simulate(
    config: *const MfConfig,
    seed: u64,
    out: *mut *mut MfPath,
) -> MfStatus {
    guard(|| {
        let config = as_ref(config, "config")?;
        let path = simulate_path(&config.0, seed)?;
        write_out(out, Box::into_raw(Box::new(MfPath(path))))
    })
}

/// # Safety
/// `path` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_path_free(path: *mut MfPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of particles.
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_path_particles(path: *const MfPath, out: *mut usize) -> MfStatus {
    guard(|| write_out(out, as_ref(path, "path")?.0.n()))
}

/// Number of recorded times (steps + 1).
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_path_times(path: *const MfPath, out: *mut usize) -> MfStatus {
    guard(|| write_out(out, as_ref(path, "path")?.0.states().len()))
}

/// Time of record `j`.
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_path_time(path: *const MfPath, j: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        let path = &as_ref(path, "path")?.0;
        write_out(out, path.times()[state_index(path, j)?])
    })
}

/// Number of clusters at record `j`.
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_path_cluster_count(
    path: *const MfPath,
    j: usize,
    out: *mut usize,
) -> MfStatus {
    guard(|| {
        let path = &as_ref(path, "path")?.0;
        write_out(out, path.state(state_index(path, j)?).block_count())
    })
}

/// Center of mass at record `j`.
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_path_center_of_mass(
    path: *const MfPath,
    j: usize,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let path = &as_ref(path, "path")?.0;
        write_out(out, path.state(state_index(path, j)?).center_of_mass())
    })
}

/// Copy the positions of all particles at record `j` into `buf`, which must
/// hold exactly as many entries as there are particles.
///
/// # Safety
/// `path` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_path_positions(
    path: *const MfPath,
    j: usize,
    buf: *mut f64,
    len: usize,
) -> MfStatus {
    guard(|| {
        let path = &as_ref(path, "path")?.0;
        let state = path.state(state_index(path, j)?);
        if len != state.n() {
            return Err(Failure(
                MfStatus::InvalidArgument,
                format!("buffer holds {len} entries for {} particles", state.n()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for b in state.blocks() {
            out[b.first - 1..b.last].fill(b.position);
        }
        Ok(())
    })
}

/// Measure from `len` atoms. Weights must be non-negative and sum to one.
///
/// # Safety
/// `positions` and `weights` must each point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_measure_new(
    positions: *const f64,
    weights: *const f64,
    len: usize,
    out: *mut *mut MfMeasure,
) -> MfStatus {
    guard(|| {
        let positions = as_slice(positions, len, "positions")?;
        let weights = as_slice(weights, len, "weights")?;
        let atoms = positions
            .iter()
            .zip(weights)
            .map(|(&position, &weight)| Atom { position, weight })
            .collect();
        let measure = AtomicMeasure::new(atoms)?;
        write_out(out, Box::into_raw(Box::new(MfMeasure(measure))))
    })
}

/// Empirical measure of the particles at record `j`.
///
/// # Safety
/// `path` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_measure_from_path(
    path: *const MfPath,
    j: usize,
    out: *mut *mut MfMeasure,
) -> MfStatus {
    guard(|| {
        let path = &as_ref(path, "path")?.0;
        let measure = pushforward(path.state(state_index(path, j)?));
        write_out(out, Box::into_raw(Box::new(MfMeasure(measure))))
    })
}

/// # Safety
/// `measure` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_measure_free(measure: *mut MfMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// Quadratic Wasserstein distance between two measures on the line.
///
/// # Safety
/// `a` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_wasserstein2(
    a: *const MfMeasure,
    b: *const MfMeasure,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let d = wasserstein2(&as_ref(a, "a")?.0, &as_ref(b, "b")?.0);
        write_out(out, d)
    })
}

/// Action of the straight line from the initial particle positions of
/// `config` to `target` (one entry per particle) over the configured grid.
/// Lines that cross give infinity.
///
/// # Safety
/// `config` must be a live handle, `target` must point to `len` readable
/// doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_rate_straight_line(
    config: *const MfConfig,
    target: *const f64,
    len: usize,
    out: *mut f64,
) -> MfStatus {
    guard(|| {
        let config = &as_ref(config, "config")?.0;
        let target = as_slice(target, len, "target")?;
        let phi = DriftPath::straight_line(&config.labels(), &config.grid()?, target)?;
        write_out(out, rate_function(&phi))
    })
}
