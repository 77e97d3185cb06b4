//! C interface.
//!
//! Objects cross the boundary as opaque handles created by `*_new`, `*_read_*`
//! or producer functions and released with the matching `*_free`. Every
//! fallible call returns an [`AbmgcStatus`]; on failure the message is kept
//! per thread and can be copied out with [`abmgc_last_error`]. Matrices are
//! row-major `p x p` with the row as the source agent and the column as the
//! target.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use abmgc::abm::{Mode, System};
use abmgc::experiment::{self, Config, Method, SimulationConfig, SystemKind};
use abmgc::infer::{binarize, GcMatrix};
use abmgc::io::GroundTruth;
use abmgc::metrics::evaluate;
use abmgc::series::{CausalGraph, TrajectorySeries};
use abmgc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbmgcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Parse = 4,
    Io = 5,
    Runtime = 6,
    UndefinedMetric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbmgcSystem {
    Boid = 0,
    Kuramoto = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbmgcMethod {
    Abm = 0,
    AbmNoNav = 1,
    AbmNoTg = 2,
    AbmNoNavNoTg = 3,
    Gvar = 4,
    LinearGc = 5,
    LocalTe = 6,
}

/// Scores of one prediction; undefined entries are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbmgcMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub acc: f64,
    pub ba: f64,
    pub ba_pos: f64,
    pub ba_neg: f64,
}

/// A trajectory or phase series.
pub struct AbmgcSeries(TrajectorySeries);

/// Training, baseline and simulation settings.
pub struct AbmgcConfig(Config);

/// Aggregated GC strengths.
pub struct AbmgcGc(GcMatrix);

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AbmgcStatus {
    match e {
        Error::Length { .. } | Error::Domain(_) | Error::Validation(_) => AbmgcStatus::InvalidArgument,
        Error::Dimension(_) => AbmgcStatus::Dimension,
        Error::Parse { .. } | Error::Json(_) => AbmgcStatus::Parse,
        Error::Io { .. } => AbmgcStatus::Io,
        Error::UndefinedMetric(_) => AbmgcStatus::UndefinedMetric,
        _ => AbmgcStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> AbmgcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AbmgcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            AbmgcStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            AbmgcStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            AbmgcStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &'static str) -> FfiResult<String> {
    let s = get(p, what)?;
    CStr::from_ptr(s).to_str().map(str::to_string).map_err(|_| Failure::Invalid(format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let slot = get_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abmgc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `len > 0`). Returns the size needed including the
/// terminator; 1 means no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn abmgc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Series from positions `[steps][agents][spatial]`; velocities by forward
/// differences.
///
/// # Safety
/// `positions` must hold `steps * agents * spatial` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_from_positions(
    positions: *const f64,
    steps: usize,
    agents: usize,
    spatial: usize,
    dt: f64,
    out: *mut *mut AbmgcSeries,
) -> AbmgcStatus {
    guard(|| {
        let n = steps.checked_mul(agents).and_then(|v| v.checked_mul(spatial)).ok_or(Failure::Invalid("size overflow".into()))?;
        let v = slice(positions, n, "positions")?;
        put(out, AbmgcSeries(TrajectorySeries::from_positions(v, steps, agents, spatial, dt)?))
    })
}

/// Series from unwrapped phases `[steps][agents]`.
///
/// # Safety
/// `phases` must hold `steps * agents` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_from_phases(
    phases: *const f64,
    steps: usize,
    agents: usize,
    dt: f64,
    out: *mut *mut AbmgcSeries,
) -> AbmgcStatus {
    guard(|| {
        let n = steps.checked_mul(agents).ok_or(Failure::Invalid("size overflow".into()))?;
        let v = slice(phases, n, "phases")?;
        put(out, AbmgcSeries(TrajectorySeries::from_phases(v, steps, agents, dt)?))
    })
}

/// Read a trajectory (`frame,agent,x,y[,z]`) or phase (`frame,agent,phase`)
/// CSV sampled every `dt` seconds.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_read_csv(path: *const c_char, dt: f64, out: *mut *mut AbmgcSeries) -> AbmgcStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        put(out, AbmgcSeries(abmgc::io::read_series(&path, dt)?))
    })
}

/// Simulate one trial. `truth` (`agents * agents`, signed relations) and
/// `omega` (`agents`, Kuramoto only) may be null.
///
/// # Safety
/// Non-null buffers must have the sizes above; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_simulate(
    system: AbmgcSystem,
    agents: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut AbmgcSeries,
    truth: *mut i8,
    omega: *mut f64,
) -> AbmgcStatus {
    guard(|| {
        let kind = match system {
            AbmgcSystem::Boid => SystemKind::Boid,
            AbmgcSystem::Kuramoto => SystemKind::Kuramoto,
        };
        let (series, gt) = experiment::simulate_trial(kind, &SimulationConfig { agents, steps }, seed)?;
        if !truth.is_null() {
            let t = slice_mut(truth, agents * agents, "truth")?;
            for (i, row) in gt.graph()?.edges().iter().enumerate() {
                t[i * agents..(i + 1) * agents].copy_from_slice(row);
            }
        }
        if let (false, GroundTruth::Kuramoto { omega: w, .. }) = (omega.is_null(), &gt) {
            slice_mut(omega, agents, "omega")?.copy_from_slice(w);
        }
        put(out, AbmgcSeries(series))
    })
}

/// Number of steps, or 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_steps(series: *const AbmgcSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.steps())
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_agents(series: *const AbmgcSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.agents())
}

/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abmgc_series_free(series: *mut AbmgcSeries) {
    release(series)
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn abmgc_config_new() -> *mut AbmgcConfig {
    Box::into_raw(Box::new(AbmgcConfig(Config::default())))
}

/// Load a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_config_read_toml(path: *const c_char, out: *mut *mut AbmgcConfig) -> AbmgcStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        put(out, AbmgcConfig(Config::load(&path)?))
    })
}

/// Set one numeric setting. Keys: `epochs`, `learning_rate`, `decay`,
/// `lambda`, `beta`, `gamma`, `alpha`, `sigma`, `seed`, `lags`, `hidden`,
/// `batch_size`, `theory_guided` (0 or 1), `mode` (0 full, 1 without
/// navigation, 2 GVAR), `te_bins`.
///
/// # Safety
/// `config` must be a live handle and `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn abmgc_config_set(config: *mut AbmgcConfig, key: *const c_char, value: f64) -> AbmgcStatus {
    guard(|| {
        let c = &mut get_mut(config, "config")?.0;
        let key = string(key, "key")?;
        let count = |v: f64| -> FfiResult<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
                Ok(v as usize)
            } else {
                Err(Failure::Invalid(format!("{key} must be a nonnegative integer")))
            }
        };
        let t = &mut c.train;
        match key.as_str() {
            "epochs" => t.epochs = count(value)?,
            "learning_rate" => t.learning_rate = value,
            "decay" => t.decay = value,
            "lambda" => t.lambda = value,
            "beta" => t.beta = value,
            "gamma" => t.gamma = value,
            "alpha" => t.alpha = value,
            "sigma" => t.sigma = Some(value),
            "seed" => t.seed = count(value)? as u64,
            "lags" => t.lags = Some(count(value)?),
            "hidden" => t.init.hidden = count(value)?,
            "batch_size" => t.batch_size = Some(count(value)?),
            "theory_guided" => t.theory_guided = value != 0.0,
            "mode" => {
                t.mode = match count(value)? {
                    0 => Mode::Full,
                    1 => Mode::NoNavigation,
                    2 => Mode::Gvar,
                    _ => return Err(Failure::Invalid("mode must be 0, 1 or 2".into())),
                }
            }
            "te_bins" => c.baselines.te_bins = count(value)?,
            _ => return Err(Failure::Invalid(format!("unknown key {key}"))),
        }
        c.validate()?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abmgc_config_free(config: *mut AbmgcConfig) {
    release(config)
}

/// Run a method on one series. Phase series need the intrinsic frequencies
/// in `omega` (`agents` values); pass null for trajectories.
///
/// # Safety
/// Handles must be live; `omega` null or sized as above; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_run(
    method: AbmgcMethod,
    series: *const AbmgcSeries,
    omega: *const f64,
    config: *const AbmgcConfig,
    out: *mut *mut AbmgcGc,
) -> AbmgcStatus {
    guard(|| {
        let s = &get(series, "series")?.0;
        let c = &get(config, "config")?.0;
        let system = match s.kind() {
            abmgc::series::SeriesKind::Phase => System::Kuramoto { omega: slice(omega, s.agents(), "omega")?.to_vec() },
            abmgc::series::SeriesKind::Positional => System::Boid,
        };
        let method = match method {
            AbmgcMethod::Abm => Method::Abm,
            AbmgcMethod::AbmNoNav => Method::AbmNoNav,
            AbmgcMethod::AbmNoTg => Method::AbmNoTg,
            AbmgcMethod::AbmNoNavNoTg => Method::AbmNoNavNoTg,
            AbmgcMethod::Gvar => Method::Gvar,
            AbmgcMethod::LinearGc => Method::LinearGc,
            AbmgcMethod::LocalTe => Method::LocalTe,
        };
        let r = experiment::run_method(method, &system, s, c)?;
        put(out, AbmgcGc(r.gc))
    })
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `gc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abmgc_gc_agents(gc: *const AbmgcGc) -> usize {
    gc.as_ref().map_or(0, |g| g.0.agents())
}

/// Copy the signed strengths into `out` (`len` must be `p * p`).
///
/// # Safety
/// `gc` must be live and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn abmgc_gc_strengths(gc: *const AbmgcGc, out: *mut f64, len: usize) -> AbmgcStatus {
    guard(|| {
        let g = &get(gc, "gc")?.0;
        let p = g.agents();
        if len != p * p {
            return Err(Error::Dimension(format!("buffer holds {len} values, need {}", p * p)).into());
        }
        let o = slice_mut(out, len, "out")?;
        for (i, row) in g.strengths.iter().enumerate() {
            o[i * p..(i + 1) * p].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Thresholded signed graph into `out` (`len` must be `p * p`).
///
/// # Safety
/// `gc` must be live and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn abmgc_gc_binarize(gc: *const AbmgcGc, out: *mut i8, len: usize) -> AbmgcStatus {
    guard(|| {
        let g = &get(gc, "gc")?.0;
        let p = g.agents();
        if len != p * p {
            return Err(Error::Dimension(format!("buffer holds {len} values, need {}", p * p)).into());
        }
        let o = slice_mut(out, len, "out")?;
        for (i, row) in binarize(g)?.edges().iter().enumerate() {
            o[i * p..(i + 1) * p].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Score against a `p x p` signed truth. With `is_signed` false the sign
/// metrics are NaN.
///
/// # Safety
/// `gc` must be live, `truth` hold `p * p` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn abmgc_evaluate(
    gc: *const AbmgcGc,
    truth: *const i8,
    p: usize,
    is_signed: bool,
    out: *mut AbmgcMetrics,
) -> AbmgcStatus {
    guard(|| {
        let g = &get(gc, "gc")?.0;
        let t = slice(truth, p * p, "truth")?;
        let graph = CausalGraph::new(t.chunks(p.max(1)).map(<[i8]>::to_vec).collect())?;
        let r = evaluate(g, &binarize(g)?, &graph, is_signed)?;
        let o = get_mut(out, "out")?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *o = AbmgcMetrics {
            auroc: nan(r.auroc),
            auprc: nan(r.auprc),
            acc: r.acc,
            ba: r.ba,
            ba_pos: nan(r.ba_pos),
            ba_neg: nan(r.ba_neg),
        };
        Ok(())
    })
}

/// # Safety
/// `gc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abmgc_gc_free(gc: *mut AbmgcGc) {
    release(gc)
}
