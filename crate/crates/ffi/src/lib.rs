//! C interface to the filter simulator.
//!
//! Configurations and simulations are opaque handles created and released by
//! this library. Every fallible call returns an [`FsStatus`]; on failure the
//! message is available from [`fs_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use filtersim::cli::{load_config, parse_config, trace_csv};
use filtersim::design::{radius_for_catch, DesignError};
use filtersim::engine::{pass_probability, EngineError, Simulation, StopReason};
use filtersim::hydraulics::SolveError;
use filtersim::model::{BlockingLaw, FilterConfig};
use filtersim::sediment::{calibrate_rate_constant, stationary_velocity, CalibrationInput};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidConfig = 4,
    Io = 5,
    Disconnected = 6,
    NotConverged = 7,
    OutOfRange = 8,
    NotFinished = 9,
    Panic = 10,
}

/// Why a run ended; `Running` while it goes on.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStop {
    Running = 0,
    FlowStopped = 1,
    TimeLimit = 2,
    Degenerate = 3,
}

impl From<Option<StopReason>> for FsStop {
    fn from(s: Option<StopReason>) -> Self {
        match s {
            None => FsStop::Running,
            Some(StopReason::FlowStopped) => FsStop::FlowStopped,
            Some(StopReason::TimeLimit) => FsStop::TimeLimit,
            Some(StopReason::Degenerate) => FsStop::Degenerate,
        }
    }
}

/// Filter state at one recorded time.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsSnapshot {
    /// Seconds since the start.
    pub time: f64,
    /// Total flow through the filter, m^3/s.
    pub total_flow: f64,
    pub open: usize,
    pub blocked: usize,
    pub sealed: usize,
    pub caught: usize,
    pub side_sealed: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsMembraneCounts {
    pub open: usize,
    pub blocked: usize,
    pub sealed: usize,
    pub caught: usize,
}

/// Inputs for recovering the rate constant; SI units.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsCalibrationInput {
    pub growth_rate: f64,
    pub c0_mass: f64,
    pub mu0: f64,
    pub mu2: f64,
    pub rho2: f64,
    pub order: u32,
    pub n2: u32,
    pub diffusivity: f64,
    pub radius: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsCalibration {
    pub rate_constant: f64,
    pub c0: f64,
    pub c1: f64,
    pub v_stat: f64,
}

/// Opaque configuration handle.
pub struct FsConfig {
    inner: FilterConfig,
}

/// Opaque simulation handle.
pub struct FsSimulation {
    inner: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn fail(status: FsStatus, msg: impl std::fmt::Display) -> FsStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`FsStatus::Panic`].
fn guard(f: impl FnOnce() -> FsStatus) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(FsStatus::Panic, "internal panic"),
    }
}

fn engine_status(e: &EngineError) -> FsStatus {
    match e {
        EngineError::Config(_) => FsStatus::InvalidConfig,
        EngineError::Disconnected => FsStatus::Disconnected,
        EngineError::Solve(SolveError::Degenerate) => FsStatus::Disconnected,
        EngineError::Solve(SolveError::NotConverged { .. }) => FsStatus::NotConverged,
        EngineError::Sediment(_) => FsStatus::OutOfRange,
    }
}

unsafe fn to_str<'a>(s: *const c_char) -> Result<&'a str, FsStatus> {
    if s.is_null() {
        return Err(fail(FsStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(FsStatus::InvalidUtf8, e))
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a TOML configuration. A schedule file in `r_filter` is not
/// supported here; use [`fs_config_load`].
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_config_parse(toml: *const c_char, out: *mut *mut FsConfig) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return fail(FsStatus::NullPointer, "null output pointer");
        }
        let text = match to_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = match parse_config(text) {
            Ok(c) => c,
            Err(e) => return fail(FsStatus::Parse, e),
        };
        if let Err(e) = config.validate() {
            return fail(FsStatus::InvalidConfig, e);
        }
        *out = Box::into_raw(Box::new(FsConfig { inner: config }));
        FsStatus::Ok
    })
}

/// Reads a configuration file, resolving a relative schedule path.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_config_load(path: *const c_char, out: *mut *mut FsConfig) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return fail(FsStatus::NullPointer, "null output pointer");
        }
        let path = match to_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_config(Path::new(path)) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(FsConfig { inner: config }));
                FsStatus::Ok
            }
            Err(e @ filtersim::cli::LoadError::Io { .. }) => fail(FsStatus::Io, e),
            Err(e @ filtersim::cli::LoadError::Syntax { .. }) => fail(FsStatus::Parse, e),
            Err(e) => fail(FsStatus::InvalidConfig, e),
        }
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_config_free(config: *mut FsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set_seed(config: *mut FsConfig, seed: u64) -> FsStatus {
    match config.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            FsStatus::Ok
        }
        None => fail(FsStatus::NullPointer, "null config"),
    }
}

/// Limits simulated time (s); a non-positive value removes the limit.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set_time_limit(config: *mut FsConfig, seconds: f64) -> FsStatus {
    match config.as_mut() {
        Some(c) => {
            c.inner.time_limit = (seconds > 0.0).then_some(seconds);
            FsStatus::Ok
        }
        None => fail(FsStatus::NullPointer, "null config"),
    }
}

/// Selects the blocking law: 0 simple, 1 corrected.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set_blocking_law(config: *mut FsConfig, law: u32) -> FsStatus {
    let Some(c) = config.as_mut() else {
        return fail(FsStatus::NullPointer, "null config");
    };
    c.inner.blocking_law = match law {
        0 => BlockingLaw::Simple,
        1 => BlockingLaw::Corrected,
        other => return fail(FsStatus::OutOfRange, format!("unknown blocking law {other}")),
    };
    FsStatus::Ok
}

/// Starts a simulation: builds the grid and solves the clean filter.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_new(config: *const FsConfig, out: *mut *mut FsSimulation) -> FsStatus {
    guard(|| {
        let (Some(config), false) = (config.as_ref(), out.is_null()) else {
            return fail(FsStatus::NullPointer, "null argument");
        };
        match Simulation::new(config.inner.clone()) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(FsSimulation { inner: sim }));
                FsStatus::Ok
            }
            Err(e) => fail(engine_status(&e), e),
        }
    })
}

/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_free(sim: *mut FsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one time step.
///
/// # Safety
/// `sim` must be a live handle; `stop` may be null.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_step(sim: *mut FsSimulation, stop: *mut FsStop) -> FsStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(FsStatus::NullPointer, "null simulation");
        };
        match sim.inner.step() {
            Ok(s) => {
                if let Some(stop) = stop.as_mut() {
                    *stop = s.into();
                }
                FsStatus::Ok
            }
            Err(e) => fail(engine_status(&e), e),
        }
    })
}

/// Steps until the run stops.
///
/// # Safety
/// `sim` must be a live handle; `stop` may be null.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_run(sim: *mut FsSimulation, stop: *mut FsStop) -> FsStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(FsStatus::NullPointer, "null simulation");
        };
        loop {
            match sim.inner.step() {
                Ok(None) => continue,
                Ok(Some(s)) => {
                    if let Some(stop) = stop.as_mut() {
                        *stop = Some(s).into();
                    }
                    return FsStatus::Ok;
                }
                Err(e) => return fail(engine_status(&e), e),
            }
        }
    })
}

/// Number of recorded snapshots (the clean state is the first).
///
/// # Safety
/// `sim` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_snapshot_count(sim: *const FsSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.snapshots().len())
}

/// Copies snapshot `index` into `out`.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_snapshot(sim: *const FsSimulation, index: usize, out: *mut FsSnapshot) -> FsStatus {
    let (Some(sim), Some(out)) = (sim.as_ref(), out.as_mut()) else {
        return fail(FsStatus::NullPointer, "null argument");
    };
    let Some(s) = sim.inner.snapshots().get(index) else {
        return fail(FsStatus::OutOfRange, format!("snapshot {index} does not exist"));
    };
    let t = s.totals();
    *out = FsSnapshot {
        time: s.time,
        total_flow: s.total_flow,
        open: t.open,
        blocked: t.blocked,
        sealed: t.sealed,
        caught: t.caught,
        side_sealed: s.side_sealed,
    };
    FsStatus::Ok
}

/// # Safety
/// `sim` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_membrane_count(sim: *const FsSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.state().counts.len())
}

/// Current counts of membrane `index` (0-based, inlet side first).
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_membrane(
    sim: *const FsSimulation,
    index: usize,
    out: *mut FsMembraneCounts,
) -> FsStatus {
    let (Some(sim), Some(out)) = (sim.as_ref(), out.as_mut()) else {
        return fail(FsStatus::NullPointer, "null argument");
    };
    let Some(c) = sim.inner.state().counts.get(index) else {
        return fail(FsStatus::OutOfRange, format!("membrane {index} does not exist"));
    };
    *out = FsMembraneCounts {
        open: c.open,
        blocked: c.blocked,
        sealed: c.sealed,
        caught: c.caught,
    };
    FsStatus::Ok
}

/// Writes the trace CSV of a finished run into a new string; release it
/// with [`fs_string_free`].
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_trace_csv(sim: *const FsSimulation, out: *mut *mut c_char) -> FsStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            return fail(FsStatus::NullPointer, "null argument");
        };
        let Some(trace) = sim.inner.trace() else {
            return fail(FsStatus::NotFinished, "run has not stopped yet");
        };
        *out = CString::new(trace_csv(&trace)).map_or(ptr::null_mut(), CString::into_raw);
        FsStatus::Ok
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Probability that a rod of length `l` passes an aperture of radius `r`;
/// NaN for negative or non-finite input.
#[no_mangle]
pub extern "C" fn fs_pass_probability(r: f64, l: f64) -> f64 {
    if !(r >= 0.0 && l > 0.0 && r.is_finite() && l.is_finite()) {
        return f64::NAN;
    }
    pass_probability(r, l)
}

/// Aperture radius that catches a fraction `catch` of rods of length `l`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_radius_for_catch(catch: f64, l: f64, out: *mut f64) -> FsStatus {
    let Some(out) = out.as_mut() else {
        return fail(FsStatus::NullPointer, "null output pointer");
    };
    match radius_for_catch(catch, l) {
        Ok(r) => {
            *out = r;
            FsStatus::Ok
        }
        Err(e @ (DesignError::CatchOutOfRange(_) | DesignError::BadLength(_))) => fail(FsStatus::OutOfRange, e),
        Err(e) => fail(FsStatus::InvalidConfig, e),
    }
}

/// Recovers the rate constant from a growth rate observed under slow flow.
///
/// # Safety
/// `input` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_calibrate(input: *const FsCalibrationInput, out: *mut FsCalibration) -> FsStatus {
    let (Some(i), Some(out)) = (input.as_ref(), out.as_mut()) else {
        return fail(FsStatus::NullPointer, "null argument");
    };
    let result = calibrate_rate_constant(&CalibrationInput {
        growth_rate: i.growth_rate,
        c0_mass: i.c0_mass,
        dissolved_molar_mass: i.mu0,
        sediment_molar_mass: i.mu2,
        sediment_density: i.rho2,
        order: i.order,
        sediment_per_event: i.n2,
        diffusivity: i.diffusivity,
        radius: i.radius,
    });
    match result {
        Ok(cal) => {
            *out = FsCalibration {
                rate_constant: cal.chemistry.rate_constant,
                c0: cal.c0,
                c1: cal.c1,
                v_stat: stationary_velocity(&cal.chemistry, i.radius, cal.c0),
            };
            FsStatus::Ok
        }
        Err(e) => fail(FsStatus::OutOfRange, e),
    }
}
