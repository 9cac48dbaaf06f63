//! C ABI over the waveform optimizer and the capacity harness.
//!
//! Every entry point returns an [`OtfsStatus`]; on failure the message is kept
//! per thread and read back with [`otfs_last_error_message`]. Sessions are
//! opaque and must be released with [`otfs_session_free`]. No function
//! unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use otfs_isac::experiments::region::{normalized, run_starts};
use otfs_isac::experiments::{run_capacity_bound, with_eta};
use otfs_isac::optimizer::peak_energy_fraction;
use otfs_isac::{Error, OptimizerConfig, RunConfig, SensingConstants, Setup};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtfsPreset {
    /// 4 x 64 grid of the capacity study.
    Table2 = 0,
    /// 8 x 16 grid of the waveform study.
    Table3 = 1,
}

/// Opaque run state: configuration, geometry and lazily built sensing data.
pub struct OtfsSession {
    cfg: RunConfig,
    setup: Setup,
    sensing: OnceLock<(SensingConstants, OptimizerConfig)>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OtfsDesignSummary {
    pub eta: f64,
    pub objective: f64,
    pub sinr: f64,
    pub isl: f64,
    pub p_d: f64,
    pub peak_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Capacity lower bounds in bits per transmitted sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OtfsCapacity {
    pub snr_db: f64,
    pub otfs_matrix: f64,
    pub otfs_scalar: f64,
    pub ofdm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OtfsStatus {
    match e {
        Error::Dimension { .. } | Error::InvalidParameter { .. } | Error::Layout { .. } | Error::Index { .. } => {
            OtfsStatus::InvalidArgument
        }
        Error::Infeasible(_) => OtfsStatus::Infeasible,
        Error::Numerical(_) => OtfsStatus::Numerical,
        Error::Cache(_) | Error::Output(_) => OtfsStatus::Io,
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (OtfsStatus, String)>) -> OtfsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OtfsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            OtfsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (OtfsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (OtfsStatus, String) {
    (OtfsStatus::NullPointer, format!("`{what}` is null"))
}

fn session_from(cfg: RunConfig) -> Result<Box<OtfsSession>, (OtfsStatus, String)> {
    cfg.validate().map_err(lib)?;
    let setup = Setup::new(&cfg).map_err(lib)?;
    Ok(Box::new(OtfsSession {
        cfg,
        setup,
        sensing: OnceLock::new(),
    }))
}

impl OtfsSession {
    fn sensing(&self) -> Result<&(SensingConstants, OptimizerConfig), Error> {
        if let Some(s) = self.sensing.get() {
            return Ok(s);
        }
        let consts = self.setup.sensing(&self.cfg)?;
        let opt = normalized(
            &self.setup.problem(&consts),
            &self.cfg.optimizer,
            &self.cfg.experiment.p0_grid,
        )?;
        Ok(self.sensing.get_or_init(|| (consts, opt)))
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn otfs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bytes needed for the last error message including the nul; 0 if none.
#[no_mangle]
pub extern "C" fn otfs_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn otfs_last_error_message(buf: *mut c_char, len: usize) -> OtfsStatus {
    if buf.is_null() {
        return OtfsStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&b"\0"[..], |c| c.as_bytes_with_nul());
        if bytes.len() > len {
            return OtfsStatus::BufferTooSmall;
        }
        // SAFETY: caller guarantees `len` writable bytes and bytes.len() <= len.
        unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len()) };
        OtfsStatus::Ok
    })
}

/// Creates a session from a built-in preset, one of the [`OtfsPreset`] values.
/// Taken as an integer so an out-of-range value is an error, not UB.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_new_preset(preset: u32, out: *mut *mut OtfsSession) -> OtfsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = match preset {
            p if p == OtfsPreset::Table2 as u32 => RunConfig::table2(),
            p if p == OtfsPreset::Table3 as u32 => RunConfig::table3(),
            p => return Err((OtfsStatus::InvalidArgument, format!("unknown preset {p}"))),
        };
        let s = session_from(cfg)?;
        // SAFETY: checked non-null; caller guarantees validity.
        unsafe { *out = Box::into_raw(s) };
        Ok(())
    })
}

/// Creates a session from TOML configuration text.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_new_toml(toml: *const c_char, out: *mut *mut OtfsSession) -> OtfsStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees a nul-terminated string.
        let text = unsafe { CStr::from_ptr(toml) }
            .to_str()
            .map_err(|e| (OtfsStatus::InvalidArgument, format!("toml is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_toml(text).map_err(lib)?;
        let s = session_from(cfg)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(s) };
        Ok(())
    })
}

/// Releases a session; null is ignored.
///
/// # Safety
/// `session` must come from a constructor here and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_free(session: *mut OtfsSession) {
    if !session.is_null() {
        // SAFETY: ownership returns from the matching Box::into_raw.
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Number of pilot symbols `K_p`; 0 for a null session.
///
/// # Safety
/// `session` must be null or a live session.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_pilot_len(session: *const OtfsSession) -> usize {
    // SAFETY: caller guarantees null or live.
    unsafe { session.as_ref() }.map_or(0, |s| s.setup.arr.k_p())
}

/// Optimizes the design at weight `eta` (1 = communication only).
///
/// When `pilot` is non-null it receives the pilot as interleaved re/im pairs
/// and `pilot_len` must be at least `2 * K_p`.
///
/// # Safety
/// `session` live, `summary` valid for one write, `pilot` null or valid for
/// `pilot_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_optimize(
    session: *const OtfsSession,
    eta: f64,
    summary: *mut OtfsDesignSummary,
    pilot: *mut f64,
    pilot_len: usize,
) -> OtfsStatus {
    guard(|| {
        // SAFETY: caller guarantees null or live.
        let s = unsafe { session.as_ref() }.ok_or_else(|| null("session"))?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err((OtfsStatus::InvalidArgument, format!("eta {eta} outside [0, 1]")));
        }
        let k_p = s.setup.arr.k_p();
        if !pilot.is_null() && pilot_len < 2 * k_p {
            return Err((
                OtfsStatus::BufferTooSmall,
                format!("pilot needs {} doubles, got {pilot_len}", 2 * k_p),
            ));
        }
        let (consts, opt) = s.sensing().map_err(lib)?;
        let problem = s.setup.problem(consts);
        let runs = run_starts(&problem, &with_eta(opt, eta), &s.cfg.experiment.p0_grid).map_err(lib)?;
        let best = runs.best();
        let out = OtfsDesignSummary {
            eta,
            objective: best.eval.objective,
            sinr: best.eval.sinr,
            isl: best.eval.isl,
            p_d: best.design.p_d,
            peak_fraction: peak_energy_fraction(&best.design.x_p),
            iterations: best.iterations(),
            converged: best.converged,
        };
        // SAFETY: checked non-null.
        unsafe { *summary = out };
        if !pilot.is_null() {
            // SAFETY: length checked above.
            let dst = unsafe { std::slice::from_raw_parts_mut(pilot, 2 * k_p) };
            for (pair, z) in dst.chunks_exact_mut(2).zip(best.design.x_p.iter()) {
                pair[0] = z.re;
                pair[1] = z.im;
            }
        }
        Ok(())
    })
}

/// Monte Carlo capacity bounds at one SNR.
///
/// # Safety
/// `session` live, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn otfs_session_capacity(
    session: *const OtfsSession,
    snr_db: f64,
    trials: usize,
    seed: u64,
    out: *mut OtfsCapacity,
) -> OtfsStatus {
    guard(|| {
        // SAFETY: caller guarantees null or live.
        let s = unsafe { session.as_ref() }.ok_or_else(|| null("session"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rep =
            run_capacity_bound(&s.setup, &[snr_db], trials, seed, s.cfg.experiment.ofdm_pilot_ratio).map_err(lib)?;
        let p = &rep.points[0];
        // SAFETY: checked non-null.
        unsafe {
            *out = OtfsCapacity {
                snr_db: p.snr_db,
                otfs_matrix: p.otfs_matrix,
                otfs_scalar: p.otfs_scalar,
                ofdm: p.ofdm,
            }
        };
        Ok(())
    })
}
