//! C interface to `nfplace`.
//!
//! Every function returns an [`NfStatus`]; on failure the message is
//! available from [`nf_last_error_message`] on the same thread. Objects
//! are opaque handles released with their `_free` function. Panics never
//! cross the boundary; they surface as [`NfStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nfplace::cli::exit_code;
use nfplace::config::{Resolved, RunConfig};
use nfplace::fim::{peb, position_fim};
use nfplace::geometry::{Pose, Vec3};
use nfplace::metric::{rho, sample_peb_map, InformationTable, PebMap};
use nfplace::optimizer::{count_selections, default_initial, exhaustive_search, greedy_search, Evaluator, TrialResult};
use nfplace::scenario::Mode;
use nfplace::Error;

/// Result of every call. Values 2 to 4 match the exit codes of the
/// command-line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an undersized buffer.
    InvalidArgument = 1,
    Config = 2,
    Infeasible = 3,
    NonIdentifiable = 4,
    Io = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfMode {
    Coherent = 0,
    Incoherent = 1,
}

impl From<NfMode> for Mode {
    fn from(m: NfMode) -> Mode {
        match m {
            NfMode::Coherent => Mode::Coherent,
            NfMode::Incoherent => Mode::Incoherent,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfStrategy {
    Exhaustive = 0,
    Greedy = 1,
}

/// Scenario, grid, body and sampling of a run configuration.
pub struct NfContext {
    config: RunConfig,
    resolved: Resolved,
}

/// PEB over the pose grid.
pub struct NfPebMap {
    map: PebMap,
}

/// Outcome of a placement search.
pub struct NfTrial {
    trial: TrialResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> NfStatus {
    match exit_code(err) {
        2 => NfStatus::Config,
        3 => NfStatus::Infeasible,
        4 => NfStatus::NonIdentifiable,
        _ => match err {
            Error::Write { .. } => NfStatus::Io,
            _ => NfStatus::Internal,
        },
    }
}

enum Fail {
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            NfStatus::Ok
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            NfStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            NfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::Arg(format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::Arg(format!("`{name}` is null")))
}

unsafe fn ids_arg<'a>(ids: *const usize, n: usize) -> Result<&'a [usize], Fail> {
    if n == 0 {
        return Err(Fail::Arg("selection is empty".into()));
    }
    if ids.is_null() {
        return Err(Fail::Arg("`ids` is null".into()));
    }
    Ok(std::slice::from_raw_parts(ids, n))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn context(config: RunConfig, base: &Path) -> Result<NfContext, Fail> {
    let config = config.snapshot(base)?;
    let resolved = config.resolve(base)?;
    Ok(NfContext { config, resolved })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn nf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Context with the built-in scenario, grid, body and sampling.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_context_new_default(out: *mut *mut NfContext) -> NfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = boxed(context(RunConfig::default(), Path::new("."))?);
        Ok(())
    })
}

/// Context from run-configuration JSON text; relative file references
/// resolve against the working directory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_context_from_json(json: *const c_char, out: *mut *mut NfContext) -> NfStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::parse("<json>", &e))?;
        *out = boxed(context(cfg, Path::new("."))?);
        Ok(())
    })
}

/// Context from a run-configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nf_context_from_file(path: *const c_char, out: *mut *mut NfContext) -> NfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let (cfg, base) = RunConfig::load(Path::new(path))?;
        *out = boxed(context(cfg, &base)?);
        Ok(())
    })
}

/// # Safety
/// `ctx` must come from an `nf_context_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_context_free(ctx: *mut NfContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// Number of grid points.
///
/// # Safety
/// `ctx` must be a valid context.
#[no_mangle]
pub unsafe extern "C" fn nf_context_grid_len(ctx: *const NfContext, out: *mut usize) -> NfStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(ctx, "ctx")?.resolved.grid.len();
        Ok(())
    })
}

/// PEB in meters of the deployment `ids` with the vehicle at range `r_m`
/// and heading `phi_deg`.
///
/// # Safety
/// `ctx` must be valid, `ids` must hold `n_ids` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_peb(
    ctx: *const NfContext,
    ids: *const usize,
    n_ids: usize,
    mode: NfMode,
    r_m: f64,
    phi_deg: f64,
    out: *mut f64,
) -> NfStatus {
    guard(|| {
        let ctx = ref_arg(ctx, "ctx")?;
        let ids = ids_arg(ids, n_ids)?;
        let out = out_arg(out, "out")?;
        if !(r_m > 0.0) || !phi_deg.is_finite() {
            return Err(Fail::Arg(format!("pose r = {r_m}, φ = {phi_deg} is invalid")));
        }
        let r = &ctx.resolved;
        let dep = r.deployment_of(ids)?;
        let z = -r.scenario.bs_height_m + ctx.config.sampling.reference_height_m;
        let pose = Pose::vehicle(Vec3::new(0.0, r_m, z), phi_deg.to_radians());
        *out = peb(&position_fim(&dep, &pose, &r.scenario, &r.body, mode.into())?)?;
        Ok(())
    })
}

/// PEB of the deployment `ids` at every pose of the context's sampling.
///
/// # Safety
/// `ctx` must be valid, `ids` must hold `n_ids` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_peb_map(
    ctx: *const NfContext,
    ids: *const usize,
    n_ids: usize,
    mode: NfMode,
    out: *mut *mut NfPebMap,
) -> NfStatus {
    guard(|| {
        let ctx = ref_arg(ctx, "ctx")?;
        let ids = ids_arg(ids, n_ids)?;
        let out = out_arg(out, "out")?;
        let r = &ctx.resolved;
        let dep = r.deployment_of(ids)?;
        let map = sample_peb_map(&dep, &ctx.config.sampling, &r.scenario, &r.body, mode.into(), "map")?;
        *out = boxed(NfPebMap { map });
        Ok(())
    })
}

/// Headings and ranges of a map.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_peb_map_dims(map: *const NfPebMap, n_phi: *mut usize, n_r: *mut usize) -> NfStatus {
    guard(|| {
        let m = &ref_arg(map, "map")?.map;
        *out_arg(n_phi, "n_phi")? = m.phi_deg.len();
        *out_arg(n_r, "n_r")? = m.r_m.len();
        Ok(())
    })
}

/// Copy the PEB values, heading-major (`buf[i_phi * n_r + j_r]`);
/// non-identifiable cells are `+inf`.
///
/// # Safety
/// `map` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nf_peb_map_values(map: *const NfPebMap, buf: *mut f64, len: usize) -> NfStatus {
    guard(|| {
        let cells = ref_arg(map, "map")?.map.cells();
        if buf.is_null() || len < cells.len() {
            return Err(Fail::Arg(format!("buffer must hold {} values", cells.len())));
        }
        ptr::copy_nonoverlapping(cells.as_ptr(), buf, cells.len());
        Ok(())
    })
}

/// `(1 − ε)` percentile of the map; `+inf` when more than an ε fraction of
/// cells is non-identifiable.
///
/// # Safety
/// `map` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_peb_map_rho(map: *const NfPebMap, epsilon: f64, out: *mut f64) -> NfStatus {
    guard(|| {
        let m = &ref_arg(map, "map")?.map;
        let out = out_arg(out, "out")?;
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Fail::Lib(Error::Config(format!("ε must lie in [0, 1), got {epsilon}"))));
        }
        *out = rho(m, epsilon)?;
        Ok(())
    })
}

/// # Safety
/// `map` must come from [`nf_peb_map`] or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_peb_map_free(map: *mut NfPebMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Selections reaching exactly `k` sub-arrays from `singles` centerline
/// points and `pairs` mirrored pairs.
#[no_mangle]
pub extern "C" fn nf_count_selections(singles: usize, pairs: usize, k: usize) -> u64 {
    count_selections(singles, pairs, k)
}

/// Search the context's grid for the `k`-sub-array deployment with the
/// lowest ρ. Greedy starts from the context's `trial.initial` or the
/// default roof point.
///
/// # Safety
/// `ctx` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_optimize(
    ctx: *const NfContext,
    mode: NfMode,
    strategy: NfStrategy,
    k: usize,
    out: *mut *mut NfTrial,
) -> NfStatus {
    guard(|| {
        let ctx = ref_arg(ctx, "ctx")?;
        let out = out_arg(out, "out")?;
        let r = &ctx.resolved;
        let table = InformationTable::build(&r.grid.placements(&r.layout), &ctx.config.sampling, &r.scenario, &r.body)?;
        let eval = Evaluator::new(&r.grid, &table, mode.into(), r.scenario.peb_percentile)?;
        let trial = match strategy {
            NfStrategy::Exhaustive => exhaustive_search(&eval, k)?,
            NfStrategy::Greedy => {
                let initial = match &ctx.config.trial.initial {
                    Some(ids) => r.deployment_of(ids).map(|_| nfplace::deployment::Selection::from_ids(ids))?,
                    None => default_initial(&r.grid)?,
                };
                greedy_search(&eval, k, initial)?
            }
        };
        *out = boxed(NfTrial { trial });
        Ok(())
    })
}

/// Candidate counts of a trial.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nf_trial_counts(
    trial: *const NfTrial,
    total: *mut usize,
    identifiable: *mut usize,
    discarded: *mut usize,
) -> NfStatus {
    guard(|| {
        let t = &ref_arg(trial, "trial")?.trial;
        *out_arg(total, "total")? = t.total;
        *out_arg(identifiable, "identifiable")? = t.identifiable;
        *out_arg(discarded, "discarded")? = t.discarded;
        Ok(())
    })
}

/// Best deployment: its ρ and grid-point ids. `n_ids` receives the number
/// of ids even when `cap` is too small (then nothing is copied and
/// `InvalidArgument` is returned).
///
/// # Safety
/// `trial`, `n_ids` and `rho_m` must be valid; `ids` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn nf_trial_best(
    trial: *const NfTrial,
    ids: *mut usize,
    cap: usize,
    n_ids: *mut usize,
    rho_m: *mut f64,
) -> NfStatus {
    guard(|| {
        let best = &ref_arg(trial, "trial")?.trial.best;
        *out_arg(n_ids, "n_ids")? = best.ids.len();
        *out_arg(rho_m, "rho_m")? = best.rho;
        if ids.is_null() || cap < best.ids.len() {
            return Err(Fail::Arg(format!("buffer must hold {} ids", best.ids.len())));
        }
        ptr::copy_nonoverlapping(best.ids.as_ptr(), ids, best.ids.len());
        Ok(())
    })
}

/// # Safety
/// `trial` must come from [`nf_optimize`] or be null.
#[no_mangle]
pub unsafe extern "C" fn nf_trial_free(trial: *mut NfTrial) {
    if !trial.is_null() {
        drop(Box::from_raw(trial));
    }
}
