//! C ABI over the `tauq` estimators.
//!
//! Every fallible function returns a [`TauqStatus`]; on failure a message is
//! available from [`tauq_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`tauq_string_free`]. Configs, policies and reports cross the boundary as JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tauq::dgp::{build_dgp, DgpInstance, DgpSpec};
use tauq::harness::{run_experiment, ExperimentConfig};
use tauq::policy::PolicySpec;
use tauq::rlearner::{evaluate_policy, optimize_policy, EvalConfig, OptConfig};
use tauq::tau::{ContrastFunction, TauModel};
use tauq::types::Dataset;
use tauq::TauqError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Overlap = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// Selects the DGP's behavior policy.
pub const TAUQ_POLICY_BEHAVIOR: u32 = 0;
/// Selects the DGP's evaluation policy.
pub const TAUQ_POLICY_EVALUATION: u32 = 1;

pub struct TauqDgp(DgpInstance);
pub struct TauqDataset(Dataset);
pub struct TauqModel(TauModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(TauqStatus, String);

impl From<TauqError> for Failure {
    fn from(e: TauqError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(TauqStatus::Config, format!("json error: {e}"))
    }
}

fn status_of(e: &TauqError) -> TauqStatus {
    match e {
        TauqError::Config(_) | TauqError::Json(_) => TauqStatus::Config,
        TauqError::InvalidArgument(_) => TauqStatus::InvalidArgument,
        TauqError::Overlap(_) => TauqStatus::Overlap,
        TauqError::Numerical(_) => TauqStatus::Numerical,
        TauqError::Io(_) | TauqError::Csv(_) => TauqStatus::Io,
        TauqError::Stage { source, .. } => status_of(source),
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TauqStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TauqStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TauqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            TauqStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(TauqStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TauqStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        read_str(p, what).map(Some)
    }
}

/// # Safety
/// `out` must be null or valid for a pointer write.
unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    non_null(out, "output string pointer")?;
    let c = CString::new(s)
        .map_err(|_| Failure(TauqStatus::Numerical, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// # Safety
/// `out` must be null or valid for a pointer write.
unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output handle pointer")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `p` must be null or a live handle.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    non_null(p, what)?;
    Ok(&*p)
}

/// # Safety
/// `state` must point to `len` readable doubles.
unsafe fn read_state<'a>(
    model: &TauModel,
    t: usize,
    state: *const f64,
    len: usize,
) -> Result<&'a [f64], Failure> {
    non_null(state, "state")?;
    if t == 0 || t > model.horizon {
        return Err(invalid(format!("t={t} outside 1..={}", model.horizon)));
    }
    if len != model.basis.state_dim() {
        return Err(invalid(format!(
            "state has length {len}, model expects {}",
            model.basis.state_dim()
        )));
    }
    Ok(std::slice::from_raw_parts(state, len))
}

fn policy_of(dgp: &DgpInstance, which: u32) -> Result<&PolicySpec, Failure> {
    match which {
        TAUQ_POLICY_BEHAVIOR => Ok(&dgp.behavior),
        TAUQ_POLICY_EVALUATION => Ok(&dgp.evaluation),
        other => Err(invalid(format!("unknown policy selector {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tauq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tauq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tauq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a DGP from a JSON spec.
///
/// # Safety
/// `json` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_from_json(
    json: *const c_char,
    out: *mut *mut TauqDgp,
) -> TauqStatus {
    guard(|| {
        let spec: DgpSpec = serde_json::from_str(read_str(json, "json")?)?;
        write_handle(out, TauqDgp(build_dgp(&spec)?))
    })
}

/// Builds a DGP of a named kind (e.g. `"reward-filtered"`) with default settings.
///
/// # Safety
/// `kind` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_from_kind(
    kind: *const c_char,
    seed: u64,
    out: *mut *mut TauqDgp,
) -> TauqStatus {
    guard(|| {
        let kind = read_str(kind, "kind")?;
        let mut spec: DgpSpec = serde_json::from_value(serde_json::json!({ "kind": kind }))
            .map_err(|_| Failure(TauqStatus::Config, format!("unknown DGP kind {kind:?}")))?;
        spec.seed = seed;
        write_handle(out, TauqDgp(build_dgp(&spec)?))
    })
}

/// # Safety
/// `dgp` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_free(dgp: *mut TauqDgp) {
    if !dgp.is_null() {
        drop(Box::from_raw(dgp));
    }
}

/// Writes state dimension, horizon and action count; any out pointer may be null.
///
/// # Safety
/// `dgp` must be a live handle; non-null out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_dims(
    dgp: *const TauqDgp,
    state_dim: *mut usize,
    horizon: *mut usize,
    n_actions: *mut usize,
) -> TauqStatus {
    guard(|| {
        let d = &handle(dgp, "dgp")?.0;
        for (p, v) in [
            (state_dim, d.state_dim()),
            (horizon, d.horizon()),
            (n_actions, d.n_actions()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// JSON of the behavior or evaluation policy.
///
/// # Safety
/// `dgp` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_policy_json(
    dgp: *const TauqDgp,
    which: u32,
    out: *mut *mut c_char,
) -> TauqStatus {
    guard(|| {
        let d = &handle(dgp, "dgp")?.0;
        write_string(out, serde_json::to_string(policy_of(d, which)?)?)
    })
}

/// Simulates `n` trajectories under the selected policy.
///
/// # Safety
/// `dgp` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dgp_simulate(
    dgp: *const TauqDgp,
    which: u32,
    n: usize,
    seed: u64,
    out: *mut *mut TauqDataset,
) -> TauqStatus {
    guard(|| {
        let d = &handle(dgp, "dgp")?.0;
        let ds = d.simulate(policy_of(d, which)?, n, seed)?;
        write_handle(out, TauqDataset(ds))
    })
}

/// # Safety
/// `json` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dataset_from_json(
    json: *const c_char,
    out: *mut *mut TauqDataset,
) -> TauqStatus {
    guard(|| {
        let ds: Dataset = serde_json::from_str(read_str(json, "json")?)?;
        ds.validate()?;
        write_handle(out, TauqDataset(ds))
    })
}

/// # Safety
/// `ds` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_dataset_to_json(
    ds: *const TauqDataset,
    out: *mut *mut c_char,
) -> TauqStatus {
    guard(|| write_string(out, serde_json::to_string(&handle(ds, "dataset")?.0)?))
}

/// Number of trajectories, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tauq_dataset_len(ds: *const TauqDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn tauq_dataset_free(ds: *mut TauqDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Cross-fitted contrast estimate of a target policy (JSON). A null config
/// uses the defaults.
///
/// # Safety
/// `ds` must be a live handle, the strings valid or (for `config_json`) null,
/// and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_evaluate(
    ds: *const TauqDataset,
    policy_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut TauqModel,
) -> TauqStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let policy: PolicySpec = serde_json::from_str(read_str(policy_json, "policy_json")?)?;
        let cfg: EvalConfig = match read_opt_str(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => EvalConfig::default(),
        };
        let ev = evaluate_policy(ds, &policy, &cfg)?;
        write_handle(out, TauqModel(ev.tau))
    })
}

/// Learns a greedy policy with the three-fold procedure. `model_out` and
/// `policy_json_out` may each be null if not wanted.
///
/// # Safety
/// `ds` must be a live handle, `config_json` null or a valid C string, and
/// non-null out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_optimize(
    ds: *const TauqDataset,
    config_json: *const c_char,
    model_out: *mut *mut TauqModel,
    policy_json_out: *mut *mut c_char,
) -> TauqStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let cfg: OptConfig = match read_opt_str(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => OptConfig::default(),
        };
        let opt = optimize_policy(ds, &cfg)?;
        if !policy_json_out.is_null() {
            write_string(policy_json_out, serde_json::to_string(&opt.policy)?)?;
        }
        if !model_out.is_null() {
            write_handle(model_out, TauqModel(opt.tau))?;
        }
        Ok(())
    })
}

/// # Safety
/// `json` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_model_from_json(
    json: *const c_char,
    out: *mut *mut TauqModel,
) -> TauqStatus {
    guard(|| {
        let m: TauModel = serde_json::from_str(read_str(json, "json")?)?;
        if m.stages.len() != m.horizon {
            return Err(Failure(
                TauqStatus::Config,
                "model stages do not match its horizon".into(),
            ));
        }
        write_handle(out, TauqModel(m))
    })
}

/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_model_to_json(
    model: *const TauqModel,
    out: *mut *mut c_char,
) -> TauqStatus {
    guard(|| write_string(out, serde_json::to_string(&handle(model, "model")?.0)?))
}

/// `τ̂_t(s, action)` relative to the reference action.
///
/// # Safety
/// `model` must be a live handle, `state` must point to `len` doubles and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_model_contrast(
    model: *const TauqModel,
    t: usize,
    state: *const f64,
    len: usize,
    action: usize,
    out: *mut f64,
) -> TauqStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let s = read_state(m, t, state, len)?;
        if action >= m.n_actions {
            return Err(invalid(format!(
                "action {action} outside 0..{}",
                m.n_actions
            )));
        }
        non_null(out, "out")?;
        *out = m.contrast(t, s, action);
        Ok(())
    })
}

/// Greedy action at `(t, s)`.
///
/// # Safety
/// As for [`tauq_model_contrast`].
#[no_mangle]
pub unsafe extern "C" fn tauq_model_greedy_action(
    model: *const TauqModel,
    t: usize,
    state: *const f64,
    len: usize,
    out: *mut usize,
) -> TauqStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let s = read_state(m, t, state, len)?;
        non_null(out, "out")?;
        *out = m.greedy_action(t, s);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn tauq_model_free(model: *mut TauqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs an experiment config (JSON) and returns the report as JSON.
///
/// # Safety
/// `config_json` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tauq_experiment_run(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> TauqStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(read_str(config_json, "config_json")?)?;
        let report = run_experiment(&cfg)?;
        write_string(out, serde_json::to_string(&report)?)
    })
}
