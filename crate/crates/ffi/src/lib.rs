//! C ABI over the score-distillation laboratory.
//!
//! Handles are opaque pointers; every call returns a status code and leaves a
//! thread-local message readable through `scorelab_last_error` on failure.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use scorelab::config::{ExperimentConfig, ExperimentKind, ResolvedExperiment};
use scorelab::runner::{
    anneal_comparison, edit_experiment, gradient_norm_experiment, omega_sweep, run,
};
use scorelab::schedule::DiffusionSchedule;
use scorelab::world::World;
use scorelab::Error;

/// Success.
pub const SCORELAB_OK: i32 = 0;
/// Parse or configuration error; message available.
pub const SCORELAB_ERR_CONFIG: i32 = 1;
/// Optimization diverged.
pub const SCORELAB_ERR_DIVERGED: i32 = 2;
/// Null pointer or otherwise invalid argument.
pub const SCORELAB_ERR_ARGUMENT: i32 = 3;
/// Internal panic caught at the boundary.
pub const SCORELAB_ERR_PANIC: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => SCORELAB_ERR_DIVERGED,
        _ => SCORELAB_ERR_CONFIG,
    }
}

/// Run `f` with panic isolation, mapping results to status codes.
fn guarded(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SCORELAB_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            SCORELAB_ERR_PANIC
        }
    }
}

fn arg_err(msg: &str) -> (i32, String) {
    (SCORELAB_ERR_ARGUMENT, msg.to_string())
}

unsafe fn read_cstr<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, (i32, String)> {
    if ptr.is_null() {
        return Err(arg_err(&format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| arg_err(&format!("{name} is not valid UTF-8")))
}

/// A parsed and statically validated experiment file.
pub struct ScorelabConfig {
    document: ExperimentConfig,
    resolved: ResolvedExperiment,
}

/// A world plus the schedule it is evaluated under.
pub struct ScorelabWorld {
    world: World,
    schedule: DiffusionSchedule,
}

/// Message for the most recent failure on this thread, or null after success.
/// The pointer is valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn scorelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parse and statically validate an experiment JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scorelab_config_parse(
    json: *const c_char,
    out: *mut *mut ScorelabConfig,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        let text = read_cstr(json, "json")?;
        let document =
            ExperimentConfig::from_json(text).map_err(|e| (status_of(&e), e.to_string()))?;
        let resolved = document.resolve().map_err(|e| (status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(ScorelabConfig { document, resolved }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `scorelab_config_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn scorelab_config_free(cfg: *mut ScorelabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Re-run static validation on a parsed config.
///
/// # Safety
/// `cfg` must be a live handle from `scorelab_config_parse`.
#[no_mangle]
pub unsafe extern "C" fn scorelab_config_validate(cfg: *const ScorelabConfig) -> i32 {
    guarded(|| {
        let cfg = cfg.as_ref().ok_or_else(|| arg_err("cfg is null"))?;
        cfg.document.resolve().map(|_| ()).map_err(|e| (status_of(&e), e.to_string()))
    })
}

/// Execute the experiment the config requests and return its result as a
/// JSON string. The caller owns the string and frees it with
/// `scorelab_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scorelab_execute(
    cfg: *const ScorelabConfig,
    out_json: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let cfg = cfg.as_ref().ok_or_else(|| arg_err("cfg is null"))?;
        if out_json.is_null() {
            return Err(arg_err("out_json is null"));
        }
        let base = &cfg.resolved.base;
        let value = match &cfg.resolved.kind {
            ExperimentKind::Run => {
                run(base).map(|r| r.to_json()).map_err(|e| (status_of(&e), e.to_string()))?
            }
            ExperimentKind::Sweep { omegas } => {
                let results =
                    omega_sweep(base, omegas).map_err(|e| (status_of(&e), e.to_string()))?;
                serde_json::Value::Array(
                    omegas
                        .iter()
                        .zip(results)
                        .map(|(o, r)| serde_json::json!({"omega": o, "result": r.to_json()}))
                        .collect(),
                )
            }
            ExperimentKind::Anneal => {
                let out =
                    anneal_comparison(base).map_err(|e| (status_of(&e), e.to_string()))?;
                serde_json::json!({
                    "fixed": out.fixed.to_json(),
                    "annealed": out.annealed.to_json(),
                })
            }
            ExperimentKind::Edit { target, edit, w1, w2 } => {
                let out = edit_experiment(base, target, edit, *w1, *w2)
                    .map_err(|e| (status_of(&e), e.to_string()))?;
                let before: serde_json::Map<String, serde_json::Value> = out
                    .probs_before
                    .iter()
                    .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                    .collect();
                serde_json::json!({
                    "probs_before": before,
                    "result": out.result.to_json(),
                })
            }
            ExperimentKind::GradNorm => {
                let (result, table) =
                    gradient_norm_experiment(base).map_err(|e| (status_of(&e), e.to_string()))?;
                serde_json::json!({
                    "result": result.to_json(),
                    "mean_gen": table.mean_gen,
                    "mean_cls": table.mean_cls,
                    "ratio": table.ratio,
                })
            }
        };
        let text = serde_json::to_string(&value)
            .map_err(|e| (SCORELAB_ERR_CONFIG, e.to_string()))?;
        let c = CString::new(text).map_err(|_| arg_err("result contained NUL"))?;
        *out_json = c.into_raw();
        Ok(())
    })
}

/// Free a string returned by `scorelab_execute`.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn scorelab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Extract the world and schedule of a parsed config as a standalone handle.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scorelab_world_from_config(
    cfg: *const ScorelabConfig,
    out: *mut *mut ScorelabWorld,
) -> i32 {
    guarded(|| {
        let cfg = cfg.as_ref().ok_or_else(|| arg_err("cfg is null"))?;
        if out.is_null() {
            return Err(arg_err("out is null"));
        }
        *out = Box::into_raw(Box::new(ScorelabWorld {
            world: cfg.resolved.base.world.clone(),
            schedule: cfg.resolved.base.schedule,
        }));
        Ok(())
    })
}

/// # Safety
/// `world` must come from `scorelab_world_from_config` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn scorelab_world_free(world: *mut ScorelabWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Exact noise prediction at `x_t` (length `len`, which must equal the world
/// dimension) and time `t`, conditioned on `prompt`, or unconditional when
/// `prompt` is null. Writes `len` values to `out`.
///
/// # Safety
/// `world` must be a live handle; `x_t` and `out` must point to `len` doubles;
/// `prompt`, when non-null, must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn scorelab_eps_pred(
    world: *const ScorelabWorld,
    x_t: *const f64,
    len: usize,
    prompt: *const c_char,
    t: f64,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        let w = world.as_ref().ok_or_else(|| arg_err("world is null"))?;
        if x_t.is_null() || out.is_null() {
            return Err(arg_err("x_t and out must be non-null"));
        }
        let x = std::slice::from_raw_parts(x_t, len);
        let label = if prompt.is_null() { None } else { Some(read_cstr(prompt, "prompt")?) };
        let eps = w
            .world
            .eps_pred(&w.schedule, x, label, t)
            .map_err(|e| (status_of(&e), e.to_string()))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&eps);
        Ok(())
    })
}

/// Implicit-classifier log probability log q(prompt | x_t) at time `t`.
///
/// # Safety
/// Same pointer requirements as `scorelab_eps_pred`; `out` is one double.
#[no_mangle]
pub unsafe extern "C" fn scorelab_classifier_logprob(
    world: *const ScorelabWorld,
    x_t: *const f64,
    len: usize,
    prompt: *const c_char,
    t: f64,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        let w = world.as_ref().ok_or_else(|| arg_err("world is null"))?;
        if x_t.is_null() || out.is_null() {
            return Err(arg_err("x_t and out must be non-null"));
        }
        let x = std::slice::from_raw_parts(x_t, len);
        let label = read_cstr(prompt, "prompt")?;
        let lp = w
            .world
            .classifier_logprob(&w.schedule, x, t, label)
            .map_err(|e| (status_of(&e), e.to_string()))?;
        *out = lp;
        Ok(())
    })
}
