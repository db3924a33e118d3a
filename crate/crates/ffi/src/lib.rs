//! C interface to `layup-core`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! parsing or producing call and released by the matching `*_free`.
//! Functions return a [`LayupStatus`]; on failure the message is available
//! from [`layup_last_error`] on the same thread. Strings handed out by the
//! library are NUL-terminated, owned by the caller and released with
//! [`layup_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use layup_core::effectiveness::{aggregate, EffectivenessModel};
use layup_core::plan::{validate, ConstraintSet, DrapingPlan};
use layup_core::search::{generate_refinement_paths, refine_plan, SearchConfig};
use layup_core::sheet_state::SheetState;
use layup_core::simulator::{
    run_experiment, ExperimentLog, ExperimentOptions, GroundTruthParams, PathGeometry, PlanRole, SheetSpec,
};
use layup_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayupStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed or inconsistent input: parse errors, invalid plans,
    /// incompatible models.
    InvalidInput = 3,
    /// The request was well formed but could not be carried out.
    Failed = 4,
    Panic = 5,
}

/// A draping plan.
pub struct LayupPlan(DrapingPlan);
/// A set of ordering and count constraints.
pub struct LayupConstraints(ConstraintSet);
/// A learned effectiveness model.
pub struct LayupModel(EffectivenessModel);
/// The log of one simulated experiment.
pub struct LayupLog(ExperimentLog);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LayupStatus, msg: impl Into<String>) -> LayupStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> LayupStatus {
    let status = if e.is_input_error() {
        LayupStatus::InvalidInput
    } else {
        LayupStatus::Failed
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> LayupStatus) -> LayupStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LayupStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, LayupStatus> {
    if p.is_null() {
        return Err(fail(LayupStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LayupStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn obj<'a, T>(p: *const T) -> Result<&'a T, LayupStatus> {
    p.as_ref().ok_or_else(|| fail(LayupStatus::NullPointer, "null handle"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> LayupStatus {
    *out = Box::into_raw(Box::new(value));
    LayupStatus::Ok
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> LayupStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            LayupStatus::Ok
        }
        Err(_) => fail(LayupStatus::Failed, "output contains a NUL byte"),
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! check_out {
    ($out:expr) => {
        if $out.is_null() {
            return fail(LayupStatus::NullPointer, "null output pointer");
        }
    };
}

/// Message of the last failed call on this thread, or NULL. The caller
/// owns the returned string.
#[no_mangle]
pub extern "C" fn layup_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn layup_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a plan in the line format (`name: ...`, then one action per line).
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_parse(text: *const c_char, out: *mut *mut LayupPlan) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let text = try_ffi!(str_arg(text));
        match DrapingPlan::parse(text) {
            Ok(p) => put(out, LayupPlan(p)),
            Err(e) => from_core(e),
        }
    })
}

/// One of the two expert plans, `which` = 1 or 2.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_expert(which: u32, out: *mut *mut LayupPlan) -> LayupStatus {
    guard(|| {
        check_out!(out);
        match which {
            1 => put(out, LayupPlan(DrapingPlan::expert_d1())),
            2 => put(out, LayupPlan(DrapingPlan::expert_d2())),
            _ => fail(LayupStatus::InvalidInput, format!("no expert plan {which}")),
        }
    })
}

/// # Safety
/// `plan` must be a live plan handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_emit(plan: *const LayupPlan, out: *mut *mut c_char) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let plan = try_ffi!(obj(plan));
        put_string(out, plan.0.emit())
    })
}

/// Number of actions, 0 for NULL.
///
/// # Safety
/// `plan` must be NULL or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_len(plan: *const LayupPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.len())
}

/// Paths the plan executes, counting each refinement pass; 0 for NULL.
///
/// # Safety
/// `plan` must be NULL or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_path_equivalents(plan: *const LayupPlan) -> u32 {
    plan.as_ref().map_or(0, |p| p.0.path_equivalents())
}

/// # Safety
/// `plan` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_free(plan: *mut LayupPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Parses `rel (...)` / `abs (...)` lines.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_constraints_parse(text: *const c_char, out: *mut *mut LayupConstraints) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let text = try_ffi!(str_arg(text));
        match ConstraintSet::parse(text) {
            Ok(cs) => put(out, LayupConstraints(cs)),
            Err(e) => from_core(e),
        }
    })
}

/// The layup constraint set; with `initial` true, the set the expert
/// plans are held to (no refinement requirements).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_constraints_default(initial: bool, out: *mut *mut LayupConstraints) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let cs = if initial {
            ConstraintSet::initial_plans()
        } else {
            ConstraintSet::layup_default()
        };
        put(out, LayupConstraints(cs))
    })
}

/// # Safety
/// `cs` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn layup_constraints_free(cs: *mut LayupConstraints) {
    if !cs.is_null() {
        drop(Box::from_raw(cs));
    }
}

/// Counts the constraints `plan` violates into `violations`; the first one
/// is described by [`layup_last_error`] when the count is nonzero.
///
/// # Safety
/// Handles must be live, `violations` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_plan_validate(
    plan: *const LayupPlan,
    cs: *const LayupConstraints,
    violations: *mut usize,
) -> LayupStatus {
    guard(|| {
        check_out!(violations);
        let plan = try_ffi!(obj(plan));
        let cs = try_ffi!(obj(cs));
        let v = validate(&plan.0, &cs.0);
        if let Some(first) = v.first() {
            set_error(first.to_string());
        }
        *violations = v.len();
        LayupStatus::Ok
    })
}

/// Runs `plan` on a built-in sheet (`sheet1`, `sheet2`) with default
/// ground-truth parameters.
///
/// # Safety
/// Handles must be live, `sheet` a NUL-terminated string, `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_simulate(
    plan: *const LayupPlan,
    cs: *const LayupConstraints,
    sheet: *const c_char,
    seed: u64,
    refined: bool,
    out: *mut *mut LayupLog,
) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let plan = try_ffi!(obj(plan));
        let cs = try_ffi!(obj(cs));
        let sheet = try_ffi!(str_arg(sheet));
        let spec = match SheetSpec::builtin(sheet) {
            Ok(s) => s,
            Err(e) => return from_core(e),
        };
        let params = GroundTruthParams::default();
        let geom = spec.geometry.clone();
        let half_width = params.roller_half_width;
        let gen = move |s: &SheetState, n: u32| -> layup_core::Result<Vec<PathGeometry>> {
            generate_refinement_paths(s, n, &geom, half_width).map(|g| g.paths)
        };
        let opts = ExperimentOptions {
            role: if refined { PlanRole::Refined } else { PlanRole::Initial },
            keep_captures: false,
        };
        match run_experiment(&plan.0, &spec, &params, &cs.0, seed, &gen, &opts) {
            Ok(log) => put(out, LayupLog(log)),
            Err(e) => from_core(e),
        }
    })
}

/// Plan paths plus correction paths; 0 for NULL.
///
/// # Safety
/// `log` must be NULL or a live log handle.
#[no_mangle]
pub unsafe extern "C" fn layup_log_total_paths(log: *const LayupLog) -> u32 {
    log.as_ref().map_or(0, |l| l.0.total_paths)
}

/// Serializes a log as JSON lines.
///
/// # Safety
/// `log` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_log_to_jsonl(log: *const LayupLog, out: *mut *mut c_char) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let log = try_ffi!(obj(log));
        put_string(out, log.0.to_jsonl())
    })
}

/// Reads a log from JSON lines.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_log_from_jsonl(text: *const c_char, out: *mut *mut LayupLog) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let text = try_ffi!(str_arg(text));
        match ExperimentLog::read_jsonl(text.as_bytes()) {
            Ok(l) => put(out, LayupLog(l)),
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `log` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn layup_log_free(log: *mut LayupLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Aggregates `count` logs into a model.
///
/// # Safety
/// `logs` must point to `count` live log handles, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_model_learn(
    logs: *const *const LayupLog,
    count: usize,
    out: *mut *mut LayupModel,
) -> LayupStatus {
    guard(|| {
        check_out!(out);
        if count == 0 {
            return fail(LayupStatus::InvalidInput, "no logs given");
        }
        if logs.is_null() {
            return fail(LayupStatus::NullPointer, "null log array");
        }
        let mut owned = Vec::with_capacity(count);
        for &l in std::slice::from_raw_parts(logs, count) {
            owned.push(try_ffi!(obj(l)).0.clone());
        }
        match aggregate(&owned) {
            Ok(m) => put(out, LayupModel(m)),
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `text` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_model_from_json(text: *const c_char, out: *mut *mut LayupModel) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let text = try_ffi!(str_arg(text));
        match EffectivenessModel::from_json(text) {
            Ok(m) => put(out, LayupModel(m)),
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `model` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_model_to_json(model: *const LayupModel, out: *mut *mut c_char) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let model = try_ffi!(obj(model));
        match model.0.to_json() {
            Ok(s) => put_string(out, s),
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn layup_model_free(model: *mut LayupModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Refines a plan with the default search settings, starting from the
/// state before the first action of `initial`.
///
/// # Safety
/// Handles must be live, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn layup_refine(
    model: *const LayupModel,
    initial: *const LayupLog,
    cs: *const LayupConstraints,
    out: *mut *mut LayupPlan,
) -> LayupStatus {
    guard(|| {
        check_out!(out);
        let model = try_ffi!(obj(model));
        let initial = try_ffi!(obj(initial));
        let cs = try_ffi!(obj(cs));
        let Some(state) = initial.0.steps.first().and_then(|s| s.state_before.as_ref()) else {
            return fail(LayupStatus::InvalidInput, "log has no initial state");
        };
        match refine_plan(state, &model.0, &cs.0, &SearchConfig::default()) {
            Ok(r) => put(out, LayupPlan(r.plan)),
            Err(e) => from_core(e),
        }
    })
}
