//! C ABI for running the agent against bundled world files.
//!
//! The surface is deliberately small: load a world, enumerate its tasks, run
//! one with scripted oracles, and read the outcome back through borrowed
//! strings. Handles are opaque; every entry point returns a status code and
//! stores a human-readable explanation retrievable with
//! [`ws_last_error_message`].
//!
//! Ownership rules:
//! - `WsWorld` and `WsRunResult` are freed with their matching `_free`
//!   functions, exactly once; the `_free` functions accept null.
//! - Strings returned by accessors borrow from their handle and die with it.
//! - The string returned by `ws_last_error_message` is owned by the caller
//!   and must be released with `ws_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use webscout::env::world::{load_world, WorldSpec};
use webscout::env::SimEnv;
use webscout::global::run_task;
use webscout::local::SearchError;
use webscout::model::SearchConfig;
use webscout::oracles::scripted::ScriptedOracles;

/// Outcome of an ABI call. Anything but `Ok` leaves an explanation in
/// [`ws_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The world file could not be read.
    Io = 3,
    /// The world file parsed but failed validation.
    InvalidWorld = 4,
    /// The world defines no task with the requested id.
    UnknownTask = 5,
    /// The configuration JSON was malformed or out of range.
    InvalidConfig = 6,
    /// The run itself failed partway (environment or trace error).
    SearchFailed = 7,
    /// A panic was caught at the boundary; state may be stale.
    Panic = 8,
}

/// A loaded world plus everything needed to run it.
pub struct WsWorld {
    world: Arc<WorldSpec>,
    demos: Option<String>,
    task_ids: Vec<CString>,
}

/// What one finished run reports.
pub struct WsRunResult {
    success: bool,
    answer: Option<CString>,
    executed: Vec<CString>,
    expansions_total: u32,
    subtasks_completed: usize,
    subtasks_total: usize,
    trace_hash: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(text).expect("nul bytes stripped"));
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: WsStatus, message: impl Into<String>) -> WsStatus {
    set_error(message);
    status
}

/// Runs `f` with panics fenced off at the boundary.
fn guarded(f: impl FnOnce() -> WsStatus) -> WsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(WsStatus::Panic, "internal panic caught at the ABI boundary"),
    }
}

/// # Safety
/// `ptr` must be null or a valid nul-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, WsStatus> {
    if ptr.is_null() {
        return Err(fail(WsStatus::NullArgument, format!("{what} must not be null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(WsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Loads a world file and resolves its demonstrations file, if any, relative
/// to it. On success writes a fresh handle to `out`.
///
/// # Safety
/// `path` must be a valid nul-terminated string; `out` must be a valid
/// location to store a pointer.
#[no_mangle]
pub unsafe extern "C" fn ws_world_load(path: *const c_char, out: *mut *mut WsWorld) -> WsStatus {
    guarded(|| {
        if out.is_null() {
            return fail(WsStatus::NullArgument, "out must not be null");
        }
        unsafe { *out = std::ptr::null_mut() };
        let path = match unsafe { required_str(path, "path") } {
            Ok(p) => Path::new(p),
            Err(status) => return status,
        };

        if !path.exists() {
            return fail(WsStatus::Io, format!("world file not found: {}", path.display()));
        }
        let world = match load_world(path) {
            Ok(w) => Arc::new(w),
            Err(e) => return fail(WsStatus::InvalidWorld, format!("{}: {e}", path.display())),
        };
        let demos = match &world.demos_file {
            Some(name) => {
                let demos_path = path.parent().unwrap_or(Path::new(".")).join(name);
                match std::fs::read_to_string(&demos_path) {
                    Ok(text) => Some(text),
                    Err(e) => {
                        return fail(WsStatus::Io, format!("{}: {e}", demos_path.display()))
                    }
                }
            }
            None => None,
        };
        let task_ids = world
            .tasks
            .iter()
            .map(|t| CString::new(t.id.as_str()).expect("task ids never hold nul bytes"))
            .collect();

        let handle = Box::new(WsWorld { world, demos, task_ids });
        unsafe { *out = Box::into_raw(handle) };
        clear_error();
        WsStatus::Ok
    })
}

/// Releases a world handle. Accepts null.
///
/// # Safety
/// `world` must be null or a pointer returned by [`ws_world_load`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ws_world_free(world: *mut WsWorld) {
    if !world.is_null() {
        drop(unsafe { Box::from_raw(world) });
    }
}

/// Number of tasks the world defines.
///
/// # Safety
/// `world` must be a live handle from [`ws_world_load`].
#[no_mangle]
pub unsafe extern "C" fn ws_world_task_count(world: *const WsWorld) -> usize {
    if world.is_null() {
        return 0;
    }
    unsafe { &*world }.task_ids.len()
}

/// Task id at `index`, or null when out of range. The string borrows from
/// the world handle.
///
/// # Safety
/// `world` must be a live handle from [`ws_world_load`].
#[no_mangle]
pub unsafe extern "C" fn ws_world_task_id_at(
    world: *const WsWorld,
    index: usize,
) -> *const c_char {
    if world.is_null() {
        return std::ptr::null();
    }
    match unsafe { &*world }.task_ids.get(index) {
        Some(id) => id.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Runs `task_id` against the world with scripted oracles and writes a result
/// handle to `out`.
///
/// `config_json` is optional (pass null for defaults) and takes the same
/// shape as the CLI's `"search"` section, for example
/// `{"n_max": 5, "backprop": "average"}`. `honor_reflections` toggles whether
/// the proposer obeys recorded reflections; runs are deterministic either
/// way. `trace_path` is optional; when set, the JSONL trace plus its manifest
/// and report are written there.
///
/// # Safety
/// `world` must be a live handle from [`ws_world_load`]; string arguments
/// must be null or valid nul-terminated strings; `out` must be a valid
/// location to store a pointer.
#[no_mangle]
pub unsafe extern "C" fn ws_run_task(
    world: *const WsWorld,
    task_id: *const c_char,
    config_json: *const c_char,
    honor_reflections: bool,
    trace_path: *const c_char,
    out: *mut *mut WsRunResult,
) -> WsStatus {
    guarded(|| {
        if out.is_null() {
            return fail(WsStatus::NullArgument, "out must not be null");
        }
        unsafe { *out = std::ptr::null_mut() };
        if world.is_null() {
            return fail(WsStatus::NullArgument, "world must not be null");
        }
        let handle = unsafe { &*world };
        let task_id = match unsafe { required_str(task_id, "task_id") } {
            Ok(t) => t,
            Err(status) => return status,
        };

        let cfg: SearchConfig = if config_json.is_null() {
            SearchConfig::default()
        } else {
            let text = match unsafe { required_str(config_json, "config_json") } {
                Ok(t) => t,
                Err(status) => return status,
            };
            match serde_json::from_str(text) {
                Ok(cfg) => cfg,
                Err(e) => return fail(WsStatus::InvalidConfig, format!("config: {e}")),
            }
        };
        if let Err(e) = cfg.validate() {
            return fail(WsStatus::InvalidConfig, e.to_string());
        }
        let trace = if trace_path.is_null() {
            None
        } else {
            match unsafe { required_str(trace_path, "trace_path") } {
                Ok(t) => Some(t.to_string()),
                Err(status) => return status,
            }
        };

        let suite = ScriptedOracles::suite(handle.world.clone(), honor_reflections);
        let mut env = SimEnv::from_shared(handle.world.clone());
        let result = match run_task(
            &mut env,
            &suite,
            task_id,
            &cfg,
            trace.as_deref().map(Path::new),
            None,
            handle.demos.as_deref(),
        ) {
            Ok(r) => r,
            Err(SearchError::UnknownTask(t)) => {
                return fail(WsStatus::UnknownTask, format!("world defines no task named '{t}'"))
            }
            Err(SearchError::Model(e)) => {
                return fail(WsStatus::InvalidConfig, e.to_string())
            }
            Err(e) => return fail(WsStatus::SearchFailed, e.to_string()),
        };

        let to_c = |s: &str| CString::new(s.replace('\0', " ")).expect("nul bytes stripped");
        let boxed = Box::new(WsRunResult {
            success: result.success,
            answer: result.answer.as_deref().map(to_c),
            executed: result.executed.iter().map(|a| to_c(&a.to_string())).collect(),
            expansions_total: result.expansions_total,
            subtasks_completed: result.subtasks_completed,
            subtasks_total: result.subtasks_total,
            trace_hash: to_c(&result.report.trace_hash),
        });
        unsafe { *out = Box::into_raw(boxed) };
        clear_error();
        WsStatus::Ok
    })
}

/// Releases a run result. Accepts null.
///
/// # Safety
/// `result` must be null or a pointer returned by [`ws_run_task`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ws_result_free(result: *mut WsRunResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Whether the task's own evaluation passed.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_success(result: *const WsRunResult) -> bool {
    !result.is_null() && unsafe { &*result }.success
}

/// The extracted answer, or null when the run produced none. Borrows from
/// the result handle.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_answer(result: *const WsRunResult) -> *const c_char {
    if result.is_null() {
        return std::ptr::null();
    }
    match &unsafe { &*result }.answer {
        Some(answer) => answer.as_ptr(),
        None => std::ptr::null(),
    }
}

/// How many actions the run committed.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_executed_len(result: *const WsRunResult) -> usize {
    if result.is_null() {
        return 0;
    }
    unsafe { &*result }.executed.len()
}

/// The committed action at `index` ("click [4]", "type [3] [Abishek]"), or
/// null when out of range. Borrows from the result handle.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_executed_at(
    result: *const WsRunResult,
    index: usize,
) -> *const c_char {
    if result.is_null() {
        return std::ptr::null();
    }
    match unsafe { &*result }.executed.get(index) {
        Some(action) => action.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Total tree expansions across every subtask attempt.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_expansions(result: *const WsRunResult) -> u32 {
    if result.is_null() {
        return 0;
    }
    unsafe { &*result }.expansions_total
}

/// Completed and planned subtask counts.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`]; the out parameters
/// may each be null when that count is not wanted.
#[no_mangle]
pub unsafe extern "C" fn ws_result_subtasks(
    result: *const WsRunResult,
    completed: *mut usize,
    total: *mut usize,
) {
    if result.is_null() {
        return;
    }
    let r = unsafe { &*result };
    if !completed.is_null() {
        unsafe { *completed = r.subtasks_completed };
    }
    if !total.is_null() {
        unsafe { *total = r.subtasks_total };
    }
}

/// Hash of the run's event stream; equal hashes mean byte-identical traces.
/// Borrows from the result handle.
///
/// # Safety
/// `result` must be a live handle from [`ws_run_task`].
#[no_mangle]
pub unsafe extern "C" fn ws_result_trace_hash(result: *const WsRunResult) -> *const c_char {
    if result.is_null() {
        return std::ptr::null();
    }
    unsafe { &*result }.trace_hash.as_ptr()
}

/// A copy of the explanation for the most recent failure on this thread, or
/// null when the last call succeeded. Release it with [`ws_string_free`].
#[no_mangle]
pub extern "C" fn ws_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by [`ws_last_error_message`]. Accepts null.
///
/// # Safety
/// `s` must be null or an owned string handed out by this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ws_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
