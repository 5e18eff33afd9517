//! Drives the C ABI the way a foreign caller would: raw pointers in, status
//! codes out, strings read back through the accessors.

use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use webscout_ffi::{
    ws_last_error_message, ws_result_answer, ws_result_executed_at, ws_result_executed_len,
    ws_result_expansions, ws_result_free, ws_result_subtasks, ws_result_success,
    ws_result_trace_hash, ws_run_task, ws_string_free, ws_world_free, ws_world_load,
    ws_world_task_count, ws_world_task_id_at, WsRunResult, WsStatus, WsWorld,
};

fn world_path(name: &str) -> CString {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../worlds")
        .join(format!("{name}.json"));
    CString::new(path.to_str().expect("utf-8 path")).unwrap()
}

fn load(name: &str) -> *mut WsWorld {
    let mut world: *mut WsWorld = ptr::null_mut();
    let status = unsafe { ws_world_load(world_path(name).as_ptr(), &mut world) };
    assert_eq!(status, WsStatus::Ok, "loading {name}: {}", take_error());
    assert!(!world.is_null());
    world
}

fn take_error() -> String {
    let raw = ws_last_error_message();
    if raw.is_null() {
        return "(no error recorded)".into();
    }
    let text = unsafe { CStr::from_ptr(raw) }.to_string_lossy().into_owned();
    unsafe { ws_string_free(raw) };
    text
}

fn read_str(ptr: *const c_char) -> Option<String> {
    if ptr.is_null() {
        None
    } else {
        Some(unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned())
    }
}

fn run(
    world: *const WsWorld,
    task: &str,
    config: Option<&str>,
) -> Result<*mut WsRunResult, (WsStatus, String)> {
    let task = CString::new(task).unwrap();
    let config = config.map(|c| CString::new(c).unwrap());
    let mut result: *mut WsRunResult = ptr::null_mut();
    let status = unsafe {
        ws_run_task(
            world,
            task.as_ptr(),
            config.as_ref().map_or(ptr::null(), |c| c.as_ptr()),
            true,
            ptr::null(),
            &mut result,
        )
    };
    if status == WsStatus::Ok {
        assert!(!result.is_null());
        Ok(result)
    } else {
        assert!(result.is_null());
        Err((status, take_error()))
    }
}

#[test]
fn a_full_run_round_trips_through_the_abi() {
    let world = load("invite-member");
    assert_eq!(unsafe { ws_world_task_count(world) }, 1);
    assert_eq!(
        read_str(unsafe { ws_world_task_id_at(world, 0) }).as_deref(),
        Some("invite-member")
    );
    assert!(unsafe { ws_world_task_id_at(world, 1) }.is_null());

    let result = run(world, "invite-member", None).expect("run succeeds");
    assert!(unsafe { ws_result_success(result) });
    assert!(unsafe { ws_result_answer(result) }.is_null());

    let len = unsafe { ws_result_executed_len(result) };
    let actions: Vec<String> = (0..len)
        .map(|i| read_str(unsafe { ws_result_executed_at(result, i) }).unwrap())
        .collect();
    assert_eq!(
        actions,
        vec!["click [1]", "click [2]", "type [3] [Abishek]", "click [4]"]
    );
    assert!(unsafe { ws_result_executed_at(result, len) }.is_null());

    assert_eq!(unsafe { ws_result_expansions(result) }, 4);
    let (mut completed, mut total) = (usize::MAX, usize::MAX);
    unsafe { ws_result_subtasks(result, &mut completed, &mut total) };
    assert_eq!((completed, total), (2, 2));

    let hash = read_str(unsafe { ws_result_trace_hash(result) }).unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.bytes().all(|b| b.is_ascii_hexdigit()));

    unsafe { ws_result_free(result) };
    unsafe { ws_world_free(world) };
}

#[test]
fn an_extraction_answer_comes_back_as_a_string() {
    let world = load("scroll-extraction");
    let result = run(world, "read-revenue", None).expect("run succeeds");
    assert!(unsafe { ws_result_success(result) });
    assert_eq!(read_str(unsafe { ws_result_answer(result) }).as_deref(), Some("4200"));
    unsafe { ws_result_free(result) };
    unsafe { ws_world_free(world) };
}

#[test]
fn equal_runs_share_a_trace_hash() {
    let world = load("gitlab-pages");
    let first = run(world, "pages-navigation", None).expect("run succeeds");
    let second = run(world, "pages-navigation", None).expect("run succeeds");
    assert_eq!(
        read_str(unsafe { ws_result_trace_hash(first) }),
        read_str(unsafe { ws_result_trace_hash(second) })
    );
    unsafe { ws_result_free(first) };
    unsafe { ws_result_free(second) };
    unsafe { ws_world_free(world) };
}

#[test]
fn config_json_reaches_the_search() {
    let world = load("retry-required");
    let result =
        run(world, "get-inside", Some(r#"{"n_max": 2, "max_subtask_attempts": 1}"#))
            .expect("a failed run is still a clean ABI outcome");
    assert!(!unsafe { ws_result_success(result) });
    assert_eq!(unsafe { ws_result_expansions(result) }, 2);
    unsafe { ws_result_free(result) };
    unsafe { ws_world_free(world) };
}

#[test]
fn bad_inputs_map_to_distinct_statuses() {
    let mut world: *mut WsWorld = ptr::null_mut();

    let missing = CString::new("/nonexistent/world.json").unwrap();
    let status = unsafe { ws_world_load(missing.as_ptr(), &mut world) };
    assert_eq!(status, WsStatus::Io);
    assert!(world.is_null());
    assert!(take_error().contains("not found"));

    let status = unsafe { ws_world_load(ptr::null(), &mut world) };
    assert_eq!(status, WsStatus::NullArgument);

    let scratch = tempfile::tempdir().unwrap();
    let invalid = scratch.path().join("broken.json");
    std::fs::write(&invalid, r#"{"start_page": "nowhere", "pages": {}}"#).unwrap();
    let invalid_c = CString::new(invalid.to_str().unwrap()).unwrap();
    let status = unsafe { ws_world_load(invalid_c.as_ptr(), &mut world) };
    assert_eq!(status, WsStatus::InvalidWorld);
    assert!(world.is_null());

    let world = load("invite-member");
    match run(world, "no-such-task", None) {
        Err((WsStatus::UnknownTask, message)) => {
            assert!(message.contains("no-such-task"));
        }
        other => panic!("expected an unknown-task status, got {other:?}"),
    }
    match run(world, "invite-member", Some("{not json")) {
        Err((WsStatus::InvalidConfig, _)) => {}
        other => panic!("expected an invalid-config status, got {other:?}"),
    }
    match run(world, "invite-member", Some(r#"{"w_eff": 0.9, "w_fut": 0.9}"#)) {
        Err((WsStatus::InvalidConfig, message)) => {
            assert!(!message.is_empty());
        }
        other => panic!("expected weight validation to fail, got {other:?}"),
    }
    unsafe { ws_world_free(world) };
}

#[test]
fn freeing_null_is_harmless_and_errors_do_not_linger() {
    unsafe {
        ws_world_free(ptr::null_mut());
        ws_result_free(ptr::null_mut());
        ws_string_free(ptr::null_mut());
    }

    let world = load("invite-member");
    assert!(run(world, "ghost-task", None).is_err());
    let result = run(world, "invite-member", None).expect("run succeeds");
    assert!(ws_last_error_message().is_null(), "a successful call must clear the error");
    unsafe { ws_result_free(result) };
    unsafe { ws_world_free(world) };
}

#[test]
fn null_handles_degrade_to_empty_reads() {
    unsafe {
        assert_eq!(ws_world_task_count(ptr::null()), 0);
        assert!(ws_world_task_id_at(ptr::null(), 0).is_null());
        assert!(!ws_result_success(ptr::null()));
        assert!(ws_result_answer(ptr::null()).is_null());
        assert_eq!(ws_result_executed_len(ptr::null()), 0);
        assert!(ws_result_executed_at(ptr::null(), 0).is_null());
        assert_eq!(ws_result_expansions(ptr::null()), 0);
        assert!(ws_result_trace_hash(ptr::null()).is_null());
        let mut sink = 7usize;
        ws_result_subtasks(ptr::null(), &mut sink, ptr::null_mut());
        assert_eq!(sink, 7);
    }
}

#[test]
fn a_traced_run_writes_the_three_files() {
    let scratch = tempfile::tempdir().unwrap();
    let trace = scratch.path().join("ffi.jsonl");
    let world = load("statictext-trap");
    let task = CString::new("open-dashboard").unwrap();
    let trace_c = CString::new(trace.to_str().unwrap()).unwrap();
    let mut result: *mut WsRunResult = ptr::null_mut();
    let status = unsafe {
        ws_run_task(world, task.as_ptr(), ptr::null(), true, trace_c.as_ptr(), &mut result)
    };
    assert_eq!(status, WsStatus::Ok, "{}", take_error());
    assert!(trace.exists());
    assert!(scratch.path().join("ffi.manifest.json").exists());
    assert!(scratch.path().join("ffi.report.json").exists());
    unsafe { ws_result_free(result) };
    unsafe { ws_world_free(world) };
}
