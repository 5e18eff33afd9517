//! Task-level orchestration. A run decomposes the task into subtasks, drives
//! each interaction subtask through the tree search, re-checks the remaining
//! plan after every completed step, reads answers off the page for extraction
//! subtasks, and scores the final state against the task's success predicate.
//!
//! Progress is checkpointed: a subtask that completes advances the snapshot
//! all later subtasks start from, and a subtask that fails leaves it where it
//! was. Failed subtasks are retried up to the configured attempt budget with
//! a reflection note carried between attempts, then skipped (or, when
//! configured, the whole run aborts).

use std::path::Path;

use crate::env::SimEnv;
use crate::local::{run_subtask, SearchError};
use crate::model::{Action, Plan, ScrollDirection, SearchConfig, Subtask, SubtaskKind, Task};
use crate::oracles::{ExtractorStep, OracleSuite};
use crate::trace::{
    build_report, run_id, sha256_hex, sibling_path, write_json_file, EventBody, Recorder,
    RunManifest, RunReport, TraceEvent,
};

/// Everything a finished run reports back to the caller.
#[derive(Debug)]
pub struct RunResult {
    pub run: String,
    pub success: bool,
    pub answer: Option<String>,
    /// Actions actually committed, in order (failed attempts excluded).
    pub executed: Vec<Action>,
    pub subtasks_total: usize,
    pub subtasks_completed: usize,
    pub expansions_total: u32,
    pub events: Vec<TraceEvent>,
    pub report: RunReport,
}

/// Runs `task_id` from the environment's initial state. When `trace` is set,
/// the event log is streamed there as JSONL and a manifest and report are
/// written next to it; `world_path` is recorded in the manifest when the
/// world came from a file.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    task_id: &str,
    cfg: &SearchConfig,
    trace: Option<&Path>,
    world_path: Option<&str>,
    demos: Option<&str>,
) -> Result<RunResult, SearchError> {
    cfg.validate()?;
    let world = env.world_handle();
    let task_spec = world
        .tasks
        .iter()
        .find(|t| t.id == task_id)
        .ok_or_else(|| SearchError::UnknownTask(task_id.to_string()))?;
    let task = Task { id: task_spec.id.clone(), description: task_spec.goal.clone() };

    let world_json =
        serde_json::to_string(&*world).expect("a validated world always serializes");
    let world_hash = sha256_hex(world_json.as_bytes());
    let run = run_id(&world_hash, task_id, cfg, &oracles.kind, demos);
    let mut recorder = Recorder::new(run.clone(), trace)?;
    if let Some(path) = trace {
        let manifest = RunManifest {
            run: run.clone(),
            world_path: world_path.map(str::to_string),
            world_hash: world_hash.clone(),
            task: task_id.to_string(),
            oracles: oracles.kind.clone(),
            config: cfg.clone(),
            demos_hash: sha256_hex(demos.unwrap_or("").as_bytes()),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json_file(&sibling_path(path, "manifest.json"), &manifest)?;
    }

    env.reset();
    recorder.record(EventBody::RunStart {
        task: task.id.clone(),
        goal: task.description.clone(),
        world_hash,
        oracles: oracles.kind.clone(),
        config: cfg.clone(),
    })?;

    let subtasks = oracles.planner.decompose(&task, &env.observe(), demos)?;
    recorder.record(EventBody::PlanCreated {
        subtasks: subtasks.clone(),
        exchanges: oracles.drain_exchanges(),
    })?;
    let mut plan = Plan { pending: subtasks.into(), completed: Vec::new() };

    let mut checkpoint = env.snapshot();
    let mut executed: Vec<Action> = Vec::new();
    let mut answer: Option<String> = None;
    let mut expansions_total: u32 = 0;
    let mut failed: usize = 0;

    while let Some(subtask) = plan.pending.pop_front() {
        let complete = match subtask.kind {
            SubtaskKind::Interaction => {
                let mut note: Option<String> = None;
                let mut done = false;
                for attempt in 1..=cfg.max_subtask_attempts {
                    let outcome = run_subtask(
                        env,
                        oracles,
                        &subtask,
                        &checkpoint,
                        &executed,
                        note.as_deref(),
                        attempt,
                        cfg,
                        &mut recorder,
                    )?;
                    expansions_total += outcome.expansions;
                    if outcome.complete {
                        checkpoint = outcome.snapshot;
                        executed.extend(outcome.executed);
                        done = true;
                        break;
                    }
                    note = outcome.retry_note;
                }
                done
            }
            SubtaskKind::Extraction => {
                let outcome =
                    run_extraction(env, oracles, &subtask, &checkpoint, cfg, &mut recorder)?;
                answer = Some(outcome.answer);
                if outcome.complete {
                    checkpoint = env.snapshot();
                    executed.extend(outcome.scroll_actions);
                }
                outcome.complete
            }
        };

        if complete {
            plan.completed.push(subtask);
            env.restore(&checkpoint)?;
            let pending: Vec<Subtask> = plan.pending.iter().cloned().collect();
            if let Some(remaining) =
                oracles.planner.refine(&task, &plan.completed, &pending, &env.observe())?
            {
                recorder.record(EventBody::PlanRefined {
                    page: env.page_id().to_string(),
                    remaining: remaining.clone(),
                    exchanges: oracles.drain_exchanges(),
                })?;
                plan.pending = remaining.into();
            }
        } else {
            failed += 1;
            if cfg.abort_on_subtask_failure {
                break;
            }
        }
    }

    env.restore(&checkpoint)?;
    let success = env.evaluate(task_spec, answer.as_deref(), &executed);
    let subtasks_completed = plan.completed.len();
    let subtasks_total = subtasks_completed + failed + plan.pending.len();
    recorder.record(EventBody::RunEnd {
        success,
        answer: answer.clone(),
        executed: executed.iter().map(Action::to_string).collect(),
        subtasks_completed,
        subtasks_total,
        expansions_total,
    })?;

    let report = build_report(recorder.events());
    if let Some(path) = trace {
        write_json_file(&sibling_path(path, "report.json"), &report)?;
    }
    let events = recorder.finish()?;
    Ok(RunResult {
        run,
        success,
        answer,
        executed,
        subtasks_total,
        subtasks_completed,
        expansions_total,
        events,
        report,
    })
}

struct ExtractionOutcome {
    answer: String,
    complete: bool,
    scroll_actions: Vec<Action>,
}

/// Reads the answer for an extraction subtask off the checkpoint page,
/// scrolling down while the extractor reports the target is not yet visible.
/// A run that never finds it settles on "N/A".
fn run_extraction(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    subtask: &Subtask,
    checkpoint: &crate::env::EnvSnapshot,
    cfg: &SearchConfig,
    recorder: &mut Recorder,
) -> Result<ExtractionOutcome, SearchError> {
    env.restore(checkpoint)?;
    recorder.record(EventBody::SubtaskStart {
        subtask: subtask.clone(),
        attempt: 1,
        observation: env.observe().actree,
    })?;

    let mut scroll_actions: Vec<Action> = Vec::new();
    let mut found: Option<String> = None;
    let assessment;
    loop {
        match oracles.extractor.extract(subtask, &env.observe())? {
            ExtractorStep::Found(text) => {
                assessment = "found the requested information".to_string();
                found = Some(text);
                break;
            }
            ExtractorStep::Unanswerable => {
                assessment = "the page cannot answer this".to_string();
                break;
            }
            ExtractorStep::NotVisible => {
                let scrolled = scroll_actions.len() as u32;
                if scrolled >= cfg.n_scroll_max || !env.can_scroll(ScrollDirection::Down) {
                    assessment = "the information never became visible".to_string();
                    break;
                }
                let action = Action::Scroll { direction: ScrollDirection::Down };
                env.apply(&action)?;
                scroll_actions.push(action);
            }
        }
    }

    let complete = found.is_some();
    let answer = found.unwrap_or_else(|| "N/A".to_string());
    recorder.record(EventBody::SubtaskEnd {
        subtask: subtask.description.clone(),
        attempt: 1,
        complete,
        assessment,
        expansions: 0,
        answer: Some(answer.clone()),
        scrolls_used: Some(scroll_actions.len() as u32),
        exchanges: oracles.drain_exchanges(),
    })?;
    Ok(ExtractionOutcome { answer, complete, scroll_actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::world::load_world_str;
    use crate::oracles::scripted::ScriptedOracles;
    use crate::trace::{compare_traces, load_trace, ReplayOutcome};
    use std::sync::Arc;

    fn vault_world(code_window: u32, windows: u32) -> Arc<crate::env::world::WorldSpec> {
        Arc::new(
            load_world_str(
                &serde_json::json!({
                    "start_page": "hall",
                    "pages": {
                        "hall": {
                            "base_url": "https://keep.example/hall",
                            "elements": [
                                {"id": 1, "role": "button", "label": "Shiny banner",
                                 "on_click": "no_effect"},
                                {"id": 3, "role": "link", "label": "Vault",
                                 "on_click": {"goto": "vault"}}
                            ]
                        },
                        "vault": {
                            "base_url": "https://keep.example/vault",
                            "scroll_windows": windows,
                            "elements": [
                                {"id": 9, "role": "statictext", "label": "Welcome"},
                                {"id": 10, "role": "statictext", "label": "Code: 7741",
                                 "window": code_window}
                            ]
                        }
                    },
                    "tasks": [
                        {"id": "read-code", "goal": "Read the vault code",
                         "eval": {"answer_match": {"expected": "7741"}}}
                    ],
                    "script": {
                        "tasks": {
                            "read-code": {
                                "plan": [
                                    {"description": "open the vault",
                                     "objective": "the vault page is open",
                                     "kind": "interaction"},
                                    {"description": "read the code",
                                     "objective": "the vault code is known",
                                     "kind": "extraction"}
                                ],
                                "subtasks": [
                                    {
                                        "proposals": {
                                            "hall": [
                                                {"action": "click [3]",
                                                 "intent": "go to the vault page"}
                                            ]
                                        },
                                        "solution": ["click [3]"],
                                        "stop_when": {"page": "vault"}
                                    },
                                    {"extract": {"regex": "Code: (\\d+)"}}
                                ]
                            }
                        }
                    }
                })
                .to_string(),
            )
            .unwrap(),
        )
    }

    fn run(world: Arc<crate::env::world::WorldSpec>, trace: Option<&Path>) -> RunResult {
        let mut env = SimEnv::from_shared(world.clone());
        let suite = ScriptedOracles::suite(world, true);
        run_task(&mut env, &suite, "read-code", &SearchConfig::default(), trace, None, None)
            .unwrap()
    }

    #[test]
    fn completes_both_subtasks_and_extracts_the_code() {
        let result = run(vault_world(0, 1), None);
        assert!(result.success);
        assert_eq!(result.answer.as_deref(), Some("7741"));
        assert_eq!(result.subtasks_completed, 2);
        assert_eq!(result.subtasks_total, 2);
        assert_eq!(
            result.executed.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            vec!["click [3]"]
        );
        assert_eq!(result.report.success, result.success);
        assert_eq!(result.report.trace_hash, crate::trace::trace_hash(&result.events));
    }

    #[test]
    fn extraction_scrolls_until_the_code_appears() {
        let result = run(vault_world(2, 3), None);
        assert!(result.success);
        let scrolls = result
            .events
            .iter()
            .find_map(|e| match &e.body {
                EventBody::SubtaskEnd { scrolls_used: Some(n), .. } => Some(*n),
                _ => None,
            })
            .unwrap();
        assert_eq!(scrolls, 2);
        assert_eq!(
            result.executed.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            vec!["click [3]", "scroll [down]", "scroll [down]"]
        );
    }

    #[test]
    fn unfindable_answer_settles_on_na_after_the_scroll_budget() {
        // Six windows with the code in none the extractor can match.
        let world = Arc::new(
            load_world_str(
                &serde_json::json!({
                    "start_page": "vault",
                    "pages": {
                        "vault": {
                            "base_url": "https://keep.example/vault",
                            "scroll_windows": 7,
                            "elements": [
                                {"id": 9, "role": "statictext", "label": "Welcome"}
                            ]
                        }
                    },
                    "tasks": [
                        {"id": "read-code", "goal": "Read the vault code",
                         "eval": {"answer_match": {"expected": "7741"}}}
                    ],
                    "script": {
                        "tasks": {
                            "read-code": {
                                "plan": [
                                    {"description": "read the code",
                                     "objective": "the vault code is known",
                                     "kind": "extraction"}
                                ],
                                "subtasks": [
                                    {"extract": {"regex": "Code: (\\d+)"}}
                                ]
                            }
                        }
                    }
                })
                .to_string(),
            )
            .unwrap(),
        );
        let result = run(world, None);
        assert!(!result.success);
        assert_eq!(result.answer.as_deref(), Some("N/A"));
        assert_eq!(result.subtasks_completed, 0);
        let scrolls = result
            .events
            .iter()
            .find_map(|e| match &e.body {
                EventBody::SubtaskEnd { scrolls_used: Some(n), .. } => Some(*n),
                _ => None,
            })
            .unwrap();
        assert_eq!(scrolls, 5, "the scroll budget caps the hunt");
        assert!(result.executed.is_empty(), "failed extraction commits nothing");
    }

    #[test]
    fn reruns_replay_identically_and_write_sidecar_files() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a/run.trace.jsonl");
        let second = dir.path().join("b/run.trace.jsonl");
        let r1 = run(vault_world(0, 1), Some(&first));
        let r2 = run(vault_world(0, 1), Some(&second));
        assert_eq!(r1.run, r2.run, "identical inputs name the same run");

        let t1 = load_trace(&first).unwrap();
        let t2 = load_trace(&second).unwrap();
        assert_eq!(compare_traces(&t1, &t2), ReplayOutcome::Identical);

        let manifest = std::fs::read_to_string(sibling_path(&first, "manifest.json")).unwrap();
        assert!(manifest.contains(&r1.run));
        let report = std::fs::read_to_string(sibling_path(&first, "report.json")).unwrap();
        let parsed: RunReport = serde_json::from_str(&report).unwrap();
        assert_eq!(parsed, r1.report);
    }

    #[test]
    fn failed_subtask_is_retried_then_skipped() {
        // The only proposal is a static text, so the interaction subtask can
        // never finish; extraction still runs from the untouched checkpoint.
        let world = Arc::new(
            load_world_str(
                &serde_json::json!({
                    "start_page": "hall",
                    "pages": {
                        "hall": {
                            "base_url": "https://keep.example/hall",
                            "elements": [
                                {"id": 1, "role": "statictext", "label": "Code: 55"},
                                {"id": 2, "role": "button", "label": "Nothing",
                                 "on_click": "no_effect"}
                            ]
                        },
                        "archive": {
                            "base_url": "https://keep.example/archive",
                            "elements": [
                                {"id": 7, "role": "statictext", "label": "Dust"}
                            ]
                        }
                    },
                    "tasks": [
                        {"id": "read-code", "goal": "Read the code",
                         "eval": {"answer_match": {"expected": "55"}}}
                    ],
                    "script": {
                        "tasks": {
                            "read-code": {
                                "plan": [
                                    {"description": "reach the archive",
                                     "objective": "the archive page is open",
                                     "kind": "interaction"},
                                    {"description": "read the code",
                                     "objective": "the code is known",
                                     "kind": "extraction"}
                                ],
                                "subtasks": [
                                    {
                                        "proposals": {"hall": [
                                            {"action": "click [2]", "intent": "try the button"}
                                        ]},
                                        "stop_when": {"page": "archive"},
                                        "retry_hint": "the archive may not be reachable from here"
                                    },
                                    {"extract": {"regex": "Code: (\\d+)"}}
                                ]
                            }
                        }
                    }
                })
                .to_string(),
            )
            .unwrap(),
        );
        let result = run(world.clone(), None);
        assert!(result.success, "the extraction alone satisfies the answer check");
        assert_eq!(result.answer.as_deref(), Some("55"));
        assert_eq!(result.subtasks_completed, 1);
        assert_eq!(result.subtasks_total, 2);
        let attempts: Vec<u32> = result
            .events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::SubtaskStart { subtask, attempt, .. }
                    if subtask.description == "reach the archive" =>
                {
                    Some(*attempt)
                }
                _ => None,
            })
            .collect();
        assert_eq!(attempts, vec![1, 2], "two attempts before giving up");

        let mut env = SimEnv::from_shared(world.clone());
        let suite = ScriptedOracles::suite(world, true);
        let cfg = SearchConfig { abort_on_subtask_failure: true, ..SearchConfig::default() };
        let aborted = run_task(&mut env, &suite, "read-code", &cfg, None, None, None).unwrap();
        assert!(!aborted.success);
        assert_eq!(aborted.answer, None, "the run aborted before extraction");
        assert_eq!(aborted.subtasks_total, 2);
        assert_eq!(aborted.subtasks_completed, 0);
    }

    #[test]
    fn refinement_drops_stale_pending_subtasks() {
        let world = Arc::new(
            load_world_str(
                &serde_json::json!({
                    "start_page": "hall",
                    "pages": {
                        "hall": {
                            "base_url": "https://keep.example/hall",
                            "elements": [
                                {"id": 3, "role": "link", "label": "Vault",
                                 "on_click": {"goto": "vault"}}
                            ]
                        },
                        "vault": {
                            "base_url": "https://keep.example/vault",
                            "elements": [
                                {"id": 10, "role": "statictext", "label": "Code: 7741"}
                            ]
                        }
                    },
                    "tasks": [
                        {"id": "read-code", "goal": "Read the vault code",
                         "eval": {"answer_match": {"expected": "7741"}}}
                    ],
                    "script": {
                        "tasks": {
                            "read-code": {
                                "plan": [
                                    {"description": "open the vault",
                                     "objective": "the vault page is open",
                                     "kind": "interaction"},
                                    {"description": "dismiss the banner",
                                     "objective": "the banner is gone",
                                     "kind": "interaction"},
                                    {"description": "read the code",
                                     "objective": "the vault code is known",
                                     "kind": "extraction"}
                                ],
                                "refine": [
                                    {"when_page": "vault", "drop_matching": "banner"}
                                ],
                                "subtasks": [
                                    {
                                        "proposals": {"hall": [
                                            {"action": "click [3]",
                                             "intent": "go to the vault page"}
                                        ]},
                                        "solution": ["click [3]"],
                                        "stop_when": {"page": "vault"}
                                    },
                                    {"proposals": {"vault": [
                                        {"action": "click [10]", "intent": "poke the code"}
                                     ]},
                                     "stop_when": {"label_visible": "Banner"}},
                                    {"extract": {"regex": "Code: (\\d+)"}}
                                ]
                            }
                        }
                    }
                })
                .to_string(),
            )
            .unwrap(),
        );
        let result = run(world, None);
        assert!(result.success);
        assert_eq!(result.subtasks_total, 2, "the dropped subtask never ran");
        let refined = result
            .events
            .iter()
            .find_map(|e| match &e.body {
                EventBody::PlanRefined { page, remaining, .. } => {
                    Some((page.clone(), remaining.len()))
                }
                _ => None,
            })
            .unwrap();
        assert_eq!(refined, ("vault".into(), 1));
        let started: Vec<&str> = result
            .events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::SubtaskStart { subtask, .. } => Some(subtask.description.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(started, vec!["open the vault", "read the code"]);
    }
}
