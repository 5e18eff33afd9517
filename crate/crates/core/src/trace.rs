//! Run traces: an append-only JSONL event log with a deterministic run id,
//! plus the manifest and report files written next to it.
//!
//! Everything that decides behaviour is logged; wall-clock timestamps are
//! carried for humans but excluded from hashing and replay comparison, so
//! two runs of the same world, task, config, and oracles produce traces
//! that compare `Identical`. Real-valued scores are serialized as strings
//! with exactly six fractional digits to keep the byte form stable.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Effect, SearchConfig, Subtask};
use crate::oracles::Exchange;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io error: {0}")]
    Io(String),
    #[error("trace parse error: {0}")]
    Parse(String),
}

/// Fixed-width rendering used for every real number that enters a trace.
pub fn format_score(value: f64) -> String {
    format!("{value:.6}")
}

/// One Q update along a backpropagation path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QUpdate {
    pub node: usize,
    pub q: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    RunStart {
        task: String,
        goal: String,
        world_hash: String,
        oracles: String,
        config: SearchConfig,
    },
    PlanCreated {
        subtasks: Vec<Subtask>,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    PlanRefined {
        page: String,
        remaining: Vec<Subtask>,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    SubtaskStart {
        subtask: Subtask,
        attempt: u32,
        #[serde(default)]
        observation: String,
    },
    Select {
        frontier: usize,
        path: Vec<usize>,
    },
    Proposed {
        frontier: usize,
        action: String,
        intent: String,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Rejected {
        frontier: usize,
        action: String,
        reason: String,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Expanded {
        node: usize,
        parent: usize,
        action: String,
        intent: String,
        effect: Effect,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Scored {
        node: usize,
        s_eff: String,
        s_fut: String,
        s_total: String,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Decision {
        node: usize,
        stop: bool,
        reason: String,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Simulated {
        node: usize,
        action: Option<String>,
        advice: Option<String>,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    Backprop {
        node: usize,
        updates: Vec<QUpdate>,
    },
    SubtaskEnd {
        subtask: String,
        attempt: u32,
        complete: bool,
        assessment: String,
        expansions: u32,
        answer: Option<String>,
        scrolls_used: Option<u32>,
        #[serde(default)]
        exchanges: Vec<Exchange>,
    },
    RunEnd {
        success: bool,
        answer: Option<String>,
        executed: Vec<String>,
        subtasks_completed: usize,
        subtasks_total: usize,
        expansions_total: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub run: String,
    /// Wall-clock milliseconds; informational only.
    pub ts: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Inputs that identify a run. Two runs with equal identities replay each
/// other exactly.
pub fn run_id(
    world_hash: &str,
    task_id: &str,
    config: &SearchConfig,
    oracles: &str,
    demos: Option<&str>,
) -> String {
    let config_json =
        serde_json::to_string(config).expect("config serialization cannot fail");
    let demos_hash = sha256_hex(demos.unwrap_or("").as_bytes());
    let identity = format!("{world_hash}\n{task_id}\n{config_json}\n{oracles}\n{demos_hash}");
    sha256_hex(identity.as_bytes())[..16].to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects events in order, mirroring them to a JSONL file when a path is
/// given.
pub struct Recorder {
    run: String,
    seq: u64,
    events: Vec<TraceEvent>,
    sink: Option<BufWriter<fs::File>>,
}

impl Recorder {
    pub fn new(run: impl Into<String>, path: Option<&Path>) -> Result<Self, TraceError> {
        let sink = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)
                        .map_err(|e| TraceError::Io(format!("{}: {e}", dir.display())))?;
                }
                let file = fs::File::create(p)
                    .map_err(|e| TraceError::Io(format!("{}: {e}", p.display())))?;
                Some(BufWriter::new(file))
            }
            None => None,
        };
        Ok(Recorder { run: run.into(), seq: 0, events: Vec::new(), sink })
    }

    pub fn run(&self) -> &str {
        &self.run
    }

    pub fn record(&mut self, body: EventBody) -> Result<(), TraceError> {
        let event = TraceEvent { seq: self.seq, run: self.run.clone(), ts: now_ms(), body };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&event)
                .map_err(|e| TraceError::Io(e.to_string()))?;
            writeln!(sink, "{line}").map_err(|e| TraceError::Io(e.to_string()))?;
        }
        self.events.push(event);
        self.seq += 1;
        Ok(())
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn finish(mut self) -> Result<Vec<TraceEvent>, TraceError> {
        if let Some(sink) = &mut self.sink {
            sink.flush().map_err(|e| TraceError::Io(e.to_string()))?;
        }
        Ok(self.events)
    }
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| TraceError::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Canonical byte form of an event with the timestamp removed.
fn hashable_line(event: &TraceEvent) -> String {
    let mut value =
        serde_json::to_value(event).expect("event serialization cannot fail");
    value.as_object_mut().expect("events are objects").remove("ts");
    value.to_string()
}

/// Digest over every event except wall-clock timestamps.
pub fn trace_hash(events: &[TraceEvent]) -> String {
    let mut hasher = Sha256::new();
    for event in events {
        hasher.update(hashable_line(event).as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayOutcome {
    Identical,
    DivergesAtSeq(u64),
}

impl std::fmt::Display for ReplayOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReplayOutcome::Identical => write!(f, "identical"),
            ReplayOutcome::DivergesAtSeq(n) => write!(f, "diverges at seq {n}"),
        }
    }
}

/// Event-by-event comparison, ignoring timestamps. A missing tail counts as
/// divergence at the first absent sequence number.
pub fn compare_traces(a: &[TraceEvent], b: &[TraceEvent]) -> ReplayOutcome {
    for (x, y) in a.iter().zip(b.iter()) {
        if x.seq != y.seq || x.run != y.run || x.body != y.body {
            return ReplayOutcome::DivergesAtSeq(x.seq.min(y.seq));
        }
    }
    if a.len() != b.len() {
        return ReplayOutcome::DivergesAtSeq(a.len().min(b.len()) as u64);
    }
    ReplayOutcome::Identical
}

/// Identity block written next to the trace before a run starts. For
/// scripted oracle suites it pins everything needed to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: String,
    /// Where the world was loaded from, when it came from a file.
    #[serde(default)]
    pub world_path: Option<String>,
    pub world_hash: String,
    pub task: String,
    pub oracles: String,
    pub config: SearchConfig,
    pub demos_hash: String,
    #[serde(default)]
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskReport {
    pub subtask: String,
    pub attempts: u32,
    pub expansions: u32,
    pub complete: bool,
}

/// Summary derived purely from a trace's events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: String,
    pub success: bool,
    pub answer: Option<String>,
    pub subtasks_completed: usize,
    pub subtasks_total: usize,
    pub expansions_total: u32,
    pub events: usize,
    pub trace_hash: String,
    pub subtasks: Vec<SubtaskReport>,
}

pub fn build_report(events: &[TraceEvent]) -> RunReport {
    let mut report = RunReport {
        run: events.first().map(|e| e.run.clone()).unwrap_or_default(),
        success: false,
        answer: None,
        subtasks_completed: 0,
        subtasks_total: 0,
        expansions_total: 0,
        events: events.len(),
        trace_hash: trace_hash(events),
        subtasks: Vec::new(),
    };
    for event in events {
        match &event.body {
            EventBody::SubtaskEnd { subtask, attempt, complete, expansions, .. } => {
                match report.subtasks.iter_mut().find(|s| &s.subtask == subtask) {
                    Some(row) => {
                        row.attempts = (*attempt).max(row.attempts);
                        row.expansions += expansions;
                        row.complete = *complete;
                    }
                    None => report.subtasks.push(SubtaskReport {
                        subtask: subtask.clone(),
                        attempts: *attempt,
                        expansions: *expansions,
                        complete: *complete,
                    }),
                }
            }
            EventBody::RunEnd {
                success,
                answer,
                subtasks_completed,
                subtasks_total,
                expansions_total,
                ..
            } => {
                report.success = *success;
                report.answer = answer.clone();
                report.subtasks_completed = *subtasks_completed;
                report.subtasks_total = *subtasks_total;
                report.expansions_total = *expansions_total;
            }
            _ => {}
        }
    }
    report
}

/// Companion file path: the trace's final extension is replaced by
/// `suffix` ("manifest.json", "report.json").
pub fn sibling_path(trace: &Path, suffix: &str) -> PathBuf {
    trace.with_extension(suffix)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), TraceError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| TraceError::Io(e.to_string()))?;
    fs::write(path, body + "\n")
        .map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events(run: &str, ts: u64) -> Vec<TraceEvent> {
        let mk = |seq, body| TraceEvent { seq, run: run.into(), ts, body };
        vec![
            mk(
                0,
                EventBody::RunStart {
                    task: "t1".into(),
                    goal: "do the thing".into(),
                    world_hash: "abc".into(),
                    oracles: "scripted".into(),
                    config: SearchConfig::default(),
                },
            ),
            mk(
                1,
                EventBody::Scored {
                    node: 1,
                    s_eff: format_score(9.0),
                    s_fut: format_score(8.0),
                    s_total: format_score(8.5),
                    exchanges: Vec::new(),
                },
            ),
            mk(
                2,
                EventBody::SubtaskEnd {
                    subtask: "navigate".into(),
                    attempt: 1,
                    complete: true,
                    assessment: "reached".into(),
                    expansions: 3,
                    answer: None,
                    scrolls_used: None,
                    exchanges: Vec::new(),
                },
            ),
            mk(
                3,
                EventBody::RunEnd {
                    success: true,
                    answer: Some("42".into()),
                    executed: vec!["click [1]".into()],
                    subtasks_completed: 1,
                    subtasks_total: 1,
                    expansions_total: 3,
                },
            ),
        ]
    }

    #[test]
    fn scores_render_with_six_fractional_digits() {
        assert_eq!(format_score(8.5), "8.500000");
        assert_eq!(format_score(0.0), "0.000000");
        assert_eq!(format_score(10.0), "10.000000");
        assert_eq!(format_score(2.0 / 3.0), "0.666667");
    }

    #[test]
    fn events_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut recorder = Recorder::new("deadbeefdeadbeef", Some(&path)).unwrap();
        for event in sample_events("deadbeefdeadbeef", 0) {
            recorder.record(event.body).unwrap();
        }
        let written = recorder.finish().unwrap();
        let loaded = load_trace(&path).unwrap();
        assert_eq!(written.len(), loaded.len());
        for (w, l) in written.iter().zip(&loaded) {
            assert_eq!(w.seq, l.seq);
            assert_eq!(w.body, l.body);
        }
        let line1 = fs::read_to_string(&path).unwrap();
        assert!(line1.contains("\"kind\":\"run_start\""));
        assert!(line1.contains("\"s_total\":\"8.500000\""));
    }

    #[test]
    fn trace_hash_ignores_timestamps_only() {
        let a = sample_events("r", 1);
        let b = sample_events("r", 999);
        assert_eq!(trace_hash(&a), trace_hash(&b));

        let mut c = sample_events("r", 1);
        c[1].body = EventBody::Scored {
            node: 1,
            s_eff: format_score(9.0),
            s_fut: format_score(8.0),
            s_total: format_score(8.6),
            exchanges: Vec::new(),
        };
        assert_ne!(trace_hash(&a), trace_hash(&c));
    }

    #[test]
    fn comparison_flags_the_first_divergence() {
        let a = sample_events("r", 1);
        let b = sample_events("r", 2);
        assert_eq!(compare_traces(&a, &b), ReplayOutcome::Identical);

        let mut c = sample_events("r", 1);
        c[2].body = EventBody::SubtaskEnd {
            subtask: "navigate".into(),
            attempt: 2,
            complete: false,
            assessment: "missed".into(),
            expansions: 9,
            answer: None,
            scrolls_used: None,
            exchanges: Vec::new(),
        };
        assert_eq!(compare_traces(&a, &c), ReplayOutcome::DivergesAtSeq(2));
        assert_eq!(compare_traces(&a, &a[..3]), ReplayOutcome::DivergesAtSeq(3));
    }

    #[test]
    fn run_ids_are_stable_and_input_sensitive() {
        let cfg = SearchConfig::default();
        let id = run_id("worldhash", "t1", &cfg, "scripted", None);
        assert_eq!(id.len(), 16);
        assert_eq!(id, run_id("worldhash", "t1", &cfg, "scripted", None));
        assert_ne!(id, run_id("worldhash", "t2", &cfg, "scripted", None));
        assert_ne!(id, run_id("worldhash", "t1", &cfg, "remote", None));
        assert_ne!(id, run_id("worldhash", "t1", &cfg, "scripted", Some("demos")));
        let other = SearchConfig { n_max: 11, ..cfg };
        assert_ne!(id, run_id("worldhash", "t1", &other, "scripted", None));
    }

    #[test]
    fn report_summarizes_the_event_stream() {
        let events = sample_events("r", 5);
        let report = build_report(&events);
        assert!(report.success);
        assert_eq!(report.answer.as_deref(), Some("42"));
        assert_eq!(report.subtasks.len(), 1);
        assert_eq!(report.subtasks[0].expansions, 3);
        assert!(report.subtasks[0].complete);
        assert_eq!(report.trace_hash, trace_hash(&events));
    }

    #[test]
    fn sibling_paths_swap_the_extension() {
        assert_eq!(
            sibling_path(Path::new("/tmp/x/run.jsonl"), "manifest.json"),
            PathBuf::from("/tmp/x/run.manifest.json")
        );
        assert_eq!(
            sibling_path(Path::new("out"), "report.json"),
            PathBuf::from("out.report.json")
        );
    }
}
