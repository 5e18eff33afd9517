//! Helpers shared by the integration test targets: world loading, an
//! independent brute-force solvability check, and a canned chat-completion
//! server for exercising the remote oracles without a live model.
//!
//! Each test target compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use webscout::env::world::{load_world, EvalSpec, WorldSpec};
use webscout::env::SimEnv;
use webscout::model::{Action, ScrollDirection};

pub fn worlds_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../worlds")
}

pub fn load(name: &str) -> Arc<WorldSpec> {
    let path = worlds_dir().join(format!("{name}.json"));
    Arc::new(load_world(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Brute-force breadth-first search over the raw world graph, independent of
/// the agent stack: it enumerates clicks, typing with the world's candidate
/// texts, and scrolling, and asks only whether the task's success condition
/// is reachable at all. Answer tasks count as reachable when the expected
/// text can be made visible somewhere.
pub fn solvable(world: &Arc<WorldSpec>, task_id: &str) -> bool {
    let task = world
        .tasks
        .iter()
        .find(|t| t.id == task_id)
        .unwrap_or_else(|| panic!("no task '{task_id}'"));
    let mut env = SimEnv::from_shared(world.clone());

    let goal_met = |env: &SimEnv, executed: &[Action]| -> bool {
        match &task.eval {
            EvalSpec::AnswerMatch { expected } => {
                let want = normalize(expected);
                env.observe().elements.iter().any(|el| normalize(&el.label).contains(&want))
            }
            _ => env.evaluate(task, None, executed),
        }
    };

    // Dedup on the state fingerprint plus how much of a required action
    // sequence has been matched, so history-sensitive goals are not pruned.
    let matched_len = |executed: &[Action]| -> usize {
        match &task.eval {
            EvalSpec::ActionTraceMatch { required } => {
                let mut need = required.iter();
                let mut current = need.next();
                let mut count = 0;
                for action in executed {
                    if let Some(want) = current {
                        if &action.to_string() == want {
                            count += 1;
                            current = need.next();
                        }
                    }
                }
                count
            }
            _ => 0,
        }
    };

    let start = env.snapshot();
    if goal_met(&env, &[]) {
        return true;
    }

    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(format!("{}|0", env.fingerprint()));
    let mut queue = VecDeque::new();
    queue.push_back((start, Vec::<Action>::new()));
    let mut budget = 50_000u32;

    while let Some((snapshot, executed)) = queue.pop_front() {
        if executed.len() >= 12 {
            continue;
        }
        env.restore(&snapshot).expect("snapshot from this env");

        let mut moves: Vec<Action> = Vec::new();
        for el in env.visible() {
            if el.on_click.is_some() {
                moves.push(Action::click(el.id.0));
            }
            if el.accepts_text() {
                for text in &world.input_texts {
                    moves.push(Action::type_text(el.id.0, text));
                }
            }
        }
        for direction in [ScrollDirection::Up, ScrollDirection::Down] {
            if env.can_scroll(direction) {
                moves.push(Action::Scroll { direction });
            }
        }

        for action in moves {
            if budget == 0 {
                return false;
            }
            budget -= 1;
            env.restore(&snapshot).expect("snapshot from this env");
            if env.apply(&action).is_err() {
                continue;
            }
            let mut next_executed = executed.clone();
            next_executed.push(action);
            if goal_met(&env, &next_executed) {
                return true;
            }
            let key = format!("{}|{}", env.fingerprint(), matched_len(&next_executed));
            if seen.insert(key) {
                queue.push_back((env.snapshot(), next_executed));
            }
        }
    }
    false
}

// ============================================================================
// Canned chat-completion endpoint
// ============================================================================

/// Maps one request body to (status, content). For 200 the content is
/// wrapped in a standard chat-completion envelope; other statuses send the
/// content as the raw body.
pub type Responder = Arc<dyn Fn(&str) -> (u16, String) + Send + Sync>;

pub struct MockLlm {
    pub addr: SocketAddr,
}

impl MockLlm {
    pub fn start(responder: Responder) -> MockLlm {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
        let addr = listener.local_addr().expect("local addr");
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let responder = responder.clone();
                thread::spawn(move || handle(stream, responder));
            }
        });
        MockLlm { addr }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }
}

fn handle(mut stream: TcpStream, responder: Responder) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    let mut content_length = 0usize;
    if reader.read_line(&mut line).is_err() {
        return;
    }
    loop {
        let mut header = String::new();
        match reader.read_line(&mut header) {
            Ok(0) => return,
            Ok(_) => {}
            Err(_) => return,
        }
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some(value) = header.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = String::from_utf8_lossy(&body).into_owned();

    let (status, content) = responder(&body);
    let payload = if status == 200 {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    } else {
        content
    };
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Error",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len(),
    );
    let _ = stream.flush();
}
