//! Command-line front end: run whole tasks, search single subtasks for
//! ablation studies, replay recorded traces, and summarize them.
//!
//! Exit codes: 0 when the requested check passes (task solved, replay
//! identical), 1 when it ran but failed (eval false, replay diverged), 2 for
//! configuration, input, or transport problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use webscout::env::world::{load_world, WorldSpec};
use webscout::env::SimEnv;
use webscout::global::run_task;
use webscout::local::run_subtask;
use webscout::model::{
    BackpropMode, QSeed, SearchConfig, SelectionMode, SubtaskKind,
};
use webscout::oracles::remote::{mixed_suite, LlmClientConfig, PromptSet, RemoteOracles};
use webscout::oracles::scripted::ScriptedOracles;
use webscout::oracles::OracleSuite;
use webscout::trace::{
    build_report, compare_traces, load_trace, sha256_hex, sibling_path, write_json_file,
    EventBody, Recorder, ReplayOutcome, RunManifest, TraceEvent,
};

#[derive(Parser)]
#[command(name = "webscout", version, about = "Plan-and-search agent for simulated web tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task end to end and report the outcome.
    Run(RunArgs),
    /// Run the tree search for a single subtask and dump the final tree.
    Search(SearchArgs),
    /// Re-execute a recorded run and compare the event streams.
    Replay(ReplayArgs),
    /// Summarize a recorded trace.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonRunArgs {
    /// World file (JSON; a missing .json extension is tried automatically).
    #[arg(long)]
    world: PathBuf,
    /// Task id within the world.
    #[arg(long)]
    task: String,
    /// Oracle suite: scripted, remote, or mixed:<role,...> (listed roles go
    /// remote, the rest stay scripted).
    #[arg(long, default_value = "scripted")]
    oracles: String,
    /// JSON config file ({"search": {...}, "llm": {...}, "prompts_dir": ...}).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct ConfigOverrides {
    /// Backpropagation mode: max or average.
    #[arg(long)]
    backprop: Option<String>,
    /// Selection mode: gos or classic-uct.
    #[arg(long)]
    selection: Option<String>,
    /// Virtual expansion arm seed: parent or zero.
    #[arg(long)]
    seed_arm: Option<String>,
    /// Scripted oracles ignore reflection guidance (ablation).
    #[arg(long)]
    no_reflections: bool,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut SearchConfig) -> Result<(), String> {
        if let Some(mode) = &self.backprop {
            cfg.backprop = match mode.as_str() {
                "max" => BackpropMode::Max,
                "average" => BackpropMode::Average,
                other => return Err(format!("unknown backprop mode '{other}'")),
            };
        }
        if let Some(mode) = &self.selection {
            cfg.selection = match mode.as_str() {
                "gos" => SelectionMode::Gos,
                "classic-uct" => SelectionMode::ClassicUct,
                other => return Err(format!("unknown selection mode '{other}'")),
            };
        }
        if let Some(seed) = &self.seed_arm {
            cfg.q_seed = match seed.as_str() {
                "parent" => QSeed::ParentTotal,
                "zero" => QSeed::Zero,
                other => return Err(format!("unknown seed arm '{other}'")),
            };
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Write the JSONL trace here (manifest and report land next to it).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Which planned subtask to search (index into the plan).
    #[arg(long, default_value_t = 0)]
    subtask: usize,
    /// Write the JSONL trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// The recorded JSONL trace (its manifest must sit next to it).
    trace: PathBuf,
    /// Override the world location recorded in the manifest.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Config to replay under; must match the recorded configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct ReportArgs {
    /// The recorded JSONL trace.
    trace: PathBuf,
    /// Refresh the report.json sibling file.
    #[arg(long)]
    write: bool,
}

/// Optional file-based configuration; every section may be omitted.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    search: Option<SearchConfig>,
    #[serde(default)]
    llm: Option<LlmClientConfig>,
    #[serde(default)]
    prompts_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Search(args) => cmd_search(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let setup = prepare(&args.common)?;
    let mut env = SimEnv::from_shared(setup.world.clone());
    let result = run_task(
        &mut env,
        &setup.suite,
        &args.common.task,
        &setup.cfg,
        args.trace.as_deref(),
        Some(&setup.world_path_text),
        setup.demos.as_deref(),
    )
    .map_err(|e| e.to_string())?;

    print!("{}", render_report(&result.events));
    if let Some(trace) = &args.trace {
        println!("trace: {}", trace.display());
    }
    Ok(if result.success { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_search(args: SearchArgs) -> Result<ExitCode, String> {
    let setup = prepare(&args.common)?;
    let mut env = SimEnv::from_shared(setup.world.clone());
    let task = setup
        .world
        .tasks
        .iter()
        .find(|t| t.id == args.common.task)
        .ok_or_else(|| format!("world defines no task named '{}'", args.common.task))?;
    let task = webscout::model::Task { id: task.id.clone(), description: task.goal.clone() };

    let plan = setup
        .suite
        .planner
        .decompose(&task, &env.observe(), setup.demos.as_deref())
        .map_err(|e| e.to_string())?;
    let subtask = plan
        .get(args.subtask)
        .ok_or_else(|| format!("plan has {} subtasks, no index {}", plan.len(), args.subtask))?;
    if subtask.kind != SubtaskKind::Interaction {
        return Err(format!("subtask {} is an extraction step, nothing to search", args.subtask));
    }

    let mut recorder =
        Recorder::new(format!("search-{}", args.common.task), args.trace.as_deref())
            .map_err(|e| e.to_string())?;
    let checkpoint = env.snapshot();
    let outcome = run_subtask(
        &mut env,
        &setup.suite,
        subtask,
        &checkpoint,
        &[],
        None,
        1,
        &setup.cfg,
        &mut recorder,
    )
    .map_err(|e| e.to_string())?;

    println!("subtask: {}", subtask.description);
    println!(
        "outcome: {} after {} expansions{}",
        if outcome.complete { "complete" } else { "incomplete" },
        outcome.expansions,
        if outcome.stopped_by_controller { " (controller stopped)" } else { "" }
    );
    println!(
        "path: {}",
        if outcome.executed.is_empty() {
            "(none)".to_string()
        } else {
            outcome
                .executed
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(" -> ")
        }
    );
    println!("tree:");
    for node in outcome.tree.nodes() {
        let action = node
            .action
            .as_ref()
            .map(|a| format!("`{a}`"))
            .unwrap_or_else(|| "(root)".to_string());
        let scores = node
            .scores
            .map(|s| format!("s_eff={} s_fut={}", s.s_eff, s.s_fut))
            .unwrap_or_else(|| "unscored".to_string());
        let mut flags = Vec::new();
        if node.terminal {
            flags.push("terminal");
        }
        if node.is_exhausted() {
            flags.push("exhausted");
        }
        let flags =
            if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(",")) };
        println!(
            "  #{} parent={} depth={} N={} Q={:.6} {} {}{}",
            node.index,
            node.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            node.depth,
            node.visits,
            node.q,
            scores,
            action,
            flags
        );
        if let Some(guidance) = &node.guidance {
            println!("      guidance: {guidance}");
        }
        for lesson in &node.sibling_reflections {
            println!("      sibling lesson: {lesson}");
        }
    }
    recorder.finish().map_err(|e| e.to_string())?;
    Ok(if outcome.complete { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, String> {
    let recorded = load_trace(&args.trace).map_err(|e| e.to_string())?;
    if recorded.is_empty() {
        return Err(format!("{} holds no events", args.trace.display()));
    }
    let manifest_path = sibling_path(&args.trace, "manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| format!("{}: {e}", manifest_path.display()))?;
    let manifest: RunManifest =
        serde_json::from_str(&manifest_text).map_err(|e| format!("manifest: {e}"))?;

    if !manifest.oracles.starts_with("scripted") {
        return Err(format!(
            "replay re-executes the run, which needs scripted oracles; this trace used '{}'",
            manifest.oracles
        ));
    }
    let honor = manifest.oracles == "scripted";
    let mut candidate = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let file: FileConfig =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            file.search.unwrap_or_default()
        }
        None => manifest.config.clone(),
    };
    args.overrides.apply(&mut candidate)?;
    if candidate != manifest.config
        || (args.overrides.no_reflections && honor)
    {
        return Err(
            "manifest mismatch: the requested configuration differs from the recorded run"
                .to_string(),
        );
    }

    let world_path = args
        .world
        .clone()
        .or_else(|| manifest.world_path.clone().map(PathBuf::from))
        .ok_or("the manifest records no world path; pass --world")?;
    let (world, _) = load_world_fallback(&world_path)?;
    let world_json = serde_json::to_string(&*world).map_err(|e| e.to_string())?;
    if sha256_hex(world_json.as_bytes()) != manifest.world_hash {
        return Err(format!(
            "manifest mismatch: {} no longer matches the recorded world hash",
            world_path.display()
        ));
    }
    let demos = load_demos(&world, &world_path)?;
    if sha256_hex(demos.as_deref().unwrap_or("").as_bytes()) != manifest.demos_hash {
        return Err("manifest mismatch: the demonstrations file changed".to_string());
    }

    let suite = ScriptedOracles::suite(world.clone(), honor);
    let mut env = SimEnv::from_shared(world);
    let result = run_task(
        &mut env,
        &suite,
        &manifest.task,
        &manifest.config,
        None,
        manifest.world_path.as_deref(),
        demos.as_deref(),
    )
    .map_err(|e| e.to_string())?;

    match compare_traces(&recorded, &result.events) {
        ReplayOutcome::Identical => {
            println!("replay: identical ({} events)", recorded.len());
            Ok(ExitCode::SUCCESS)
        }
        ReplayOutcome::DivergesAtSeq(seq) => {
            println!("replay: diverges at seq {seq}");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, String> {
    let events = load_trace(&args.trace).map_err(|e| e.to_string())?;
    if events.is_empty() {
        return Err(format!("{} holds no events", args.trace.display()));
    }
    print!("{}", render_report(&events));
    if args.write {
        let report = build_report(&events);
        let path = sibling_path(&args.trace, "report.json");
        write_json_file(&path, &report).map_err(|e| e.to_string())?;
        println!("report: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

struct Setup {
    world: Arc<WorldSpec>,
    world_path_text: String,
    suite: OracleSuite,
    cfg: SearchConfig,
    demos: Option<String>,
}

fn prepare(common: &CommonRunArgs) -> Result<Setup, String> {
    let (world, resolved) = load_world_fallback(&common.world)?;
    let demos = load_demos(&world, &resolved)?;

    let file_cfg: FileConfig = match &common.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = file_cfg.search.unwrap_or_default();
    common.overrides.apply(&mut cfg)?;
    cfg.validate().map_err(|e| e.to_string())?;

    let honor = !common.overrides.no_reflections;
    let prompts = match &file_cfg.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir).map_err(|e| e.to_string())?,
        None => PromptSet::default(),
    };
    let llm = file_cfg.llm;
    let suite = match common.oracles.as_str() {
        "scripted" => ScriptedOracles::suite(world.clone(), honor),
        "remote" => {
            let llm = llm.ok_or("remote oracles need an \"llm\" section in --config")?;
            RemoteOracles::suite(llm, prompts).map_err(|e| e.to_string())?
        }
        other => match other.strip_prefix("mixed:") {
            Some(roles) => {
                let llm = llm.ok_or("mixed oracles need an \"llm\" section in --config")?;
                mixed_suite(world.clone(), honor, llm, prompts, roles)
                    .map_err(|e| e.to_string())?
            }
            None => return Err(format!("unknown oracle suite '{other}'")),
        },
    };

    Ok(Setup {
        world,
        world_path_text: resolved.display().to_string(),
        suite,
        cfg,
        demos,
    })
}

/// Loads a world, trying `<path>.json` when the bare path does not exist.
fn load_world_fallback(path: &Path) -> Result<(Arc<WorldSpec>, PathBuf), String> {
    let resolved = if path.exists() {
        path.to_path_buf()
    } else {
        let with_ext = path.with_extension("json");
        if with_ext.exists() {
            with_ext
        } else {
            return Err(format!("world file not found: {}", path.display()));
        }
    };
    let world = load_world(&resolved).map_err(|e| format!("{}: {e}", resolved.display()))?;
    Ok((Arc::new(world), resolved))
}

/// Reads the world's demonstrations file, resolved next to the world file.
fn load_demos(world: &WorldSpec, world_path: &Path) -> Result<Option<String>, String> {
    let Some(name) = &world.demos_file else { return Ok(None) };
    let path = world_path.parent().unwrap_or(Path::new(".")).join(name);
    std::fs::read_to_string(&path)
        .map(Some)
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Renders the human-readable run summary from the event stream alone.
fn render_report(events: &[TraceEvent]) -> String {
    use std::fmt::Write;

    let report = build_report(events);
    let mut out = String::new();
    let _ = writeln!(out, "run {}", report.run);
    for event in events {
        if let EventBody::RunStart { task, goal, oracles, .. } = &event.body {
            let _ = writeln!(out, "task {task}: {goal}");
            let _ = writeln!(out, "oracles: {oracles}");
        }
    }
    for event in events {
        if let EventBody::PlanCreated { subtasks, .. } = &event.body {
            let _ = writeln!(out, "plan:");
            for (i, s) in subtasks.iter().enumerate() {
                let kind = match s.kind {
                    SubtaskKind::Interaction => "interaction",
                    SubtaskKind::Extraction => "extraction",
                };
                let _ = writeln!(out, "  {}. [{kind}] {} (done when: {})", i + 1, s.description, s.objective);
            }
        }
        if let EventBody::PlanRefined { page, remaining, .. } = &event.body {
            let _ = writeln!(out, "plan refined at '{page}': {} subtasks remain", remaining.len());
        }
    }
    if !report.subtasks.is_empty() {
        let _ = writeln!(out, "subtasks:");
        for row in &report.subtasks {
            let _ = writeln!(
                out,
                "  {}: {} after {} attempt(s), {} expansions",
                row.subtask,
                if row.complete { "complete" } else { "incomplete" },
                row.attempts,
                row.expansions
            );
        }
    }
    let _ = writeln!(
        out,
        "tree: {} expansions across {} subtasks, {} events",
        report.expansions_total, report.subtasks_total, report.events
    );
    let _ = writeln!(
        out,
        "eval: {}{}",
        if report.success { "success" } else { "failure" },
        report
            .answer
            .as_ref()
            .map(|a| format!(" (answer: {a})"))
            .unwrap_or_default()
    );
    out
}
