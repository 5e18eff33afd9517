//! World file schema: pages, elements, transitions, tasks, and the optional
//! script block that drives the deterministic oracle set.
//!
//! A world is a JSON document with top-level keys `pages`, `start_page`,
//! `variables`, and `tasks` (plus optional `script`, `demos_file`, and
//! `input_texts`). See `docs/world-format.md` for the authoring guide.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvError;
use crate::model::{parse_action, ElementId, Role, SubtaskKind};

pub type PageId = String;

/// Full static description of a simulated site plus its tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub start_page: PageId,
    /// Initial world variables (form contents, membership lists, flags).
    #[serde(default)]
    pub variables: BTreeMap<String, String>,
    pub pages: BTreeMap<PageId, PageSpec>,
    pub tasks: Vec<TaskSpec>,
    /// Optional path (relative to the world file) of a demonstrations file
    /// handed verbatim to a remote planner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos_file: Option<String>,
    /// Candidate texts that state-space searches may type into textboxes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_texts: Vec<String>,
    /// Data for the scripted oracle set. Absent for worlds that are only
    /// driven by remote oracles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<ScriptSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageSpec {
    pub base_url: String,
    /// Number of viewport windows; scrolling moves between them one step at
    /// a time. Elements carry the window they belong to.
    #[serde(default = "default_scroll_windows")]
    pub scroll_windows: u32,
    pub elements: Vec<ElementSpec>,
}

fn default_scroll_windows() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub id: ElementId,
    pub role: Role,
    pub label: String,
    /// Transition dispatched by `click`. `Some(NoEffect)` models elements
    /// that look clickable but do nothing; `None` is plain page text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_click: Option<Transition>,
    /// Transition dispatched after `type` fills the element's variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_type: Option<Transition>,
    /// Defaults to `role == textbox`; must agree with the role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepts_text: Option<bool>,
    /// World variable a textbox writes into; defaults to the label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    /// Viewport window the element lives in.
    #[serde(default)]
    pub window: u32,
}

impl ElementSpec {
    pub fn accepts_text(&self) -> bool {
        self.accepts_text.unwrap_or(self.role == Role::Textbox)
    }

    pub fn text_variable(&self) -> String {
        self.variable.clone().unwrap_or_else(|| self.label.clone())
    }

    /// Whether the observation should advertise the element as reactive.
    pub fn is_interactive(&self) -> bool {
        self.on_click.is_some() || self.accepts_text()
    }
}

/// State change triggered by interacting with an element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Navigate to another page (resets scroll, clears revealed elements).
    Goto(PageId),
    /// Write a world variable.
    Mutate(MutateSpec),
    /// Add elements to the current page (dropdowns, expanding sections).
    Reveal(Vec<ElementSpec>),
    /// Explicitly inert: the element reacts but nothing changes.
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutateSpec {
    pub variable: String,
    /// Literal value to store. Exactly one of `value`/`value_from` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Copy the value of another variable (e.g. what was typed into a box).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub goal: String,
    pub eval: EvalSpec,
}

/// Success predicate for a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSpec {
    /// Selected world variables must hold the expected values in the final
    /// state. The reserved variable `_page` tracks the current page id.
    StateMatch { expect: BTreeMap<String, String> },
    /// The final answer must match after normalization (trim, casefold,
    /// collapse whitespace runs).
    AnswerMatch { expected: String },
    /// The serialized required actions must appear as an in-order
    /// subsequence of the executed actions.
    ActionTraceMatch { required: Vec<String> },
}

// ============================================================================
// Script block (data for the deterministic oracles)
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSpec {
    pub tasks: BTreeMap<String, TaskScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    /// Fixed decomposition returned by the scripted planner.
    pub plan: Vec<PlannedSubtask>,
    /// Replanning rules checked after every subtask verdict, first match
    /// wins.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refine: Vec<RefineRule>,
    /// Per-subtask oracle data, aligned with `plan` by index.
    pub subtasks: Vec<SubtaskScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedSubtask {
    pub description: String,
    pub objective: String,
    pub kind: SubtaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRule {
    /// Rule fires when the checkpoint observation is on this page.
    pub when_page: PageId,
    /// Drop every remaining subtask.
    #[serde(default)]
    pub drop_all: bool,
    /// Drop remaining subtasks whose description contains this substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_matching: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskScript {
    /// Ranked action candidates per page, tried in order.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub proposals: BTreeMap<PageId, Vec<ProposalSpec>>,
    /// Annotated solution actions; used for effectiveness scoring and
    /// next-step guidance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solution: Vec<String>,
    /// When the controller flags the search to stop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_when: Option<StatePredicate>,
    /// When the subtask counts as complete; defaults to `stop_when`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete_when: Option<StatePredicate>,
    /// Extra advice appended to the reflection issued after a failed
    /// attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_hint: Option<String>,
    /// Noise schedule: at the given expansion index the explorer proposes
    /// this action first, regardless of the ranked table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decoys: Vec<DecoySpec>,
    /// Extraction rule for `kind = extraction` subtasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract: Option<ExtractSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    pub action: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoySpec {
    pub expansion: u32,
    pub action: String,
    pub intent: String,
}

/// Conjunction of observation-level conditions; empty fields are skipped and
/// at least one must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<PageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_visible: Option<String>,
    /// The most recent executed action must serialize to this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_action: Option<String>,
    /// Some executed action must serialize to this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_contains: Option<String>,
}

impl StatePredicate {
    pub fn is_vacuous(&self) -> bool {
        self.page.is_none()
            && self.label_visible.is_none()
            && self.last_action.is_none()
            && self.history_contains.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSpec {
    /// Applied to each visible label in order; first match answers.
    pub regex: String,
    /// Capture group whose text becomes the answer.
    #[serde(default = "default_group")]
    pub group: u32,
}

fn default_group() -> u32 {
    1
}

// ============================================================================
// Loading and validation
// ============================================================================

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldSpec, EnvError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| EnvError::Parse(format!("{}: {e}", path.display())))?;
    load_world_str(&raw)
}

pub fn load_world_str(raw: &str) -> Result<WorldSpec, EnvError> {
    let world: WorldSpec =
        serde_json::from_str(raw).map_err(|e| EnvError::Parse(e.to_string()))?;
    validate(&world)?;
    Ok(world)
}

fn validate(world: &WorldSpec) -> Result<(), EnvError> {
    let fail = |msg: String| Err(EnvError::Validation(msg));

    if !world.pages.contains_key(&world.start_page) {
        return fail(format!("start_page '{}' is not a page", world.start_page));
    }
    if world.tasks.is_empty() {
        return fail("world has no tasks".into());
    }

    let mut base_urls = BTreeSet::new();
    for (pid, page) in &world.pages {
        if page.scroll_windows == 0 {
            return fail(format!("page '{pid}': scroll_windows must be >= 1"));
        }
        if !base_urls.insert(page.base_url.clone()) {
            return fail(format!("page '{pid}': duplicate base_url '{}'", page.base_url));
        }
        let mut ids = BTreeSet::new();
        let mut stack: Vec<&ElementSpec> = page.elements.iter().collect();
        for el in &page.elements {
            if el.window >= page.scroll_windows {
                return fail(format!(
                    "page '{pid}': element {} window {} out of range",
                    el.id, el.window
                ));
            }
        }
        while let Some(el) = stack.pop() {
            if !ids.insert(el.id) {
                return fail(format!("page '{pid}': duplicate element id {}", el.id));
            }
            if el.accepts_text() != (el.role == Role::Textbox) {
                return fail(format!(
                    "page '{pid}': element {} accepts_text must hold exactly for textboxes",
                    el.id
                ));
            }
            for tr in [&el.on_click, &el.on_type].into_iter().flatten() {
                match tr {
                    Transition::Goto(target) => {
                        if !world.pages.contains_key(target) {
                            return fail(format!(
                                "page '{pid}': element {} goto references unknown page '{target}'",
                                el.id
                            ));
                        }
                    }
                    Transition::Mutate(m) => {
                        if m.value.is_some() == m.value_from.is_some() {
                            return fail(format!(
                                "page '{pid}': element {} mutate needs exactly one of value/value_from",
                                el.id
                            ));
                        }
                    }
                    Transition::Reveal(els) => stack.extend(els.iter()),
                    Transition::NoEffect => {}
                }
            }
        }
    }

    let mut task_ids = BTreeSet::new();
    for task in &world.tasks {
        if !task_ids.insert(task.id.clone()) {
            return fail(format!("duplicate task id '{}'", task.id));
        }
        if let EvalSpec::ActionTraceMatch { required } = &task.eval {
            for a in required {
                parse_action(a).map_err(|e| {
                    EnvError::Validation(format!("task '{}': bad required action: {e}", task.id))
                })?;
            }
        }
    }

    if let Some(script) = &world.script {
        validate_script(world, script)?;
    }
    Ok(())
}

fn validate_script(world: &WorldSpec, script: &ScriptSpec) -> Result<(), EnvError> {
    let fail = |msg: String| Err(EnvError::Validation(msg));

    for (task_id, ts) in &script.tasks {
        if !world.tasks.iter().any(|t| &t.id == task_id) {
            return fail(format!("script references unknown task '{task_id}'"));
        }
        if ts.plan.is_empty() {
            return fail(format!("script for '{task_id}': empty plan"));
        }
        if ts.plan.len() != ts.subtasks.len() {
            return fail(format!(
                "script for '{task_id}': plan has {} entries but subtasks has {}",
                ts.plan.len(),
                ts.subtasks.len()
            ));
        }
        let mut descriptions = BTreeSet::new();
        for p in &ts.plan {
            if !descriptions.insert(p.description.clone()) {
                return fail(format!(
                    "script for '{task_id}': duplicate subtask description '{}'",
                    p.description
                ));
            }
        }
        for rule in &ts.refine {
            if !world.pages.contains_key(&rule.when_page) {
                return fail(format!(
                    "script for '{task_id}': refine rule references unknown page '{}'",
                    rule.when_page
                ));
            }
            if !rule.drop_all && rule.drop_matching.is_none() {
                return fail(format!(
                    "script for '{task_id}': refine rule must drop_all or drop_matching"
                ));
            }
        }
        for (idx, (planned, st)) in ts.plan.iter().zip(&ts.subtasks).enumerate() {
            let at = |msg: &str| format!("script for '{task_id}' subtask {idx}: {msg}");
            for (pid, rows) in &st.proposals {
                if !world.pages.contains_key(pid) {
                    return fail(at(&format!("proposals reference unknown page '{pid}'")));
                }
                for row in rows {
                    parse_action(&row.action)
                        .map_err(|e| EnvError::Validation(at(&format!("bad proposal: {e}"))))?;
                    if row.intent.is_empty() {
                        return fail(at("proposal intent must be non-empty"));
                    }
                }
            }
            for a in &st.solution {
                parse_action(a)
                    .map_err(|e| EnvError::Validation(at(&format!("bad solution action: {e}"))))?;
            }
            for d in &st.decoys {
                parse_action(&d.action)
                    .map_err(|e| EnvError::Validation(at(&format!("bad decoy action: {e}"))))?;
            }
            for (name, pred) in
                [("stop_when", &st.stop_when), ("complete_when", &st.complete_when)]
            {
                if let Some(p) = pred {
                    if p.is_vacuous() {
                        return fail(at(&format!("{name} has no conditions")));
                    }
                    if let Some(page) = &p.page {
                        if !world.pages.contains_key(page) {
                            return fail(at(&format!("{name} references unknown page '{page}'")));
                        }
                    }
                    for a in [&p.last_action, &p.history_contains].into_iter().flatten() {
                        parse_action(a).map_err(|e| {
                            EnvError::Validation(at(&format!("{name} has a bad action: {e}")))
                        })?;
                    }
                }
            }
            match planned.kind {
                SubtaskKind::Interaction => {
                    if st.stop_when.is_none() {
                        return fail(at("interaction subtask needs stop_when"));
                    }
                    if st.proposals.is_empty() {
                        return fail(at("interaction subtask needs proposals"));
                    }
                }
                SubtaskKind::Extraction => {
                    let ex = st
                        .extract
                        .as_ref()
                        .ok_or_else(|| EnvError::Validation(at("extraction subtask needs extract")))?;
                    regex::Regex::new(&ex.regex).map_err(|e| {
                        EnvError::Validation(at(&format!("bad extract regex: {e}")))
                    })?;
                }
            }
        }
    }
    Ok(())
}
