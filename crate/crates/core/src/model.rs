//! Shared vocabulary for the whole crate: tasks, subtasks, plans, actions,
//! observations, action effects, reflections, scores, and the search
//! configuration.
//!
//! The action grammar is the one contract in here that must stay bit-exact:
//! traces, verifier dedup checks, and world annotations all compare actions
//! by their serialized form.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("score out of range: {0}")]
    ScoreOutOfRange(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

// ============================================================================
// Tasks and plans
// ============================================================================

/// A top-level instruction, e.g. "Invite Abishek as a member of the project".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    /// Changes site state or navigates; executed by the tree search.
    Interaction,
    /// Reads information off the page; executed by the extraction loop.
    Extraction,
}

/// One step of a decomposed plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub description: String,
    /// What the world should look like once the subtask is done.
    pub objective: String,
    pub kind: SubtaskKind,
}

/// Ordered plan state. Subtasks move from `pending` to `completed` exactly
/// once; the two lists never share an entry because completion consumes the
/// pending slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub pending: VecDeque<Subtask>,
    pub completed: Vec<Subtask>,
}

impl Plan {
    pub fn new(subtasks: Vec<Subtask>) -> Self {
        Plan { pending: subtasks.into(), completed: Vec::new() }
    }

    /// Next subtask to execute without removing it.
    pub fn current(&self) -> Option<&Subtask> {
        self.pending.front()
    }

    /// Moves the front pending subtask into the completed list.
    pub fn complete_current(&mut self) {
        if let Some(st) = self.pending.pop_front() {
            self.completed.push(st);
        }
    }

    /// Drops the front pending subtask without marking it completed (used
    /// when a subtask fails and the run proceeds).
    pub fn skip_current(&mut self) {
        self.pending.pop_front();
    }

    /// Replaces the pending tail (everything after the current subtask has
    /// been consumed) with a refined list.
    pub fn replace_pending(&mut self, refined: Vec<Subtask>) {
        self.pending = refined.into();
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_empty()
    }
}

// ============================================================================
// Actions
// ============================================================================

/// Identifier of an element within a page's accessibility-tree rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u32);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl fmt::Display for ScrollDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScrollDirection::Up => write!(f, "up"),
            ScrollDirection::Down => write!(f, "down"),
        }
    }
}

/// Canonical agent action. The serialized grammar is fixed:
///
/// ```text
/// click [<id>]
/// type [<id>] [<text>]
/// scroll [up]   |   scroll [down]
/// stop [<answer>]      (answer may be empty)
/// ```
///
/// `Display` and `FromStr` are exact inverses over canonical forms. A `Stop`
/// with an empty answer is always represented as `Stop { answer: None }` so
/// the round trip stays a bijection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Action {
    Click { id: ElementId },
    Type { id: ElementId, text: String },
    Scroll { direction: ScrollDirection },
    Stop { answer: Option<String> },
}

impl Action {
    pub fn click(id: u32) -> Self {
        Action::Click { id: ElementId(id) }
    }

    pub fn type_text(id: u32, text: impl Into<String>) -> Self {
        Action::Type { id: ElementId(id), text: text.into() }
    }

    pub fn stop(answer: Option<String>) -> Self {
        // Normalize: empty answer collapses to None (canonical form).
        let answer = answer.filter(|a| !a.is_empty());
        Action::Stop { answer }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }

    /// Element the action targets, when it targets one.
    pub fn target(&self) -> Option<ElementId> {
        match self {
            Action::Click { id } | Action::Type { id, .. } => Some(*id),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { id } => write!(f, "click [{id}]"),
            Action::Type { id, text } => write!(f, "type [{id}] [{text}]"),
            Action::Scroll { direction } => write!(f, "scroll [{direction}]"),
            Action::Stop { answer } => {
                write!(f, "stop [{}]", answer.as_deref().unwrap_or(""))
            }
        }
    }
}

impl FromStr for Action {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Canonical numeric id: plain decimal digits, no leading zeros (except "0").
fn parse_element_id(s: &str) -> Option<ElementId> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if s.len() > 1 && s.starts_with('0') {
        return None;
    }
    s.parse::<u32>().ok().map(ElementId)
}

/// Parses the canonical action grammar. Anything that is not the exact
/// serialized form of some action is rejected.
pub fn parse_action(s: &str) -> Result<Action, ModelError> {
    let err = || ModelError::MalformedAction(s.to_string());

    if let Some(rest) = s.strip_prefix("click [") {
        let inner = rest.strip_suffix(']').ok_or_else(err)?;
        let id = parse_element_id(inner).ok_or_else(err)?;
        return Ok(Action::Click { id });
    }
    if let Some(rest) = s.strip_prefix("type [") {
        // Grammar: type [<id>] [<text>] where <text> runs to the final ']'.
        let body = rest.strip_suffix(']').ok_or_else(err)?;
        let sep = body.find("] [").ok_or_else(err)?;
        let id = parse_element_id(&body[..sep]).ok_or_else(err)?;
        let text = body[sep + 3..].to_string();
        return Ok(Action::Type { id, text });
    }
    if let Some(rest) = s.strip_prefix("scroll [") {
        let inner = rest.strip_suffix(']').ok_or_else(err)?;
        let direction = match inner {
            "up" => ScrollDirection::Up,
            "down" => ScrollDirection::Down,
            _ => return Err(err()),
        };
        return Ok(Action::Scroll { direction });
    }
    if let Some(rest) = s.strip_prefix("stop [") {
        let inner = rest.strip_suffix(']').ok_or_else(err)?;
        return Ok(Action::stop(Some(inner.to_string())));
    }
    Err(err())
}

// ============================================================================
// Observations
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Link,
    Button,
    Textbox,
    Statictext,
    Menuitem,
    Tab,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Role::Link => "link",
            Role::Button => "button",
            Role::Textbox => "textbox",
            Role::Statictext => "statictext",
            Role::Menuitem => "menuitem",
            Role::Tab => "tab",
        };
        write!(f, "{name}")
    }
}

/// One row of the observation's element table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedElement {
    pub id: ElementId,
    pub role: Role,
    pub label: String,
    /// Whether the page advertises the element as reacting to input. Inert
    /// decorations are still listed (and clickable) but flagged false.
    pub interactive: bool,
}

/// What the agent sees at a state: the page identity plus a deterministic
/// accessibility-tree rendering of the currently visible elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub base_url: String,
    pub actree: String,
    pub elements: Vec<ObservedElement>,
}

impl Observation {
    pub fn element(&self, id: ElementId) -> Option<&ObservedElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.elements.iter().any(|e| e.label == label)
    }
}

// ============================================================================
// Effects, intents, reflections
// ============================================================================

/// Natural-language statement of what an action is supposed to accomplish.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Intent(pub String);

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// The action navigated to a different page.
    NewPage,
    /// Same page, but the visible element set changed.
    InPlaceChange,
    /// Nothing observable happened.
    NoChange,
}

/// Assessment of what an executed action actually did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    pub kind: EffectKind,
    pub description: String,
    pub intent_achieved: bool,
}

/// The four reflection channels offered to the explorer when it proposes an
/// action. Each is free text produced by an earlier oracle call; `None`
/// means the channel has nothing to say at this node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionBundle {
    /// Guidance stored on the frontier node when it was created ("what to do
    /// next from here").
    pub parent: Option<String>,
    /// Joined reflections from earlier siblings at the same frontier.
    pub sibling: Option<String>,
    /// Outcome of the last one-step simulation run at the frontier; consumed
    /// by the expansion that reads it.
    pub simulation: Option<String>,
    /// Carry-over advice from a failed earlier attempt of the subtask.
    pub subtask: Option<String>,
}

impl ReflectionBundle {
    pub fn is_empty(&self) -> bool {
        self.parent.is_none()
            && self.sibling.is_none()
            && self.simulation.is_none()
            && self.subtask.is_none()
    }
}

/// Controller verdict after a node is expanded: stop the subtask search or
/// keep going, with a reason the next proposal gets to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuationDecision {
    pub stop: bool,
    /// Non-empty whenever `stop` is false.
    pub reason: String,
}

/// Post-subtask verdict used for replanning and retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completeness {
    pub complete: bool,
    /// Non-empty explanation of the verdict.
    pub assessment: String,
}

// ============================================================================
// Scores
// ============================================================================

/// Weighted combination of the two appraiser ratings.
///
/// Invariant: `s_total == w_eff * s_eff + w_fut * s_fut` for the config the
/// scores were built with, and all three values lie in `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_eff: f64,
    pub s_fut: f64,
    pub s_total: f64,
}

impl Scores {
    pub fn new(s_eff: f64, s_fut: f64, cfg: &SearchConfig) -> Result<Self, ModelError> {
        let s_total = total_score(s_eff, s_fut, cfg)?;
        Ok(Scores { s_eff, s_fut, s_total })
    }
}

/// `w_eff * s_eff + w_fut * s_fut`. Inputs outside `[0, 10]` are rejected.
pub fn total_score(s_eff: f64, s_fut: f64, cfg: &SearchConfig) -> Result<f64, ModelError> {
    for (name, v) in [("s_eff", s_eff), ("s_fut", s_fut)] {
        if !(0.0..=10.0).contains(&v) || v.is_nan() {
            return Err(ModelError::ScoreOutOfRange(format!("{name}={v}")));
        }
    }
    Ok(cfg.w_eff * s_eff + cfg.w_fut * s_fut)
}

// ============================================================================
// Search configuration
// ============================================================================

/// Seed value used for the virtual expansion arm during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QSeed {
    /// The candidate node's own total score (0 at the root, which carries no
    /// scores).
    #[default]
    ParentTotal,
    Zero,
}

/// How node values flow back up the tree after an expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackpropMode {
    /// Ancestors keep the maximum value seen below them.
    #[default]
    Max,
    /// Classical running average, kept as an ablation baseline.
    Average,
}

/// Which selection rule walks the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Goal-oriented selection: the damped exploration bonus
    /// `w * sqrt(N_parent) / (1 + N_edge)` keeps unvisited arms finite.
    #[default]
    Gos,
    /// Classical UCT behaviour: any untried arm has unbounded priority and
    /// is visited before the tree deepens.
    ClassicUct,
}

/// All tunables of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Expansion budget per subtask attempt.
    pub n_max: u32,
    /// Exploration weight in the selection bonus.
    pub w_puct: f64,
    /// Maximum node depth; children may sit at `depth_max` but not below.
    pub depth_max: u32,
    /// Maximum children per node, and also the verifier retry bound.
    pub branch_limit: u32,
    pub w_eff: f64,
    pub w_fut: f64,
    /// Scroll budget of the extraction loop.
    pub n_scroll_max: u32,
    pub max_subtask_attempts: u32,
    pub q_seed: QSeed,
    pub backprop: BackpropMode,
    pub selection: SelectionMode,
    /// Abort the whole run when a subtask exhausts its attempts, instead of
    /// recording the failure and moving on.
    pub abort_on_subtask_failure: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_max: 10,
            w_puct: 5.0,
            depth_max: 5,
            branch_limit: 3,
            w_eff: 0.5,
            w_fut: 0.5,
            n_scroll_max: 5,
            max_subtask_attempts: 2,
            q_seed: QSeed::ParentTotal,
            backprop: BackpropMode::Max,
            selection: SelectionMode::Gos,
            abort_on_subtask_failure: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_max", self.n_max),
            ("depth_max", self.depth_max),
            ("branch_limit", self.branch_limit),
            ("n_scroll_max", self.n_scroll_max),
            ("max_subtask_attempts", self.max_subtask_attempts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.w_puct.is_finite() || self.w_puct < 0.0 {
            return Err(ModelError::InvalidConfig("w_puct must be finite and >= 0".into()));
        }
        for (name, w) in [("w_eff", self.w_eff), ("w_fut", self.w_fut)] {
            if !w.is_finite() || w < 0.0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if (self.w_eff + self.w_fut - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidConfig("w_eff + w_fut must equal 1".into()));
        }
        Ok(())
    }
}
