//! The six judgment roles the search delegates to, abstracted so the same
//! driver runs against deterministic scripted implementations or a remote
//! language model behind an HTTP endpoint.
//!
//! Roles:
//! - planner: decomposes a task into subtasks and refines the remaining plan
//! - explorer: proposes actions and writes reflections about their outcomes
//! - appraiser: rates an executed action (effectiveness and future promise)
//! - controller: decides continuation, completeness, and retry guidance
//! - verifier: screens proposed actions before they touch the environment
//! - extractor: reads answers off the page for extraction subtasks

pub mod remote;
pub mod scripted;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::SimEnv;
use crate::model::{
    Action, Completeness, ContinuationDecision, Effect, Intent, Observation, ReflectionBundle,
    Subtask, Task,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle transport error: {0}")]
    Transport(String),
    #[error("oracle authentication failed: {0}")]
    Auth(String),
    #[error("malformed oracle response: {0}")]
    Malformed(String),
    #[error("no proposal available: {0}")]
    NoProposal(String),
}

/// Why the explorer is being asked for an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposePurpose {
    /// The action will become a new tree node.
    Expansion,
    /// One-step lookahead from a fresh node; nothing is attached.
    Simulation,
}

/// Everything the explorer may condition on besides the observation and the
/// reflection bundle.
#[derive(Debug, Clone)]
pub struct ProposeContext {
    pub purpose: ProposePurpose,
    /// How many expansions this subtask attempt has already consumed.
    pub expansion_index: u32,
    /// Actions the verifier has already turned down for this expansion.
    pub rejected: Vec<Action>,
}

/// What the explorer writes down after seeing what its action did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionReflection {
    /// Advice for whatever is tried from the new node.
    pub for_children: String,
    /// Advice for later alternatives at the same frontier.
    pub for_siblings: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject { reason: String },
}

/// One extraction attempt against the current viewport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractorStep {
    Found(String),
    /// Not in view; the driver may scroll and ask again.
    NotVisible,
    /// The page will not answer this no matter how far we scroll.
    Unanswerable,
}

pub trait Planner {
    fn decompose(
        &self,
        task: &Task,
        observation: &Observation,
        demos: Option<&str>,
    ) -> Result<Vec<Subtask>, OracleError>;

    /// Reconsiders the not-yet-started remainder of the plan at a checkpoint.
    /// `None` keeps the plan as is.
    fn refine(
        &self,
        task: &Task,
        completed: &[Subtask],
        pending: &[Subtask],
        observation: &Observation,
    ) -> Result<Option<Vec<Subtask>>, OracleError>;
}

pub trait Explorer {
    fn propose(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        reflections: &ReflectionBundle,
        ctx: &ProposeContext,
    ) -> Result<(Action, Intent), OracleError>;

    fn reflect_expansion(
        &self,
        subtask: &Subtask,
        action: &Action,
        intent: &Intent,
        effect: &Effect,
    ) -> Result<ExpansionReflection, OracleError>;

    fn reflect_simulation(
        &self,
        subtask: &Subtask,
        action: &Action,
        effect: &Effect,
    ) -> Result<String, OracleError>;
}

pub trait Appraiser {
    /// Integer ratings in 0..=10: how effective the executed action was, and
    /// how promising the reached state is. `env_after` is a read-only fork
    /// positioned at the post-action state; `executed` is the action path
    /// from the subtask start, ending with `action` itself.
    fn assess(
        &self,
        subtask: &Subtask,
        action: &Action,
        effect: &Effect,
        env_after: &SimEnv,
        executed: &[Action],
    ) -> Result<(u32, u32), OracleError>;
}

pub trait Controller {
    fn continue_or_stop(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<ContinuationDecision, OracleError>;

    fn completeness(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<Completeness, OracleError>;

    /// Written after a failed attempt; seeds the next attempt's guidance.
    fn subtask_reflection(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<String, OracleError>;
}

pub trait Verifier {
    /// Screens a proposal before execution. `siblings` are actions already
    /// expanded at the same frontier.
    fn verify(
        &self,
        subtask: &Subtask,
        action: &Action,
        intent: &Intent,
        observation: &Observation,
        siblings: &[Action],
    ) -> Result<Verdict, OracleError>;
}

pub trait Extractor {
    fn extract(
        &self,
        subtask: &Subtask,
        observation: &Observation,
    ) -> Result<ExtractorStep, OracleError>;
}

/// One request/response pair against a remote oracle, kept for the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub request: String,
    pub response: String,
}

pub type ExchangeLog = Arc<Mutex<Vec<Exchange>>>;

/// The full set of role implementations a run works with, plus the shared
/// log remote implementations append their raw exchanges to.
pub struct OracleSuite {
    pub planner: Arc<dyn Planner>,
    pub explorer: Arc<dyn Explorer>,
    pub appraiser: Arc<dyn Appraiser>,
    pub controller: Arc<dyn Controller>,
    pub verifier: Arc<dyn Verifier>,
    pub extractor: Arc<dyn Extractor>,
    log: ExchangeLog,
    /// Stable tag recorded in run manifests ("scripted", "remote", ...).
    pub kind: String,
}

impl OracleSuite {
    pub fn from_parts(
        kind: impl Into<String>,
        log: ExchangeLog,
        planner: Arc<dyn Planner>,
        explorer: Arc<dyn Explorer>,
        appraiser: Arc<dyn Appraiser>,
        controller: Arc<dyn Controller>,
        verifier: Arc<dyn Verifier>,
        extractor: Arc<dyn Extractor>,
    ) -> Self {
        OracleSuite {
            planner,
            explorer,
            appraiser,
            controller,
            verifier,
            extractor,
            log,
            kind: kind.into(),
        }
    }

    /// Takes every exchange recorded since the last drain, in call order.
    pub fn drain_exchanges(&self) -> Vec<Exchange> {
        std::mem::take(&mut *self.log.lock().expect("exchange log never poisoned"))
    }
}

/// Screening every verifier must apply regardless of implementation: an
/// accepted action has to be applicable against the observation it was
/// proposed for, and must not repeat a sibling. A judgment-based verifier may
/// reject more than this, never less.
pub fn structural_verdict(
    action: &Action,
    observation: &Observation,
    siblings: &[Action],
) -> Verdict {
    if siblings.contains(action) {
        return Verdict::Reject { reason: format!("already tried `{action}` at this state") };
    }
    if let Some(id) = action.target() {
        let Some(element) = observation.element(id) else {
            return Verdict::Reject { reason: format!("element {id} is not on this page") };
        };
        match action {
            Action::Type { .. } if element.role != crate::model::Role::Textbox => {
                return Verdict::Reject { reason: format!("element {id} does not accept text") };
            }
            Action::Click { .. } if !element.interactive => {
                return Verdict::Reject { reason: format!("element {id} is static text") };
            }
            _ => {}
        }
    }
    Verdict::Accept
}
