//! Subtask-level search: a Monte Carlo tree search whose moves are picked,
//! screened, rated, and reflected on by the oracle suite.
//!
//! One loop iteration is one attempted expansion: walk to a frontier node,
//! ask the explorer for an action (re-asking past verifier rejections),
//! execute it, attach the child, rate it, let the controller decide whether
//! the subtask is done, optionally peek one step ahead, and flow the value
//! back to the root. The environment is restored from node snapshots before
//! every execution, so the tree may grow in any order.

use thiserror::Error;

use crate::env::{assess_effect, EnvError, EnvSnapshot, SimEnv};
use crate::model::{
    Action, Effect, EffectKind, ModelError, Observation, ReflectionBundle, Scores, SearchConfig,
    Subtask,
};
use crate::oracles::{OracleError, OracleSuite, ProposeContext, ProposePurpose, Verdict};
use crate::trace::{format_score, EventBody, QUpdate, Recorder, TraceError};
use crate::tree::{ChildSeed, SearchTree, TreeError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("world defines no task named '{0}'")]
    UnknownTask(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What one subtask attempt produced.
#[derive(Debug)]
pub struct SubtaskOutcome {
    pub complete: bool,
    pub assessment: String,
    /// Nodes created during this attempt.
    pub expansions: u32,
    /// Actions along the root-to-final-node path.
    pub executed: Vec<Action>,
    /// State at the final node; the caller's checkpoint if it completed.
    pub snapshot: EnvSnapshot,
    pub observation: Observation,
    pub stopped_by_controller: bool,
    /// Retry guidance, present when the attempt fell short.
    pub retry_note: Option<String>,
    /// The search tree as it stood when the attempt ended.
    pub tree: SearchTree,
}

enum ExpandStatus {
    Expanded(usize),
    /// The explorer had nothing new for this frontier.
    NoProposal,
    /// Every proposal in the retry budget was rejected.
    VerifierExhausted,
}

/// Runs one search attempt for `subtask`, starting from `checkpoint`.
/// `history` holds the actions executed before this subtask; `note` carries
/// the reflection from a failed earlier attempt.
#[allow(clippy::too_many_arguments)]
pub fn run_subtask(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    subtask: &Subtask,
    checkpoint: &EnvSnapshot,
    history: &[Action],
    note: Option<&str>,
    attempt: u32,
    cfg: &SearchConfig,
    recorder: &mut Recorder,
) -> Result<SubtaskOutcome, SearchError> {
    env.restore(checkpoint)?;
    let root_observation = env.observe();
    recorder.record(EventBody::SubtaskStart {
        subtask: subtask.clone(),
        attempt,
        observation: root_observation.actree.clone(),
    })?;
    let mut tree = SearchTree::new(root_observation, checkpoint.clone());
    let mut guidance: Option<String> = None;
    let mut expansions: u32 = 0;
    let mut stopped_at: Option<usize> = None;

    while expansions < cfg.n_max {
        let selection = match tree.select_frontier(cfg) {
            Ok(s) => s,
            Err(TreeError::Exhausted) => break,
        };
        recorder.record(EventBody::Select {
            frontier: selection.frontier,
            path: selection.path.clone(),
        })?;

        let status = expand_once(
            env,
            oracles,
            &mut tree,
            selection.frontier,
            subtask,
            note,
            guidance.as_deref(),
            expansions,
            cfg,
            recorder,
        )?;
        let child = match status {
            ExpandStatus::Expanded(child) => child,
            ExpandStatus::NoProposal | ExpandStatus::VerifierExhausted => {
                tree.mark_exhausted(selection.frontier);
                continue;
            }
        };
        expansions += 1;

        let decision =
            evaluate_and_simulate(env, oracles, &mut tree, child, subtask, history, cfg, recorder)?;
        if decision.stop {
            stopped_at = Some(child);
            break;
        }
        guidance = Some(decision.reason);
    }

    let final_node = stopped_at
        .or_else(|| tree.best_scored())
        .unwrap_or(0);
    let executed_here = tree.action_path(final_node);
    let snapshot = tree.node(final_node).snapshot.clone();
    env.restore(&snapshot)?;
    let observation = tree.node(final_node).observation.clone();

    let mut full_history = history.to_vec();
    full_history.extend(executed_here.iter().cloned());
    let completeness = oracles.controller.completeness(subtask, &observation, &full_history)?;
    let retry_note = if completeness.complete {
        None
    } else {
        Some(oracles.controller.subtask_reflection(subtask, &observation, &full_history)?)
    };
    recorder.record(EventBody::SubtaskEnd {
        subtask: subtask.description.clone(),
        attempt,
        complete: completeness.complete,
        assessment: completeness.assessment.clone(),
        expansions,
        answer: None,
        scrolls_used: None,
        exchanges: oracles.drain_exchanges(),
    })?;

    Ok(SubtaskOutcome {
        complete: completeness.complete,
        assessment: completeness.assessment,
        expansions,
        executed: executed_here,
        snapshot,
        observation,
        stopped_by_controller: stopped_at.is_some(),
        retry_note,
        tree,
    })
}

/// One expansion at `frontier`: propose, screen, execute, attach, reflect.
/// Invalid actions still become children, carrying a no-change effect that
/// describes the failure, so the search learns from them.
#[allow(clippy::too_many_arguments)]
fn expand_once(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    tree: &mut SearchTree,
    frontier: usize,
    subtask: &Subtask,
    note: Option<&str>,
    guidance: Option<&str>,
    expansion_index: u32,
    cfg: &SearchConfig,
    recorder: &mut Recorder,
) -> Result<ExpandStatus, SearchError> {
    let bundle = ReflectionBundle {
        parent: tree.node(frontier).guidance.clone(),
        sibling: join_lines(&tree.node(frontier).sibling_reflections),
        simulation: tree.take_simulation_advice(frontier),
        subtask: merge_notes(note, guidance),
    };
    let observation = tree.node(frontier).observation.clone();
    let siblings: Vec<Action> = tree
        .node(frontier)
        .children
        .iter()
        .filter_map(|&c| tree.node(c).action.clone())
        .collect();

    let mut rejected: Vec<Action> = Vec::new();
    for _ in 0..=cfg.branch_limit {
        let ctx = ProposeContext {
            purpose: ProposePurpose::Expansion,
            expansion_index,
            rejected: rejected.clone(),
        };
        let (action, intent) = match oracles.explorer.propose(subtask, &observation, &bundle, &ctx)
        {
            Ok(p) => p,
            Err(OracleError::NoProposal(_)) => return Ok(ExpandStatus::NoProposal),
            Err(e) => return Err(e.into()),
        };
        recorder.record(EventBody::Proposed {
            frontier,
            action: action.to_string(),
            intent: intent.0.clone(),
            exchanges: oracles.drain_exchanges(),
        })?;

        let verdict = oracles.verifier.verify(subtask, &action, &intent, &observation, &siblings)?;
        if let Verdict::Reject { reason } = verdict {
            recorder.record(EventBody::Rejected {
                frontier,
                action: action.to_string(),
                reason,
                exchanges: oracles.drain_exchanges(),
            })?;
            rejected.push(action);
            continue;
        }

        let frontier_snapshot = tree.node(frontier).snapshot.clone();
        env.restore(&frontier_snapshot)?;
        let (observation_after, effect, snapshot_after) = if action.is_stop() {
            let effect = Effect {
                kind: EffectKind::NoChange,
                description: "the search stopped here".into(),
                intent_achieved: false,
            };
            (observation.clone(), effect, frontier_snapshot)
        } else {
            match env.apply(&action) {
                Ok(after) => {
                    let effect = assess_effect(&observation, &after, &intent);
                    (after, effect, env.snapshot())
                }
                Err(e @ (EnvError::InvalidElement(_) | EnvError::InvalidInput(_))) => {
                    let effect = Effect {
                        kind: EffectKind::NoChange,
                        description: format!("action failed: {e}"),
                        intent_achieved: false,
                    };
                    (observation.clone(), effect, frontier_snapshot)
                }
                Err(e) => return Err(e.into()),
            }
        };

        let reflection =
            oracles.explorer.reflect_expansion(subtask, &action, &intent, &effect)?;
        let child = tree.attach_child(
            frontier,
            ChildSeed {
                action: action.clone(),
                intent: intent.clone(),
                observation: observation_after,
                snapshot: snapshot_after,
                effect: effect.clone(),
            },
            cfg,
        );
        tree.set_guidance(child, reflection.for_children);
        tree.add_sibling_reflection(frontier, reflection.for_siblings);
        recorder.record(EventBody::Expanded {
            node: child,
            parent: frontier,
            action: action.to_string(),
            intent: intent.0,
            effect,
            exchanges: oracles.drain_exchanges(),
        })?;
        return Ok(ExpandStatus::Expanded(child));
    }
    Ok(ExpandStatus::VerifierExhausted)
}

/// Rates the fresh node, asks the controller whether to stop, peeks one step
/// ahead when continuing, and backpropagates the node's value.
#[allow(clippy::too_many_arguments)]
fn evaluate_and_simulate(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    tree: &mut SearchTree,
    child: usize,
    subtask: &Subtask,
    history: &[Action],
    cfg: &SearchConfig,
    recorder: &mut Recorder,
) -> Result<crate::model::ContinuationDecision, SearchError> {
    let action = tree.node(child).action.clone().expect("children always carry actions");
    let effect = tree.node(child).effect.clone().expect("children always carry effects");
    let snapshot = tree.node(child).snapshot.clone();
    let observation = tree.node(child).observation.clone();

    let mut executed = history.to_vec();
    executed.extend(tree.action_path(child));

    let fork = env.fork(&snapshot)?;
    let (s_eff, s_fut) = oracles.appraiser.assess(subtask, &action, &effect, &fork, &executed)?;
    let scores = Scores::new(s_eff as f64, s_fut as f64, cfg)?;
    tree.record_scores(child, scores);
    recorder.record(EventBody::Scored {
        node: child,
        s_eff: format_score(scores.s_eff),
        s_fut: format_score(scores.s_fut),
        s_total: format_score(scores.s_total),
        exchanges: oracles.drain_exchanges(),
    })?;

    let decision = oracles.controller.continue_or_stop(subtask, &observation, &executed)?;
    recorder.record(EventBody::Decision {
        node: child,
        stop: decision.stop,
        reason: decision.reason.clone(),
        exchanges: oracles.drain_exchanges(),
    })?;

    if !decision.stop && !tree.node(child).terminal {
        simulate_one_step(env, oracles, tree, child, subtask, recorder)?;
    }

    let updates = tree.backpropagate(child, cfg.backprop);
    recorder.record(EventBody::Backprop {
        node: child,
        updates: updates
            .into_iter()
            .map(|(node, q)| QUpdate { node, q: format_score(q) })
            .collect(),
    })?;
    Ok(decision)
}

/// One-step lookahead from a fresh node on a forked environment. Nothing is
/// attached to the tree; the observed outcome is written back as one-shot
/// advice for the node's next expansion.
fn simulate_one_step(
    env: &mut SimEnv,
    oracles: &OracleSuite,
    tree: &mut SearchTree,
    node: usize,
    subtask: &Subtask,
    recorder: &mut Recorder,
) -> Result<(), SearchError> {
    let observation = tree.node(node).observation.clone();
    let bundle = ReflectionBundle {
        parent: tree.node(node).guidance.clone(),
        sibling: join_lines(&tree.node(node).sibling_reflections),
        simulation: None,
        subtask: None,
    };
    let ctx = ProposeContext {
        purpose: ProposePurpose::Simulation,
        expansion_index: 0,
        rejected: Vec::new(),
    };
    let proposal = match oracles.explorer.propose(subtask, &observation, &bundle, &ctx) {
        Ok(p) => Some(p),
        Err(OracleError::NoProposal(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let Some((action, intent)) = proposal else {
        recorder.record(EventBody::Simulated {
            node,
            action: None,
            advice: None,
            exchanges: oracles.drain_exchanges(),
        })?;
        return Ok(());
    };

    let mut fork = env.fork(&tree.node(node).snapshot)?;
    let effect = if action.is_stop() {
        Effect {
            kind: EffectKind::NoChange,
            description: "the search stopped here".into(),
            intent_achieved: false,
        }
    } else {
        match fork.apply(&action) {
            Ok(after) => assess_effect(&observation, &after, &intent),
            Err(e @ (EnvError::InvalidElement(_) | EnvError::InvalidInput(_))) => Effect {
                kind: EffectKind::NoChange,
                description: format!("action failed: {e}"),
                intent_achieved: false,
            },
            Err(e) => return Err(e.into()),
        }
    };
    let advice = oracles.explorer.reflect_simulation(subtask, &action, &effect)?;
    tree.set_simulation_advice(node, advice.clone());
    recorder.record(EventBody::Simulated {
        node,
        action: Some(action.to_string()),
        advice: Some(advice),
        exchanges: oracles.drain_exchanges(),
    })?;
    Ok(())
}

fn join_lines(lines: &[String]) -> Option<String> {
    if lines.is_empty() {
        None
    } else {
        Some(lines.join("\n"))
    }
}

fn merge_notes(note: Option<&str>, guidance: Option<&str>) -> Option<String> {
    match (note, guidance) {
        (Some(n), Some(g)) => Some(format!("{n}\n{g}")),
        (Some(n), None) => Some(n.to_string()),
        (None, Some(g)) => Some(g.to_string()),
        (None, None) => None,
    }
}
