//! Deterministic oracle set driven by a world's `script` block.
//!
//! Every judgment is a pure function of the script tables plus the inputs,
//! so runs replay bit for bit. Reflection texts follow fixed templates, and
//! the proposer reads them back by looking for an action between backticks:
//! a line starting with "avoid" condemns its action, anything else
//! recommends it. That convention is what lets advice written by one call
//! steer a later one without any shared mutable state beyond the strings.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::env::world::{
    ScriptSpec, StatePredicate, SubtaskScript, TaskScript, WorldSpec,
};
use crate::env::SimEnv;
use crate::model::{
    Action, Completeness, ContinuationDecision, Effect, EffectKind, Intent, Observation,
    ReflectionBundle, ScrollDirection, Subtask, Task,
};
use crate::oracles::{
    Appraiser, Controller, Exchange, ExpansionReflection, Explorer, Extractor, ExtractorStep,
    OracleError, OracleSuite, Planner, ProposeContext, ProposePurpose, Verdict, Verifier,
};

/// How far ahead the future-promise search is willing to look.
const BFS_DEPTH_LIMIT: u32 = 10;
const BFS_STATE_LIMIT: usize = 4096;

pub struct ScriptedOracles {
    world: Arc<WorldSpec>,
    honor_reflections: bool,
    active_task: Mutex<Option<String>>,
}

impl ScriptedOracles {
    pub fn new(world: Arc<WorldSpec>, honor_reflections: bool) -> Arc<Self> {
        Arc::new(ScriptedOracles { world, honor_reflections, active_task: Mutex::new(None) })
    }

    /// Full suite backed by one shared scripted core.
    pub fn suite(world: Arc<WorldSpec>, honor_reflections: bool) -> OracleSuite {
        let core = Self::new(world, honor_reflections);
        let kind = if honor_reflections { "scripted" } else { "scripted-noreflect" };
        OracleSuite::from_parts(
            kind,
            Arc::new(Mutex::new(Vec::<Exchange>::new())),
            core.clone(),
            core.clone(),
            core.clone(),
            core.clone(),
            core.clone(),
            core,
        )
    }

    fn script(&self) -> Result<&ScriptSpec, OracleError> {
        self.world.script.as_ref().ok_or_else(|| {
            OracleError::Malformed("this world carries no script for the deterministic oracles".into())
        })
    }

    fn task_script(&self, task_id: &str) -> Result<&TaskScript, OracleError> {
        self.script()?.tasks.get(task_id).ok_or_else(|| {
            OracleError::Malformed(format!("no scripted data for task '{task_id}'"))
        })
    }

    /// Finds the script row for a subtask by its description, preferring the
    /// task the planner most recently decomposed.
    fn subtask_script(&self, subtask: &Subtask) -> Result<&SubtaskScript, OracleError> {
        let script = self.script()?;
        fn probe<'a>(ts: &'a TaskScript, description: &str) -> Option<&'a SubtaskScript> {
            ts.plan
                .iter()
                .position(|p| p.description == description)
                .map(|i| &ts.subtasks[i])
        }
        let active = self.active_task.lock().expect("task marker never poisoned").clone();
        if let Some(ts) = active.as_deref().and_then(|t| script.tasks.get(t)) {
            if let Some(st) = probe(ts, &subtask.description) {
                return Ok(st);
            }
        }
        script
            .tasks
            .values()
            .find_map(|ts| probe(ts, &subtask.description))
            .ok_or_else(|| {
                OracleError::Malformed(format!(
                    "no scripted data for subtask '{}'",
                    subtask.description
                ))
            })
    }

    fn page_id_of(&self, observation: &Observation) -> Option<&str> {
        self.world
            .pages
            .iter()
            .find(|(_, p)| p.base_url == observation.base_url)
            .map(|(id, _)| id.as_str())
    }

    fn predicate_holds(
        &self,
        pred: &StatePredicate,
        observation: &Observation,
        executed: &[Action],
    ) -> bool {
        if let Some(page) = &pred.page {
            let on_page = self
                .world
                .pages
                .get(page)
                .is_some_and(|p| p.base_url == observation.base_url);
            if !on_page {
                return false;
            }
        }
        if let Some(needle) = &pred.label_visible {
            if !observation.elements.iter().any(|e| e.label.contains(needle)) {
                return false;
            }
        }
        if let Some(want) = &pred.last_action {
            if executed.last().map(|a| a.to_string()).as_deref() != Some(want) {
                return false;
            }
        }
        if let Some(want) = &pred.history_contains {
            if !executed.iter().any(|a| &a.to_string() == want) {
                return false;
            }
        }
        true
    }

    fn goal_of(st: &SubtaskScript) -> Option<&StatePredicate> {
        st.complete_when.as_ref().or(st.stop_when.as_ref())
    }

    /// Shortest action count from the current state to the goal predicate,
    /// breadth-first over clicks, scrolls, and scripted input texts.
    fn distance_to_goal(
        &self,
        env: &SimEnv,
        goal: &StatePredicate,
        executed: &[Action],
    ) -> Option<u32> {
        if self.predicate_holds(goal, &env.observe(), executed) {
            return Some(0);
        }
        let mut seen = std::collections::HashSet::new();
        seen.insert(env.fingerprint());
        let mut queue = VecDeque::new();
        queue.push_back((env.clone(), executed.to_vec(), 0u32));
        while let Some((state, history, depth)) = queue.pop_front() {
            if depth >= BFS_DEPTH_LIMIT {
                continue;
            }
            for action in candidate_moves(&state) {
                let mut next = state.clone();
                let Ok(observation) = next.apply(&action) else { continue };
                if !seen.insert(next.fingerprint()) {
                    continue;
                }
                if seen.len() > BFS_STATE_LIMIT {
                    return None;
                }
                let mut next_history = history.clone();
                next_history.push(action);
                if self.predicate_holds(goal, &observation, &next_history) {
                    return Some(depth + 1);
                }
                queue.push_back((next, next_history, depth + 1));
            }
        }
        None
    }
}

/// Moves a blind state-space search is allowed to try from a state.
fn candidate_moves(env: &SimEnv) -> Vec<Action> {
    let mut moves = Vec::new();
    for el in env.visible() {
        if el.on_click.is_some() {
            moves.push(Action::Click { id: el.id });
        }
        if el.accepts_text() {
            for text in &env.world().input_texts {
                moves.push(Action::type_text(el.id.0, text.clone()));
            }
        }
    }
    for direction in [ScrollDirection::Up, ScrollDirection::Down] {
        if env.can_scroll(direction) {
            moves.push(Action::Scroll { direction });
        }
    }
    moves
}

/// First action found between backticks, scanning left to right.
pub fn backticked_action(text: &str) -> Option<Action> {
    let mut rest = text;
    while let Some(start) = rest.find('`') {
        let tail = &rest[start + 1..];
        let end = tail.find('`')?;
        if let Ok(action) = tail[..end].parse::<Action>() {
            return Some(action);
        }
        rest = &tail[end + 1..];
    }
    None
}

fn is_warning(line: &str) -> bool {
    line.trim_start().starts_with("avoid")
}

/// Actions the bundle warns against, across every channel and line.
fn condemned_actions(bundle: &ReflectionBundle) -> Vec<Action> {
    let mut out = Vec::new();
    for text in [&bundle.simulation, &bundle.subtask, &bundle.parent, &bundle.sibling]
        .into_iter()
        .flatten()
    {
        for line in text.lines() {
            if is_warning(line) {
                if let Some(a) = backticked_action(line) {
                    out.push(a);
                }
            }
        }
    }
    out
}

/// Actions earlier siblings already took at this frontier.
fn taken_actions(bundle: &ReflectionBundle) -> Vec<Action> {
    let mut out = Vec::new();
    if let Some(text) = &bundle.sibling {
        for line in text.lines() {
            if let Some(a) = backticked_action(line) {
                out.push(a);
            }
        }
    }
    out
}

/// Positive guidance, strongest channel first: lookahead advice, then the
/// retry note from the previous attempt, then what the parent suggested.
fn recommended_action(bundle: &ReflectionBundle) -> Option<Action> {
    for text in [&bundle.simulation, &bundle.subtask, &bundle.parent].into_iter().flatten() {
        for line in text.lines() {
            if !is_warning(line) {
                if let Some(a) = backticked_action(line) {
                    return Some(a);
                }
            }
        }
    }
    None
}

impl Planner for ScriptedOracles {
    fn decompose(
        &self,
        task: &Task,
        _observation: &Observation,
        _demos: Option<&str>,
    ) -> Result<Vec<Subtask>, OracleError> {
        let ts = self.task_script(&task.id)?;
        *self.active_task.lock().expect("task marker never poisoned") = Some(task.id.clone());
        Ok(ts
            .plan
            .iter()
            .map(|p| Subtask {
                description: p.description.clone(),
                objective: p.objective.clone(),
                kind: p.kind,
            })
            .collect())
    }

    fn refine(
        &self,
        task: &Task,
        _completed: &[Subtask],
        pending: &[Subtask],
        observation: &Observation,
    ) -> Result<Option<Vec<Subtask>>, OracleError> {
        let ts = self.task_script(&task.id)?;
        let Some(page) = self.page_id_of(observation) else { return Ok(None) };
        for rule in &ts.refine {
            if rule.when_page != page {
                continue;
            }
            let kept: Vec<Subtask> = if rule.drop_all {
                Vec::new()
            } else if let Some(needle) = &rule.drop_matching {
                pending.iter().filter(|s| !s.description.contains(needle)).cloned().collect()
            } else {
                pending.to_vec()
            };
            if kept.len() != pending.len() {
                return Ok(Some(kept));
            }
        }
        Ok(None)
    }
}

impl Explorer for ScriptedOracles {
    fn propose(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        reflections: &ReflectionBundle,
        ctx: &ProposeContext,
    ) -> Result<(Action, Intent), OracleError> {
        let st = self.subtask_script(subtask)?;
        let page = self.page_id_of(observation);

        let mut candidates: Vec<(Action, Intent)> = Vec::new();
        if ctx.purpose == ProposePurpose::Expansion {
            for decoy in &st.decoys {
                if decoy.expansion == ctx.expansion_index {
                    let action = decoy.action.parse().expect("validated at load");
                    candidates.push((action, Intent(decoy.intent.clone())));
                }
            }
        }
        if self.honor_reflections {
            if let Some(action) = recommended_action(reflections) {
                let intent = page
                    .and_then(|p| st.proposals.get(p))
                    .into_iter()
                    .flatten()
                    .find(|row| row.action == action.to_string())
                    .map(|row| Intent(row.intent.clone()))
                    .unwrap_or_else(|| Intent(format!("follow the guidance to run `{action}`")));
                candidates.push((action, intent));
            }
        }
        if let Some(rows) = page.and_then(|p| st.proposals.get(p)) {
            for row in rows {
                let action: Action = row.action.parse().expect("validated at load");
                candidates.push((action, Intent(row.intent.clone())));
            }
        }

        let condemned =
            if self.honor_reflections { condemned_actions(reflections) } else { Vec::new() };
        let taken = if self.honor_reflections { taken_actions(reflections) } else { Vec::new() };

        for (action, intent) in candidates {
            if let Some(target) = action.target() {
                if observation.element(target).is_none() {
                    continue;
                }
            }
            if ctx.rejected.contains(&action)
                || condemned.contains(&action)
                || taken.contains(&action)
            {
                continue;
            }
            return Ok((action, intent));
        }
        Err(OracleError::NoProposal(format!(
            "nothing left to try for '{}' on this page",
            subtask.description
        )))
    }

    fn reflect_expansion(
        &self,
        subtask: &Subtask,
        action: &Action,
        _intent: &Intent,
        effect: &Effect,
    ) -> Result<ExpansionReflection, OracleError> {
        let st = self.subtask_script(subtask)?;
        let serialized = action.to_string();
        let next_in_solution = st
            .solution
            .iter()
            .position(|s| *s == serialized)
            .and_then(|i| st.solution.get(i + 1));
        let for_children = match next_in_solution {
            Some(next) => format!("next, do `{next}`"),
            None => format!("keep working toward: {}", subtask.objective),
        };
        let for_siblings = if effect.kind == EffectKind::NoChange {
            format!("avoid `{serialized}`: {}", effect.description)
        } else {
            format!("continue past `{serialized}`: {}", effect.description)
        };
        Ok(ExpansionReflection { for_children, for_siblings })
    }

    fn reflect_simulation(
        &self,
        _subtask: &Subtask,
        action: &Action,
        effect: &Effect,
    ) -> Result<String, OracleError> {
        Ok(if effect.kind == EffectKind::NoChange {
            format!("avoid `{action}`: {}", effect.description)
        } else {
            format!("recommend `{action}`: {}", effect.description)
        })
    }
}

impl Appraiser for ScriptedOracles {
    fn assess(
        &self,
        subtask: &Subtask,
        action: &Action,
        effect: &Effect,
        env_after: &SimEnv,
        executed: &[Action],
    ) -> Result<(u32, u32), OracleError> {
        let st = self.subtask_script(subtask)?;
        let in_solution = st.solution.iter().any(|s| *s == action.to_string());
        let s_eff = if effect.kind == EffectKind::NoChange {
            2
        } else if effect.intent_achieved && in_solution {
            9
        } else {
            5
        };
        let s_fut = match Self::goal_of(st) {
            Some(goal) => match self.distance_to_goal(env_after, goal, executed) {
                Some(d) => (10i64 - 2 * d as i64).clamp(0, 10) as u32,
                None => 0,
            },
            None => 5,
        };
        Ok((s_eff, s_fut))
    }
}

impl Controller for ScriptedOracles {
    fn continue_or_stop(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<ContinuationDecision, OracleError> {
        let st = self.subtask_script(subtask)?;
        let done = st
            .stop_when
            .as_ref()
            .is_some_and(|p| self.predicate_holds(p, observation, executed));
        Ok(if done {
            ContinuationDecision {
                stop: true,
                reason: format!("objective reached: {}", subtask.objective),
            }
        } else {
            ContinuationDecision {
                stop: false,
                reason: format!("keep going: {} is not met yet", subtask.objective),
            }
        })
    }

    fn completeness(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<Completeness, OracleError> {
        let st = self.subtask_script(subtask)?;
        let complete = Self::goal_of(st)
            .is_some_and(|p| self.predicate_holds(p, observation, executed));
        Ok(Completeness {
            complete,
            assessment: if complete {
                format!("reached: {}", subtask.objective)
            } else {
                format!("not reached: {}", subtask.objective)
            },
        })
    }

    fn subtask_reflection(
        &self,
        subtask: &Subtask,
        _observation: &Observation,
        _executed: &[Action],
    ) -> Result<String, OracleError> {
        let st = self.subtask_script(subtask)?;
        if let Some(hint) = &st.retry_hint {
            return Ok(hint.clone());
        }
        Ok(match st.solution.first() {
            Some(first) => {
                format!("the attempt fell short; recommend `{first}` to rejoin the known route")
            }
            None => "the attempt fell short; survey the page before acting".into(),
        })
    }
}

impl Verifier for ScriptedOracles {
    fn verify(
        &self,
        _subtask: &Subtask,
        action: &Action,
        _intent: &Intent,
        observation: &Observation,
        siblings: &[Action],
    ) -> Result<Verdict, OracleError> {
        Ok(super::structural_verdict(action, observation, siblings))
    }
}

impl Extractor for ScriptedOracles {
    fn extract(
        &self,
        subtask: &Subtask,
        observation: &Observation,
    ) -> Result<ExtractorStep, OracleError> {
        let st = self.subtask_script(subtask)?;
        let Some(spec) = &st.extract else {
            return Err(OracleError::Malformed(format!(
                "subtask '{}' has no extraction rule",
                subtask.description
            )));
        };
        let re = regex::Regex::new(&spec.regex).expect("validated at load");
        for element in &observation.elements {
            if let Some(captures) = re.captures(&element.label) {
                if let Some(group) = captures.get(spec.group as usize) {
                    return Ok(ExtractorStep::Found(group.as_str().to_string()));
                }
            }
        }
        Ok(ExtractorStep::NotVisible)
    }
}
