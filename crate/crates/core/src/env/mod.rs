//! Deterministic simulated-web runtime: applies actions to a world, renders
//! observations, takes and restores snapshots, and judges task success.

pub mod world;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Action, Effect, EffectKind, ElementId, Intent, Observation, ObservedElement, ScrollDirection,
};
use world::{ElementSpec, EvalSpec, PageId, PageSpec, TaskSpec, Transition, WorldSpec};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("world parse error: {0}")]
    Parse(String),
    #[error("world validation error: {0}")]
    Validation(String),
    #[error("invalid element: {0}")]
    InvalidElement(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("snapshot does not belong to this environment")]
    StaleSnapshot,
}

/// Everything that can change during an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub page: PageId,
    pub scroll: u32,
    pub revealed: Vec<ElementSpec>,
    pub variables: BTreeMap<String, String>,
}

impl EnvState {
    /// Stable identity of the state, used to deduplicate states in searches.
    pub fn fingerprint(&self) -> String {
        let mut revealed_ids: Vec<u32> = self.revealed.iter().map(|e| e.id.0).collect();
        revealed_ids.sort_unstable();
        serde_json::to_string(&(&self.page, self.scroll, revealed_ids, &self.variables))
            .expect("state serialization cannot fail")
    }
}

/// Cheap point-in-time copy of an environment's state. Restoring into an
/// environment other than the one that produced it is an error.
#[derive(Debug, Clone)]
pub struct EnvSnapshot {
    instance: u64,
    state: Arc<EnvState>,
}

impl EnvSnapshot {
    pub fn page_id(&self) -> &str {
        &self.state.page
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// A live world the agent acts in. Cloning yields an independent environment
/// that still accepts the original's snapshots.
#[derive(Debug, Clone)]
pub struct SimEnv {
    world: Arc<WorldSpec>,
    instance: u64,
    state: EnvState,
}

impl SimEnv {
    pub fn new(world: WorldSpec) -> Self {
        Self::from_shared(Arc::new(world))
    }

    pub fn from_shared(world: Arc<WorldSpec>) -> Self {
        let state = initial_state(&world);
        Self { world, instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed), state }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn world_handle(&self) -> Arc<WorldSpec> {
        Arc::clone(&self.world)
    }

    pub fn page_id(&self) -> &str {
        &self.state.page
    }

    pub fn scroll(&self) -> u32 {
        self.state.scroll
    }

    pub fn variables(&self) -> &BTreeMap<String, String> {
        &self.state.variables
    }

    pub fn fingerprint(&self) -> String {
        self.state.fingerprint()
    }

    /// Back to the world's initial state. Existing snapshots stay valid.
    pub fn reset(&mut self) {
        self.state = initial_state(&self.world);
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot { instance: self.instance, state: Arc::new(self.state.clone()) }
    }

    pub fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        if snapshot.instance != self.instance {
            return Err(EnvError::StaleSnapshot);
        }
        self.state = (*snapshot.state).clone();
        Ok(())
    }

    /// Independent copy positioned at `snapshot`, for lookahead that must not
    /// disturb this environment.
    pub fn fork(&self, snapshot: &EnvSnapshot) -> Result<SimEnv, EnvError> {
        let mut copy = self.clone();
        copy.restore(snapshot)?;
        Ok(copy)
    }

    fn page(&self) -> &PageSpec {
        self.world.pages.get(&self.state.page).expect("current page always exists")
    }

    /// Elements in the current viewport window, then revealed elements, in
    /// stable order.
    pub fn visible(&self) -> Vec<&ElementSpec> {
        let mut out: Vec<&ElementSpec> = self
            .page()
            .elements
            .iter()
            .filter(|e| e.window == self.state.scroll)
            .collect();
        out.extend(self.state.revealed.iter());
        out
    }

    pub fn find_visible(&self, id: ElementId) -> Option<&ElementSpec> {
        self.visible().into_iter().find(|e| e.id == id)
    }

    pub fn can_scroll(&self, direction: ScrollDirection) -> bool {
        match direction {
            ScrollDirection::Up => self.state.scroll > 0,
            ScrollDirection::Down => self.state.scroll + 1 < self.page().scroll_windows,
        }
    }

    pub fn observe(&self) -> Observation {
        let base_url = self.page().base_url.clone();
        let elements: Vec<ObservedElement> = self
            .visible()
            .into_iter()
            .map(|e| ObservedElement {
                id: e.id,
                role: e.role,
                label: self.display_label(e),
                interactive: e.is_interactive(),
            })
            .collect();
        let mut actree = format!("page '{base_url}'");
        for el in &elements {
            actree.push_str(&format!("\n  [{}] {} '{}'", el.id, el.role, el.label));
        }
        Observation { base_url, actree, elements }
    }

    /// Textboxes show what they currently hold so that typing is observable.
    fn display_label(&self, el: &ElementSpec) -> String {
        if el.accepts_text() {
            if let Some(value) = self.state.variables.get(&el.text_variable()) {
                if !value.is_empty() {
                    return format!("{}: {value}", el.label);
                }
            }
        }
        el.label.clone()
    }

    /// Executes one action and returns the resulting observation. The state
    /// is untouched when an error is reported.
    pub fn apply(&mut self, action: &Action) -> Result<Observation, EnvError> {
        match action {
            Action::Click { id } => {
                let el = self.require_visible(*id)?;
                let transition = el.on_click.clone().ok_or_else(|| {
                    EnvError::InvalidElement(format!("element {id} does not respond to clicks"))
                })?;
                self.transition(&transition);
            }
            Action::Type { id, text } => {
                let el = self.require_visible(*id)?;
                if !el.accepts_text() {
                    return Err(EnvError::InvalidElement(format!(
                        "element {id} does not accept text"
                    )));
                }
                let variable = el.text_variable();
                let after_type = el.on_type.clone();
                self.state.variables.insert(variable, text.clone());
                if let Some(transition) = after_type {
                    self.transition(&transition);
                }
            }
            Action::Scroll { direction } => {
                if !self.can_scroll(*direction) {
                    return Err(EnvError::InvalidInput(format!(
                        "cannot scroll {direction} from here"
                    )));
                }
                match direction {
                    ScrollDirection::Up => self.state.scroll -= 1,
                    ScrollDirection::Down => self.state.scroll += 1,
                }
            }
            Action::Stop { .. } => {
                return Err(EnvError::InvalidInput(
                    "'stop' ends the search and does not act on the page".into(),
                ));
            }
        }
        Ok(self.observe())
    }

    fn require_visible(&self, id: ElementId) -> Result<&ElementSpec, EnvError> {
        self.find_visible(id)
            .ok_or_else(|| EnvError::InvalidElement(format!("element {id} is not visible")))
    }

    fn transition(&mut self, transition: &Transition) {
        match transition {
            Transition::Goto(target) => {
                self.state.page = target.clone();
                self.state.scroll = 0;
                self.state.revealed.clear();
            }
            Transition::Mutate(m) => {
                let value = match (&m.value, &m.value_from) {
                    (Some(v), _) => v.clone(),
                    (None, Some(src)) => {
                        self.state.variables.get(src).cloned().unwrap_or_default()
                    }
                    (None, None) => unreachable!("rejected at load time"),
                };
                self.state.variables.insert(m.variable.clone(), value);
            }
            Transition::Reveal(els) => {
                for el in els {
                    if self.state.revealed.iter().all(|r| r.id != el.id) {
                        self.state.revealed.push(el.clone());
                    }
                }
            }
            Transition::NoEffect => {}
        }
    }

    /// Task success judgment over the final state, the reported answer, and
    /// the executed action history.
    pub fn evaluate(&self, task: &TaskSpec, answer: Option<&str>, executed: &[Action]) -> bool {
        match &task.eval {
            EvalSpec::StateMatch { expect } => expect.iter().all(|(key, want)| {
                if key == "_page" {
                    &self.state.page == want
                } else {
                    self.state.variables.get(key).map(String::as_str) == Some(want.as_str())
                }
            }),
            EvalSpec::AnswerMatch { expected } => match answer {
                Some(a) => normalize_answer(a) == normalize_answer(expected),
                None => false,
            },
            EvalSpec::ActionTraceMatch { required } => {
                let mut wanted = required.iter();
                let mut next = wanted.next();
                for action in executed {
                    match next {
                        Some(w) if *w == action.to_string() => next = wanted.next(),
                        Some(_) => {}
                        None => break,
                    }
                }
                next.is_none()
            }
        }
    }
}

fn initial_state(world: &WorldSpec) -> EnvState {
    EnvState {
        page: world.start_page.clone(),
        scroll: 0,
        revealed: Vec::new(),
        variables: world.variables.clone(),
    }
}

/// Trim, casefold, and collapse whitespace runs so that answers compare by
/// content rather than formatting.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// What changed between two observations, summarized for scoring and
/// reflection. Intent achievement is judged by whether something the change
/// surfaced (a changed label, or the tail segment of a new page's URL) is
/// mentioned in the intent.
pub fn assess_effect(before: &Observation, after: &Observation, intent: &Intent) -> Effect {
    let intent_lc = intent.0.to_lowercase();
    let mentions = |s: &str| !s.is_empty() && intent_lc.contains(&s.to_lowercase());

    if before.base_url != after.base_url {
        let tail = after.base_url.rsplit('/').next().unwrap_or(&after.base_url);
        return Effect {
            kind: EffectKind::NewPage,
            description: format!("new page reached: {}", after.base_url),
            intent_achieved: mentions(tail),
        };
    }

    let added: Vec<&ObservedElement> =
        after.elements.iter().filter(|e| !before.elements.contains(e)).collect();
    let removed: Vec<&ObservedElement> =
        before.elements.iter().filter(|e| !after.elements.contains(e)).collect();

    if added.is_empty() && removed.is_empty() {
        return Effect {
            kind: EffectKind::NoChange,
            description: "no observable change".into(),
            intent_achieved: false,
        };
    }

    let list = |els: &[&ObservedElement]| {
        els.iter().map(|e| format!("'{}'", e.label)).collect::<Vec<_>>().join(", ")
    };
    let mut parts = Vec::new();
    if !added.is_empty() {
        parts.push(format!("added [{}]", list(&added)));
    }
    if !removed.is_empty() {
        parts.push(format!("removed [{}]", list(&removed)));
    }
    Effect {
        kind: EffectKind::InPlaceChange,
        description: format!("page updated: {}", parts.join("; ")),
        intent_achieved: added.iter().chain(removed.iter()).any(|e| mentions(&e.label)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Action;

    fn demo_world() -> WorldSpec {
        world::load_world_str(
            &serde_json::json!({
                "start_page": "home",
                "variables": {"cart": "empty"},
                "input_texts": ["widget"],
                "pages": {
                    "home": {
                        "base_url": "https://shop.example/home",
                        "scroll_windows": 2,
                        "elements": [
                            {"id": 1, "role": "link", "label": "Catalog",
                             "on_click": {"goto": "catalog"}},
                            {"id": 2, "role": "statictext", "label": "Deals of the day"},
                            {"id": 3, "role": "button", "label": "Newsletter",
                             "on_click": "no_effect"},
                            {"id": 4, "role": "statictext", "label": "Footer fine print",
                             "window": 1}
                        ]
                    },
                    "catalog": {
                        "base_url": "https://shop.example/catalog",
                        "elements": [
                            {"id": 10, "role": "textbox", "label": "Search"},
                            {"id": 11, "role": "button", "label": "Go",
                             "on_click": {"reveal": [
                                 {"id": 12, "role": "statictext", "label": "Result: widget kit"}
                             ]}},
                            {"id": 13, "role": "link", "label": "Home",
                             "on_click": {"goto": "home"}}
                        ]
                    }
                },
                "tasks": [
                    {"id": "find", "goal": "Find the widget kit",
                     "eval": {"answer_match": {"expected": "Widget  Kit"}}},
                    {"id": "visit", "goal": "Open the catalog",
                     "eval": {"state_match": {"expect": {"_page": "catalog", "Search": "widget"}}}},
                    {"id": "ordered", "goal": "Search in order",
                     "eval": {"action_trace_match": {"required": ["type [10] [widget]", "click [11]"]}}}
                ]
            })
            .to_string(),
        )
        .unwrap()
    }

    #[test]
    fn renders_actree_with_header_and_rows() {
        let env = SimEnv::new(demo_world());
        let obs = env.observe();
        assert_eq!(
            obs.actree,
            "page 'https://shop.example/home'\n  [1] link 'Catalog'\n  [2] statictext 'Deals of the day'\n  [3] button 'Newsletter'"
        );
        assert!(obs.element(ElementId(3)).unwrap().interactive);
        assert!(!obs.element(ElementId(2)).unwrap().interactive);
    }

    #[test]
    fn scroll_moves_between_windows_and_stops_at_edges() {
        let mut env = SimEnv::new(demo_world());
        assert!(matches!(
            env.apply(&Action::Scroll { direction: ScrollDirection::Up }),
            Err(EnvError::InvalidInput(_))
        ));
        let obs = env.apply(&Action::Scroll { direction: ScrollDirection::Down }).unwrap();
        assert!(obs.has_label("Footer fine print"));
        assert!(!obs.has_label("Catalog"));
        assert!(matches!(
            env.apply(&Action::Scroll { direction: ScrollDirection::Down }),
            Err(EnvError::InvalidInput(_))
        ));
    }

    #[test]
    fn click_navigates_and_resets_scroll_and_reveals() {
        let mut env = SimEnv::new(demo_world());
        env.apply(&Action::click(1)).unwrap();
        env.apply(&Action::click(11)).unwrap();
        assert!(env.observe().has_label("Result: widget kit"));
        env.apply(&Action::click(11)).unwrap();
        assert_eq!(env.visible().iter().filter(|e| e.id == ElementId(12)).count(), 1);
        let obs = env.apply(&Action::click(13)).unwrap();
        assert_eq!(obs.base_url, "https://shop.example/home");
        env.apply(&Action::click(1)).unwrap();
        assert!(!env.observe().has_label("Result: widget kit"));
    }

    #[test]
    fn typing_binds_variable_and_shows_value() {
        let mut env = SimEnv::new(demo_world());
        env.apply(&Action::click(1)).unwrap();
        let obs = env.apply(&Action::type_text(10, "widget")).unwrap();
        assert_eq!(env.variables().get("Search").map(String::as_str), Some("widget"));
        assert!(obs.has_label("Search: widget"));
    }

    #[test]
    fn apply_rejects_bad_targets_without_state_change() {
        let mut env = SimEnv::new(demo_world());
        let before = env.fingerprint();
        assert!(matches!(env.apply(&Action::click(99)), Err(EnvError::InvalidElement(_))));
        assert!(matches!(env.apply(&Action::click(2)), Err(EnvError::InvalidElement(_))));
        assert!(matches!(
            env.apply(&Action::type_text(1, "x")),
            Err(EnvError::InvalidElement(_))
        ));
        assert!(matches!(
            env.apply(&Action::stop(Some("done".into()))),
            Err(EnvError::InvalidInput(_))
        ));
        assert_eq!(env.fingerprint(), before);
    }

    #[test]
    fn inert_button_click_succeeds_with_no_change() {
        let mut env = SimEnv::new(demo_world());
        let before = env.observe();
        let after = env.apply(&Action::click(3)).unwrap();
        let effect = assess_effect(&before, &after, &Intent("subscribe".into()));
        assert_eq!(effect.kind, EffectKind::NoChange);
        assert!(!effect.intent_achieved);
    }

    #[test]
    fn snapshots_restore_and_fork() {
        let mut env = SimEnv::new(demo_world());
        let snap = env.snapshot();
        env.apply(&Action::click(1)).unwrap();
        let fork = env.fork(&snap).unwrap();
        assert_eq!(fork.page_id(), "home");
        assert_eq!(env.page_id(), "catalog");
        env.restore(&snap).unwrap();
        assert_eq!(env.page_id(), "home");

        let other = SimEnv::new(demo_world());
        let mut env2 = env.clone();
        assert!(matches!(env2.restore(&other.snapshot()), Err(EnvError::StaleSnapshot)));
    }

    #[test]
    fn effect_kinds_from_diffs() {
        let mut env = SimEnv::new(demo_world());
        let home = env.observe();
        let catalog = env.apply(&Action::click(1)).unwrap();
        let nav = assess_effect(&home, &catalog, &Intent("open the catalog page".into()));
        assert_eq!(nav.kind, EffectKind::NewPage);
        assert_eq!(nav.description, "new page reached: https://shop.example/catalog");
        assert!(nav.intent_achieved);

        let revealed = env.apply(&Action::click(11)).unwrap();
        let change = assess_effect(
            &catalog,
            &revealed,
            &Intent("search so that 'Result: widget kit' appears".into()),
        );
        assert_eq!(change.kind, EffectKind::InPlaceChange);
        assert_eq!(change.description, "page updated: added ['Result: widget kit']");
        assert!(change.intent_achieved);

        let vague = assess_effect(&catalog, &revealed, &Intent("look around".into()));
        assert!(!vague.intent_achieved);
    }

    #[test]
    fn evaluate_covers_all_three_modes() {
        let mut env = SimEnv::new(demo_world());
        let world = env.world_handle();
        let find = world.tasks.iter().find(|t| t.id == "find").unwrap();
        let visit = world.tasks.iter().find(|t| t.id == "visit").unwrap();
        let ordered = world.tasks.iter().find(|t| t.id == "ordered").unwrap();

        assert!(env.evaluate(find, Some("  widget kit "), &[]));
        assert!(!env.evaluate(find, Some("widget"), &[]));
        assert!(!env.evaluate(find, None, &[]));

        assert!(!env.evaluate(visit, None, &[]));
        env.apply(&Action::click(1)).unwrap();
        env.apply(&Action::type_text(10, "widget")).unwrap();
        assert!(env.evaluate(visit, None, &[]));

        let run = |specs: &[&str]| -> Vec<Action> {
            specs.iter().map(|s| s.parse().unwrap()).collect()
        };
        assert!(env.evaluate(
            ordered,
            None,
            &run(&["click [1]", "type [10] [widget]", "click [13]", "click [11]"])
        ));
        assert!(!env.evaluate(ordered, None, &run(&["click [11]", "type [10] [widget]"])));
    }

    #[test]
    fn reset_returns_to_initial_state() {
        let mut env = SimEnv::new(demo_world());
        let initial = env.fingerprint();
        env.apply(&Action::click(1)).unwrap();
        env.apply(&Action::type_text(10, "widget")).unwrap();
        env.reset();
        assert_eq!(env.fingerprint(), initial);
        assert_eq!(env.variables().get("cart").map(String::as_str), Some("empty"));
    }
}
