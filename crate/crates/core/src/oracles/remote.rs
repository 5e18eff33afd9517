//! Oracle roles served by a chat-completion endpoint.
//!
//! Every call renders a prompt template, posts it, and reads tagged lines of
//! the form `<tag>: value` out of the reply. A reply that cannot be parsed is
//! sent back once with the parse failure quoted; if the second reply still
//! does not parse, the call fails. Raw request/response pairs are appended to
//! the shared exchange log so traces capture them verbatim.
//!
//! Templates are plain text files with `{name}` placeholders. The copies
//! bundled with the crate are used unless a template directory is supplied.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::SimEnv;
use crate::model::{
    Action, Completeness, ContinuationDecision, Effect, Intent, Observation, ReflectionBundle,
    Subtask, SubtaskKind, Task,
};

use super::{
    structural_verdict, Appraiser, Controller, Exchange, ExchangeLog, ExpansionReflection,
    Explorer, Extractor, ExtractorStep, OracleError, OracleSuite, Planner, ProposeContext,
    ProposePurpose, Verdict, Verifier,
};

fn default_temperature() -> f64 {
    0.3
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    2
}

/// Connection settings for the chat-completion endpoint. `endpoint` is the
/// full URL of the completion route. The API key is read from the process
/// environment under `api_key_env` and sent as a bearer token; when the
/// variable is absent the request goes out unauthenticated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra sends after the first, for transient failures only.
    #[serde(default = "default_retries")]
    pub retries: u32,
}

impl LlmClientConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmClientConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.endpoint.is_empty() {
            return Err(OracleError::Transport("endpoint is empty".into()));
        }
        if self.model.is_empty() {
            return Err(OracleError::Transport("model name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(OracleError::Transport(format!(
                "temperature {} is not usable",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(OracleError::Transport("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Blocking chat-completion client with bounded retries. Transient failures
/// (connect errors, timeouts, 408/429/5xx) back off exponentially; an
/// authentication failure or any other client error is returned at once.
pub struct LlmClient {
    cfg: LlmClientConfig,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl LlmClient {
    pub fn new(cfg: LlmClientConfig) -> Result<Self, OracleError> {
        cfg.validate()?;
        let api_key = cfg.api_key_env.as_ref().and_then(|name| std::env::var(name).ok());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        Ok(LlmClient { cfg, http, api_key })
    }

    pub fn complete(&self, system: &str, user: &str) -> Result<String, OracleError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });

        let mut delay = Duration::from_millis(150);
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2).min(Duration::from_secs(2));
            }
            let mut request = self.http.post(&self.cfg.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status == reqwest::StatusCode::UNAUTHORIZED
                || status == reqwest::StatusCode::FORBIDDEN
            {
                return Err(OracleError::Auth(format!(
                    "{} from {}",
                    status, self.cfg.endpoint
                )));
            }
            if status.is_server_error()
                || status == reqwest::StatusCode::REQUEST_TIMEOUT
                || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            {
                last_error = format!("{status}");
                continue;
            }
            if !status.is_success() {
                return Err(OracleError::Transport(format!(
                    "{} from {}",
                    status, self.cfg.endpoint
                )));
            }
            let payload: serde_json::Value =
                response.json().map_err(|e| OracleError::Malformed(e.to_string()))?;
            let content = payload
                .pointer("/choices/0/message/content")
                .and_then(serde_json::Value::as_str)
                .ok_or_else(|| {
                    OracleError::Malformed("reply carries no message content".into())
                })?;
            return Ok(content.to_string());
        }
        Err(OracleError::Transport(format!(
            "no reply after {} attempts: {last_error}",
            self.cfg.retries + 1
        )))
    }
}

macro_rules! bundled {
    ($name:literal) => {
        include_str!(concat!("../../prompts/", $name, ".txt")).to_string()
    };
}

/// The eleven call templates plus the shared system message.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub system: String,
    pub plan: String,
    pub refine: String,
    pub propose: String,
    pub reflect_expansion: String,
    pub reflect_simulation: String,
    pub assess: String,
    pub continuation: String,
    pub completeness: String,
    pub subtask_reflection: String,
    pub verify: String,
    pub extract: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            system: bundled!("system"),
            plan: bundled!("plan"),
            refine: bundled!("refine"),
            propose: bundled!("propose"),
            reflect_expansion: bundled!("reflect_expansion"),
            reflect_simulation: bundled!("reflect_simulation"),
            assess: bundled!("assess"),
            continuation: bundled!("continue"),
            completeness: bundled!("completeness"),
            subtask_reflection: bundled!("subtask_reflection"),
            verify: bundled!("verify"),
            extract: bundled!("extract"),
        }
    }
}

impl PromptSet {
    /// Loads every template from `<dir>/<name>.txt`, the same file names the
    /// bundled copies ship under.
    pub fn load_dir(dir: &Path) -> Result<Self, OracleError> {
        let read = |name: &str| -> Result<String, OracleError> {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path)
                .map_err(|e| OracleError::Transport(format!("{}: {e}", path.display())))
        };
        Ok(PromptSet {
            system: read("system")?,
            plan: read("plan")?,
            refine: read("refine")?,
            propose: read("propose")?,
            reflect_expansion: read("reflect_expansion")?,
            reflect_simulation: read("reflect_simulation")?,
            assess: read("assess")?,
            continuation: read("continue")?,
            completeness: read("completeness")?,
            subtask_reflection: read("subtask_reflection")?,
            verify: read("verify")?,
            extract: read("extract")?,
        })
    }
}

/// Replaces `{name}` placeholders. Unknown placeholders are left in place so
/// a template typo shows up verbatim in the outgoing prompt.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Collects `<tag>: value` lines in order of appearance.
fn parse_tags(text: &str) -> Vec<(String, String)> {
    let mut tags = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('<') else { continue };
        let Some((name, value)) = rest.split_once('>') else { continue };
        let Some(value) = value.trim_start().strip_prefix(':') else { continue };
        if name.chars().all(|c| c.is_ascii_lowercase() || c == '_') && !name.is_empty() {
            tags.push((name.to_string(), value.trim().to_string()));
        }
    }
    tags
}

fn first<'a>(tags: &'a [(String, String)], name: &str) -> Result<&'a str, String> {
    tags.iter()
        .find(|(tag, _)| tag == name)
        .map(|(_, value)| value.as_str())
        .ok_or_else(|| format!("missing the `<{name}>:` line"))
}

fn nonempty<'a>(tags: &'a [(String, String)], name: &str) -> Result<&'a str, String> {
    let value = first(tags, name)?;
    if value.is_empty() {
        return Err(format!("the `<{name}>:` line is empty"));
    }
    Ok(value)
}

fn yes_no(value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        other => Err(format!("expected yes or no, got '{other}'")),
    }
}

fn score(value: &str) -> Result<u32, String> {
    let n: i64 =
        value.trim().parse().map_err(|_| format!("'{value}' is not an integer score"))?;
    Ok(n.clamp(0, 10) as u32)
}

fn parse_subtask_line(value: &str) -> Result<Subtask, String> {
    let mut parts = value.splitn(3, '|').map(str::trim);
    let kind = match parts.next().unwrap_or_default().to_ascii_lowercase().as_str() {
        "interaction" => SubtaskKind::Interaction,
        "extraction" => SubtaskKind::Extraction,
        other => return Err(format!("unknown subtask kind '{other}'")),
    };
    let description = parts.next().unwrap_or_default();
    let objective = parts.next().unwrap_or_default();
    if description.is_empty() || objective.is_empty() {
        return Err(format!(
            "subtask line '{value}' needs kind | description | objective"
        ));
    }
    Ok(Subtask { description: description.into(), objective: objective.into(), kind })
}

fn history_text(executed: &[Action]) -> String {
    if executed.is_empty() {
        return "none yet".into();
    }
    executed
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {a}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn action_list(actions: &[Action]) -> String {
    if actions.is_empty() {
        return "none".into();
    }
    actions.iter().map(|a| format!("`{a}`")).collect::<Vec<_>>().join(", ")
}

fn bundle_text(bundle: &ReflectionBundle) -> String {
    let mut lines = Vec::new();
    if let Some(parent) = &bundle.parent {
        lines.push(format!("from the step that led here: {parent}"));
    }
    if let Some(sibling) = &bundle.sibling {
        for lesson in sibling.lines() {
            lines.push(format!("from an alternative tried here: {lesson}"));
        }
    }
    if let Some(sim) = &bundle.simulation {
        lines.push(format!("from a preview of the next step: {sim}"));
    }
    if let Some(subtask) = &bundle.subtask {
        for lesson in subtask.lines() {
            lines.push(format!("from the wider attempt: {lesson}"));
        }
    }
    if lines.is_empty() {
        "none".into()
    } else {
        lines.join("\n")
    }
}

fn effect_text(effect: &Effect) -> String {
    if effect.intent_achieved {
        format!("{} (the stated intent was achieved)", effect.description)
    } else {
        effect.description.clone()
    }
}

fn subtask_vars(subtask: &Subtask) -> [(&'static str, &str); 2] {
    [("subtask", subtask.description.as_str()), ("objective", subtask.objective.as_str())]
}

/// All six roles backed by one endpoint and one template set.
pub struct RemoteOracles {
    client: LlmClient,
    prompts: PromptSet,
    log: ExchangeLog,
}

impl RemoteOracles {
    pub fn new(
        cfg: LlmClientConfig,
        prompts: PromptSet,
        log: ExchangeLog,
    ) -> Result<Self, OracleError> {
        Ok(RemoteOracles { client: LlmClient::new(cfg)?, prompts, log })
    }

    /// Builds a full suite from one endpoint configuration.
    pub fn suite(cfg: LlmClientConfig, prompts: PromptSet) -> Result<OracleSuite, OracleError> {
        let log: ExchangeLog = Arc::new(Mutex::new(Vec::new()));
        let core = Arc::new(RemoteOracles::new(cfg, prompts, log.clone())?);
        Ok(OracleSuite::from_parts(
            "remote",
            log,
            core.clone(),
            core.clone(),
            core.clone(),
            core.clone(),
            core.clone(),
            core,
        ))
    }

    fn record(&self, role: &str, request: &str, response: &str) {
        self.log.lock().expect("exchange log never poisoned").push(Exchange {
            role: role.into(),
            request: request.into(),
            response: response.into(),
        });
    }

    /// One prompt round plus at most one repair round. The parse failure is
    /// quoted back to the model verbatim before giving up.
    fn call<T>(
        &self,
        role: &str,
        template: &str,
        vars: &[(&str, &str)],
        parse: impl Fn(&[(String, String)]) -> Result<T, String>,
    ) -> Result<T, OracleError> {
        let user = render(template, vars);
        let reply = self.client.complete(&self.prompts.system, &user)?;
        self.record(role, &user, &reply);
        match parse(&parse_tags(&reply)) {
            Ok(value) => Ok(value),
            Err(why) => {
                let repair = format!(
                    "{user}\n\nYour previous reply could not be used: {why}. \
                     Reply again, following the requested line format exactly."
                );
                let reply = self.client.complete(&self.prompts.system, &repair)?;
                self.record(role, &repair, &reply);
                parse(&parse_tags(&reply))
                    .map_err(|why| OracleError::Malformed(format!("{role}: {why}")))
            }
        }
    }
}

impl Planner for RemoteOracles {
    fn decompose(
        &self,
        task: &Task,
        observation: &Observation,
        demos: Option<&str>,
    ) -> Result<Vec<Subtask>, OracleError> {
        self.call(
            "planner.decompose",
            &self.prompts.plan,
            &[
                ("task", task.description.as_str()),
                ("observation", observation.actree.as_str()),
                ("demos", demos.unwrap_or("none")),
            ],
            |tags| {
                let subtasks: Vec<Subtask> = tags
                    .iter()
                    .filter(|(tag, _)| tag == "subtask")
                    .map(|(_, value)| parse_subtask_line(value))
                    .collect::<Result<_, _>>()?;
                if subtasks.is_empty() {
                    return Err("missing the `<subtask>:` lines".into());
                }
                Ok(subtasks)
            },
        )
    }

    fn refine(
        &self,
        task: &Task,
        completed: &[Subtask],
        pending: &[Subtask],
        observation: &Observation,
    ) -> Result<Option<Vec<Subtask>>, OracleError> {
        if pending.is_empty() {
            return Ok(None);
        }
        let list = |items: &[Subtask]| {
            if items.is_empty() {
                "none".to_string()
            } else {
                items
                    .iter()
                    .map(|s| format!("- {} (done when: {})", s.description, s.objective))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        };
        self.call(
            "planner.refine",
            &self.prompts.refine,
            &[
                ("task", task.description.as_str()),
                ("completed", &list(completed)),
                ("pending", &list(pending)),
                ("observation", observation.actree.as_str()),
            ],
            |tags| {
                if first(tags, "plan_ok").is_ok() {
                    return Ok(None);
                }
                let subtasks: Vec<Subtask> = tags
                    .iter()
                    .filter(|(tag, _)| tag == "subtask")
                    .map(|(_, value)| parse_subtask_line(value))
                    .collect::<Result<_, _>>()?;
                if subtasks.is_empty() {
                    return Err(
                        "reply with `<plan_ok>: yes` or replacement `<subtask>:` lines".into()
                    );
                }
                Ok(Some(subtasks))
            },
        )
    }
}

impl Explorer for RemoteOracles {
    fn propose(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        reflections: &ReflectionBundle,
        ctx: &ProposeContext,
    ) -> Result<(Action, Intent), OracleError> {
        let continuation = match ctx.purpose {
            ProposePurpose::Simulation => "previewing one step ahead".to_string(),
            ProposePurpose::Expansion => reflections
                .subtask
                .clone()
                .unwrap_or_else(|| "the subtask is not done yet".to_string()),
        };
        let [s, o] = subtask_vars(subtask);
        self.call(
            "explorer.propose",
            &self.prompts.propose,
            &[
                s,
                o,
                ("observation", observation.actree.as_str()),
                ("reflections", &bundle_text(reflections)),
                ("continuation", &continuation),
                ("rejected", &action_list(&ctx.rejected)),
            ],
            |tags| {
                let action: Action = nonempty(tags, "action")?
                    .parse()
                    .map_err(|e| format!("unusable action: {e}"))?;
                let intent = nonempty(tags, "intent")?.to_string();
                Ok((action, Intent(intent)))
            },
        )
    }

    fn reflect_expansion(
        &self,
        subtask: &Subtask,
        action: &Action,
        intent: &Intent,
        effect: &Effect,
    ) -> Result<ExpansionReflection, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "explorer.reflect_expansion",
            &self.prompts.reflect_expansion,
            &[
                s,
                o,
                ("action", &action.to_string()),
                ("intent", intent.0.as_str()),
                ("effect", &effect_text(effect)),
            ],
            |tags| {
                Ok(ExpansionReflection {
                    for_children: nonempty(tags, "reflection_for_child")?.to_string(),
                    for_siblings: nonempty(tags, "reflection_for_sib")?.to_string(),
                })
            },
        )
    }

    fn reflect_simulation(
        &self,
        subtask: &Subtask,
        action: &Action,
        effect: &Effect,
    ) -> Result<String, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "explorer.reflect_simulation",
            &self.prompts.reflect_simulation,
            &[s, o, ("action", &action.to_string()), ("effect", &effect_text(effect))],
            |tags| Ok(nonempty(tags, "simulation_reflection")?.to_string()),
        )
    }
}

impl Appraiser for RemoteOracles {
    fn assess(
        &self,
        subtask: &Subtask,
        action: &Action,
        effect: &Effect,
        env_after: &SimEnv,
        executed: &[Action],
    ) -> Result<(u32, u32), OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "appraiser.assess",
            &self.prompts.assess,
            &[
                s,
                o,
                ("action", &action.to_string()),
                ("effect", &effect_text(effect)),
                ("observation", env_after.observe().actree.as_str()),
                ("history", &history_text(executed)),
            ],
            |tags| {
                let s_eff = score(first(tags, "executed_action_effectiveness")?)?;
                let s_fut = score(first(tags, "future_promise")?)?;
                Ok((s_eff, s_fut))
            },
        )
    }
}

impl Controller for RemoteOracles {
    fn continue_or_stop(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<ContinuationDecision, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "controller.continue",
            &self.prompts.continuation,
            &[s, o, ("observation", observation.actree.as_str()), ("history", &history_text(executed))],
            |tags| {
                let stop = yes_no(first(tags, "stop")?)?;
                let reason = if stop {
                    first(tags, "reason").unwrap_or("the objective looks met").to_string()
                } else {
                    nonempty(tags, "reason")?.to_string()
                };
                Ok(ContinuationDecision { stop, reason })
            },
        )
    }

    fn completeness(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<Completeness, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "controller.completeness",
            &self.prompts.completeness,
            &[s, o, ("observation", observation.actree.as_str()), ("history", &history_text(executed))],
            |tags| {
                let verdict = first(tags, "task_completeness")?.to_ascii_lowercase();
                let complete = match verdict.as_str() {
                    "complete" | "yes" => true,
                    "incomplete" | "no" => false,
                    other => return Err(format!("unknown completeness verdict '{other}'")),
                };
                Ok(Completeness {
                    complete,
                    assessment: nonempty(tags, "assessment")?.to_string(),
                })
            },
        )
    }

    fn subtask_reflection(
        &self,
        subtask: &Subtask,
        observation: &Observation,
        executed: &[Action],
    ) -> Result<String, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "controller.subtask_reflection",
            &self.prompts.subtask_reflection,
            &[s, o, ("observation", observation.actree.as_str()), ("history", &history_text(executed))],
            |tags| Ok(nonempty(tags, "subtask_reflection")?.to_string()),
        )
    }
}

impl Verifier for RemoteOracles {
    fn verify(
        &self,
        subtask: &Subtask,
        action: &Action,
        intent: &Intent,
        observation: &Observation,
        siblings: &[Action],
    ) -> Result<Verdict, OracleError> {
        // Applicability is checked locally so an accepted action can never
        // fail on the page; the model only gets a say on actions that pass.
        if let v @ Verdict::Reject { .. } = structural_verdict(action, observation, siblings) {
            return Ok(v);
        }
        let [s, o] = subtask_vars(subtask);
        self.call(
            "verifier.verify",
            &self.prompts.verify,
            &[
                s,
                o,
                ("action", &action.to_string()),
                ("intent", intent.0.as_str()),
                ("observation", observation.actree.as_str()),
                ("siblings", &action_list(siblings)),
            ],
            |tags| match first(tags, "verdict")?.to_ascii_lowercase().as_str() {
                "accept" => Ok(Verdict::Accept),
                "reject" => Ok(Verdict::Reject {
                    reason: first(tags, "reason")
                        .unwrap_or("the verifier turned this action down")
                        .to_string(),
                }),
                other => Err(format!("unknown verdict '{other}'")),
            },
        )
    }
}

impl Extractor for RemoteOracles {
    fn extract(
        &self,
        subtask: &Subtask,
        observation: &Observation,
    ) -> Result<ExtractorStep, OracleError> {
        let [s, o] = subtask_vars(subtask);
        self.call(
            "extractor.extract",
            &self.prompts.extract,
            &[s, o, ("observation", observation.actree.as_str())],
            |tags| {
                let value = nonempty(tags, "extraction")?;
                let (status, rest) = match value.split_once('|') {
                    Some((status, rest)) => (status.trim(), rest.trim()),
                    None => (value, ""),
                };
                match status.to_ascii_lowercase().as_str() {
                    "found" => {
                        if rest.is_empty() {
                            Err("found needs the answer after a `|`".into())
                        } else {
                            Ok(ExtractorStep::Found(rest.to_string()))
                        }
                    }
                    "not_visible" => Ok(ExtractorStep::NotVisible),
                    "unanswerable" => Ok(ExtractorStep::Unanswerable),
                    other => Err(format!("unknown extraction status '{other}'")),
                }
            },
        )
    }
}

/// Builds a suite mixing scripted and remote roles. `spec` names the remote
/// roles, comma-separated (for example "planner,appraiser"); every other role
/// stays scripted. The suite shares the remote exchange log.
pub fn mixed_suite(
    world: Arc<crate::env::world::WorldSpec>,
    honor_reflections: bool,
    cfg: LlmClientConfig,
    prompts: PromptSet,
    spec: &str,
) -> Result<OracleSuite, OracleError> {
    let scripted = super::scripted::ScriptedOracles::suite(world, honor_reflections);
    let log: ExchangeLog = Arc::new(Mutex::new(Vec::new()));
    let remote = Arc::new(RemoteOracles::new(cfg, prompts, log.clone())?);

    const ROLES: [&str; 6] =
        ["planner", "explorer", "appraiser", "controller", "verifier", "extractor"];
    let mut chosen: BTreeSet<&str> = BTreeSet::new();
    for role in spec.split(',').map(str::trim).filter(|r| !r.is_empty()) {
        if !ROLES.contains(&role) {
            return Err(OracleError::Transport(format!("unknown oracle role '{role}'")));
        }
        chosen.insert(role);
    }
    let remote_for = |role: &str| chosen.contains(role);

    Ok(OracleSuite::from_parts(
        format!("mixed:{spec}"),
        log,
        if remote_for("planner") { remote.clone() } else { scripted.planner.clone() },
        if remote_for("explorer") { remote.clone() } else { scripted.explorer.clone() },
        if remote_for("appraiser") { remote.clone() } else { scripted.appraiser.clone() },
        if remote_for("controller") { remote.clone() } else { scripted.controller.clone() },
        if remote_for("verifier") { remote.clone() } else { scripted.verifier.clone() },
        if remote_for("extractor") { remote } else { scripted.extractor.clone() },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_lines_parse_in_order_and_ignore_prose() {
        let text = "Here is my answer.\n\
                    <action>: click [5]\n\
                    some stray line\n\
                    <intent>: open the menu\n\
                    <action>: click [9]\n";
        let tags = parse_tags(text);
        assert_eq!(
            tags,
            vec![
                ("action".to_string(), "click [5]".to_string()),
                ("intent".to_string(), "open the menu".to_string()),
                ("action".to_string(), "click [9]".to_string()),
            ]
        );
        assert_eq!(first(&tags, "action").unwrap(), "click [5]");
        assert!(first(&tags, "verdict").is_err());
    }

    #[test]
    fn render_substitutes_known_placeholders_only() {
        let out = render("do {thing} on {page}; keep {unknown}", &[
            ("thing", "typing"),
            ("page", "members"),
        ]);
        assert_eq!(out, "do typing on members; keep {unknown}");
    }

    #[test]
    fn subtask_lines_need_all_three_fields() {
        let ok = parse_subtask_line("interaction | open the vault | vault page shown").unwrap();
        assert_eq!(ok.kind, SubtaskKind::Interaction);
        assert_eq!(ok.description, "open the vault");
        assert!(parse_subtask_line("interaction | only description").is_err());
        assert!(parse_subtask_line("sorcery | a | b").is_err());
    }

    #[test]
    fn scores_clamp_into_range_and_reject_garbage() {
        assert_eq!(score("9").unwrap(), 9);
        assert_eq!(score("14").unwrap(), 10);
        assert_eq!(score("-3").unwrap(), 0);
        assert!(score("high").is_err());
    }

    #[test]
    fn bundled_templates_ship_every_required_placeholder() {
        let p = PromptSet::default();
        for (template, required) in [
            (&p.plan, vec!["{task}", "{observation}", "{demos}"]),
            (&p.refine, vec!["{task}", "{completed}", "{pending}", "{observation}"]),
            (
                &p.propose,
                vec![
                    "{subtask}",
                    "{objective}",
                    "{observation}",
                    "{reflections}",
                    "{continuation}",
                    "{rejected}",
                ],
            ),
            (&p.reflect_expansion, vec!["{subtask}", "{action}", "{intent}", "{effect}"]),
            (&p.reflect_simulation, vec!["{subtask}", "{action}", "{effect}"]),
            (
                &p.assess,
                vec![
                    "{subtask}",
                    "{objective}",
                    "{action}",
                    "{effect}",
                    "{observation}",
                    "{history}",
                ],
            ),
            (&p.continuation, vec!["{subtask}", "{objective}", "{observation}", "{history}"]),
            (&p.completeness, vec!["{subtask}", "{objective}", "{observation}", "{history}"]),
            (
                &p.subtask_reflection,
                vec!["{subtask}", "{objective}", "{observation}", "{history}"],
            ),
            (
                &p.verify,
                vec!["{subtask}", "{action}", "{intent}", "{observation}", "{siblings}"],
            ),
            (&p.extract, vec!["{subtask}", "{objective}", "{observation}"]),
        ] {
            for placeholder in required {
                assert!(
                    template.contains(placeholder),
                    "template missing {placeholder}"
                );
            }
        }
    }

    #[test]
    fn config_validation_catches_bad_numbers() {
        let mut cfg = LlmClientConfig::new("http://localhost:1/v1/chat/completions", "m");
        assert!(cfg.validate().is_ok());
        cfg.temperature = -0.1;
        assert!(cfg.validate().is_err());
        cfg.temperature = 0.3;
        cfg.max_tokens = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_deserializes_with_defaults() {
        let cfg: LlmClientConfig = serde_json::from_str(
            r#"{"endpoint": "http://h/v1/chat/completions", "model": "m"}"#,
        )
        .unwrap();
        assert_eq!(cfg.temperature, 0.3);
        assert_eq!(cfg.max_tokens, 4096);
        assert_eq!(cfg.retries, 2);
    }
}
