//! Tool-augmented rollout loop.
//!
//! Generation stops on the closing tag of any tool or on `</answer>`. When a
//! completed call is pending, the runtime dispatches it and appends the
//! `<result>` block, then resumes generation with the extended transcript.

mod http;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::trajectory::{
    detect_pending_call, parse, GrammarError, ParsedTrajectory, ToolSet, ANSWER_TAG, ERROR_PREFIX, RESULT_TAG,
};

pub use http::{HttpGenerationClient, SamplingParams};
pub use scripted::{ScriptEntry, ScriptedClient};

pub const DEFAULT_AGENT_ROUND_LIMIT: usize = 8;
pub const DEFAULT_PLANNER_ROUND_LIMIT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    /// First user message; `{question}` is replaced by the question.
    pub user: String,
}

impl PromptTemplate {
    pub fn new(system: impl Into<String>) -> Self {
        PromptTemplate { system: system.into(), user: "Question: {question}".into() }
    }

    pub fn user_message(&self, question: &str) -> String {
        self.user.replace("{question}", question)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub name: String,
    pub prompt: PromptTemplate,
    pub toolset: ToolSet,
    pub round_limit: usize,
    pub stop_sequences: Vec<String>,
}

impl AgentConfig {
    /// Stop sequences are the closing tag of every tool plus `</answer>`.
    pub fn new(name: impl Into<String>, prompt: PromptTemplate, toolset: ToolSet, round_limit: usize) -> Self {
        let mut stop_sequences: Vec<String> = toolset.iter().map(|t| format!("</{t}>")).collect();
        stop_sequences.push(format!("</{ANSWER_TAG}>"));
        AgentConfig { name: name.into(), prompt, toolset, round_limit, stop_sequences }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.round_limit == 0 {
            return Err(RuntimeError::InvalidConfig(format!("{}: round_limit must be at least 1", self.name)));
        }
        let required = self.toolset.iter().map(|t| format!("</{t}>")).chain([format!("</{ANSWER_TAG}>")]);
        for stop in required {
            if !self.stop_sequences.contains(&stop) {
                return Err(RuntimeError::InvalidConfig(format!("{}: missing stop sequence {stop}", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub agent: &'a str,
    pub question: &'a str,
    /// System prompt, user question and, once generation has started, the
    /// assistant transcript to continue.
    pub messages: Vec<Message>,
    pub stop: &'a [String],
}

impl GenerationRequest<'_> {
    pub fn transcript(&self) -> &str {
        match self.messages.last() {
            Some(m) if m.role == Role::Assistant => &m.content,
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    /// Generation ended on this stop sequence, which is the text's suffix.
    Stop(String),
    Length,
    EndOfText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ClientError(pub String);

pub trait GenerationClient: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, ClientError>;
}

impl<T: GenerationClient + ?Sized> GenerationClient for Arc<T> {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, ClientError> {
        (**self).generate(request)
    }
}

/// Cuts `text` after the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> Generation {
    let earliest = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| (i + s.len(), s)))
        .min_by_key(|(end, _)| *end);
    match earliest {
        Some((end, s)) => Generation { text: text[..end].to_string(), stop_reason: StopReason::Stop(s.clone()) },
        None => Generation { text: text.to_string(), stop_reason: StopReason::EndOfText },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ToolError(pub String);

impl ToolError {
    pub fn empty_query() -> Self {
        ToolError("empty query".into())
    }
}

pub trait ToolHandler: Send + Sync {
    fn call(&self, payload: &str) -> Result<String, ToolError>;
}

impl<F> ToolHandler for F
where
    F: Fn(&str) -> Result<String, ToolError> + Send + Sync,
{
    fn call(&self, payload: &str) -> Result<String, ToolError> {
        self(payload)
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    handlers: BTreeMap<String, Arc<dyn ToolHandler>>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.handlers.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        ToolRegistry::default()
    }

    pub fn register(&mut self, name: impl Into<String>, handler: impl ToolHandler + 'static) -> &mut Self {
        self.handlers.insert(name.into(), Arc::new(handler));
        self
    }

    pub fn with(mut self, name: impl Into<String>, handler: impl ToolHandler + 'static) -> Self {
        self.register(name, handler);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.handlers.contains_key(name)
    }

    pub fn covers(&self, toolset: &ToolSet) -> Result<(), RuntimeError> {
        match toolset.iter().find(|t| !self.contains(t)) {
            Some(missing) => Err(RuntimeError::UnknownTool(missing.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    Answered,
    RoundLimit,
    /// The model stopped without a tool call or an answer.
    NoAction,
    ClientFailure,
}

/// Outcome of one rollout. `text` is the assistant transcript including the
/// appended results; the question lives alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub agent: String,
    pub question: String,
    pub toolset: ToolSet,
    pub text: String,
    /// Names of the dispatched tools, in call order.
    pub calls: Vec<String>,
    pub stop: StopCause,
}

impl Rollout {
    pub fn trajectory(&self) -> Result<ParsedTrajectory, GrammarError> {
        let mut t = parse(&self.text, &self.toolset)?;
        t.question = self.question.clone();
        Ok(t)
    }

    pub fn tool_calls(&self) -> usize {
        self.calls.len()
    }

    pub fn answer(&self) -> Option<String> {
        self.trajectory().ok().as_ref().and_then(extract_answer)
    }

    /// `Question:` line followed by the transcript.
    pub fn full_text(&self) -> String {
        format!("Question: {}\n{}", self.question, self.text)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("generation failed for agent {agent}: {message}")]
    ClientFailure { agent: String, message: String, partial: Box<Rollout> },
}

fn sanitize_result(text: &str) -> String {
    text.replace(&format!("</{RESULT_TAG}>"), &format!("&lt;/{RESULT_TAG}&gt;"))
}

/// Calls the named handler. Handler failures become `ERROR: ...` payloads.
pub fn dispatch_tool(tool_name: &str, payload: &str, registry: &ToolRegistry) -> Result<String, RuntimeError> {
    let handler = registry.handlers.get(tool_name).ok_or_else(|| RuntimeError::UnknownTool(tool_name.to_string()))?;
    Ok(match handler.call(payload.trim()) {
        Ok(out) => sanitize_result(&out),
        Err(e) => sanitize_result(&format!("{ERROR_PREFIX} {e}")),
    })
}

/// Runs one rollout to an answer, the round limit, or a generation that makes
/// no further progress.
pub fn run_agent(
    config: &AgentConfig,
    question: &str,
    registry: &ToolRegistry,
    client: &dyn GenerationClient,
) -> Result<Rollout, RuntimeError> {
    config.validate()?;
    registry.covers(&config.toolset)?;
    let mut rollout = Rollout {
        agent: config.name.clone(),
        question: question.to_string(),
        toolset: config.toolset.clone(),
        text: String::new(),
        calls: Vec::new(),
        stop: StopCause::NoAction,
    };
    let answer_close = format!("</{ANSWER_TAG}>");
    loop {
        let mut messages = vec![
            Message { role: Role::System, content: config.prompt.system.clone() },
            Message { role: Role::User, content: config.prompt.user_message(question) },
        ];
        if !rollout.text.is_empty() {
            messages.push(Message { role: Role::Assistant, content: rollout.text.clone() });
        }
        let request = GenerationRequest { agent: &config.name, question, messages, stop: &config.stop_sequences };
        let generation = match client.generate(&request) {
            Ok(g) => g,
            Err(e) => {
                rollout.stop = StopCause::ClientFailure;
                return Err(RuntimeError::ClientFailure {
                    agent: config.name.clone(),
                    message: e.0,
                    partial: Box::new(rollout),
                });
            }
        };
        rollout.text.push_str(&generation.text);

        if let Some((tool, payload)) = detect_pending_call(&rollout.text, &config.toolset) {
            let result = dispatch_tool(&tool, &payload, registry)?;
            rollout.text.push_str(&format!("<{RESULT_TAG}>\n{result}\n</{RESULT_TAG}>"));
            rollout.calls.push(tool);
            if rollout.calls.len() >= config.round_limit {
                rollout.stop = StopCause::RoundLimit;
                break;
            }
            continue;
        }
        rollout.stop = if rollout.text.contains(&answer_close) { StopCause::Answered } else { StopCause::NoAction };
        break;
    }
    log::debug!("{} finished with {:?} after {} tool calls", config.name, rollout.stop, rollout.calls.len());
    Ok(rollout)
}

/// The trimmed answer payload, if the trajectory has one.
pub fn extract_answer(trajectory: &ParsedTrajectory) -> Option<String> {
    trajectory.answer().map(|a| a.trim().to_string())
}
