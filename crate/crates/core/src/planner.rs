//! The planner agent. Its tools are the two low-level agents: each call runs
//! a full low-level rollout, refines it, and hands back only the refined
//! evidence lines.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingProvider;
use crate::eval::{count_tool_calls, reasoning_tokens, Pipeline, PipelineFailure, PipelineOutput, SearchCounts};
use crate::refiner::{format_refined, refine, RefineError, RefinedEvidenceSet, RefinerConfig, SourceAgent};
use crate::runtime::{
    run_agent, AgentConfig, GenerationClient, Rollout, RuntimeError, StopCause, ToolError, ToolRegistry,
};
use crate::tools::{planner_toolset, ALL_AGENT_TOOL, LOCAL_AGENT_TOOL, WEB_AGENT_TOOL};
use crate::trajectory::{join_evidence_lines, ERROR_PREFIX};

/// A low-level agent together with the tools it may call.
#[derive(Clone)]
pub struct LowLevelAgent {
    pub config: AgentConfig,
    pub registry: ToolRegistry,
}

/// One low-level rollout made on behalf of the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub agent: String,
    /// Partial when the rollout failed.
    pub rollout: Rollout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<RefinedEvidenceSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One planner tool call: the payload it sent, the children it spawned and
/// the result it got back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCall {
    /// 1-based position among the planner's tool calls.
    pub planner_round: usize,
    pub tool: String,
    pub question: String,
    pub children: Vec<ChildRecord>,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrace {
    pub question: String,
    pub planner: Rollout,
    pub calls: Vec<AgentCall>,
}

impl PlannerTrace {
    pub fn children(&self) -> impl Iterator<Item = &ChildRecord> {
        self.calls.iter().flat_map(|c| c.children.iter())
    }

    /// Searches over the whole tree. The planner itself has no search tools,
    /// so this is the sum over child rollouts.
    pub fn count_searches(&self) -> SearchCounts {
        count_tool_calls(self.planner.calls.iter().map(String::as_str))
            + self.children().map(|c| count_tool_calls(c.rollout.calls.iter().map(String::as_str))).sum()
    }

    pub fn reasoning_tokens(&self) -> usize {
        std::iter::once(&self.planner)
            .chain(self.children().map(|c| &c.rollout))
            .filter_map(|r| r.trajectory().ok())
            .map(|t| reasoning_tokens(&t))
            .sum()
    }

    pub fn answer(&self) -> Option<String> {
        self.planner.answer()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("invalid planner setup: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Runtime(RuntimeError),
    #[error("planner generation failed: {message}")]
    ClientFailure { message: String, trace: Box<PlannerTrace> },
}

impl From<RefineError> for PlannerError {
    fn from(e: RefineError) -> Self {
        PlannerError::InvalidConfig(e.to_string())
    }
}

/// What the planner's tools need; shared with the tool handlers.
struct Shared {
    local: LowLevelAgent,
    web: LowLevelAgent,
    client: Arc<dyn GenerationClient>,
    embedder: Arc<dyn EmbeddingProvider>,
    refiner: RefinerConfig,
}

pub struct Planner {
    config: AgentConfig,
    shared: Arc<Shared>,
}

enum Child {
    Done(ChildRecord),
    Failed(ChildRecord),
}

type ChildOutcome = Result<Rollout, Box<(Rollout, String)>>;

impl Shared {
    fn rollout(&self, agent: &LowLevelAgent, question: &str) -> ChildOutcome {
        match run_agent(&agent.config, question, &agent.registry, self.client.as_ref()) {
            Ok(r) => Ok(r),
            Err(RuntimeError::ClientFailure { message, partial, .. }) => Err(Box::new((*partial, message))),
            Err(e) => {
                let empty = Rollout {
                    agent: agent.config.name.clone(),
                    question: question.to_string(),
                    toolset: agent.config.toolset.clone(),
                    text: String::new(),
                    calls: Vec::new(),
                    stop: StopCause::ClientFailure,
                };
                Err(Box::new((empty, e.to_string())))
            }
        }
    }

    fn refine_child(&self, rollout: Rollout, other_conclusion: Option<&str>) -> Child {
        let agent = rollout.agent.clone();
        let trajectory = match rollout.trajectory() {
            Ok(t) => t,
            Err(e) => {
                let error = format!("{agent} produced a malformed trajectory: {e}");
                return Child::Failed(ChildRecord { agent, rollout, refined: None, error: Some(error) });
            }
        };
        let source = SourceAgent::of(&trajectory);
        match refine(&trajectory, other_conclusion, &self.refiner, self.embedder.as_ref()) {
            Ok(set) => Child::Done(ChildRecord { agent, rollout, refined: Some(set), error: None }),
            Err(RefineError::NoEvidence) => Child::Done(ChildRecord {
                agent,
                rollout,
                refined: Some(RefinedEvidenceSet::empty(source)),
                error: None,
            }),
            Err(e) => {
                let error = format!("refining {agent} evidence failed: {e}");
                Child::Failed(ChildRecord { agent, rollout, refined: None, error: Some(error) })
            }
        }
    }

    fn finish(&self, outcome: ChildOutcome, other_conclusion: Option<&str>) -> Child {
        match outcome {
            Ok(r) => self.refine_child(r, other_conclusion),
            Err(failure) => {
                let (partial, message) = *failure;
                let error = format!("{} failed: {message}", partial.agent);
                Child::Failed(ChildRecord {
                    agent: partial.agent.clone(),
                    rollout: partial,
                    refined: None,
                    error: Some(error),
                })
            }
        }
    }

    fn call_agent_tool(&self, tool: &str, question: &str) -> Result<(String, Vec<ChildRecord>), ToolError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(ToolError::empty_query());
        }
        let children = match tool {
            LOCAL_AGENT_TOOL => vec![self.finish(self.rollout(&self.local, question), None)],
            WEB_AGENT_TOOL => vec![self.finish(self.rollout(&self.web, question), None)],
            ALL_AGENT_TOOL => {
                let (local, web) = std::thread::scope(|s| {
                    let web = s.spawn(|| self.rollout(&self.web, question));
                    let local = self.rollout(&self.local, question);
                    (local, web.join().expect("web agent thread panicked"))
                });
                let local_conclusion = conclusion(&local);
                let web_conclusion = conclusion(&web);
                vec![self.finish(local, web_conclusion.as_deref()), self.finish(web, local_conclusion.as_deref())]
            }
            other => return Err(ToolError(format!("unknown agent tool `{other}`"))),
        };
        Ok(render_children(children))
    }
}

fn conclusion(outcome: &ChildOutcome) -> Option<String> {
    outcome.as_ref().ok().and_then(Rollout::answer).filter(|a| !a.is_empty())
}

impl Planner {
    pub fn new(
        config: AgentConfig,
        local: LowLevelAgent,
        web: LowLevelAgent,
        client: Arc<dyn GenerationClient>,
        embedder: Arc<dyn EmbeddingProvider>,
        refiner: RefinerConfig,
    ) -> Result<Self, PlannerError> {
        refiner.validate()?;
        config.validate().map_err(PlannerError::Runtime)?;
        if config.toolset != planner_toolset() {
            return Err(PlannerError::InvalidConfig(format!(
                "planner toolset must be {:?}",
                planner_toolset().iter().collect::<Vec<_>>()
            )));
        }
        for agent in [&local, &web] {
            agent.config.validate().map_err(PlannerError::Runtime)?;
            agent.registry.covers(&agent.config.toolset).map_err(PlannerError::Runtime)?;
        }
        Ok(Planner { config, shared: Arc::new(Shared { local, web, client, embedder, refiner }) })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Runs the low-level agent(s) behind a planner tool and renders the
    /// result payload. `all_search_agent` runs both agents concurrently and
    /// refines each with the other's conclusion.
    pub fn call_agent_tool(&self, tool: &str, question: &str) -> Result<(String, Vec<ChildRecord>), ToolError> {
        self.shared.call_agent_tool(tool, question)
    }

    /// Runs the planner rollout. The answer is absent when the planner stops
    /// without one.
    pub fn answer(&self, question: &str) -> Result<(Option<String>, PlannerTrace), PlannerError> {
        let calls: Arc<Mutex<Vec<AgentCall>>> = Arc::default();
        let mut registry = ToolRegistry::new();
        for tool in [LOCAL_AGENT_TOOL, WEB_AGENT_TOOL, ALL_AGENT_TOOL] {
            let calls = Arc::clone(&calls);
            let shared = Arc::clone(&self.shared);
            registry.register(tool, move |payload: &str| {
                let (result, children) = match shared.call_agent_tool(tool, payload) {
                    Ok(pair) => pair,
                    Err(e) => (format!("{ERROR_PREFIX} {e}"), Vec::new()),
                };
                let mut log = calls.lock().expect("planner call log poisoned");
                let planner_round = log.len() + 1;
                log.push(AgentCall {
                    planner_round,
                    tool: tool.to_string(),
                    question: payload.trim().to_string(),
                    children,
                    result: result.clone(),
                });
                Ok(result)
            });
        }
        let outcome = run_agent(&self.config, question, &registry, self.shared.client.as_ref());
        let calls = std::mem::take(&mut *calls.lock().expect("planner call log poisoned"));
        match outcome {
            Ok(planner) => {
                let trace = PlannerTrace { question: question.to_string(), planner, calls };
                Ok((trace.answer().filter(|a| !a.is_empty()), trace))
            }
            Err(RuntimeError::ClientFailure { message, partial, .. }) => Err(PlannerError::ClientFailure {
                message,
                trace: Box::new(PlannerTrace { question: question.to_string(), planner: *partial, calls }),
            }),
            Err(e) => Err(PlannerError::Runtime(e)),
        }
    }
}

fn render_children(children: Vec<Child>) -> (String, Vec<ChildRecord>) {
    let mut sets = Vec::new();
    let mut errors = Vec::new();
    let mut records = Vec::new();
    for child in children {
        match child {
            Child::Done(r) => records.push(r),
            Child::Failed(r) => {
                errors.push(format!("{ERROR_PREFIX} {}", r.error.as_deref().unwrap_or("unknown failure")));
                records.push(r);
            }
        }
    }
    for r in &records {
        if let Some(set) = &r.refined {
            sets.push(set);
        }
    }
    let payload = if sets.is_empty() {
        errors.join("\n")
    } else {
        join_evidence_lines(std::iter::once(format_refined(&sets)).chain(errors))
    };
    (payload, records)
}

impl Pipeline for Planner {
    fn run(&self, question: &str) -> Result<PipelineOutput, PipelineFailure> {
        match self.answer(question) {
            Ok((answer, trace)) => Ok(PipelineOutput {
                answer,
                searches: trace.count_searches(),
                reasoning_tokens: trace.reasoning_tokens(),
            }),
            Err(PlannerError::ClientFailure { message, trace }) => Err(PipelineFailure {
                message,
                partial: PipelineOutput {
                    answer: None,
                    searches: trace.count_searches(),
                    reasoning_tokens: trace.reasoning_tokens(),
                },
            }),
            Err(e) => Err(PipelineFailure { message: e.to_string(), partial: PipelineOutput::default() }),
        }
    }
}
