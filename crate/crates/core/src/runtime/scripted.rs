use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{truncate_at_stop, ClientError, Generation, GenerationClient, GenerationRequest};
use crate::trajectory::RESULT_TAG;
use crate::web::normalize_query;

/// One line of a script file: the outputs an agent produces for a question,
/// one per generation call. Without a question the entry is the agent's
/// fallback script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub outputs: Vec<String>,
}

/// Replays canned generations.
///
/// The client is stateless: the step is the number of results already in the
/// transcript, so concurrent and repeated rollouts replay identically.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    by_question: HashMap<(String, String), Vec<String>>,
    by_agent: HashMap<String, Vec<String>>,
    fallback: Option<Vec<String>>,
}

impl ScriptedClient {
    /// Same outputs for every agent and question.
    pub fn sequence<I, S>(outputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient { fallback: Some(outputs.into_iter().map(Into::into).collect()), ..Default::default() }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut client = ScriptedClient::default();
        for entry in entries {
            client.add(entry);
        }
        client
    }

    pub fn add(&mut self, entry: ScriptEntry) {
        match entry.question {
            Some(q) => {
                self.by_question.insert((entry.agent, normalize_query(&q)), entry.outputs);
            }
            None => {
                self.by_agent.insert(entry.agent, entry.outputs);
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
        }
        Ok(ScriptedClient::from_entries(entries))
    }

    fn script(&self, agent: &str, question: &str) -> Option<&Vec<String>> {
        self.by_question
            .get(&(agent.to_string(), normalize_query(question)))
            .or_else(|| self.by_agent.get(agent))
            .or(self.fallback.as_ref())
    }
}

impl GenerationClient for ScriptedClient {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, ClientError> {
        let script = self
            .script(request.agent, request.question)
            .ok_or_else(|| ClientError(format!("no script for agent {} on `{}`", request.agent, request.question)))?;
        let step = request.transcript().matches(&format!("</{RESULT_TAG}>")).count();
        let output = script
            .get(step)
            .ok_or_else(|| ClientError(format!("script for agent {} exhausted at step {step}", request.agent)))?;
        Ok(truncate_at_stop(output, request.stop))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{Message, Role, StopReason};

    fn request<'a>(agent: &'a str, question: &'a str, transcript: &str, stop: &'a [String]) -> GenerationRequest<'a> {
        let mut messages = vec![Message { role: Role::User, content: question.into() }];
        if !transcript.is_empty() {
            messages.push(Message { role: Role::Assistant, content: transcript.into() });
        }
        GenerationRequest { agent, question, messages, stop }
    }

    #[test]
    fn step_follows_results() {
        let client = ScriptedClient::from_entries([
            ScriptEntry { agent: "a".into(), question: Some("Q one?".into()), outputs: vec!["x".into(), "y".into()] },
            ScriptEntry { agent: "a".into(), question: None, outputs: vec!["fallback".into()] },
        ]);
        let stop = vec![];
        assert_eq!(client.generate(&request("a", "q one", "", &stop)).unwrap().text, "x");
        assert_eq!(client.generate(&request("a", "q one", "..<result>r</result>", &stop)).unwrap().text, "y");
        assert_eq!(client.generate(&request("a", "other", "", &stop)).unwrap().text, "fallback");
        assert!(client.generate(&request("b", "other", "", &stop)).is_err());
        assert!(client.generate(&request("a", "other", "<result></result>", &stop)).is_err());
    }

    #[test]
    fn outputs_cut_at_stop() {
        let client = ScriptedClient::sequence(["<t>x</t><s>q</s> and more"]);
        let stop = vec!["</s>".to_string()];
        let g = client.generate(&request("a", "q", "", &stop)).unwrap();
        assert_eq!(g.text, "<t>x</t><s>q</s>");
        assert_eq!(g.stop_reason, StopReason::Stop("</s>".into()));
    }
}
