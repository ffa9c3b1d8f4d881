//! OpenAI-compatible chat completions client (vLLM, SGLang and similar
//! servers). The assistant transcript is sent as a trailing assistant message
//! with `continue_final_message`, so the server extends it in place.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ClientError, Generation, GenerationClient, GenerationRequest, Role, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 0.0, top_p: 1.0, max_tokens: 1024 }
    }
}

pub struct HttpGenerationClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    params: SamplingParams,
    retries: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    finish_reason: Option<String>,
    /// vLLM reports the matched stop string here.
    #[serde(default)]
    stop_reason: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpGenerationClient {
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        params: SamplingParams,
        timeout: Duration,
    ) -> Result<Self, ClientError> {
        let client =
            reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| ClientError(e.to_string()))?;
        Ok(HttpGenerationClient {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            params,
            retries: 2,
        })
    }

    fn body(&self, request: &GenerationRequest<'_>) -> serde_json::Value {
        let continuing = request.messages.last().is_some_and(|m| m.role == Role::Assistant);
        json!({
            "model": self.model,
            "messages": request.messages,
            "stop": request.stop,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
            "continue_final_message": continuing,
            "add_generation_prompt": !continuing,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<ChatChoice, String> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp: ChatResponse = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| e.without_url().to_string())?;
        resp.choices.into_iter().next().ok_or_else(|| "response has no choices".to_string())
    }
}

/// Servers strip the matched stop string; put it back so the transcript keeps
/// the closing tag.
fn finish(choice: ChatChoice, stop: &[String]) -> Generation {
    let mut text = choice.message.content.unwrap_or_default();
    let matched = match choice.stop_reason {
        Some(serde_json::Value::String(s)) => Some(s),
        _ => None,
    };
    match (choice.finish_reason.as_deref(), matched) {
        (_, Some(s)) if stop.contains(&s) => {
            if !text.ends_with(&s) {
                text.push_str(&s);
            }
            Generation { text, stop_reason: StopReason::Stop(s) }
        }
        (Some("length"), _) => Generation { text, stop_reason: StopReason::Length },
        _ => match stop.iter().find(|s| text.ends_with(s.as_str())) {
            Some(s) => Generation { stop_reason: StopReason::Stop(s.clone()), text },
            None => Generation { text, stop_reason: StopReason::EndOfText },
        },
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, ClientError> {
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(250 << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(choice) => return Ok(finish(choice, request.stop)),
                Err(e) => {
                    log::warn!("generation attempt {} for {} failed: {e}", attempt + 1, request.agent);
                    last = e;
                }
            }
        }
        Err(ClientError(last))
    }
}
