//! Triple extraction through a generation endpoint.

use std::sync::Arc;

use crate::runtime::{GenerationClient, GenerationRequest, Message, Role};
use crate::store::{Chunk, ExtractedTriple, TripleExtractor};

pub const EXTRACTOR_AGENT: &str = "extractor";

pub const EXTRACTION_PROMPT: &str = "Extract factual (subject, predicate, object) triples from the passage. \
Write one triple per line as `subject | predicate | object`, use the surface forms found in the passage, \
and write nothing else.";

/// Asks a model for `subject | predicate | object` lines.
pub struct LlmExtractor {
    client: Arc<dyn GenerationClient>,
    prompt: String,
}

impl LlmExtractor {
    pub fn new(client: Arc<dyn GenerationClient>) -> Self {
        LlmExtractor { client, prompt: EXTRACTION_PROMPT.to_string() }
    }
}

/// Parses extractor output; lines that are not three non-empty fields are
/// skipped.
pub fn parse_triple_lines(text: &str) -> Vec<ExtractedTriple> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*']).trim();
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            match parts.as_slice() {
                [s, p, o] if !s.is_empty() && !p.is_empty() && !o.is_empty() => {
                    Some(ExtractedTriple { subject: s.to_string(), predicate: p.to_string(), object: o.to_string() })
                }
                _ => None,
            }
        })
        .collect()
}

impl TripleExtractor for LlmExtractor {
    fn extract(&self, chunk: &Chunk) -> Result<Vec<ExtractedTriple>, String> {
        let request = GenerationRequest {
            agent: EXTRACTOR_AGENT,
            question: &chunk.text,
            messages: vec![
                Message { role: Role::System, content: self.prompt.clone() },
                Message { role: Role::User, content: chunk.text.clone() },
            ],
            stop: &[],
        };
        let generation = self.client.generate(&request).map_err(|e| e.0)?;
        Ok(parse_triple_lines(&generation.text))
    }
}
