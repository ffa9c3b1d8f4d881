use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Chunk, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub provenance_chunk: String,
}

impl Triple {
    /// Text embedded for graph search.
    pub fn index_text(&self) -> String {
        format!("{} | {} | {}", self.subject, self.predicate, self.object)
    }

    /// Evidence rendering used in tool results.
    pub fn evidence_text(&self) -> String {
        format!("[Subject] {} [Predicate] {} [Object] {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    pub adjacent_chunks: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

pub trait TripleExtractor: Send + Sync {
    fn extract(&self, chunk: &Chunk) -> Result<Vec<ExtractedTriple>, String>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub triples: Vec<Triple>,
    /// Sorted by lowercase name.
    pub entities: Vec<EntityRecord>,
}

impl KnowledgeGraph {
    pub fn build(chunks: &[Chunk], extractor: &dyn TripleExtractor) -> Result<Self, StoreError> {
        if chunks.is_empty() {
            return Err(StoreError::EmptyCorpus);
        }
        let mut triples = Vec::new();
        for chunk in chunks {
            let extracted = extractor
                .extract(chunk)
                .map_err(|message| StoreError::ExtractorFailure { chunk_id: chunk.id.clone(), message })?;
            for t in extracted {
                let (s, p, o) = (t.subject.trim(), t.predicate.trim(), t.object.trim());
                if s.is_empty() || p.is_empty() || o.is_empty() {
                    continue;
                }
                triples.push(Triple {
                    subject: s.to_string(),
                    predicate: p.to_string(),
                    object: o.to_string(),
                    provenance_chunk: chunk.id.clone(),
                });
            }
        }
        Ok(KnowledgeGraph::from_triples(chunks, triples))
    }

    /// Derives entity records from triple endpoints. An entity is linked to
    /// every chunk whose text mentions its name (case-insensitive), which
    /// includes the provenance chunk whenever the extractor quoted the text.
    pub fn from_triples(chunks: &[Chunk], triples: Vec<Triple>) -> Self {
        let mut names: BTreeMap<String, String> = BTreeMap::new();
        for t in &triples {
            for name in [&t.subject, &t.object] {
                names.entry(name.to_lowercase()).or_insert_with(|| name.clone());
            }
        }
        let lowered: Vec<String> = chunks.iter().map(|c| c.text.to_lowercase()).collect();
        let entities = names
            .into_iter()
            .map(|(key, name)| EntityRecord {
                name,
                adjacent_chunks: chunks
                    .iter()
                    .zip(&lowered)
                    .filter(|(_, text)| text.contains(&key))
                    .map(|(c, _)| c.id.clone())
                    .collect(),
            })
            .collect();
        KnowledgeGraph { triples, entities }
    }

    pub fn entity(&self, name: &str) -> Option<&EntityRecord> {
        let key = name.trim().to_lowercase();
        self.entities.binary_search_by(|e| e.name.to_lowercase().cmp(&key)).ok().map(|i| &self.entities[i])
    }
}

const VERBS: &[&str] = &[
    "is",
    "was",
    "are",
    "were",
    "has",
    "had",
    "wrote",
    "writes",
    "married",
    "founded",
    "published",
    "directed",
    "released",
    "composed",
    "studied",
    "joined",
    "won",
    "became",
    "flows",
    "lies",
    "produced",
    "created",
    "designed",
    "plays",
    "played",
    "leads",
    "led",
    "owns",
    "owned",
    "includes",
    "contains",
    "developed",
    "discovered",
    "invented",
    "located",
    "lived",
    "died",
    "served",
    "built",
    "received",
    "recorded",
    "painted",
    "taught",
];

const PREPOSITIONS: &[&str] =
    &["of", "by", "in", "to", "for", "with", "at", "from", "on", "into", "as", "through", "near"];

const PREDICATE_LOOKAHEAD: usize = 4;

/// Deterministic pattern extractor: in each sentence, the subject is the
/// leading noun phrase before the first known verb (cut at the first comma),
/// the predicate is the verb plus any words up to a preposition within the
/// next few words, and the object is the rest of the clause.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor;

impl RuleExtractor {
    pub fn extract_sentence(sentence: &str) -> Option<ExtractedTriple> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let verb_at = words.iter().position(|w| VERBS.contains(&w.to_lowercase().as_str()))?;
        if verb_at == 0 {
            return None;
        }
        let subject_raw = words[..verb_at].join(" ");
        let subject = strip_article(subject_raw.split(',').next().unwrap_or_default().trim());

        let mut pred_end = verb_at + 1;
        let window_end = (verb_at + 1 + PREDICATE_LOOKAHEAD).min(words.len());
        if let Some(p) =
            (verb_at + 1..window_end).find(|&i| PREPOSITIONS.contains(&clean_word(words[i]).to_lowercase().as_str()))
        {
            pred_end = p + 1;
        }
        if pred_end >= words.len() {
            return None;
        }
        let predicate = words[verb_at..pred_end].iter().map(|w| clean_word(w)).collect::<Vec<_>>().join(" ");
        let object_raw = words[pred_end..].join(" ");
        let object = strip_article(
            object_raw.split([',', ';']).next().unwrap_or_default().trim().trim_end_matches(['.', '!', '?', ':']),
        );
        if subject.is_empty() || object.is_empty() || !subject.starts_with(|c: char| c.is_uppercase()) {
            return None;
        }
        Some(ExtractedTriple { subject: subject.to_string(), predicate, object: object.to_string() })
    }
}

fn clean_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

fn strip_article(phrase: &str) -> &str {
    for article in ["the ", "a ", "an ", "The ", "A ", "An "] {
        if let Some(rest) = phrase.strip_prefix(article) {
            return rest.trim();
        }
    }
    phrase
}

/// Sentence boundaries: `.`, `!` or `?` followed by whitespace or the end.
pub(crate) fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let s = text[start..i + c.len_utf8()].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

impl TripleExtractor for RuleExtractor {
    fn extract(&self, chunk: &Chunk) -> Result<Vec<ExtractedTriple>, String> {
        Ok(sentences(&chunk.text).into_iter().filter_map(RuleExtractor::extract_sentence).collect())
    }
}
