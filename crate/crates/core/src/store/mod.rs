//! Local knowledge sources: the chunk corpus and the knowledge graph built on
//! top of it, each with an embedding index.

mod graph;
mod persist;

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, EmbeddingProvider};

pub use graph::{EntityRecord, ExtractedTriple, KnowledgeGraph, RuleExtractor, Triple, TripleExtractor};
pub use persist::store_exists;

pub const MIN_CHUNK_TOKENS: usize = 32;
pub const DEFAULT_CHUNK_TOKENS: usize = 300;
pub const DEFAULT_RESOLUTION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("corpus is empty: every document is blank")]
    EmptyCorpus,
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("triple extraction failed on chunk {chunk_id}: {message}")]
    ExtractorFailure { chunk_id: String, message: String },
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("store is corrupt: {0}")]
    StorageCorrupt(String),
    #[error("store was built with embedder {stored}, but {configured} is configured")]
    EmbedderMismatch { stored: String, configured: String },
    #[error("store i/o failed at {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Input document, one JSON object per line in corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub text: String,
    pub doc_id: String,
}

/// Reads a corpus file with one `{doc_id, text}` object per line. Blank lines
/// are skipped; a malformed line fails the whole read with its line number.
pub fn load_documents(path: &std::path::Path) -> Result<Vec<Document>, StoreError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(line)
            .map_err(|e| StoreError::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Byte spans of whitespace-separated tokens.
pub(crate) fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Splits `text` into pieces of at most `max_tokens` whitespace tokens with no
/// overlap. Each piece is the original text between its first and last token.
pub fn split_tokens(text: &str, max_tokens: usize) -> Vec<&str> {
    token_spans(text).chunks(max_tokens.max(1)).map(|group| &text[group[0].0..group[group.len() - 1].1]).collect()
}

/// Chunks documents in order. Chunk ids are zero-padded sequence numbers, so
/// id order equals corpus order.
pub fn chunk_documents(documents: &[Document], max_chunk_tokens: usize) -> Result<Vec<Chunk>, StoreError> {
    if max_chunk_tokens < MIN_CHUNK_TOKENS {
        return Err(StoreError::InvalidArgument(format!(
            "max_chunk_tokens must be at least {MIN_CHUNK_TOKENS}, got {max_chunk_tokens}"
        )));
    }
    let mut chunks = Vec::new();
    for doc in documents {
        for piece in split_tokens(&doc.text, max_chunk_tokens) {
            chunks.push(Chunk {
                id: format!("c{:07}", chunks.len()),
                text: piece.to_string(),
                doc_id: doc.doc_id.clone(),
            });
        }
    }
    if chunks.is_empty() {
        return Err(StoreError::EmptyCorpus);
    }
    Ok(chunks)
}

/// Dense row-major matrix of unit vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    data: Vec<f32>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex { dimension, data: Vec::new() }
    }

    pub fn from_rows(dimension: usize, rows: Vec<Vec<f32>>) -> Result<Self, StoreError> {
        let mut index = VectorIndex::new(dimension);
        for row in rows {
            index.push(&row)?;
        }
        Ok(index)
    }

    pub(crate) fn from_raw(dimension: usize, data: Vec<f32>) -> Self {
        VectorIndex { dimension, data }
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), StoreError> {
        if row.len() != self.dimension {
            return Err(StoreError::Embedding(EmbedError::Dimension { expected: self.dimension, got: row.len() }));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dimension).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub(crate) fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Top `k` rows by similarity, descending; ties go to the row for which
    /// `tie` orders first.
    pub fn top_k(
        &self,
        query: &[f32],
        k: usize,
        similarity: impl Fn(&[f32], &[f32]) -> f64,
        tie: impl Fn(usize, usize) -> Ordering,
    ) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.len()).map(|i| (i, similarity(query, self.row(i)))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| tie(a.0, b.0)));
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub score: f64,
}

/// Chunk corpus plus knowledge graph, immutable once built or loaded.
pub struct LocalStore {
    chunks: Vec<Chunk>,
    chunk_index: VectorIndex,
    graph: KnowledgeGraph,
    triple_index: VectorIndex,
    entity_index: VectorIndex,
    embedder: Arc<dyn EmbeddingProvider>,
    resolution_threshold: f64,
}

impl std::fmt::Debug for LocalStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalStore")
            .field("chunks", &self.chunks.len())
            .field("triples", &self.graph.triples.len())
            .field("entities", &self.graph.entities.len())
            .field("embedder", &self.embedder.descriptor())
            .finish()
    }
}

fn embed_all(embedder: &dyn EmbeddingProvider, texts: &[String]) -> Result<VectorIndex, StoreError> {
    const BATCH: usize = 64;
    let dim = embedder.descriptor().dimension;
    let mut index = VectorIndex::new(dim);
    for batch in texts.chunks(BATCH) {
        let refs: Vec<&str> = batch.iter().map(String::as_str).collect();
        for row in embedder.embed(&refs)? {
            index.push(&row)?;
        }
    }
    Ok(index)
}

fn non_empty_query(query: &str) -> Result<&str, StoreError> {
    let q = query.trim();
    if q.is_empty() {
        Err(StoreError::EmptyQuery)
    } else {
        Ok(q)
    }
}

fn positive_k(k: usize) -> Result<usize, StoreError> {
    if k == 0 {
        Err(StoreError::InvalidArgument("k must be at least 1".into()))
    } else {
        Ok(k)
    }
}

impl LocalStore {
    /// Chunks and indexes `documents`; the graph starts empty.
    pub fn ingest(
        documents: &[Document],
        max_chunk_tokens: usize,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, StoreError> {
        let chunks = chunk_documents(documents, max_chunk_tokens)?;
        LocalStore::from_chunks(chunks, embedder)
    }

    pub fn from_chunks(chunks: Vec<Chunk>, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self, StoreError> {
        if chunks.is_empty() {
            return Err(StoreError::EmptyCorpus);
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let chunk_index = embed_all(embedder.as_ref(), &texts)?;
        let dim = chunk_index.dimension();
        Ok(LocalStore {
            chunks,
            chunk_index,
            graph: KnowledgeGraph::default(),
            triple_index: VectorIndex::new(dim),
            entity_index: VectorIndex::new(dim),
            embedder,
            resolution_threshold: DEFAULT_RESOLUTION_THRESHOLD,
        })
    }

    /// Builds the knowledge graph over the current corpus, replacing any
    /// existing graph.
    pub fn build_graph(&mut self, extractor: &dyn TripleExtractor) -> Result<(), StoreError> {
        let graph = KnowledgeGraph::build(&self.chunks, extractor)?;
        self.set_graph(graph)
    }

    pub fn set_graph(&mut self, graph: KnowledgeGraph) -> Result<(), StoreError> {
        let triple_texts: Vec<String> = graph.triples.iter().map(Triple::index_text).collect();
        let entity_names: Vec<String> = graph.entities.iter().map(|e| e.name.clone()).collect();
        self.triple_index = embed_all(self.embedder.as_ref(), &triple_texts)?;
        self.entity_index = embed_all(self.embedder.as_ref(), &entity_names)?;
        self.graph = graph;
        Ok(())
    }

    pub fn with_resolution_threshold(mut self, threshold: f64) -> Self {
        self.resolution_threshold = threshold;
        self
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn chunk_vector(&self, i: usize) -> &[f32] {
        self.chunk_index.row(i)
    }

    pub fn chunk_search(&self, query: &str, k: usize) -> Result<Vec<ScoredChunk>, StoreError> {
        let query = non_empty_query(query)?;
        let k = positive_k(k)?;
        let qv = self.embedder.embed_one(query)?;
        let hits = self.chunk_index.top_k(
            &qv,
            k,
            |a, b| self.embedder.similarity(a, b),
            |a, b| self.chunks[a].id.cmp(&self.chunks[b].id),
        );
        Ok(hits.into_iter().map(|(i, score)| ScoredChunk { chunk: self.chunks[i].clone(), score }).collect())
    }

    pub fn graph_search(&self, query: &str, k: usize) -> Result<Vec<ScoredTriple>, StoreError> {
        let query = non_empty_query(query)?;
        let k = positive_k(k)?;
        if self.graph.triples.is_empty() {
            return Ok(Vec::new());
        }
        let qv = self.embedder.embed_one(query)?;
        let hits = self.triple_index.top_k(&qv, k, |a, b| self.embedder.similarity(a, b), |a, b| a.cmp(&b));
        Ok(hits.into_iter().map(|(i, score)| ScoredTriple { triple: self.graph.triples[i].clone(), score }).collect())
    }

    /// Resolves `entity` to a graph entity: an exact case-insensitive name
    /// match, else the nearest name whose similarity reaches the threshold.
    pub fn resolve_entity(&self, entity: &str) -> Result<Option<&EntityRecord>, StoreError> {
        let name = entity.trim();
        if name.is_empty() || self.graph.entities.is_empty() {
            return Ok(None);
        }
        if let Some(record) = self.graph.entity(name) {
            return Ok(Some(record));
        }
        let qv = self.embedder.embed_one(name)?;
        let best = self.entity_index.top_k(
            &qv,
            1,
            |a, b| self.embedder.similarity(a, b),
            |a, b| self.graph.entities[a].name.cmp(&self.graph.entities[b].name),
        );
        Ok(best.first().filter(|(_, score)| *score >= self.resolution_threshold).map(|(i, _)| &self.graph.entities[*i]))
    }

    /// Chunks linked to the resolved entity, ranked by similarity to the
    /// entity name. An unresolvable name yields an empty list.
    pub fn get_adjacent_passages(&self, entity: &str, k: usize) -> Result<Vec<ScoredChunk>, StoreError> {
        let k = positive_k(k)?;
        let Some(record) = self.resolve_entity(entity)? else {
            return Ok(Vec::new());
        };
        let qv = self.embedder.embed_one(&record.name)?;
        let mut linked: Vec<(usize, f64)> = record
            .adjacent_chunks
            .iter()
            .filter_map(|id| self.chunk_position(id))
            .map(|i| (i, self.embedder.similarity(&qv, self.chunk_index.row(i))))
            .collect();
        linked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.chunks[a.0].id.cmp(&self.chunks[b.0].id)));
        linked.truncate(k);
        Ok(linked.into_iter().map(|(i, score)| ScoredChunk { chunk: self.chunks[i].clone(), score }).collect())
    }

    fn chunk_position(&self, id: &str) -> Option<usize> {
        self.chunks
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .or_else(|| self.chunks.iter().position(|c| c.id == id))
    }

    pub fn persist(&self, dir: &std::path::Path) -> Result<(), StoreError> {
        persist::write_store(self, dir)
    }

    pub fn load(dir: &std::path::Path, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self, StoreError> {
        persist::read_store(dir, embedder)
    }
}
