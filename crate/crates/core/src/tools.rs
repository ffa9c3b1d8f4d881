//! Tool handlers that bind the local store and the web source to the
//! rollout loop. Each handler renders its hits as evidence lines.

use std::sync::Arc;

use crate::embed::EmbeddingProvider;
use crate::runtime::{ToolError, ToolRegistry};
use crate::store::{LocalStore, StoreError, DEFAULT_TOP_K};
use crate::trajectory::{format_evidence_line, join_evidence_lines, EvidenceSource, ToolSet};
use crate::web::{
    browse_url, split_browse_payload, web_search, PageFetcher, SearchProvider, WebError, DEFAULT_BROWSE_K,
};

pub const CHUNK_SEARCH: &str = "chunk_search";
pub const GRAPH_SEARCH: &str = "graph_search";
pub const ADJACENT_PASSAGES: &str = "get_adjacent_passages";
pub const WEB_SEARCH: &str = "web_search";
pub const BROWSE_URL: &str = "browse_url";
pub const LOCAL_AGENT_TOOL: &str = "local_search_agent";
pub const WEB_AGENT_TOOL: &str = "web_search_agent";
pub const ALL_AGENT_TOOL: &str = "all_search_agent";

pub const LOCAL_TOOLS: [&str; 3] = [CHUNK_SEARCH, GRAPH_SEARCH, ADJACENT_PASSAGES];
pub const WEB_TOOLS: [&str; 2] = [WEB_SEARCH, BROWSE_URL];
pub const PLANNER_TOOLS: [&str; 3] = [LOCAL_AGENT_TOOL, WEB_AGENT_TOOL, ALL_AGENT_TOOL];

pub fn local_toolset() -> ToolSet {
    ToolSet::new(LOCAL_TOOLS)
}

pub fn web_toolset() -> ToolSet {
    ToolSet::new(WEB_TOOLS)
}

pub fn planner_toolset() -> ToolSet {
    ToolSet::new(PLANNER_TOOLS)
}

impl From<StoreError> for ToolError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::EmptyQuery => ToolError::empty_query(),
            other => ToolError(other.to_string()),
        }
    }
}

impl From<WebError> for ToolError {
    fn from(e: WebError) -> Self {
        match e {
            WebError::EmptyQuery => ToolError::empty_query(),
            other => ToolError(other.to_string()),
        }
    }
}

fn lines<I: IntoIterator<Item = String>>(source: EvidenceSource, texts: I) -> String {
    join_evidence_lines(texts.into_iter().map(|t| format_evidence_line(source, &t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalK {
    pub chunk: usize,
    pub graph: usize,
    pub adjacent: usize,
    pub web: usize,
    pub browse: usize,
}

impl Default for RetrievalK {
    fn default() -> Self {
        RetrievalK {
            chunk: DEFAULT_TOP_K,
            graph: DEFAULT_TOP_K,
            adjacent: DEFAULT_TOP_K,
            web: DEFAULT_TOP_K,
            browse: DEFAULT_BROWSE_K,
        }
    }
}

/// `chunk_search`, `graph_search` and `get_adjacent_passages` over one store.
pub fn local_registry(store: Arc<LocalStore>, k: RetrievalK) -> ToolRegistry {
    let chunks = Arc::clone(&store);
    let graph = Arc::clone(&store);
    ToolRegistry::new()
        .with(CHUNK_SEARCH, move |q: &str| {
            let hits = chunks.chunk_search(q, k.chunk)?;
            Ok(lines(EvidenceSource::LocalChunk, hits.into_iter().map(|h| h.chunk.text)))
        })
        .with(GRAPH_SEARCH, move |q: &str| {
            let hits = graph.graph_search(q, k.graph)?;
            Ok(lines(EvidenceSource::LocalGraph, hits.into_iter().map(|h| h.triple.evidence_text())))
        })
        .with(ADJACENT_PASSAGES, move |q: &str| {
            let hits = store.get_adjacent_passages(q, k.adjacent)?;
            Ok(lines(EvidenceSource::LocalAdjacent, hits.into_iter().map(|h| h.chunk.text)))
        })
}

/// `web_search` and `browse_url`. Browsing ranks page pieces with `embedder`.
pub fn web_registry(
    provider: Arc<dyn SearchProvider>,
    fetcher: Arc<dyn PageFetcher>,
    embedder: Arc<dyn EmbeddingProvider>,
    k: RetrievalK,
) -> ToolRegistry {
    ToolRegistry::new()
        .with(WEB_SEARCH, move |q: &str| {
            let hits = web_search(q, k.web, provider.as_ref())?;
            Ok(lines(EvidenceSource::WebSearch, hits.iter().map(|h| h.evidence_text())))
        })
        .with(BROWSE_URL, move |payload: &str| {
            let (url, question) = split_browse_payload(payload);
            if url.is_empty() {
                return Err(ToolError::empty_query());
            }
            let pieces = browse_url(url, question, k.browse, fetcher.as_ref(), embedder.as_ref())?;
            Ok(lines(EvidenceSource::WebPage, pieces.into_iter().map(|p| p.piece)))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::runtime::dispatch_tool;
    use crate::store::{Document, RuleExtractor};
    use crate::trajectory::split_evidence;
    use crate::web::{FixtureRecord, FixtureWeb, WebHit};

    fn store() -> Arc<LocalStore> {
        let docs = vec![
            Document { doc_id: "d1".into(), text: "Kapalkundala is a novel by Bankim Chandra Chattopadhyay.".into() },
            Document { doc_id: "d2".into(), text: "Palamau is a travelogue by Sanjib Chandra Chattopadhyay.".into() },
        ];
        let mut store = LocalStore::ingest(&docs, 300, Arc::new(HashEmbedder::default())).unwrap();
        store.build_graph(&RuleExtractor).unwrap();
        Arc::new(store)
    }

    #[test]
    fn local_results_are_labeled() {
        let reg = local_registry(store(), RetrievalK::default());
        let out = dispatch_tool(CHUNK_SEARCH, "Kapalkundala author", &reg).unwrap();
        assert!(out.starts_with("Local Chunk Corpus: Kapalkundala is a novel"));
        assert_eq!(split_evidence(&out, CHUNK_SEARCH).len(), 2);
        let out = dispatch_tool(GRAPH_SEARCH, "Kapalkundala", &reg).unwrap();
        assert!(out.starts_with("Local Knowledge Graph: [Subject] "), "{out}");
        assert_eq!(dispatch_tool(CHUNK_SEARCH, "", &reg).unwrap(), "ERROR: empty query");
    }

    #[test]
    fn web_results_are_labeled() {
        let web = Arc::new(
            FixtureWeb::from_records(vec![
                FixtureRecord::Search {
                    query: "kapalkundala".into(),
                    hits: vec![WebHit {
                        url: "https://en.wikipedia.org/wiki/Kapalkundala".parse().unwrap(),
                        title: "Kapalkundala - Wikipedia".into(),
                        snippet: "Bengali romance novel".into(),
                    }],
                    error: None,
                },
                FixtureRecord::Page {
                    url: "https://en.wikipedia.org/wiki/Kapalkundala".into(),
                    body: "<p>Kapalkundala was written by Bankim.</p>".into(),
                    content_type: None,
                },
            ])
            .unwrap(),
        );
        let reg = web_registry(web.clone(), web, Arc::new(HashEmbedder::default()), RetrievalK::default());
        let out = dispatch_tool(WEB_SEARCH, "Kapalkundala", &reg).unwrap();
        assert_eq!(
            out,
            "Search Engine: Kapalkundala - Wikipedia | https://en.wikipedia.org/wiki/Kapalkundala\nBengali romance novel"
        );
        let out = dispatch_tool(BROWSE_URL, "https://en.wikipedia.org/wiki/Kapalkundala | author", &reg).unwrap();
        assert_eq!(out, "Web Page: Kapalkundala was written by Bankim.");
        let out = dispatch_tool(BROWSE_URL, "https://missing.example/ | q", &reg).unwrap();
        assert!(out.starts_with("ERROR: fetch failed"));
    }
}
