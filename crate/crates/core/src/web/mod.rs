//! Web knowledge source: search providers, page fetchers and query-focused
//! page browsing.

mod fixture;
mod html;
mod live;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::embed::{is_cjk, EmbedError, EmbeddingProvider};
use crate::store::split_tokens;

pub use fixture::{normalize_query, FixtureRecord, FixtureWeb};
pub use html::html_to_text;
pub use live::{BingSearch, HttpFetcher, RequestGate, SearxngSearch, DEFAULT_MAX_BODY_BYTES};

pub const PAGE_CHUNK_TOKENS: usize = 200;
pub const DEFAULT_BROWSE_K: usize = 3;
pub const CHINESE_QUERY_RATIO: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum WebError {
    #[error("empty query")]
    EmptyQuery,
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("fetch failed: {0}")]
    FetchFailure(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebHit {
    pub url: Url,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

impl WebHit {
    pub fn evidence_text(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push_str(" | ");
        }
        out.push_str(self.url.as_str());
        if !self.snippet.is_empty() {
            out.push('\n');
            out.push_str(&self.snippet);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageExtract {
    pub url: String,
    pub piece: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedPage {
    pub body: String,
    pub content_type: Option<String>,
}

impl FetchedPage {
    fn is_html(&self) -> bool {
        match &self.content_type {
            Some(ct) => ct.contains("html"),
            None => {
                let head = self.body.trim_start();
                head.starts_with('<') && head.contains('>')
            }
        }
    }
}

pub trait SearchProvider: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str, k: usize) -> Result<Vec<WebHit>, WebError>;
}

pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<FetchedPage, WebError>;
}

/// True when at least 30% of the query's non-whitespace characters are CJK.
pub fn is_chinese(query: &str) -> bool {
    let (cjk, total) = query
        .chars()
        .filter(|c| !c.is_whitespace())
        .fold((0usize, 0usize), |(cjk, total), c| (cjk + usize::from(is_cjk(c)), total + 1));
    total > 0 && cjk as f64 >= CHINESE_QUERY_RATIO * total as f64
}

/// Sends Chinese queries to a dedicated provider when one is configured.
pub struct LanguageRouter {
    default: Arc<dyn SearchProvider>,
    chinese: Option<Arc<dyn SearchProvider>>,
}

impl LanguageRouter {
    pub fn new(default: Arc<dyn SearchProvider>, chinese: Option<Arc<dyn SearchProvider>>) -> Self {
        LanguageRouter { default, chinese }
    }

    pub fn route(&self, query: &str) -> &dyn SearchProvider {
        match &self.chinese {
            Some(zh) if is_chinese(query) => zh.as_ref(),
            _ => self.default.as_ref(),
        }
    }
}

impl SearchProvider for LanguageRouter {
    fn name(&self) -> &str {
        "router"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<WebHit>, WebError> {
        self.route(query).search(query, k)
    }
}

/// Runs a search and caps the hit list at `k`, keeping provider order.
pub fn web_search(query: &str, k: usize, provider: &dyn SearchProvider) -> Result<Vec<WebHit>, WebError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(WebError::EmptyQuery);
    }
    let mut hits = provider.search(query, k)?;
    hits.truncate(k);
    Ok(hits)
}

/// Splits a `URL | question` browse payload at the first `|`.
pub fn split_browse_payload(payload: &str) -> (&str, &str) {
    match payload.split_once('|') {
        Some((url, question)) => (url.trim(), question.trim()),
        None => (payload.trim(), ""),
    }
}

/// Fetches a page, chunks its text into 200-token pieces and returns the `k`
/// pieces most similar to `question`, best first.
pub fn browse_url(
    url: &str,
    question: &str,
    k: usize,
    fetcher: &dyn PageFetcher,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<PageExtract>, WebError> {
    let parsed = Url::parse(url.trim()).map_err(|e| WebError::FetchFailure(format!("invalid url `{url}`: {e}")))?;
    if question.trim().is_empty() {
        return Err(WebError::EmptyQuery);
    }
    let page = fetcher.fetch(&parsed)?;
    let text = if page.is_html() { html_to_text(&page.body) } else { page.body };
    let pieces = split_tokens(&text, PAGE_CHUNK_TOKENS);
    if pieces.is_empty() {
        return Ok(Vec::new());
    }
    let qv = embedder.embed_one(question.trim())?;
    let vectors = embedder.embed(&pieces)?;
    let mut scored: Vec<(usize, f64)> =
        vectors.iter().enumerate().map(|(i, v)| (i, embedder.similarity(&qv, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, score)| PageExtract { url: parsed.to_string(), piece: pieces[i].to_string(), score })
        .collect())
}
