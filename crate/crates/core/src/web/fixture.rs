use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{FetchedPage, PageFetcher, SearchProvider, WebError, WebHit};

/// One line of a web fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FixtureRecord {
    Search {
        query: String,
        #[serde(default)]
        hits: Vec<WebHit>,
        /// Simulated provider failure for this query.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Page {
        url: String,
        body: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content_type: Option<String>,
    },
}

/// Offline search provider and page fetcher backed by canned records.
#[derive(Debug, Clone, Default)]
pub struct FixtureWeb {
    searches: HashMap<String, Result<Vec<WebHit>, String>>,
    pages: HashMap<String, FetchedPage>,
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_query(query: &str) -> String {
    query
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn page_key(url: &str) -> String {
    Url::parse(url.trim()).map(|u| u.to_string()).unwrap_or_else(|_| url.trim().to_string())
}

impl FixtureWeb {
    pub fn from_records(records: Vec<FixtureRecord>) -> Result<Self, WebError> {
        let mut web = FixtureWeb::default();
        for record in records {
            match record {
                FixtureRecord::Search { query, hits, error } => {
                    let entry = match error {
                        Some(e) => Err(e),
                        None => Ok(hits),
                    };
                    web.searches.insert(normalize_query(&query), entry);
                }
                FixtureRecord::Page { url, body, content_type } => {
                    web.pages.insert(page_key(&url), FetchedPage { body, content_type });
                }
            }
        }
        Ok(web)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
            records.push(record);
        }
        FixtureWeb::from_records(records).map_err(|e| e.to_string())
    }
}

impl SearchProvider for FixtureWeb {
    fn name(&self) -> &str {
        "fixture"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<WebHit>, WebError> {
        match self.searches.get(&normalize_query(query)) {
            Some(Ok(hits)) => Ok(hits.iter().take(k).cloned().collect()),
            Some(Err(e)) => Err(WebError::ProviderUnavailable(e.clone())),
            None => Ok(Vec::new()),
        }
    }
}

impl PageFetcher for FixtureWeb {
    fn fetch(&self, url: &Url) -> Result<FetchedPage, WebError> {
        self.pages
            .get(&page_key(url.as_str()))
            .cloned()
            .ok_or_else(|| WebError::FetchFailure(format!("HTTP 404 for {url}")))
    }
}
