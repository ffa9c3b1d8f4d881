//! HTTP-backed providers. Every request passes through a [`RequestGate`] that
//! caps in-flight requests, and every client carries a per-request timeout.

use std::io::Read;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::Deserialize;
use url::Url;

use super::{FetchedPage, PageFetcher, SearchProvider, WebError, WebHit};

pub const DEFAULT_MAX_BODY_BYTES: u64 = 2 * 1024 * 1024;

/// Counting semaphore over a bounded channel of tokens.
#[derive(Clone)]
pub struct RequestGate {
    give: Sender<()>,
    take: Receiver<()>,
}

pub struct GatePass<'a> {
    gate: &'a RequestGate,
}

impl RequestGate {
    pub fn new(max_in_flight: usize) -> Self {
        let cap = max_in_flight.max(1);
        let (give, take) = bounded(cap);
        for _ in 0..cap {
            give.send(()).expect("fresh channel has room");
        }
        RequestGate { give, take }
    }

    pub fn acquire(&self) -> GatePass<'_> {
        self.take.recv().expect("gate owns both channel ends");
        GatePass { gate: self }
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let _ = self.gate.give.send(());
    }
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, WebError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .user_agent(concat!("deepsearch/", env!("CARGO_PKG_VERSION")))
        .build()
        .map_err(|e| WebError::ProviderUnavailable(e.to_string()))
}

fn unavailable(e: reqwest::Error) -> WebError {
    WebError::ProviderUnavailable(e.without_url().to_string())
}

/// Bing Web Search v7 adapter. Request: `GET {endpoint}?q=..&count=k` with the
/// `Ocp-Apim-Subscription-Key` header; hits come from `webPages.value[]`
/// (`name`, `url`, `snippet`).
pub struct BingSearch {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    gate: RequestGate,
}

#[derive(Deserialize)]
struct BingResponse {
    #[serde(rename = "webPages")]
    web_pages: Option<BingPages>,
}

#[derive(Deserialize)]
struct BingPages {
    value: Vec<BingHit>,
}

#[derive(Deserialize)]
struct BingHit {
    name: String,
    url: String,
    #[serde(default)]
    snippet: String,
}

impl BingSearch {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: String,
        timeout: Duration,
        gate: RequestGate,
    ) -> Result<Self, WebError> {
        Ok(BingSearch { client: client(timeout)?, endpoint: endpoint.into(), api_key, gate })
    }
}

impl SearchProvider for BingSearch {
    fn name(&self) -> &str {
        "bing"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<WebHit>, WebError> {
        let _pass = self.gate.acquire();
        let resp: BingResponse = self
            .client
            .get(&self.endpoint)
            .query(&[("q", query), ("count", &k.to_string())])
            .header("Ocp-Apim-Subscription-Key", &self.api_key)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(unavailable)?;
        Ok(resp
            .web_pages
            .map(|p| p.value)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|h| Some(WebHit { url: Url::parse(&h.url).ok()?, title: h.name, snippet: h.snippet }))
            .take(k)
            .collect())
    }
}

/// SearxNG JSON API adapter: `GET {base}/search?q=..&format=json`, hits from
/// `results[]` (`url`, `title`, `content`).
pub struct SearxngSearch {
    client: reqwest::blocking::Client,
    base_url: String,
    gate: RequestGate,
}

#[derive(Deserialize)]
struct SearxngResponse {
    results: Vec<SearxngHit>,
}

#[derive(Deserialize)]
struct SearxngHit {
    url: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    content: String,
}

impl SearxngSearch {
    pub fn new(base_url: impl Into<String>, timeout: Duration, gate: RequestGate) -> Result<Self, WebError> {
        Ok(SearxngSearch { client: client(timeout)?, base_url: base_url.into(), gate })
    }
}

impl SearchProvider for SearxngSearch {
    fn name(&self) -> &str {
        "searxng"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<WebHit>, WebError> {
        let _pass = self.gate.acquire();
        let resp: SearxngResponse = self
            .client
            .get(format!("{}/search", self.base_url.trim_end_matches('/')))
            .query(&[("q", query), ("format", "json")])
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(unavailable)?;
        Ok(resp
            .results
            .into_iter()
            .filter_map(|h| Some(WebHit { url: Url::parse(&h.url).ok()?, title: h.title, snippet: h.content }))
            .take(k)
            .collect())
    }
}

/// Plain HTTP GET fetcher with a body size cap.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
    max_body_bytes: u64,
    gate: RequestGate,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, max_body_bytes: u64, gate: RequestGate) -> Result<Self, WebError> {
        let client = client(timeout).map_err(|e| WebError::FetchFailure(e.to_string()))?;
        Ok(HttpFetcher { client, max_body_bytes, gate })
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchedPage, WebError> {
        if !matches!(url.scheme(), "http" | "https") {
            return Err(WebError::FetchFailure(format!("unsupported scheme `{}`", url.scheme())));
        }
        let _pass = self.gate.acquire();
        let resp = self
            .client
            .get(url.clone())
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| WebError::FetchFailure(e.to_string()))?;
        let content_type =
            resp.headers().get(reqwest::header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_string);
        let mut bytes = Vec::new();
        resp.take(self.max_body_bytes).read_to_end(&mut bytes).map_err(|e| WebError::FetchFailure(e.to_string()))?;
        Ok(FetchedPage { body: String::from_utf8_lossy(&bytes).into_owned(), content_type })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn gate_caps_concurrency() {
        let gate = RequestGate::new(2);
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn non_http_scheme_rejected() {
        let f = HttpFetcher::new(Duration::from_secs(1), 1024, RequestGate::new(1)).unwrap();
        let err = f.fetch(&Url::parse("file:///etc/passwd").unwrap()).unwrap_err();
        assert!(matches!(err, WebError::FetchFailure(_)));
    }
}
