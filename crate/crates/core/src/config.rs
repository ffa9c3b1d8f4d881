//! Engine configuration (TOML) and construction of the runtime components.
//!
//! Credentials are never written in the file: sections name the environment
//! variable that holds them. Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProvider, HashEmbedder, HttpEmbedder, HASH_EMBEDDING_DIM};
use crate::planner::{LowLevelAgent, Planner, PlannerError};
use crate::refiner::RefinerConfig;
use crate::runtime::{
    AgentConfig, GenerationClient, HttpGenerationClient, PromptTemplate, SamplingParams, ScriptedClient,
    DEFAULT_AGENT_ROUND_LIMIT, DEFAULT_PLANNER_ROUND_LIMIT,
};
use crate::store::{LocalStore, DEFAULT_CHUNK_TOKENS, DEFAULT_RESOLUTION_THRESHOLD, MIN_CHUNK_TOKENS};
use crate::tools::{local_registry, local_toolset, planner_toolset, web_registry, web_toolset, RetrievalK};
use crate::web::{
    BingSearch, FixtureWeb, HttpFetcher, LanguageRouter, PageFetcher, RequestGate, SearchProvider, SearxngSearch,
    DEFAULT_MAX_BODY_BYTES,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Search provider and page fetcher for the web agent.
pub type WebBackends = (Arc<dyn SearchProvider>, Arc<dyn PageFetcher>);

pub const PLANNER_AGENT: &str = "planner";
pub const LOCAL_AGENT: &str = "local";
pub const WEB_AGENT: &str = "web";

const PLANNER_PROMPT: &str = include_str!("../assets/prompts/planner.txt");
const LOCAL_PROMPT: &str = include_str!("../assets/prompts/local.txt");
const WEB_PROMPT: &str = include_str!("../assets/prompts/web.txt");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingSecret(String),
    #[error("{0}")]
    Build(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreSection {
    pub path: PathBuf,
    pub max_chunk_tokens: usize,
    pub resolution_threshold: f64,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            path: PathBuf::from("store"),
            max_chunk_tokens: DEFAULT_CHUNK_TOKENS,
            resolution_threshold: DEFAULT_RESOLUTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    /// Overrides the top-level `mock` flag for this subsystem.
    pub mock: Option<bool>,
    pub dimension: usize,
    /// Full URL of an OpenAI-compatible embeddings endpoint.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            kind: EmbedderKind::Hash,
            mock: None,
            dimension: HASH_EMBEDDING_DIM,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub mock: Option<bool>,
    /// Base URL of an OpenAI-compatible server, e.g. `http://localhost:8000/v1`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub timeout_secs: u64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let p = SamplingParams::default();
        GenerationSection {
            mock: None,
            endpoint: None,
            model: None,
            api_key_env: None,
            temperature: p.temperature,
            top_p: p.top_p,
            max_tokens: p.max_tokens,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WebProviderKind {
    Bing,
    Searxng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: WebProviderKind,
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WebSection {
    pub mock: Option<bool>,
    pub provider: Option<ProviderSection>,
    /// Provider used for queries detected as Chinese.
    pub chinese_provider: Option<ProviderSection>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_body_bytes: u64,
}

impl Default for WebSection {
    fn default() -> Self {
        WebSection {
            mock: None,
            provider: None,
            chinese_provider: None,
            timeout_secs: 20,
            max_in_flight: 8,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsSection {
    pub planner_round_limit: usize,
    pub local_round_limit: usize,
    pub web_round_limit: usize,
    /// Directory with `planner.txt`, `local.txt` and `web.txt`; built-in
    /// prompts are used for any file that is missing.
    pub prompt_dir: Option<PathBuf>,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection {
            planner_round_limit: DEFAULT_PLANNER_ROUND_LIMIT,
            local_round_limit: DEFAULT_AGENT_ROUND_LIMIT,
            web_round_limit: DEFAULT_AGENT_ROUND_LIMIT,
            prompt_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub chunk_k: usize,
    pub graph_k: usize,
    pub adjacent_k: usize,
    pub web_k: usize,
    pub browse_k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let k = RetrievalK::default();
        RetrievalSection {
            chunk_k: k.chunk,
            graph_k: k.graph,
            adjacent_k: k.adjacent,
            web_k: k.web,
            browse_k: k.browse,
        }
    }
}

impl RetrievalSection {
    pub fn k(&self) -> RetrievalK {
        RetrievalK {
            chunk: self.chunk_k,
            graph: self.graph_k,
            adjacent: self.adjacent_k,
            web: self.web_k,
            browse: self.browse_k,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockSection {
    /// Scripted generations, one JSON object per line.
    pub script: Option<PathBuf>,
    /// Web fixture records, one JSON object per line.
    pub web: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub schema_version: u32,
    /// Switches generation, embeddings and web to offline fixtures at once.
    pub mock: bool,
    pub store: StoreSection,
    pub embedder: EmbedderSection,
    pub generation: GenerationSection,
    pub web: WebSection,
    pub refiner: RefinerConfig,
    pub agents: AgentsSection,
    pub retrieval: RetrievalSection,
    #[serde(rename = "mock_fixtures")]
    pub fixtures: MockSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            schema_version: SCHEMA_VERSION,
            mock: false,
            store: StoreSection::default(),
            embedder: EmbedderSection::default(),
            generation: GenerationSection::default(),
            web: WebSection::default(),
            refiner: RefinerConfig::default(),
            agents: AgentsSection::default(),
            retrieval: RetrievalSection::default(),
            fixtures: MockSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub planner: String,
    pub local: String,
    pub web: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts { planner: PLANNER_PROMPT.into(), local: LOCAL_PROMPT.into(), web: WEB_PROMPT.into() }
    }
}

fn secret(var: &Option<String>) -> Result<Option<String>, ConfigError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| ConfigError::MissingSecret(name.clone())),
    }
}

impl EngineConfig {
    /// Parses and validates a config file. Validation runs before anything
    /// touches the network.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        EngineConfig::from_toml(&text, &base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: EngineConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn store_path(&self) -> PathBuf {
        self.resolve(&self.store.path)
    }

    pub fn embedder_mocked(&self) -> bool {
        self.embedder.mock.unwrap_or(self.mock)
    }

    pub fn generation_mocked(&self) -> bool {
        self.generation.mock.unwrap_or(self.mock)
    }

    pub fn web_mocked(&self) -> bool {
        self.web.mock.unwrap_or(self.mock)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.refiner.validate().map_err(|e| invalid(e.to_string()))?;
        if self.store.max_chunk_tokens < MIN_CHUNK_TOKENS {
            return Err(invalid(format!("store.max_chunk_tokens must be at least {MIN_CHUNK_TOKENS}")));
        }
        if !(0.0..=1.0).contains(&self.store.resolution_threshold) {
            return Err(invalid("store.resolution_threshold must be in [0, 1]"));
        }
        let a = &self.agents;
        if a.planner_round_limit == 0 || a.local_round_limit == 0 || a.web_round_limit == 0 {
            return Err(invalid("round limits must be at least 1"));
        }
        let r = &self.retrieval;
        if [r.chunk_k, r.graph_k, r.adjacent_k, r.web_k, r.browse_k].contains(&0) {
            return Err(invalid("retrieval k values must be at least 1"));
        }
        if let Some(dir) = &a.prompt_dir {
            let dir = self.resolve(dir);
            if !dir.is_dir() {
                return Err(invalid(format!("prompt directory {} does not exist", dir.display())));
            }
        }
        if self.generation_mocked() {
            self.existing(&self.fixtures.script, "mock_fixtures.script")?;
        } else if self.generation.endpoint.is_none() || self.generation.model.is_none() {
            return Err(invalid("generation.endpoint and generation.model are required unless generation is mocked"));
        }
        if self.web_mocked() {
            self.existing(&self.fixtures.web, "mock_fixtures.web")?;
        } else if self.web.provider.is_none() {
            return Err(invalid("web.provider is required unless web is mocked"));
        }
        if !self.embedder_mocked()
            && self.embedder.kind == EmbedderKind::Http
            && (self.embedder.endpoint.is_none() || self.embedder.model.is_none())
        {
            return Err(invalid("embedder.endpoint and embedder.model are required for kind = \"http\""));
        }
        Ok(())
    }

    fn existing(&self, path: &Option<PathBuf>, key: &str) -> Result<PathBuf, ConfigError> {
        let path = path.as_ref().ok_or_else(|| invalid(format!("{key} is required in mock mode")))?;
        let full = self.resolve(path);
        if !full.is_file() {
            return Err(invalid(format!("{key}: {} does not exist", full.display())));
        }
        Ok(full)
    }

    pub fn prompts(&self) -> Result<Prompts, ConfigError> {
        let mut prompts = Prompts::default();
        if let Some(dir) = &self.agents.prompt_dir {
            let dir = self.resolve(dir);
            for (name, slot) in
                [("planner", &mut prompts.planner), ("local", &mut prompts.local), ("web", &mut prompts.web)]
            {
                let file = dir.join(format!("{name}.txt"));
                if file.is_file() {
                    *slot = std::fs::read_to_string(&file)
                        .map_err(|e| ConfigError::Build(format!("{}: {e}", file.display())))?;
                }
            }
        }
        Ok(prompts)
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        if self.embedder_mocked() || self.embedder.kind == EmbedderKind::Hash {
            return Ok(Arc::new(HashEmbedder::new(self.embedder.dimension)));
        }
        let e = &self.embedder;
        let embedder = HttpEmbedder::new(
            e.endpoint.clone().unwrap_or_default(),
            e.model.clone().unwrap_or_default(),
            secret(&e.api_key_env)?,
            e.dimension,
            Duration::from_secs(e.timeout_secs),
        )
        .map_err(|err| ConfigError::Build(err.to_string()))?;
        Ok(Arc::new(embedder))
    }

    pub fn build_client(&self) -> Result<Arc<dyn GenerationClient>, ConfigError> {
        if self.generation_mocked() {
            let path = self.existing(&self.fixtures.script, "mock_fixtures.script")?;
            return Ok(Arc::new(ScriptedClient::load(&path).map_err(ConfigError::Build)?));
        }
        let g = &self.generation;
        let params = SamplingParams { temperature: g.temperature, top_p: g.top_p, max_tokens: g.max_tokens };
        let client = HttpGenerationClient::new(
            g.endpoint.as_deref().unwrap_or_default(),
            g.model.clone().unwrap_or_default(),
            secret(&g.api_key_env)?,
            params,
            Duration::from_secs(g.timeout_secs),
        )
        .map_err(|e| ConfigError::Build(e.to_string()))?;
        Ok(Arc::new(client))
    }

    fn provider(&self, p: &ProviderSection, gate: &RequestGate) -> Result<Arc<dyn SearchProvider>, ConfigError> {
        let timeout = Duration::from_secs(self.web.timeout_secs);
        let built: Arc<dyn SearchProvider> = match p.kind {
            WebProviderKind::Bing => {
                let key = secret(&p.api_key_env)?.ok_or_else(|| invalid("a bing provider needs api_key_env"))?;
                Arc::new(
                    BingSearch::new(&p.endpoint, key, timeout, gate.clone())
                        .map_err(|e| ConfigError::Build(e.to_string()))?,
                )
            }
            WebProviderKind::Searxng => Arc::new(
                SearxngSearch::new(&p.endpoint, timeout, gate.clone())
                    .map_err(|e| ConfigError::Build(e.to_string()))?,
            ),
        };
        Ok(built)
    }

    pub fn build_web(&self) -> Result<WebBackends, ConfigError> {
        if self.web_mocked() {
            let path = self.existing(&self.fixtures.web, "mock_fixtures.web")?;
            let web = Arc::new(FixtureWeb::load(&path).map_err(ConfigError::Build)?);
            return Ok((web.clone(), web));
        }
        let gate = RequestGate::new(self.web.max_in_flight);
        let default =
            self.provider(self.web.provider.as_ref().ok_or_else(|| invalid("web.provider is required"))?, &gate)?;
        let chinese = match &self.web.chinese_provider {
            Some(p) => Some(self.provider(p, &gate)?),
            None => None,
        };
        let fetcher = HttpFetcher::new(Duration::from_secs(self.web.timeout_secs), self.web.max_body_bytes, gate)
            .map_err(|e| ConfigError::Build(e.to_string()))?;
        Ok((Arc::new(LanguageRouter::new(default, chinese)), Arc::new(fetcher)))
    }

    pub fn open_store(&self, embedder: Arc<dyn EmbeddingProvider>) -> Result<LocalStore, ConfigError> {
        let path = self.store_path();
        LocalStore::load(&path, embedder)
            .map(|s| s.with_resolution_threshold(self.store.resolution_threshold))
            .map_err(|e| ConfigError::Build(format!("cannot open store {}: {e}", path.display())))
    }

    pub fn agent_configs(&self) -> Result<(AgentConfig, AgentConfig, AgentConfig), ConfigError> {
        let prompts = self.prompts()?;
        let a = &self.agents;
        Ok((
            AgentConfig::new(
                PLANNER_AGENT,
                PromptTemplate::new(prompts.planner),
                planner_toolset(),
                a.planner_round_limit,
            ),
            AgentConfig::new(LOCAL_AGENT, PromptTemplate::new(prompts.local), local_toolset(), a.local_round_limit),
            AgentConfig::new(WEB_AGENT, PromptTemplate::new(prompts.web), web_toolset(), a.web_round_limit),
        ))
    }

    /// Wires the planner over an opened store.
    pub fn build_planner(&self, store: Arc<LocalStore>) -> Result<Planner, ConfigError> {
        let embedder = Arc::clone(store.embedder());
        let client = self.build_client()?;
        let (search, fetcher) = self.build_web()?;
        let (planner, local, web) = self.agent_configs()?;
        let k = self.retrieval.k();
        let local = LowLevelAgent { config: local, registry: local_registry(store, k) };
        let web = LowLevelAgent { config: web, registry: web_registry(search, fetcher, Arc::clone(&embedder), k) };
        Planner::new(planner, local, web, client, embedder, self.refiner)
            .map_err(|e: PlannerError| ConfigError::Build(e.to_string()))
    }
}
