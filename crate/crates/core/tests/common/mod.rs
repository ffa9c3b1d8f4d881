#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use deepsearch_core::config::EngineConfig;
use deepsearch_core::embed::HashEmbedder;
use deepsearch_core::planner::Planner;
use deepsearch_core::store::{load_documents, LocalStore, RuleExtractor, DEFAULT_CHUNK_TOKENS};

pub const QUESTION: &str = "Who is the sibling of the author of Kapalkundala?";
pub const GOLD: &str = "Sanjib Chandra Chattopadhyay";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn kapalkundala() -> PathBuf {
    fixtures().join("kapalkundala")
}

pub fn transcript(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("transcripts").join(format!("{name}.txt"))).unwrap()
}

pub fn fixture_store() -> Arc<LocalStore> {
    let docs = load_documents(&kapalkundala().join("corpus.jsonl")).unwrap();
    let mut store = LocalStore::ingest(&docs, DEFAULT_CHUNK_TOKENS, Arc::new(HashEmbedder::default())).unwrap();
    store.build_graph(&RuleExtractor).unwrap();
    Arc::new(store)
}

pub fn mock_config() -> EngineConfig {
    EngineConfig::load(&kapalkundala().join("mock.toml")).unwrap()
}

pub fn mock_planner() -> Planner {
    mock_config().build_planner(fixture_store()).unwrap()
}
