mod common;

use std::sync::Arc;

use common::*;
use deepsearch_core::embed::HashEmbedder;
use deepsearch_core::store::{LocalStore, StoreError};

const PROBES: &[(&str, &str)] = &[
    ("Who wrote the novel Kapalkundala?", "kapalkundala"),
    ("Sanjib Chandra Chattopadhyay Kanthalpara born", "sanjib"),
    ("Palamau travelogue", "palamau"),
    ("Anandamath novel", "anandamath"),
    ("Vande Mataram song", "vande-mataram"),
];

#[test]
fn fixture_probes_hit_their_documents() {
    let store = fixture_store();
    for (query, doc) in PROBES {
        let hits = store.chunk_search(query, 3).unwrap();
        assert_eq!(hits[0].chunk.doc_id, *doc, "{query}");
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn persisted_store_answers_identically() {
    let store = fixture_store();
    let dir = tempfile::tempdir().unwrap();
    store.persist(dir.path()).unwrap();
    let loaded = LocalStore::load(dir.path(), Arc::new(HashEmbedder::default())).unwrap();
    assert_eq!(loaded.chunks(), store.chunks());
    assert_eq!(loaded.graph(), store.graph());
    for (query, _) in PROBES {
        assert_eq!(loaded.chunk_search(query, 5).unwrap(), store.chunk_search(query, 5).unwrap());
        assert_eq!(loaded.graph_search(query, 5).unwrap(), store.graph_search(query, 5).unwrap());
    }
    assert_eq!(
        loaded.get_adjacent_passages("Bankim Chandra Chattopadhyay", 5).unwrap(),
        store.get_adjacent_passages("Bankim Chandra Chattopadhyay", 5).unwrap()
    );
}

#[test]
fn tampered_store_is_rejected() {
    let store = fixture_store();
    let dir = tempfile::tempdir().unwrap();
    store.persist(dir.path()).unwrap();
    let chunks = dir.path().join("chunks.jsonl");
    let text = std::fs::read_to_string(&chunks).unwrap().replacen("Kapalkundala", "Kapalkundalx", 1);
    std::fs::write(&chunks, text).unwrap();
    let err = LocalStore::load(dir.path(), Arc::new(HashEmbedder::default())).unwrap_err();
    assert!(matches!(err, StoreError::StorageCorrupt(_)), "{err}");
}

#[test]
fn other_embedder_is_rejected() {
    let store = fixture_store();
    let dir = tempfile::tempdir().unwrap();
    store.persist(dir.path()).unwrap();
    let err = LocalStore::load(dir.path(), Arc::new(HashEmbedder::new(64))).unwrap_err();
    assert!(matches!(err, StoreError::EmbedderMismatch { .. }), "{err}");
}
