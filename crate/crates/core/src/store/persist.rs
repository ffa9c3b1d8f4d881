//! On-disk store layout: a directory holding `manifest.json`, three JSONL
//! tables and three little-endian f32 vector blocks. The manifest carries a
//! SHA-256 for every other file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{EntityRecord, KnowledgeGraph, Triple};
use super::{Chunk, LocalStore, StoreError, VectorIndex};
use crate::embed::{EmbedderDescriptor, EmbeddingProvider};

pub const STORE_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const CHUNKS: &str = "chunks.jsonl";
const TRIPLES: &str = "triples.jsonl";
const ENTITIES: &str = "entities.jsonl";
const CHUNK_VECTORS: &str = "chunk_vectors.f32";
const TRIPLE_VECTORS: &str = "triple_vectors.f32";
const ENTITY_VECTORS: &str = "entity_vectors.f32";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    embedder: EmbedderDescriptor,
    resolution_threshold: f64,
    chunks: usize,
    triples: usize,
    entities: usize,
    checksums: BTreeMap<String, String>,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("store rows serialize");
        out.push(b'\n');
    }
    out
}

fn vector_bytes(index: &VectorIndex) -> Vec<u8> {
    index.raw().iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(super) fn write_store(store: &LocalStore, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        (CHUNKS, jsonl(&store.chunks)),
        (TRIPLES, jsonl(&store.graph.triples)),
        (ENTITIES, jsonl(&store.graph.entities)),
        (CHUNK_VECTORS, vector_bytes(&store.chunk_index)),
        (TRIPLE_VECTORS, vector_bytes(&store.triple_index)),
        (ENTITY_VECTORS, vector_bytes(&store.entity_index)),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        checksums.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = Manifest {
        version: STORE_FORMAT_VERSION,
        embedder: store.embedder.descriptor(),
        resolution_threshold: store.resolution_threshold,
        chunks: store.chunks.len(),
        triples: store.graph.triples.len(),
        entities: store.graph.entities.len(),
        checksums,
    };
    let path = dir.join(MANIFEST);
    let body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, body).map_err(|e| io_err(&path, e))
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::StorageCorrupt(msg.into())
}

fn read_verified(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, StoreError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let expected = manifest.checksums.get(name).ok_or_else(|| corrupt(format!("{name}: no checksum")))?;
    if &sha256_hex(&bytes) != expected {
        return Err(corrupt(format!("{name}: checksum mismatch")));
    }
    Ok(bytes)
}

fn parse_jsonl<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<T>, StoreError> {
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt(format!("{name}: not UTF-8")))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| corrupt(format!("{name}:{}: {e}", i + 1))))
        .collect()
}

fn parse_vectors(name: &str, bytes: &[u8], rows: usize, dim: usize) -> Result<VectorIndex, StoreError> {
    if bytes.len() != rows * dim * 4 {
        return Err(corrupt(format!("{name}: expected {} bytes, found {}", rows * dim * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(VectorIndex::from_raw(dim, data))
}

pub(super) fn read_store(dir: &Path, embedder: Arc<dyn EmbeddingProvider>) -> Result<LocalStore, StoreError> {
    let manifest_path = dir.join(MANIFEST);
    let raw = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| corrupt(format!("{MANIFEST}: {e}")))?;
    if manifest.version != STORE_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported store version {}", manifest.version)));
    }
    let configured = embedder.descriptor();
    if configured != manifest.embedder {
        return Err(StoreError::EmbedderMismatch {
            stored: format!("{:?}", manifest.embedder),
            configured: format!("{configured:?}"),
        });
    }
    let dim = manifest.embedder.dimension;

    let chunks: Vec<Chunk> = parse_jsonl(CHUNKS, &read_verified(dir, CHUNKS, &manifest)?)?;
    let triples: Vec<Triple> = parse_jsonl(TRIPLES, &read_verified(dir, TRIPLES, &manifest)?)?;
    let entities: Vec<EntityRecord> = parse_jsonl(ENTITIES, &read_verified(dir, ENTITIES, &manifest)?)?;
    if chunks.len() != manifest.chunks || triples.len() != manifest.triples || entities.len() != manifest.entities {
        return Err(corrupt("row counts disagree with manifest"));
    }
    let chunk_index = parse_vectors(CHUNK_VECTORS, &read_verified(dir, CHUNK_VECTORS, &manifest)?, chunks.len(), dim)?;
    let triple_index =
        parse_vectors(TRIPLE_VECTORS, &read_verified(dir, TRIPLE_VECTORS, &manifest)?, triples.len(), dim)?;
    let entity_index =
        parse_vectors(ENTITY_VECTORS, &read_verified(dir, ENTITY_VECTORS, &manifest)?, entities.len(), dim)?;
    if chunks.is_empty() {
        return Err(StoreError::EmptyCorpus);
    }

    Ok(LocalStore {
        chunks,
        chunk_index,
        graph: KnowledgeGraph { triples, entities },
        triple_index,
        entity_index,
        embedder,
        resolution_threshold: manifest.resolution_threshold,
    })
}

/// True when `dir` already holds a store manifest.
pub fn store_exists(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}
