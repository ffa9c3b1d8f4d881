//! Hierarchical deep search over local and web knowledge sources.
//!
//! Low-level agents run tool-augmented rollouts against a local store (chunk
//! corpus plus knowledge graph) or the web; a refiner keeps only the evidence
//! that contributed to their reasoning; a planner agent calls the low-level
//! agents as tools and answers. The `eval` module scores rollouts with the
//! rule-based reward and standard EM/F1 metrics.

pub mod config;
pub mod embed;
pub mod eval;
pub mod extract;
pub mod planner;
pub mod refiner;
pub mod runtime;
pub mod store;
pub mod tools;
pub mod trajectory;
pub mod web;
