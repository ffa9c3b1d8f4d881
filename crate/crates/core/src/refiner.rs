//! Two-step evidence selection between a low-level rollout and the planner.
//!
//! Step 1 keeps, per round, the evidence most similar to the thinking that
//! followed the round. Step 2 keeps a share of the leftovers that is most
//! similar to the rollout's conclusion (optionally joined with the other
//! agent's conclusion). Only evidence text ever leaves the refiner.

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, EmbeddingProvider};
use crate::tools::{BROWSE_URL, WEB_SEARCH};
use crate::trajectory::{
    format_evidence_line, join_evidence_lines, to_rounds, Evidence, ParsedTrajectory, Round, NO_EVIDENCE_SENTINEL,
};

/// Slack for quota ceilings so that exact products such as 30 × 10 / 100 do
/// not round up through float noise.
const QUOTA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    /// Percentage kept per round in step 1, in (0, 100].
    pub alpha: f64,
    /// Percentage of the step-1 remainder kept in step 2, in [0, 100].
    pub beta: f64,
    pub min_per_round: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig { alpha: 30.0, beta: 20.0, min_per_round: 1 }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.alpha > 0.0 && self.alpha <= 100.0) {
            return Err(RefineError::InvalidConfig(format!("alpha must be in (0, 100], got {}", self.alpha)));
        }
        if !(0.0..=100.0).contains(&self.beta) {
            return Err(RefineError::InvalidConfig(format!("beta must be in [0, 100], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("trajectory contains no evidence")]
    NoEvidence,
    #[error("invalid refiner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefineStep {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvidence {
    pub evidence: Evidence,
    pub score: f64,
    pub step: RefineStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceAgent {
    Local,
    Web,
}

impl SourceAgent {
    pub fn of(trajectory: &ParsedTrajectory) -> SourceAgent {
        if trajectory.toolset.contains(WEB_SEARCH) || trajectory.toolset.contains(BROWSE_URL) {
            SourceAgent::Web
        } else {
            SourceAgent::Local
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedEvidenceSet {
    /// Ordered by `(round_index, rank)`.
    pub items: Vec<ScoredEvidence>,
    pub source_agent: SourceAgent,
}

impl RefinedEvidenceSet {
    pub fn empty(source_agent: SourceAgent) -> Self {
        RefinedEvidenceSet { items: Vec::new(), source_agent }
    }
}

fn ceil_pct(pct: f64, n: usize) -> usize {
    let raw = (pct * n as f64 / 100.0 - QUOTA_EPS).ceil();
    (raw.max(0.0) as usize).min(n)
}

/// Step-1 quota for a round with `n` evidence items.
pub fn step1_quota(n: usize, alpha: f64, min_per_round: usize) -> usize {
    ceil_pct(alpha, n).max(min_per_round).min(n)
}

/// Step-2 quota for a remainder of `m` items.
pub fn step2_quota(m: usize, beta: f64) -> usize {
    ceil_pct(beta, m)
}

fn scores(texts: &[&str], target: &str, embedder: &dyn EmbeddingProvider) -> Result<Vec<f64>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let target = embedder.embed_one(target)?;
    let vectors = embedder.embed(texts)?;
    Ok(vectors.iter().map(|v| embedder.similarity(v, &target)).collect())
}

fn scored(
    evidence: &[Evidence],
    target: &str,
    step: RefineStep,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredEvidence>, EmbedError> {
    let texts: Vec<&str> = evidence.iter().map(|e| e.text.as_str()).collect();
    Ok(scores(&texts, target, embedder)?
        .into_iter()
        .zip(evidence)
        .map(|(score, e)| ScoredEvidence { evidence: e.clone(), score, step })
        .collect())
}

/// Scores every evidence item of `round` against the thinking that follows it.
pub fn score_step1(
    round: &Round,
    next_think: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredEvidence>, EmbedError> {
    scored(&round.evidence, next_think, RefineStep::Local, embedder)
}

/// Thinking that follows each round: the next round's think, and for the last
/// round the final think. A missing or blank target falls back to the
/// conclusion.
pub fn next_thinks(rounds: &[Round], final_think: &str, conclusion: Option<&str>) -> Vec<String> {
    let fallback = conclusion.unwrap_or_default();
    (0..rounds.len())
        .map(|k| {
            let t = rounds.get(k + 1).map_or(final_think, |r| r.think.as_str());
            if t.trim().is_empty() { fallback } else { t }.to_string()
        })
        .collect()
}

fn by_score_then_position(a: &ScoredEvidence, b: &ScoredEvidence) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.evidence.round_index.cmp(&b.evidence.round_index))
        .then(a.evidence.rank.cmp(&b.evidence.rank))
}

fn by_position(a: &ScoredEvidence, b: &ScoredEvidence) -> std::cmp::Ordering {
    (a.evidence.round_index, a.evidence.rank).cmp(&(b.evidence.round_index, b.evidence.rank))
}

/// Per-round selection. Returns the kept items and the remainder, both in
/// `(round_index, rank)` order.
pub fn select_step1(
    rounds: &[Round],
    thinks: &[String],
    config: &RefinerConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<(Vec<ScoredEvidence>, Vec<Evidence>), EmbedError> {
    let mut selected = Vec::new();
    let mut remainder = Vec::new();
    for (round, think) in rounds.iter().zip(thinks) {
        let mut items = score_step1(round, think, embedder)?;
        let quota = step1_quota(items.len(), config.alpha, config.min_per_round);
        items.sort_by(by_score_then_position);
        let rest = items.split_off(quota);
        selected.extend(items);
        remainder.extend(rest.into_iter().map(|s| s.evidence));
    }
    selected.sort_by(by_position);
    remainder.sort_by_key(|e| (e.round_index, e.rank));
    Ok((selected, remainder))
}

/// Text the remainder is scored against in step 2.
pub fn step2_target(conclusion: &str, other_conclusion: Option<&str>) -> String {
    match other_conclusion {
        Some(other) if !other.trim().is_empty() => format!("{conclusion}\n{other}"),
        _ => conclusion.to_string(),
    }
}

pub fn score_step2(
    remainder: &[Evidence],
    conclusion: &str,
    other_conclusion: Option<&str>,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredEvidence>, EmbedError> {
    scored(remainder, &step2_target(conclusion, other_conclusion), RefineStep::Global, embedder)
}

/// Runs both steps over a parsed rollout.
pub fn refine(
    trajectory: &ParsedTrajectory,
    other_conclusion: Option<&str>,
    config: &RefinerConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<RefinedEvidenceSet, RefineError> {
    config.validate()?;
    let view = to_rounds(trajectory);
    if view.evidence_count() == 0 {
        return Err(RefineError::NoEvidence);
    }
    let conclusion = view.conclusion.as_deref().filter(|c| !c.is_empty());
    let thinks = next_thinks(&view.rounds, &view.final_think, conclusion);
    let (mut items, remainder) = select_step1(&view.rounds, &thinks, config, embedder)?;
    if let Some(conclusion) = conclusion {
        let quota = step2_quota(remainder.len(), config.beta);
        if quota > 0 {
            let mut global = score_step2(&remainder, conclusion, other_conclusion, embedder)?;
            global.sort_by(by_score_then_position);
            global.truncate(quota);
            items.extend(global);
            items.sort_by(by_position);
        }
    }
    Ok(RefinedEvidenceSet { items, source_agent: SourceAgent::of(trajectory) })
}

/// Renders one or more refined sets as a result payload: local-source lines
/// first, then web-source lines, each group in set and position order.
pub fn format_refined(sets: &[&RefinedEvidenceSet]) -> String {
    let mut ordered: Vec<&RefinedEvidenceSet> = sets.to_vec();
    ordered.sort_by_key(|s| s.source_agent != SourceAgent::Local);
    let all: Vec<&ScoredEvidence> = ordered.iter().flat_map(|s| s.items.iter()).collect();
    if all.is_empty() {
        return NO_EVIDENCE_SENTINEL.to_string();
    }
    let local = all.iter().filter(|s| s.evidence.source.is_local());
    let web = all.iter().filter(|s| !s.evidence.source.is_local());
    join_evidence_lines(local.chain(web).map(|s| format_evidence_line(s.evidence.source, &s.evidence.text)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::trajectory::{parse, ToolSet};

    fn tools() -> ToolSet {
        ToolSet::new(["chunk_search", "graph_search", "get_adjacent_passages"])
    }

    /// Three rounds with 4, 2 and 4 evidence items.
    fn fixture() -> ParsedTrajectory {
        let text = "<think>find the author of kapalkundala</think><chunk_search>Kapalkundala author</chunk_search>\
<result>Local Chunk Corpus: kapalkundala novel author bankim\n\nLocal Chunk Corpus: river delta\n\n\
Local Chunk Corpus: bengal famine\n\nLocal Chunk Corpus: author bankim chandra</result>\
<think>bankim chandra sibling search</think><graph_search>Bankim sibling</graph_search>\
<result>Local Knowledge Graph: [Subject] bankim [Predicate] sibling [Object] sanjib\n\n\
Local Knowledge Graph: [Subject] palamau [Predicate] located in [Object] jharkhand</result>\
<think>sanjib sibling bankim brother</think><chunk_search>sanjib chandra</chunk_search>\
<result>Local Chunk Corpus: sanjib elder brother bankim\n\nLocal Chunk Corpus: labo m singer\n\n\
Local Chunk Corpus: sanjib wrote palamau\n\nLocal Chunk Corpus: cricket match</result>\
<think>sanjib is the elder brother</think><answer>Sanjib Chandra Chattopadhyay</answer>";
        parse(text, &tools()).unwrap()
    }

    #[test]
    fn quotas() {
        assert_eq!(step1_quota(4, 50.0, 1), 2);
        assert_eq!(step1_quota(1, 10.0, 1), 1);
        assert_eq!(step1_quota(10, 30.0, 1), 3);
        assert_eq!(step1_quota(0, 30.0, 1), 0);
        assert_eq!(step1_quota(2, 10.0, 5), 2);
        assert_eq!(step2_quota(5, 20.0), 1);
        assert_eq!(step2_quota(5, 0.0), 0);
        assert_eq!(step2_quota(7, 100.0), 7);
    }

    #[test]
    fn fixture_sizes() {
        let e = HashEmbedder::default();
        let t = fixture();
        let view = to_rounds(&t);
        let thinks = next_thinks(&view.rounds, &view.final_think, view.conclusion.as_deref());
        let cfg = RefinerConfig { alpha: 50.0, beta: 20.0, min_per_round: 1 };
        let (sel, rem) = select_step1(&view.rounds, &thinks, &cfg, &e).unwrap();
        let per_round: Vec<usize> =
            (1..=3).map(|k| sel.iter().filter(|s| s.evidence.round_index == k).count()).collect();
        assert_eq!(per_round, vec![2, 1, 2]);
        assert_eq!(rem.len(), 5);
        let out = refine(&t, None, &cfg, &e).unwrap();
        assert_eq!(out.items.len(), 6);
        assert_eq!(out.items.iter().filter(|s| s.step == RefineStep::Global).count(), 1);
        assert!(out.items.windows(2).all(|w| by_position(&w[0], &w[1]).is_lt()));
    }

    #[test]
    fn extremes() {
        let e = HashEmbedder::default();
        let t = fixture();
        let all = refine(&t, None, &RefinerConfig { alpha: 100.0, beta: 100.0, min_per_round: 1 }, &e).unwrap();
        let original: Vec<Evidence> = to_rounds(&t).evidence().cloned().collect();
        assert_eq!(all.items.iter().map(|s| s.evidence.clone()).collect::<Vec<_>>(), original);
        let cfg = RefinerConfig { alpha: 30.0, beta: 0.0, min_per_round: 1 };
        let out = refine(&t, None, &cfg, &e).unwrap();
        assert!(out.items.iter().all(|s| s.step == RefineStep::Local));
    }

    #[test]
    fn step1_prefers_evidence_matching_next_think() {
        let e = HashEmbedder::default();
        let t = fixture();
        let cfg = RefinerConfig { alpha: 10.0, beta: 0.0, min_per_round: 1 };
        let out = refine(&t, None, &cfg, &e).unwrap();
        let texts: Vec<&str> = out.items.iter().map(|s| s.evidence.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "author bankim chandra",
                "[Subject] bankim [Predicate] sibling [Object] sanjib",
                "sanjib elder brother bankim"
            ]
        );
    }

    #[test]
    fn self_similarity_and_other_conclusion() {
        let e = HashEmbedder::default();
        let t = fixture();
        let view = to_rounds(&t);
        let s = score_step1(&view.rounds[0], "kapalkundala novel author bankim", &e).unwrap();
        assert!((s[0].score - 1.0).abs() < 1e-6);
        let only_other = vec![Evidence {
            text: "cricket match".into(),
            source: crate::trajectory::EvidenceSource::LocalChunk,
            round_index: 1,
            rank: 1,
        }];
        let without = score_step2(&only_other, "sanjib", None, &e).unwrap();
        let with = score_step2(&only_other, "sanjib", Some("cricket"), &e).unwrap();
        assert_eq!(without[0].score, 0.0);
        assert!(with[0].score > 0.0);
        assert!(score_step2(&[], "x", None, &e).unwrap().is_empty());
    }

    #[test]
    fn truncated_rollout_skips_step_two() {
        let text = "<think>a</think><chunk_search>q</chunk_search><result>Local Chunk Corpus: x\n\nLocal Chunk Corpus: y\n\nLocal Chunk Corpus: z</result>";
        let t = parse(text, &tools()).unwrap();
        let out = refine(
            &t,
            Some("x"),
            &RefinerConfig { alpha: 30.0, beta: 100.0, min_per_round: 1 },
            &HashEmbedder::default(),
        )
        .unwrap();
        assert_eq!(out.items.len(), 1);
    }

    #[test]
    fn no_evidence() {
        let text = "<think>a</think><chunk_search>q</chunk_search><result>No relevant evidence found.</result><answer>x</answer>";
        let t = parse(text, &tools()).unwrap();
        assert!(matches!(
            refine(&t, None, &RefinerConfig::default(), &HashEmbedder::default()),
            Err(RefineError::NoEvidence)
        ));
    }

    #[test]
    fn formatting() {
        assert_eq!(format_refined(&[]), NO_EVIDENCE_SENTINEL);
        let e = HashEmbedder::default();
        let local = refine(&fixture(), None, &RefinerConfig { alpha: 100.0, beta: 0.0, min_per_round: 1 }, &e).unwrap();
        let web_text = "<think>w</think><web_search>q</web_search><result>Search Engine: a | https://a.org/\n\nSearch Engine: b | https://b.org/</result><answer>x</answer>";
        let web_t = parse(web_text, &ToolSet::new(["web_search", "browse_url"])).unwrap();
        let web = refine(&web_t, None, &RefinerConfig { alpha: 100.0, beta: 0.0, min_per_round: 1 }, &e).unwrap();
        assert_eq!(web.source_agent, SourceAgent::Web);
        let out = format_refined(&[&web, &local]);
        let first_web = out.find("Search Engine:").unwrap();
        let last_local = out.rfind("Local ").unwrap();
        assert!(last_local < first_web);
        assert!(out.contains("Local Knowledge Graph: [Subject] bankim"));
        assert!(!out.contains("elder brother</think>") && !out.contains("Sanjib Chandra Chattopadhyay"));
    }

    #[test]
    fn config_validation() {
        assert!(RefinerConfig { alpha: 0.0, beta: 20.0, min_per_round: 1 }.validate().is_err());
        assert!(RefinerConfig { alpha: 30.0, beta: 120.0, min_per_round: 1 }.validate().is_err());
        assert!(RefinerConfig { alpha: 100.0, beta: 0.0, min_per_round: 0 }.validate().is_ok());
    }
}
