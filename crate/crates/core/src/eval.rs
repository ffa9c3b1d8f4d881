//! Answer metrics, the rule-based rollout reward, search accounting,
//! benchmark runs and rollout export.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embed::is_cjk;
use crate::tools::{ADJACENT_PASSAGES, BROWSE_URL, CHUNK_SEARCH, GRAPH_SEARCH, WEB_SEARCH};
use crate::trajectory::{parse, ParsedTrajectory, SegmentKind, ToolSet};

/// Weight of the exploration branch of the reward.
pub const EXPLORATION_WEIGHT: f64 = 0.1;

// ---------------------------------------------------------------------------
// Answer metrics

fn is_article(token: &str) -> bool {
    matches!(token, "a" | "an" | "the")
}

/// Lowercases, drops punctuation, removes articles and collapses whitespace.
///
/// An article is removed only when a word of two or more characters follows
/// it, so letter sequences such as "a b c" or "vitamin a" keep their letters.
pub fn normalize_answer(text: &str) -> String {
    let cleaned: String = text.to_lowercase().chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).collect();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            let before_word = tokens.get(i + 1).is_some_and(|next| next.chars().count() >= 2);
            !(is_article(t) && before_word)
        })
        .map(|(_, t)| *t)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokens of a normalized answer: whitespace tokens, with every CJK character
/// split out on its own.
pub fn answer_tokens(normalized: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in normalized.split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

pub fn exact_match(prediction: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(prediction) == normalize_answer(gold))
}

/// Token-level F1 over multisets of normalized tokens.
pub fn f1(prediction: &str, gold: &str) -> f64 {
    let pred = answer_tokens(&normalize_answer(prediction));
    let gold = answer_tokens(&normalize_answer(gold));
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best (EM, F1) over several gold answers, with the index of the gold that
/// gave the best F1 (first on ties).
pub fn best_match(prediction: &str, golds: &[String]) -> (u8, f64, usize) {
    let mut em = 0;
    let mut best = (0.0, 0);
    for (i, g) in golds.iter().enumerate() {
        em = em.max(exact_match(prediction, g));
        let score = f1(prediction, g);
        if score > best.0 {
            best = (score, i);
        }
    }
    (em, best.0, best.1)
}

// ---------------------------------------------------------------------------
// Format and reward

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatMode {
    /// Grammar plus exactly one answer.
    #[default]
    Lenient,
    /// Additionally every tool call and the answer must follow a think block.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub valid: bool,
    pub violations: Vec<String>,
    pub tool_types_used: BTreeSet<String>,
    pub toolset_size: usize,
}

pub fn validate_format(text: &str, toolset: &ToolSet, mode: FormatMode) -> FormatReport {
    let mut report = FormatReport {
        valid: false,
        violations: Vec::new(),
        tool_types_used: BTreeSet::new(),
        toolset_size: toolset.len(),
    };
    match parse(text, toolset) {
        Err(e) => report.violations.push(e.to_string()),
        Ok(t) => check_parsed(&t, mode, &mut report),
    }
    report.valid = report.violations.is_empty();
    report
}

fn check_parsed(t: &ParsedTrajectory, mode: FormatMode, report: &mut FormatReport) {
    report.tool_types_used = t.tool_calls().map(|(name, _)| name.to_string()).collect();
    if t.count(SegmentKind::Answer) == 0 {
        report.violations.push("no answer".into());
    }
    if mode == FormatMode::Strict {
        for (i, seg) in t.segments.iter().enumerate() {
            let needs_think = matches!(seg.kind, SegmentKind::ToolCall | SegmentKind::Answer);
            let after_think = i > 0 && t.segments[i - 1].kind == SegmentKind::Think;
            if needs_think && !after_think {
                report.violations.push(format!("{} at segment {} is not preceded by a think block", seg.kind, i + 1));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub format: FormatReport,
    pub em: u8,
    pub f1: f64,
    pub reward: f64,
    pub prediction: String,
    pub gold: String,
}

/// Format-gated reward: 0 for an invalid format, otherwise F1 when positive,
/// otherwise 0.1 times the share of tool types used.
pub fn compute_reward(text: &str, golds: &[String], toolset: &ToolSet, mode: FormatMode) -> RewardReport {
    let format = validate_format(text, toolset, mode);
    let prediction = if format.valid {
        parse(text, toolset).ok().and_then(|t| t.answer().map(|a| a.trim().to_string())).unwrap_or_default()
    } else {
        String::new()
    };
    let (em, f1, gi) = if format.valid { best_match(&prediction, golds) } else { (0, 0.0, 0) };
    let reward = if !format.valid {
        0.0
    } else if f1 > 0.0 {
        f1
    } else if format.toolset_size == 0 {
        0.0
    } else {
        EXPLORATION_WEIGHT * format.tool_types_used.len() as f64 / format.toolset_size as f64
    };
    RewardReport { format, em, f1, reward, prediction, gold: golds.get(gi).cloned().unwrap_or_default() }
}

// ---------------------------------------------------------------------------
// Search accounting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchCounts {
    pub local: usize,
    pub web: usize,
    /// Page browsing, kept out of `web`.
    pub browse: usize,
}

impl Add for SearchCounts {
    type Output = SearchCounts;
    fn add(self, o: SearchCounts) -> SearchCounts {
        SearchCounts { local: self.local + o.local, web: self.web + o.web, browse: self.browse + o.browse }
    }
}

impl AddAssign for SearchCounts {
    fn add_assign(&mut self, o: SearchCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for SearchCounts {
    fn sum<I: Iterator<Item = SearchCounts>>(iter: I) -> SearchCounts {
        iter.fold(SearchCounts::default(), Add::add)
    }
}

pub fn count_tool_calls<'a>(names: impl IntoIterator<Item = &'a str>) -> SearchCounts {
    let mut c = SearchCounts::default();
    for name in names {
        match name {
            CHUNK_SEARCH | GRAPH_SEARCH | ADJACENT_PASSAGES => c.local += 1,
            WEB_SEARCH => c.web += 1,
            BROWSE_URL => c.browse += 1,
            _ => {}
        }
    }
    c
}

pub fn count_searches(trajectory: &ParsedTrajectory) -> SearchCounts {
    count_tool_calls(trajectory.tool_calls().map(|(name, _)| name))
}

/// Whitespace tokens inside think blocks.
pub fn reasoning_tokens(trajectory: &ParsedTrajectory) -> usize {
    trajectory
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Think)
        .map(|s| s.payload.split_whitespace().count())
        .sum()
}

// ---------------------------------------------------------------------------
// Benchmarks

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("storage failure at {path}: {message}")]
    StorageFailure { path: String, message: String },
}

fn storage(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::StorageFailure { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSample {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
}

/// A dataset line that could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    pub line: usize,
    pub message: String,
}

/// Reads a JSONL dataset. Malformed lines are returned separately so a run
/// can proceed without them.
pub fn load_dataset(path: &Path) -> Result<(Vec<DatasetSample>, Vec<RejectedLine>), EvalError> {
    let file = File::open(path).map_err(|e| storage(path, e))?;
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetSample>(&line) {
            Ok(s) if s.question.trim().is_empty() => {
                rejected.push(RejectedLine { line: i + 1, message: "empty question".into() })
            }
            Ok(mut s) => {
                if s.id.is_empty() {
                    s.id = format!("line-{}", i + 1);
                }
                samples.push(s)
            }
            Err(e) => rejected.push(RejectedLine { line: i + 1, message: e.to_string() }),
        }
    }
    Ok((samples, rejected))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub answer: Option<String>,
    pub searches: SearchCounts,
    pub reasoning_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineFailure {
    pub message: String,
    /// Whatever was observed before the failure.
    pub partial: PipelineOutput,
}

/// Something that answers questions, e.g. the planner.
pub trait Pipeline: Sync {
    fn run(&self, question: &str) -> Result<PipelineOutput, PipelineFailure>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
    pub prediction: Option<String>,
    pub em: u8,
    pub f1: f64,
    pub searches: SearchCounts,
    pub reasoning_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub em_mean: f64,
    pub f1_mean: f64,
    pub avg_local_searches: f64,
    pub avg_web_searches: f64,
    pub avg_browses: f64,
    pub avg_reasoning_tokens: f64,
    pub per_sample: Vec<SampleRecord>,
}

impl MetricsReport {
    pub fn from_records(per_sample: Vec<SampleRecord>) -> Self {
        let n = per_sample.len().max(1) as f64;
        let mean = |f: &dyn Fn(&SampleRecord) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            samples: per_sample.len(),
            em_mean: mean(&|r| f64::from(r.em)),
            f1_mean: mean(&|r| r.f1),
            avg_local_searches: mean(&|r| r.searches.local as f64),
            avg_web_searches: mean(&|r| r.searches.web as f64),
            avg_browses: mean(&|r| r.searches.browse as f64),
            avg_reasoning_tokens: mean(&|r| r.reasoning_tokens as f64),
            per_sample,
        }
    }
}

pub fn score_sample(sample: &DatasetSample, outcome: Result<PipelineOutput, PipelineFailure>) -> SampleRecord {
    let (output, error) = match outcome {
        Ok(o) => (o, None),
        Err(f) => (f.partial, Some(f.message)),
    };
    let (em, f1) = match (&output.answer, &error) {
        (Some(a), None) => {
            let (em, f1, _) = best_match(a, &sample.golden_answers);
            (em, f1)
        }
        _ => (0, 0.0),
    };
    SampleRecord {
        id: sample.id.clone(),
        question: sample.question.clone(),
        golden_answers: sample.golden_answers.clone(),
        prediction: output.answer,
        em,
        f1,
        searches: output.searches,
        reasoning_tokens: output.reasoning_tokens,
        error,
    }
}

/// Runs `pipeline` over the dataset with at most `concurrency` samples in
/// flight. `on_record` sees each record as soon as it is scored; once
/// `cancel` is set no new samples start. `per_sample` keeps dataset order and
/// holds only the samples that ran.
pub fn run_benchmark(
    dataset: &[DatasetSample],
    pipeline: &dyn Pipeline,
    concurrency: usize,
    cancel: &AtomicBool,
    on_record: &(dyn Fn(&SampleRecord) + Sync),
) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SampleRecord>>> = Mutex::new(vec![None; dataset.len()]);
    std::thread::scope(|s| {
        for _ in 0..concurrency.clamp(1, dataset.len()) {
            s.spawn(|| loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = dataset.get(i) else { break };
                let record = score_sample(sample, pipeline.run(&sample.question));
                on_record(&record);
                slots.lock().expect("benchmark slots poisoned")[i] = Some(record);
            });
        }
    });
    let records = slots.into_inner().expect("benchmark slots poisoned").into_iter().flatten().collect();
    Ok(MetricsReport::from_records(records))
}

// ---------------------------------------------------------------------------
// Rollout export

/// One scored rollout, as written for external trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub question: String,
    /// Full text: a `Question:` line followed by the transcript.
    pub trajectory: String,
    pub toolset: ToolSet,
    pub golden_answers: Vec<String>,
    pub reward: f64,
    pub em: u8,
    pub f1: f64,
    pub searches: SearchCounts,
}

impl ExportRecord {
    pub fn score(question: &str, trajectory: &str, toolset: &ToolSet, golds: &[String], mode: FormatMode) -> Self {
        let report = compute_reward(trajectory, golds, toolset, mode);
        let searches = parse(trajectory, toolset).map(|t| count_searches(&t)).unwrap_or_default();
        ExportRecord {
            question: question.to_string(),
            trajectory: trajectory.to_string(),
            toolset: toolset.clone(),
            golden_answers: golds.to_vec(),
            reward: report.reward,
            em: report.em,
            f1: report.f1,
            searches,
        }
    }

    pub fn rescore(&self, mode: FormatMode) -> RewardReport {
        compute_reward(&self.trajectory, &self.golden_answers, &self.toolset, mode)
    }
}

pub fn export_rollouts(records: &[ExportRecord], path: &Path) -> Result<usize, EvalError> {
    let file = File::create(path).map_err(|e| storage(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| storage(path, e))?;
        w.write_all(b"\n").map_err(|e| storage(path, e))?;
    }
    w.flush().map_err(|e| storage(path, e))?;
    Ok(records.len())
}

pub fn import_rollouts(path: &Path) -> Result<Vec<ExportRecord>, EvalError> {
    let file = File::open(path).map_err(|e| storage(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| storage(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
