//! Tag-delimited agent trajectories.
//!
//! A rollout is a flat sequence of `<think>`, `<tool_name>`, `<result>` and
//! `<answer>` blocks. This module parses complete rollouts, detects pending
//! tool calls in partial generations, renders a canonical form back out and
//! decomposes a trajectory into think/search rounds with their evidence.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const THINK_TAG: &str = "think";
pub const RESULT_TAG: &str = "result";
pub const ANSWER_TAG: &str = "answer";

/// Payload used when a refined evidence set or a tool result is empty.
pub const NO_EVIDENCE_SENTINEL: &str = "No relevant evidence found.";

/// Prefix of every tool result that reports a failure instead of evidence.
pub const ERROR_PREFIX: &str = "ERROR:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("malformed trajectory: unclosed <{tag}> at byte {offset}")]
    Unclosed { tag: String, offset: usize },
    #[error("malformed trajectory: stray </{tag}> at byte {offset}")]
    StrayClose { tag: String, offset: usize },
    #[error("malformed trajectory: tool <{tool}> is not in the declared toolset")]
    UnknownTool { tool: String },
    #[error("malformed trajectory: <{tool}> call is not followed by a result")]
    MissingResult { tool: String },
    #[error("malformed trajectory: {found} cannot follow {after}")]
    Alternation { after: String, found: String },
    #[error("malformed trajectory: more than one answer")]
    MultipleAnswers,
    #[error("malformed trajectory: content after the answer")]
    TrailingContent,
}

/// Set of tool identifiers available to an agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolSet(BTreeSet<String>);

impl ToolSet {
    pub fn new<I, S>(tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ToolSet(tools.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.0.contains(tool)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for ToolSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        ToolSet::new(iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Think,
    ToolCall,
    ToolResult,
    Answer,
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SegmentKind::Think => "think",
            SegmentKind::ToolCall => "tool call",
            SegmentKind::ToolResult => "result",
            SegmentKind::Answer => "answer",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Set for `ToolCall` segments only.
    pub tool_name: Option<String>,
    pub payload: String,
}

impl Segment {
    pub fn think(payload: impl Into<String>) -> Self {
        Segment { kind: SegmentKind::Think, tool_name: None, payload: payload.into() }
    }

    pub fn tool_call(tool: impl Into<String>, payload: impl Into<String>) -> Self {
        Segment { kind: SegmentKind::ToolCall, tool_name: Some(tool.into()), payload: payload.into() }
    }

    pub fn tool_result(payload: impl Into<String>) -> Self {
        Segment { kind: SegmentKind::ToolResult, tool_name: None, payload: payload.into() }
    }

    pub fn answer(payload: impl Into<String>) -> Self {
        Segment { kind: SegmentKind::Answer, tool_name: None, payload: payload.into() }
    }

    fn tag(&self) -> &str {
        match self.kind {
            SegmentKind::Think => THINK_TAG,
            SegmentKind::ToolResult => RESULT_TAG,
            SegmentKind::Answer => ANSWER_TAG,
            SegmentKind::ToolCall => self.tool_name.as_deref().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTrajectory {
    pub question: String,
    pub segments: Vec<Segment>,
    pub toolset: ToolSet,
}

impl ParsedTrajectory {
    pub fn answer(&self) -> Option<&str> {
        self.segments.iter().find(|s| s.kind == SegmentKind::Answer).map(|s| s.payload.as_str())
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (&str, &str)> {
        self.segments.iter().filter_map(|s| match (&s.kind, &s.tool_name) {
            (SegmentKind::ToolCall, Some(name)) => Some((name.as_str(), s.payload.as_str())),
            _ => None,
        })
    }

    pub fn count(&self, kind: SegmentKind) -> usize {
        self.segments.iter().filter(|s| s.kind == kind).count()
    }
}

/// Knowledge source an evidence item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceSource {
    LocalChunk,
    LocalGraph,
    LocalAdjacent,
    WebSearch,
    WebPage,
}

impl EvidenceSource {
    pub const ALL: [EvidenceSource; 5] = [
        EvidenceSource::LocalChunk,
        EvidenceSource::LocalGraph,
        EvidenceSource::LocalAdjacent,
        EvidenceSource::WebSearch,
        EvidenceSource::WebPage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvidenceSource::LocalChunk => "Local Chunk Corpus",
            EvidenceSource::LocalGraph => "Local Knowledge Graph",
            EvidenceSource::LocalAdjacent => "Adjacent Passages",
            EvidenceSource::WebSearch => "Search Engine",
            EvidenceSource::WebPage => "Web Page",
        }
    }

    pub fn is_local(self) -> bool {
        matches!(self, EvidenceSource::LocalChunk | EvidenceSource::LocalGraph | EvidenceSource::LocalAdjacent)
    }

    /// Source assumed for unlabeled evidence returned by `tool`.
    pub fn default_for_tool(tool: &str) -> EvidenceSource {
        match tool {
            "graph_search" => EvidenceSource::LocalGraph,
            "get_adjacent_passages" => EvidenceSource::LocalAdjacent,
            "web_search" => EvidenceSource::WebSearch,
            "browse_url" | "web_search_agent" => EvidenceSource::WebPage,
            _ => EvidenceSource::LocalChunk,
        }
    }

    /// Splits `"<Label>: rest"` into the source and the rest.
    fn strip_label(block: &str) -> Option<(EvidenceSource, &str)> {
        EvidenceSource::ALL.iter().find_map(|&source| {
            let rest = block.strip_prefix(source.label())?.strip_prefix(':')?;
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                Some((source, rest.trim()))
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub text: String,
    pub source: EvidenceSource,
    pub round_index: usize,
    /// 1-based position inside the round's result.
    pub rank: usize,
}

impl Evidence {
    /// One evidence line in the shared result format.
    pub fn to_line(&self) -> String {
        format_evidence_line(self.source, &self.text)
    }
}

/// Formats one evidence item. Blank lines inside `text` are collapsed so that
/// the item survives re-splitting.
pub fn format_evidence_line(source: EvidenceSource, text: &str) -> String {
    let body: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()).collect();
    format!("{}: {}", source.label(), body.join("\n"))
}

/// Joins evidence lines with the blank-line separator used inside `<result>`.
pub fn join_evidence_lines<I, S>(lines: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for line in lines {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(line.as_ref());
    }
    out
}

/// Splits a tool result payload into `(source, text)` evidence items.
///
/// Blocks are separated by blank lines. A block starting with a known source
/// label opens a new item; an unlabeled block continues the previous labeled
/// item, or becomes an item of the tool's default source when nothing precedes
/// it. Error payloads and the empty-evidence sentinel carry no evidence.
pub fn split_evidence(payload: &str, tool: &str) -> Vec<(EvidenceSource, String)> {
    let trimmed = payload.trim();
    if trimmed.is_empty() || trimmed.starts_with(ERROR_PREFIX) || trimmed == NO_EVIDENCE_SENTINEL {
        return Vec::new();
    }
    let mut items: Vec<(EvidenceSource, String)> = Vec::new();
    let mut labeled_open = false;
    for block in blocks(trimmed) {
        if let Some((source, rest)) = EvidenceSource::strip_label(block) {
            items.push((source, rest.to_string()));
            labeled_open = true;
        } else if labeled_open {
            let last = items.last_mut().expect("labeled item is open");
            last.1.push_str("\n\n");
            last.1.push_str(block);
        } else {
            items.push((EvidenceSource::default_for_tool(tool), block.to_string()));
        }
    }
    items
}

fn blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if blank {
            if let Some(s) = start.take() {
                out.push(text[s..end].trim());
            }
        } else {
            if start.is_none() {
                start = Some(offset);
            }
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(text[s..end].trim());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round_index: usize,
    pub think: String,
    pub query: String,
    pub tool_name: String,
    pub evidence: Vec<Evidence>,
    /// Raw result payload.
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub rounds: Vec<Round>,
    pub final_think: String,
    pub conclusion: Option<String>,
}

impl RoundView {
    pub fn evidence(&self) -> impl Iterator<Item = &Evidence> {
        self.rounds.iter().flat_map(|r| r.evidence.iter())
    }

    pub fn evidence_count(&self) -> usize {
        self.rounds.iter().map(|r| r.evidence.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Scanning

#[derive(Debug)]
enum Token<'a> {
    Block { name: &'a str, payload: &'a str },
    Incomplete,
}

#[derive(Clone, Copy, PartialEq)]
enum ScanMode {
    /// Complete text; unbalanced known tags are errors and any identifier tag
    /// with a matching close is treated as a call.
    Strict,
    /// Prefix of a generation; stops at the first unterminated block.
    Prefix,
}

fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_reserved(name: &str) -> bool {
    name == THINK_TAG || name == RESULT_TAG || name == ANSWER_TAG
}

/// Top-level scan. Text between blocks (other than the preamble) is ignored.
fn scan<'a>(text: &'a str, toolset: &ToolSet, mode: ScanMode) -> Result<(Vec<Token<'a>>, usize), GrammarError> {
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut preamble_end = text.len();
    while let Some(rel) = text[pos..].find('<') {
        let lt = pos + rel;
        let Some(gt_rel) = text[lt..].find('>') else { break };
        let inner = &text[lt + 1..lt + gt_rel];
        let after = lt + gt_rel + 1;

        if let Some(closing) = inner.strip_prefix('/') {
            if mode == ScanMode::Strict && (is_reserved(closing) || toolset.contains(closing)) {
                return Err(GrammarError::StrayClose { tag: closing.to_string(), offset: lt });
            }
            pos = lt + 1;
            continue;
        }
        if !is_ident(inner) {
            pos = lt + 1;
            continue;
        }
        let known = is_reserved(inner) || toolset.contains(inner);
        let close = format!("</{inner}>");
        match text[after..].find(&close) {
            Some(close_rel) => {
                if !known && mode == ScanMode::Prefix {
                    pos = lt + 1;
                    continue;
                }
                if !known {
                    return Err(GrammarError::UnknownTool { tool: inner.to_string() });
                }
                if tokens.is_empty() {
                    preamble_end = lt;
                }
                tokens.push(Token::Block { name: inner, payload: &text[after..after + close_rel] });
                pos = after + close_rel + close.len();
            }
            None if known => {
                if mode == ScanMode::Strict {
                    return Err(GrammarError::Unclosed { tag: inner.to_string(), offset: lt });
                }
                tokens.push(Token::Incomplete);
                break;
            }
            None => pos = lt + 1,
        }
    }
    if tokens.is_empty() {
        preamble_end = text.len();
    }
    Ok((tokens, preamble_end))
}

fn question_from_preamble(preamble: &str) -> String {
    preamble
        .lines()
        .find_map(|line| line.trim().strip_prefix("Question:"))
        .map(|q| q.trim().to_string())
        .unwrap_or_default()
}

/// Parses a complete trajectory.
///
/// A leading `Question: ...` line before the first block is taken as the
/// question; any other text between blocks is ignored.
pub fn parse(text: &str, toolset: &ToolSet) -> Result<ParsedTrajectory, GrammarError> {
    let (tokens, preamble_end) = scan(text, toolset, ScanMode::Strict)?;
    let mut segments = Vec::with_capacity(tokens.len());
    for token in tokens {
        let Token::Block { name, payload, .. } = token else { continue };
        let segment = match name {
            THINK_TAG => Segment::think(payload),
            RESULT_TAG => Segment::tool_result(payload),
            ANSWER_TAG => Segment::answer(payload),
            tool => Segment::tool_call(tool, payload),
        };
        segments.push(segment);
    }
    check_alternation(&segments)?;
    Ok(ParsedTrajectory { question: question_from_preamble(&text[..preamble_end]), segments, toolset: toolset.clone() })
}

fn check_alternation(segments: &[Segment]) -> Result<(), GrammarError> {
    use SegmentKind::*;
    let mut prev: Option<&Segment> = None;
    for seg in segments {
        let ok = match (prev.map(|p| p.kind), seg.kind) {
            (Some(Answer), Answer) => return Err(GrammarError::MultipleAnswers),
            (Some(Answer), _) => {
                if segments.iter().filter(|s| s.kind == Answer).count() > 1 {
                    return Err(GrammarError::MultipleAnswers);
                }
                return Err(GrammarError::TrailingContent);
            }
            (Some(ToolCall), ToolResult) => true,
            (Some(ToolCall), _) => {
                return Err(GrammarError::MissingResult {
                    tool: prev.and_then(|p| p.tool_name.clone()).unwrap_or_default(),
                })
            }
            (None | Some(ToolResult), Think | ToolCall | Answer) => true,
            (Some(Think), ToolCall | Answer) => true,
            _ => false,
        };
        if !ok {
            return Err(GrammarError::Alternation {
                after: prev.map_or_else(|| "start".to_string(), |p| p.kind.to_string()),
                found: seg.kind.to_string(),
            });
        }
        prev = Some(seg);
    }
    if let Some(last) = prev {
        if last.kind == ToolCall {
            return Err(GrammarError::MissingResult { tool: last.tool_name.clone().unwrap_or_default() });
        }
    }
    Ok(())
}

/// Returns the most recent completed tool call that has no result yet.
pub fn detect_pending_call(stream: &str, toolset: &ToolSet) -> Option<(String, String)> {
    let (tokens, _) = scan(stream, toolset, ScanMode::Prefix).ok()?;
    let mut pending = None;
    for token in tokens {
        match token {
            Token::Block { name, payload, .. } => {
                pending = if is_reserved(name) { None } else { Some((name.to_string(), payload.to_string())) };
            }
            Token::Incomplete => return None,
        }
    }
    pending
}

/// Canonical text form: an optional `Question:` line followed by the blocks
/// with nothing in between.
pub fn render(trajectory: &ParsedTrajectory) -> String {
    let mut out = String::new();
    if !trajectory.question.is_empty() {
        out.push_str("Question: ");
        out.push_str(&trajectory.question);
        out.push('\n');
    }
    for seg in &trajectory.segments {
        render_segment(&mut out, seg);
    }
    out
}

pub(crate) fn render_segment(out: &mut String, seg: &Segment) {
    let tag = seg.tag();
    out.push('<');
    out.push_str(tag);
    out.push('>');
    out.push_str(&seg.payload);
    out.push_str("</");
    out.push_str(tag);
    out.push('>');
}

/// Decomposes a trajectory into think/search rounds.
pub fn to_rounds(trajectory: &ParsedTrajectory) -> RoundView {
    let mut rounds = Vec::new();
    let mut pending_think = String::new();
    let mut pending_call: Option<(&str, &str)> = None;
    let mut conclusion = None;
    for seg in &trajectory.segments {
        match seg.kind {
            SegmentKind::Think => pending_think = seg.payload.clone(),
            SegmentKind::ToolCall => {
                pending_call = Some((seg.tool_name.as_deref().unwrap_or_default(), &seg.payload));
            }
            SegmentKind::ToolResult => {
                if let Some((tool, query)) = pending_call.take() {
                    let round_index = rounds.len() + 1;
                    let evidence = split_evidence(&seg.payload, tool)
                        .into_iter()
                        .enumerate()
                        .map(|(i, (source, text))| Evidence { text, source, round_index, rank: i + 1 })
                        .collect();
                    rounds.push(Round {
                        round_index,
                        think: std::mem::take(&mut pending_think),
                        query: query.trim().to_string(),
                        tool_name: tool.to_string(),
                        evidence,
                        result: seg.payload.clone(),
                    });
                }
            }
            SegmentKind::Answer => conclusion = Some(seg.payload.trim().to_string()),
        }
    }
    RoundView { rounds, final_think: pending_think, conclusion }
}
