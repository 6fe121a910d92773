//! Response formats for each role and their parsers.
//!
//! Completions are keyword-prefixed and optionally fenced:
//!
//! | role        | reply                                                         |
//! |-------------|---------------------------------------------------------------|
//! | extractor   | `APPROACH: ..` / `CHECKLIST: ..` / `PITFALL: ..` lines or `NONE` |
//! | synthesizer | same as extractor                                             |
//! | verifier    | `MATCH <n>` / `NO_MATCH`, or `PASS` / `FAIL` + fenced revision  |
//! | selector    | `RANK: i,j,k` (0-based path indices)                          |
//! | generator   | fenced block (` ```model ` / ` ```python `)                   |
//! | fixer       | fenced block                                                  |

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::{Knowledge, Tier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed completion: {0}")]
pub struct FormatError(pub String);

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError(msg.into())
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?ms)^[ \t]*```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)^[ \t]*```[ \t]*$").unwrap());

/// A fenced block: its info-string label and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fenced {
    pub label: String,
    pub body: String,
}

pub fn fenced_blocks(raw: &str) -> Vec<Fenced> {
    FENCE
        .captures_iter(raw)
        .map(|c| Fenced {
            label: c[1].to_ascii_lowercase(),
            body: c[2].trim_end_matches(['\n', '\r']).to_string(),
        })
        .collect()
}

pub fn fence(label: &str, body: &str) -> String {
    format!("```{label}\n{}\n```", body.trim_end_matches('\n'))
}

/// Renders knowledge as keyword lines (`NONE` when empty).
pub fn render_knowledge(k: &Knowledge) -> String {
    let mut lines = Vec::new();
    for tier in Tier::ALL {
        for item in k.tier(tier) {
            lines.push(format!("{}: {}", tier.keyword(), one_line(item)));
        }
    }
    if lines.is_empty() {
        "NONE".to_string()
    } else {
        lines.join("\n")
    }
}

/// Renders one tier as a bulleted list, items verbatim.
pub fn render_tier(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .map(|i| format!("- {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses keyword-line knowledge. Reads the first fenced block if present,
/// otherwise the whole reply. Blank items are dropped.
pub fn parse_knowledge(raw: &str) -> Result<Knowledge, FormatError> {
    let blocks = fenced_blocks(raw);
    let body = blocks.first().map(|b| b.body.as_str()).unwrap_or(raw);
    let mut k = Knowledge::default();
    let mut recognized = false;
    for line in body.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        if line.eq_ignore_ascii_case("NONE") {
            recognized = true;
            continue;
        }
        for tier in Tier::ALL {
            if let Some(rest) = strip_keyword(line, tier.keyword()) {
                recognized = true;
                let item = rest.trim();
                if !item.is_empty() && !k.tier(tier).iter().any(|x| x == item) {
                    k.tier_mut(tier).push(item.to_string());
                }
            }
        }
    }
    if recognized {
        Ok(k)
    } else {
        Err(malformed("no APPROACH/CHECKLIST/PITFALL lines or NONE"))
    }
}

fn strip_keyword<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let head = line.get(..keyword.len())?;
    if head.eq_ignore_ascii_case(keyword) {
        line[keyword.len()..].strip_prefix(':')
    } else {
        None
    }
}

/// Verifier verdict for cluster assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchVerdict {
    /// 1-based position in the candidate list.
    Match(usize),
    NoMatch,
}

/// Parses `MATCH <n>` / `NO_MATCH`. A bare `MATCH` is accepted only when
/// there is a single candidate.
pub fn parse_match(raw: &str, candidates: usize) -> Result<MatchVerdict, FormatError> {
    let token_line = first_keyword_line(raw).ok_or_else(|| malformed("empty verifier reply"))?;
    let mut parts = token_line.split_whitespace();
    let head = parts.next().unwrap_or_default().to_ascii_uppercase();
    match head.trim_end_matches([':', '.']) {
        "NO_MATCH" | "NOMATCH" => Ok(MatchVerdict::NoMatch),
        "MATCH" => match parts.next() {
            None if candidates == 1 => Ok(MatchVerdict::Match(1)),
            None => Err(malformed("MATCH without a candidate number")),
            Some(n) => {
                let n: usize = n
                    .trim_start_matches('#')
                    .trim_end_matches(['.', ','])
                    .parse()
                    .map_err(|_| malformed(format!("bad candidate number {n:?}")))?;
                if (1..=candidates).contains(&n) {
                    Ok(MatchVerdict::Match(n))
                } else {
                    Err(malformed(format!("candidate {n} out of range 1..={candidates}")))
                }
            }
        },
        other => Err(malformed(format!("expected MATCH or NO_MATCH, got {other:?}"))),
    }
}

/// Verifier verdict for a model/code check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckVerdict {
    Pass,
    /// Failed, with the verifier's revised artifact.
    Revise(String),
}

/// Parses `PASS` or `FAIL` followed by a fenced revision.
pub fn parse_check(raw: &str) -> Result<CheckVerdict, FormatError> {
    let line = first_keyword_line(raw).ok_or_else(|| malformed("empty verifier reply"))?;
    let head = line
        .split_whitespace()
        .next()
        .unwrap_or_default()
        .trim_end_matches([':', '.'])
        .to_ascii_uppercase();
    match head.as_str() {
        "PASS" => Ok(CheckVerdict::Pass),
        "FAIL" => {
            let revision = fenced_blocks(raw)
                .into_iter()
                .map(|b| b.body)
                .find(|b| !b.trim().is_empty())
                .ok_or_else(|| malformed("FAIL without a fenced revision"))?;
            Ok(CheckVerdict::Revise(revision))
        }
        other => Err(malformed(format!("expected PASS or FAIL, got {other:?}"))),
    }
}

fn first_keyword_line(raw: &str) -> Option<&str> {
    raw.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with("```"))
}

/// Parses `RANK: i,j,...` into distinct 0-based indices below `pool`.
pub fn parse_ranking(raw: &str, pool: usize) -> Result<Vec<usize>, FormatError> {
    let line = raw
        .lines()
        .map(str::trim)
        .find_map(|l| strip_keyword(l, "RANK"))
        .ok_or_else(|| malformed("no RANK: line"))?;
    let mut order = Vec::new();
    for tok in line.split([',', ' ']).filter(|t| !t.trim().is_empty()) {
        let idx: usize = tok
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad rank index {tok:?}")))?;
        if idx >= pool {
            return Err(malformed(format!("rank index {idx} out of range for {pool} paths")));
        }
        if order.contains(&idx) {
            return Err(malformed(format!("rank index {idx} repeated")));
        }
        order.push(idx);
    }
    if order.is_empty() {
        return Err(malformed("empty ranking"));
    }
    Ok(order)
}

/// Returns the first non-empty fenced block body.
pub fn parse_block(raw: &str) -> Result<String, FormatError> {
    fenced_blocks(raw)
        .into_iter()
        .map(|b| b.body)
        .find(|b| !b.trim().is_empty())
        .ok_or_else(|| malformed("no non-empty fenced block"))
}

const MODEL_LABELS: &[&str] = &["model", "modeling", "math", "formulation"];
const CODE_LABELS: &[&str] = &["python", "py", "code"];

/// Finds labeled model and code sections in a solution.
pub fn labeled_sections(raw: &str) -> (Option<String>, Option<String>) {
    let blocks = fenced_blocks(raw);
    let pick = |labels: &[&str]| {
        blocks
            .iter()
            .find(|b| labels.contains(&b.label.as_str()) && !b.body.trim().is_empty())
            .map(|b| b.body.clone())
    };
    (pick(MODEL_LABELS), pick(CODE_LABELS))
}
