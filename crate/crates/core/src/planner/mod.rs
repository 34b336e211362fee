//! Explicit composition planning.
//!
//! A theme is embedded upstream; [`semantic_filter`] narrows the database to
//! the `n` most similar entries, [`assemble_prompt`] builds a chain-of-thought
//! request around them, an [`LvlmClient`] answers, and [`match_response`]
//! grounds the answer back to one candidate. [`plan_composition`] runs the
//! whole loop with retries and a top-1 fallback.

mod client;
mod manifest;
mod matching;
mod prompt;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ClientError, HttpClient, HttpConfig, LvlmClient, StubClient, StubFixture};
pub use manifest::{decode_embedding, encode_embedding, parse_index_manifest, read_index_manifest, write_index_manifest, ManifestRecord};
pub use matching::{match_response, token_overlap, tokens, MatchMethod, MatchOutcome};
pub use prompt::{
    assemble_prompt, disambiguation, ExemplarMode, ExemplarTriplet, Message, Part, Prompt, PromptError, Role,
    COT_SCAFFOLD, DEFAULT_INSTRUCTION,
};

/// Norm deviation tolerated (and corrected) on ingest.
pub const NORM_TOLERANCE: f64 = 1e-2;

/// Default size of the filtered candidate set.
pub const DEFAULT_CANDIDATES: usize = 32;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index is empty")]
    Empty,
    #[error("duplicate id {id:?} at entries {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("entry {id:?}: embedding has dimension {found}, expected {expected}")]
    Dimension { id: String, expected: usize, found: usize },
    #[error("entry {id:?}: embedding contains non-finite values")]
    NonFinite { id: String },
    #[error("entry {id:?}: embedding norm {norm} is not within {NORM_TOLERANCE} of 1")]
    Norm { id: String, norm: f64 },
    #[error("entry {id:?}: caption is empty")]
    EmptyCaption { id: String },
    #[error("entry at position {0}: id is empty")]
    EmptyId(usize),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("candidate count {n} outside 1..={size}")]
    CandidateCount { n: usize, size: usize },
    #[error("theme embedding has dimension {found}, index has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("theme embedding must be finite and non-zero")]
    ThemeEmbedding,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("endpoint unreachable after {attempts} attempt(s): {last}")]
    Unreachable { attempts: usize, last: ClientError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub caption: String,
    pub embedding: Vec<f64>,
}

/// Validated, immutable set of database entries with unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    entries: Vec<DatabaseEntry>,
    dim: usize,
    source: Option<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Validates `entries` and renormalizes near-unit embeddings.
pub fn build_index(mut entries: Vec<DatabaseEntry>, source: Option<String>) -> Result<EmbeddingIndex, IndexError> {
    let dim = entries.first().ok_or(IndexError::Empty)?.embedding.len();
    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        if e.id.is_empty() {
            return Err(IndexError::EmptyId(i));
        }
        if let Some(first) = seen.insert(&e.id, i) {
            return Err(IndexError::DuplicateId {
                id: e.id.clone(),
                first,
                second: i,
            });
        }
    }
    for e in &mut entries {
        if e.caption.trim().is_empty() {
            return Err(IndexError::EmptyCaption { id: e.id.clone() });
        }
        if e.embedding.len() != dim || dim == 0 {
            return Err(IndexError::Dimension {
                id: e.id.clone(),
                expected: dim,
                found: e.embedding.len(),
            });
        }
        if e.embedding.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite { id: e.id.clone() });
        }
        let n = norm(&e.embedding);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::Norm { id: e.id.clone(), norm: n });
        }
        e.embedding.iter_mut().for_each(|v| *v /= n);
    }
    Ok(EmbeddingIndex { entries, dim, source })
}

impl EmbeddingIndex {
    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Which embedding model produced the vectors, if recorded.
    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&DatabaseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// A filtered entry and its cosine similarity to the theme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub entry: &'a DatabaseEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub similarity: f64,
}

fn ranking(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.entry.id.cmp(&b.entry.id))
}

fn unit_theme(index: &EmbeddingIndex, theme: &[f64]) -> Result<Vec<f64>, PlanError> {
    if theme.len() != index.dim {
        return Err(PlanError::Dimension {
            expected: index.dim,
            found: theme.len(),
        });
    }
    let n = norm(theme);
    if !n.is_finite() || n == 0.0 {
        return Err(PlanError::ThemeEmbedding);
    }
    Ok(theme.iter().map(|v| v / n).collect())
}

/// The `n` entries most similar to `theme_embedding`, best first; equal
/// similarities are ordered by id. The theme vector is normalized, so any
/// non-zero direction is accepted.
pub fn semantic_filter<'a>(
    index: &'a EmbeddingIndex,
    theme_embedding: &[f64],
    n: usize,
) -> Result<Vec<Candidate<'a>>, PlanError> {
    if n == 0 || n > index.len() {
        return Err(PlanError::CandidateCount { n, size: index.len() });
    }
    let theme = unit_theme(index, theme_embedding)?;
    let mut scored: Vec<Candidate<'a>> = index
        .entries
        .iter()
        .map(|entry| Candidate {
            entry,
            similarity: entry.embedding.iter().zip(&theme).map(|(a, b)| a * b).sum(),
        })
        .collect();
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, ranking);
        scored.truncate(n);
    }
    scored.sort_unstable_by(ranking);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    /// Candidate set size; clamped to the index size.
    pub n: usize,
    pub exemplars: Vec<ExemplarTriplet>,
    pub exemplar_mode: ExemplarMode,
    /// Extra attempts after the first when the answer cannot be grounded or
    /// the endpoint fails.
    pub retries: usize,
    pub instruction: String,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_CANDIDATES,
            exemplars: Vec::new(),
            exemplar_mode: ExemplarMode::Text,
            retries: 2,
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub chosen: DatabaseEntry,
    /// 1-based position of `chosen` in `candidates`.
    pub rank: usize,
    pub candidates: Vec<ScoredId>,
    /// Last raw endpoint reply (the reasoning trace); empty if none arrived.
    pub response: String,
    pub method: MatchMethod,
    pub attempts: usize,
}

/// Filter, prompt, invoke and ground. An answer that matches no candidate is
/// retried with a disambiguation turn; if every attempt is unmatched the top
/// semantic candidate is returned with [`MatchMethod::Fallback`]. Only an
/// endpoint that never answers is an error.
pub fn plan_composition(
    theme: &str,
    theme_embedding: &[f64],
    index: &EmbeddingIndex,
    llm: &dyn LvlmClient,
    cfg: &PlanConfig,
) -> Result<PlanResult, PlanError> {
    let n = cfg.n.min(index.len());
    if n < cfg.n {
        log::debug!("candidate count {} clamped to index size {}", cfg.n, index.len());
    }
    let candidates = semantic_filter(index, theme_embedding, n)?;
    let base = assemble_prompt(theme, &cfg.exemplars, &candidates, &cfg.instruction, cfg.exemplar_mode)?;
    let scored: Vec<ScoredId> = candidates
        .iter()
        .map(|c| ScoredId {
            id: c.entry.id.clone(),
            similarity: c.similarity,
        })
        .collect();

    let mut prompt = base.clone();
    let mut last_response: Option<String> = None;
    let mut last_error = None;
    let attempts = cfg.retries + 1;
    for attempt in 1..=attempts {
        match llm.complete(&prompt) {
            Ok(text) => {
                if let Some(m) = match_response(&text, &candidates) {
                    return Ok(PlanResult {
                        chosen: candidates[m.position].entry.clone(),
                        rank: m.position + 1,
                        candidates: scored,
                        response: text,
                        method: m.method,
                        attempts: attempt,
                    });
                }
                log::info!("attempt {attempt}: response matched no candidate");
                prompt = base.clone();
                prompt.push(Message::text(Role::Assistant, text.clone()));
                prompt.push(Message::text(Role::User, disambiguation(candidates.len())));
                last_response = Some(text);
            }
            Err(e) => {
                log::warn!("attempt {attempt}: {e}");
                last_error = Some(e);
            }
        }
    }
    match last_response {
        Some(response) => Ok(PlanResult {
            chosen: candidates[0].entry.clone(),
            rank: 1,
            candidates: scored,
            response,
            method: MatchMethod::Fallback,
            attempts,
        }),
        None => Err(PlanError::Unreachable {
            attempts,
            last: last_error.expect("no response implies an error"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(id: &str, caption: &str, embedding: Vec<f64>) -> DatabaseEntry {
        DatabaseEntry {
            id: id.into(),
            image_path: format!("{id}.png").into(),
            caption: caption.into(),
            embedding,
        }
    }

    #[test]
    fn builds_and_renormalizes() {
        let idx = build_index(
            vec![
                entry("a", "x", vec![1.0, 0.0]),
                entry("b", "y", vec![0.0, 1.005]),
                entry("c", "z", vec![0.6, 0.8]),
            ],
            None,
        )
        .unwrap();
        assert_eq!(idx.len(), 3);
        assert!((norm(&idx.get("b").unwrap().embedding) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_entries() {
        let dup = build_index(vec![entry("a", "x", vec![1.0]), entry("a", "y", vec![1.0])], None);
        assert!(matches!(dup, Err(IndexError::DuplicateId { first: 0, second: 1, .. })));
        let dim = build_index(vec![entry("a", "x", vec![1.0]), entry("b", "y", vec![1.0, 0.0])], None);
        assert!(matches!(dim, Err(IndexError::Dimension { .. })));
        let nan = build_index(vec![entry("a", "x", vec![f64::NAN])], None);
        assert!(matches!(nan, Err(IndexError::NonFinite { .. })));
        let far = build_index(vec![entry("a", "x", vec![1.02])], None);
        assert!(matches!(far, Err(IndexError::Norm { .. })));
        let blank = build_index(vec![entry("a", "  ", vec![1.0])], None);
        assert!(matches!(blank, Err(IndexError::EmptyCaption { .. })));
        assert!(matches!(build_index(vec![], None), Err(IndexError::Empty)));
    }

    #[test]
    fn filter_ranks_and_breaks_ties_by_id() {
        let idx = build_index(
            vec![
                entry("d", "d", vec![0.6, 0.8]),
                entry("b", "b", vec![0.6, 0.8]),
                entry("a", "a", vec![1.0, 0.0]),
                entry("o", "o", vec![0.0, 1.0]),
            ],
            None,
        )
        .unwrap();
        let ids = |n| {
            semantic_filter(&idx, &[1.0, 0.0], n)
                .unwrap()
                .iter()
                .map(|c| c.entry.id.as_str())
                .collect::<Vec<_>>()
                .join("")
        };
        assert_eq!(ids(4), "abdo");
        assert_eq!(ids(3), "abd");
        assert_eq!(ids(2), "ab");
        let top = semantic_filter(&idx, &[1.0, 0.0], 1).unwrap();
        assert!((top[0].similarity - 1.0).abs() < 1e-12);
        assert!(semantic_filter(&idx, &[1.0, 0.0], 0).is_err());
        assert!(semantic_filter(&idx, &[1.0, 0.0], 5).is_err());
        assert!(semantic_filter(&idx, &[1.0], 1).is_err());
        assert!(semantic_filter(&idx, &[0.0, 0.0], 1).is_err());
    }
}
