use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Candidate;

/// Minimum token overlap for a fuzzy match.
pub const FUZZY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMethod {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "fuzzy")]
    Fuzzy,
    /// Nothing matched; the top semantic candidate was taken.
    #[serde(rename = "fuzzy-fallback")]
    Fallback,
}

impl MatchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMethod::Exact => "exact",
            MatchMethod::Fuzzy => "fuzzy",
            MatchMethod::Fallback => "fuzzy-fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    /// Index into the candidate list.
    pub position: usize,
    pub method: MatchMethod,
    /// 1 for exact matches, the token overlap otherwise.
    pub score: f64,
}

/// Case-folded alphanumeric tokens.
pub fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of the caption's tokens present in the response.
pub fn token_overlap(response: &BTreeSet<String>, caption: &BTreeSet<String>) -> f64 {
    if caption.is_empty() {
        return 0.0;
    }
    caption.intersection(response).count() as f64 / caption.len() as f64
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:image|candidate|option)\s*(?:#|no\.?|number)?\s*(\d+)\b").expect("valid regex"))
}

fn bounded(hay: &str, start: usize, end: usize) -> bool {
    let before = hay[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
    let after = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before && after
}

/// Grounds an endpoint reply to one candidate.
///
/// Exact references are a numbered mention ("Image 3") or the full caption
/// (case and whitespace folded). With several, the one appearing last wins,
/// since replies reason first and answer at the end; at the same position
/// the longer mention wins, then the better-ranked candidate. Otherwise the
/// candidate with the largest token overlap wins if it reaches
/// [`FUZZY_THRESHOLD`]. `None` means no match.
pub fn match_response(text: &str, candidates: &[Candidate<'_>]) -> Option<MatchOutcome> {
    let hay = normalize(text);
    // (start, length, position)
    let mut best: Option<(usize, usize, usize)> = None;
    let mut offer = |hit: (usize, usize, usize)| {
        let better = match best {
            None => true,
            Some(b) => (hit.0, hit.1, std::cmp::Reverse(hit.2)) > (b.0, b.1, std::cmp::Reverse(b.2)),
        };
        if better {
            best = Some(hit);
        }
    };
    for cap in number_pattern().captures_iter(&hay) {
        let whole = cap.get(0).expect("group 0");
        if let Ok(k) = cap[1].parse::<usize>() {
            if (1..=candidates.len()).contains(&k) {
                offer((whole.start(), whole.len(), k - 1));
            }
        }
    }
    for (pos, c) in candidates.iter().enumerate() {
        let caption = normalize(&c.entry.caption);
        if caption.is_empty() {
            continue;
        }
        for (start, m) in hay.match_indices(&caption) {
            if bounded(&hay, start, start + m.len()) {
                offer((start, m.len(), pos));
            }
        }
    }
    if let Some((_, _, position)) = best {
        return Some(MatchOutcome {
            position,
            method: MatchMethod::Exact,
            score: 1.0,
        });
    }

    let reply = tokens(text);
    let mut fuzzy: Option<(usize, f64)> = None;
    for (pos, c) in candidates.iter().enumerate() {
        let score = token_overlap(&reply, &tokens(&c.entry.caption));
        if fuzzy.is_none_or(|(_, s)| score > s) {
            fuzzy = Some((pos, score));
        }
    }
    fuzzy
        .filter(|&(_, s)| s >= FUZZY_THRESHOLD)
        .map(|(position, score)| MatchOutcome {
            position,
            method: MatchMethod::Fuzzy,
            score,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::DatabaseEntry;

    fn entries(captions: &[&str]) -> Vec<DatabaseEntry> {
        captions
            .iter()
            .enumerate()
            .map(|(i, c)| DatabaseEntry {
                id: format!("id{i}"),
                image_path: "x.png".into(),
                caption: c.to_string(),
                embedding: vec![1.0],
            })
            .collect()
    }

    fn cands(e: &[DatabaseEntry]) -> Vec<Candidate<'_>> {
        e.iter().map(|entry| Candidate { entry, similarity: 0.0 }).collect()
    }

    const CAPTIONS: [&str; 4] = [
        "a red barn in a snowy field",
        "city skyline at night",
        "a misty pier at dawn",
        "sunflowers under a blue sky",
    ];

    #[test]
    fn numbered_mention() {
        let e = entries(&CAPTIONS);
        let m = match_response("Image 3: a misty pier at dawn", &cands(&e)).unwrap();
        assert_eq!((m.position, m.method), (2, MatchMethod::Exact));
        let m = match_response("Image 2 is busy. Answer: IMAGE 4", &cands(&e)).unwrap();
        assert_eq!(m.position, 3);
        // Out-of-range numbers are ignored.
        assert!(match_response("Image 9", &cands(&e)).is_none());
    }

    #[test]
    fn caption_mention_needs_word_boundaries() {
        let e = entries(&["red", "a misty pier at dawn"]);
        let m = match_response("I considered it; A   Misty Pier at dawn fits.", &cands(&e)).unwrap();
        assert_eq!((m.position, m.method), (1, MatchMethod::Exact));
    }

    #[test]
    fn fuzzy_and_none() {
        let e = entries(&CAPTIONS);
        // Caption minus the stopword "a": 5 of 6 tokens.
        let m = match_response("red barn in snowy field", &cands(&e)).unwrap();
        assert_eq!((m.position, m.method), (0, MatchMethod::Fuzzy));
        assert!((m.score - 5.0 / 6.0).abs() < 1e-12);
        assert!(match_response("none of these fit", &cands(&e)).is_none());
    }

    #[test]
    fn serialized_names() {
        assert_eq!(serde_json::to_string(&MatchMethod::Fallback).unwrap(), "\"fuzzy-fallback\"");
        assert_eq!(MatchMethod::Fuzzy.as_str(), "fuzzy");
    }
}
