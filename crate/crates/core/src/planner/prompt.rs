use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Candidate;

pub const DEFAULT_INSTRUCTION: &str = "You are a master of aesthetic composition. I will provide you with a set of \
candidate composition images and a target theme. Your task is to plan a suitable composition reference image \
based on the theme. The composition reference follows a process similar to the following: \
<T_theme, I_ref, I_res>.";

pub const COT_SCAFFOLD: &str = "Let's think step by step:\n\
1. Define candidate compositions and color schemes for the given theme.\n\
2. Plan the most suitable composition reference based on the theme, composition, and color scheme. \
(This avoids reducing the planning process to simple semantic matching.)";

const ANSWER_FORMAT: &str = "End your reply with a final line of the form \"Answer: Image <number>\".";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("exemplar {index}: file {path} does not exist")]
    MissingFile { index: usize, path: PathBuf },
    #[error("exemplar {index}: text-only prompts need reference and result captions")]
    MissingCaption { index: usize },
}

/// A worked example `(theme, reference, result)`. Captions stand in for the
/// images when the endpoint only takes text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarTriplet {
    pub theme: String,
    pub reference: PathBuf,
    pub result: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_caption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarMode {
    /// Exemplar images are attached.
    Images,
    /// Exemplars are described by their captions.
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![Part::Text { text: text.into() }],
        }
    }
}

/// Role-tagged conversation sent to the endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<Message>,
}

impl Prompt {
    pub fn push(&mut self, m: Message) {
        self.messages.push(m);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prompt serializes")
    }

    /// Plain-text rendering; images appear as `[image: path]`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let _ = writeln!(out, "## {:?}", m.role);
            for p in &m.content {
                match p {
                    Part::Text { text } => {
                        let _ = writeln!(out, "{text}");
                    }
                    Part::Image { path } => {
                        let _ = writeln!(out, "[image: {}]", path.display());
                    }
                }
            }
        }
        out
    }

    pub fn images(&self) -> impl Iterator<Item = &PathBuf> {
        self.messages.iter().flat_map(|m| &m.content).filter_map(|p| match p {
            Part::Image { path } => Some(path),
            Part::Text { .. } => None,
        })
    }
}

/// Follow-up turn asking for an unambiguous pick.
pub fn disambiguation(n: usize) -> String {
    format!(
        "Your previous reply did not identify one of the candidates. Reply with a single line \
         \"Answer: Image <number>\" where <number> is between 1 and {n}."
    )
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Instruction as the system turn, then one user turn holding exemplars,
/// numbered candidates, the theme and the reasoning scaffold.
pub fn assemble_prompt(
    theme: &str,
    exemplars: &[ExemplarTriplet],
    candidates: &[Candidate<'_>],
    instruction: &str,
    mode: ExemplarMode,
) -> Result<Prompt, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::NoCandidates);
    }
    let mut parts = Vec::new();
    let mut text = String::new();
    if !exemplars.is_empty() {
        text.push_str("Examples of <theme, composition reference, result>:\n");
    }
    for (i, ex) in exemplars.iter().enumerate() {
        let index = i + 1;
        let _ = writeln!(text, "Example {index}\nTheme: {}", one_line(&ex.theme));
        match mode {
            ExemplarMode::Text => {
                let (Some(r), Some(s)) = (&ex.reference_caption, &ex.result_caption) else {
                    return Err(PromptError::MissingCaption { index });
                };
                let _ = writeln!(text, "Reference: {}\nResult: {}", one_line(r), one_line(s));
            }
            ExemplarMode::Images => {
                for path in [&ex.reference, &ex.result] {
                    if !path.is_file() {
                        return Err(PromptError::MissingFile {
                            index,
                            path: path.clone(),
                        });
                    }
                }
                text.push_str("Reference:");
                parts.push(Part::Text {
                    text: std::mem::take(&mut text),
                });
                parts.push(Part::Image {
                    path: ex.reference.clone(),
                });
                parts.push(Part::Text { text: "Result:".into() });
                parts.push(Part::Image { path: ex.result.clone() });
            }
        }
    }
    if !text.is_empty() {
        text.push('\n');
    }
    text.push_str("Candidate composition images:\n");
    for (i, c) in candidates.iter().enumerate() {
        let _ = writeln!(text, "Image {} (id {}): {}", i + 1, c.entry.id, one_line(&c.entry.caption));
    }
    let _ = write!(text, "\nTheme: {}\n\n{COT_SCAFFOLD}\n{ANSWER_FORMAT}", one_line(theme));
    parts.push(Part::Text { text });

    Ok(Prompt {
        messages: vec![
            Message::text(Role::System, instruction),
            Message {
                role: Role::User,
                content: parts,
            },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::DatabaseEntry;

    fn entries(n: usize) -> Vec<DatabaseEntry> {
        (0..n)
            .map(|i| DatabaseEntry {
                id: format!("e{i:02}"),
                image_path: format!("e{i}.png").into(),
                caption: format!("caption number {i}"),
                embedding: vec![1.0],
            })
            .collect()
    }

    fn cands(e: &[DatabaseEntry]) -> Vec<Candidate<'_>> {
        e.iter().map(|entry| Candidate { entry, similarity: 0.5 }).collect()
    }

    #[test]
    fn layout_and_numbering() {
        let e = entries(32);
        let p = assemble_prompt("misty harbor", &[], &cands(&e), DEFAULT_INSTRUCTION, ExemplarMode::Text).unwrap();
        let text = p.render_text();
        for i in 1..=32 {
            assert!(text.contains(&format!("Image {i} (id e{:02}): caption number {}\n", i - 1, i - 1)));
        }
        assert!(!text.contains("Image 33 "));
        assert!(text.contains("Define candidate compositions"));
        assert!(text.contains("Plan the most suitable"));
        let theme_at = text.find("Theme: misty harbor").unwrap();
        assert!(text.find("Image 32").unwrap() < theme_at);
        assert!(theme_at < text.find("Let's think step by step").unwrap());
        assert_eq!(p.messages[0].role, Role::System);
    }

    #[test]
    fn deterministic() {
        let e = entries(5);
        let a = assemble_prompt("t", &[], &cands(&e), "i", ExemplarMode::Text).unwrap();
        let b = assemble_prompt("t", &[], &cands(&e), "i", ExemplarMode::Text).unwrap();
        assert_eq!(a.to_json().as_bytes(), b.to_json().as_bytes());
    }

    #[test]
    fn exemplar_modes() {
        let dir = tempfile::tempdir().unwrap();
        let (r, s) = (dir.path().join("r.png"), dir.path().join("s.png"));
        std::fs::write(&r, b"x").unwrap();
        std::fs::write(&s, b"x").unwrap();
        let mut ex = ExemplarTriplet {
            theme: "autumn road".into(),
            reference: r.clone(),
            result: s.clone(),
            reference_caption: None,
            result_caption: None,
        };
        let e = entries(2);
        let err = assemble_prompt("t", &[ex.clone()], &cands(&e), "i", ExemplarMode::Text).unwrap_err();
        assert_eq!(err, PromptError::MissingCaption { index: 1 });
        let p = assemble_prompt("t", &[ex.clone()], &cands(&e), "i", ExemplarMode::Images).unwrap();
        assert_eq!(p.images().collect::<Vec<_>>(), vec![&r, &s]);

        ex.reference_caption = Some("a road".into());
        ex.result_caption = Some("a golden road".into());
        let p = assemble_prompt("t", &[ex.clone()], &cands(&e), "i", ExemplarMode::Text).unwrap();
        assert_eq!(p.images().count(), 0);
        assert!(p.render_text().contains("Theme: autumn road\nReference: a road\nResult: a golden road"));

        ex.result = dir.path().join("gone.png");
        let err = assemble_prompt("t", &[ex], &cands(&e), "i", ExemplarMode::Images).unwrap_err();
        assert!(matches!(err, PromptError::MissingFile { index: 1, .. }));
        assert_eq!(
            assemble_prompt("t", &[], &[], "i", ExemplarMode::Text).unwrap_err(),
            PromptError::NoCandidates
        );
    }
}
