//! Line-delimited index manifest. Embeddings travel as base64 of
//! little-endian `f32`s.

use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{build_index, DatabaseEntry, EmbeddingIndex, IndexError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub caption: String,
    pub embedding: String,
    pub dim: usize,
    /// Embedding model name; all records in a manifest must agree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub fn encode_embedding(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_embedding(s: &str, dim: usize) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s.trim()).map_err(|e| format!("embedding is not base64: {e}"))?;
    if bytes.len() != dim * 4 {
        return Err(format!("embedding has {} bytes, dim {dim} needs {}", bytes.len(), dim * 4));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Parses and validates a manifest. Relative image paths are resolved
/// against `base` when given.
pub fn parse_index_manifest(text: &str, base: Option<&Path>) -> Result<EmbeddingIndex, IndexError> {
    let mut entries = Vec::new();
    let mut source: Option<(String, usize)> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| IndexError::Manifest { line: line_no, message };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let embedding = decode_embedding(&rec.embedding, rec.dim).map_err(bad)?;
        match (&source, rec.source) {
            (Some((s, first)), Some(r)) if *s != r => {
                return Err(bad(format!("embedding source {r:?} differs from {s:?} on line {first}")));
            }
            (None, Some(r)) => source = Some((r, line_no)),
            _ => {}
        }
        let image_path = match base {
            Some(b) if rec.image_path.is_relative() => b.join(rec.image_path),
            _ => rec.image_path,
        };
        entries.push(DatabaseEntry {
            id: rec.id,
            image_path,
            caption: rec.caption,
            embedding,
        });
    }
    build_index(entries, source.map(|(s, _)| s))
}

/// Reads a manifest; relative image paths resolve against its directory.
pub fn read_index_manifest(path: &Path) -> Result<EmbeddingIndex, IndexError> {
    let text = std::fs::read_to_string(path).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_index_manifest(&text, path.parent())
}

pub fn write_index_manifest<W: Write>(index: &EmbeddingIndex, mut out: W) -> std::io::Result<()> {
    for e in index.entries() {
        let rec = ManifestRecord {
            id: e.id.clone(),
            image_path: e.image_path.clone(),
            caption: e.caption.clone(),
            embedding: encode_embedding(&e.embedding),
            dim: e.embedding.len(),
            source: index.source().map(str::to_string),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
