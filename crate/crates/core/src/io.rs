//! JSONL readers and writers for the corpus-facing file formats.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameAnnotation, LexicalUnit, Span, TokenizedSentence};

/// Parse one value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::format("JSONL", format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(&mut w, items).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One compact JSON value per line.
pub fn write_jsonl_to<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Seed-corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    pub frame: String,
    pub lexical_unit: String,
    pub trigger: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_order: Option<u64>,
}

impl SeedRow {
    /// `line` is 1-based and names the seed when `id` is absent.
    pub fn into_annotation(self, line: usize) -> Result<FrameAnnotation> {
        let sentence = match self.tokens {
            Some(tokens) => TokenizedSentence::aligned(&self.sentence, tokens)?,
            None => TokenizedSentence::whitespace_tokenize(&self.sentence)?,
        };
        FrameAnnotation::new(
            self.id.unwrap_or_else(|| format!("seed-{line}")),
            self.frame,
            LexicalUnit::parse(&self.lexical_unit)?,
            self.trigger,
            sentence,
            self.created_order,
        )
    }

    pub fn from_annotation(a: &FrameAnnotation) -> Self {
        Self {
            id: Some(a.id.clone()),
            sentence: a.sentence.raw_text().to_string(),
            tokens: Some(a.sentence.tokens().to_vec()),
            frame: a.frame_id.clone(),
            lexical_unit: a.lexical_unit.to_string(),
            trigger: a.trigger,
            created_order: a.created_order,
        }
    }
}

/// Read a seed corpus; line numbers count non-blank lines from 1.
pub fn read_seeds(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotation>> {
    read_jsonl::<SeedRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| row.into_annotation(i + 1))
        .collect()
}

pub fn write_seeds(path: impl AsRef<Path>, seeds: &[FrameAnnotation]) -> Result<()> {
    let rows: Vec<SeedRow> = seeds.iter().map(SeedRow::from_annotation).collect();
    write_jsonl(path, &rows)
}
