//! Shared domain types: sentences, spans, annotations and output records.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A tokenized sentence with per-token character offsets into `raw_text`.
///
/// Offsets are `(start, end)` in characters, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenizedSentence {
    tokens: Vec<String>,
    raw_text: String,
    offsets: Vec<(usize, usize)>,
}

impl TokenizedSentence {
    /// Split `raw` on unicode whitespace.
    pub fn whitespace_tokenize(raw: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut offsets = Vec::new();
        let mut start: Option<usize> = None;
        let mut current = String::new();
        let mut count = 0;
        for (ci, ch) in raw.chars().enumerate() {
            count = ci + 1;
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push(std::mem::take(&mut current));
                    offsets.push((s, ci));
                }
            } else {
                start.get_or_insert(ci);
                current.push(ch);
            }
        }
        if let Some(s) = start {
            tokens.push(current);
            offsets.push((s, count));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            tokens,
            raw_text: raw.to_string(),
            offsets,
        })
    }

    /// Build a sentence from pre-split tokens; the raw text is the tokens
    /// joined by single spaces.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut raw = String::new();
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut pos = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            check_token(tok)?;
            if i > 0 {
                raw.push(' ');
                pos += 1;
            }
            let len = tok.chars().count();
            offsets.push((pos, pos + len));
            raw.push_str(tok);
            pos += len;
        }
        Ok(Self {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            raw_text: raw,
            offsets,
        })
    }

    /// Attach pre-tokenized `tokens` to `raw`, locating each token in order.
    ///
    /// Fails when a token cannot be found after the previous one, which is how
    /// tokenizer mismatches surface on ingest.
    pub fn aligned(raw: &str, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let chars: Vec<char> = raw.chars().collect();
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut cursor = 0;
        for tok in &tokens {
            check_token(tok)?;
            let needle: Vec<char> = tok.chars().collect();
            let found = (cursor..=chars.len().saturating_sub(needle.len()))
                .find(|&s| chars[s..s + needle.len()] == needle[..])
                .ok_or_else(|| {
                    Error::InvalidInput(format!("token {tok:?} not found in {raw:?} after char {cursor}"))
                })?;
            offsets.push((found, found + needle.len()));
            cursor = found + needle.len();
        }
        Ok(Self {
            tokens,
            raw_text: raw.to_string(),
            offsets,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Text of `span`, tokens joined by single spaces.
    pub fn span_text(&self, span: Span) -> Result<String> {
        Ok(self.span_tokens(span)?.join(" "))
    }

    pub fn span_tokens(&self, span: Span) -> Result<&[String]> {
        span.check(self.len())?;
        Ok(&self.tokens[span.start..=span.end])
    }
}

fn check_token(tok: &str) -> Result<()> {
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput(format!("bad token {tok:?}")));
    }
    Ok(())
}

impl fmt::Display for TokenizedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceRepr {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

impl Serialize for TokenizedSentence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SentenceRepr {
            text: self.raw_text.clone(),
            tokens: Some(self.tokens.clone()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TokenizedSentence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SentenceRepr::deserialize(deserializer)?;
        match repr.tokens {
            Some(tokens) => TokenizedSentence::aligned(&repr.text, tokens),
            None => TokenizedSentence::whitespace_tokenize(&repr.text),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Contiguous token range, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInput(format!("span start {start} > end {end}")));
        }
        Ok(Self { start, end })
    }

    /// Single-token span.
    pub fn at(index: usize) -> Self {
        Self {
            start: index,
            end: index,
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_valid_for(&self, sentence_len: usize) -> bool {
        self.start <= self.end && self.end < sentence_len
    }

    pub fn check(&self, sentence_len: usize) -> Result<()> {
        if self.is_valid_for(sentence_len) {
            Ok(())
        } else {
            Err(Error::InvalidSpan {
                span: *self,
                len: sentence_len,
            })
        }
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    /// Number of token positions shared with `other`.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(deserializer)?;
        Span::new(start, end).map_err(serde::de::Error::custom)
    }
}

/// Text of `span` within `sentence`.
pub fn span_text(sentence: &TokenizedSentence, span: Span) -> Result<String> {
    sentence.span_text(span)
}

/// A lemma plus POS tag, written `lemma.pos` (e.g. `sell.v`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LexicalUnit {
    pub lemma: String,
    pub pos: String,
}

impl LexicalUnit {
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split('.');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(lemma), Some(pos), None) if !lemma.is_empty() && !pos.is_empty() => Ok(Self {
                lemma: lemma.to_string(),
                pos: pos.to_string(),
            }),
            _ => Err(Error::InvalidInput(format!(
                "lexical unit {s:?} must be `lemma.pos` with exactly one '.'"
            ))),
        }
    }
}

impl fmt::Display for LexicalUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.lemma, self.pos)
    }
}

/// One labeled frame trigger in a seed corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub id: String,
    pub frame_id: String,
    pub lexical_unit: LexicalUnit,
    pub trigger: Span,
    pub sentence: TokenizedSentence,
    /// Creation rank, used by seed ablation. Lower is earlier.
    pub created_order: Option<u64>,
}

impl FrameAnnotation {
    pub fn new(
        id: impl Into<String>,
        frame_id: impl Into<String>,
        lexical_unit: LexicalUnit,
        trigger: Span,
        sentence: TokenizedSentence,
        created_order: Option<u64>,
    ) -> Result<Self> {
        trigger.check(sentence.len())?;
        Ok(Self {
            id: id.into(),
            frame_id: frame_id.into(),
            lexical_unit,
            trigger,
            sentence,
            created_order,
        })
    }

    pub fn trigger_text(&self) -> String {
        self.sentence
            .span_text(self.trigger)
            .expect("trigger validated at construction")
    }
}

/// A source span and the paraphrase it should be located in.
/// `gold_span` is `None` when no equivalent phrase exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlignmentExampleRepr")]
pub struct AlignmentExample {
    pub source: TokenizedSentence,
    pub source_span: Span,
    pub reference: TokenizedSentence,
    pub gold_span: Option<Span>,
}

#[derive(Deserialize)]
struct AlignmentExampleRepr {
    source: TokenizedSentence,
    source_span: Span,
    reference: TokenizedSentence,
    gold_span: Option<Span>,
}

impl TryFrom<AlignmentExampleRepr> for AlignmentExample {
    type Error = Error;

    fn try_from(r: AlignmentExampleRepr) -> Result<Self> {
        AlignmentExample::new(r.source, r.source_span, r.reference, r.gold_span)
    }
}

impl AlignmentExample {
    pub fn new(
        source: TokenizedSentence,
        source_span: Span,
        reference: TokenizedSentence,
        gold_span: Option<Span>,
    ) -> Result<Self> {
        source_span.check(source.len())?;
        if let Some(g) = gold_span {
            g.check(reference.len())?;
        }
        Ok(Self {
            source,
            source_span,
            reference,
            gold_span,
        })
    }
}

/// One augmentation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub record_id: String,
    pub parent_id: String,
    pub frame_id: String,
    pub iteration: u32,
    pub paraphrase: TokenizedSentence,
    pub trigger: Span,
    pub decoder_score: f64,
    pub aligner_score: f64,
    pub p_filter_score: Option<f64>,
    pub r_filter_score: Option<f64>,
}

impl AugmentationRecord {
    pub fn trigger_text(&self) -> Result<String> {
        self.paraphrase.span_text(self.trigger)
    }

    /// Filter-model features: iteration, decoder score, aligner score.
    pub fn features(&self) -> [f64; 3] {
        [self.iteration as f64, self.decoder_score, self.aligner_score]
    }
}
