//! Synthetic span-alignment corpora with known answers.
//!
//! Each reference is `prefix + copy + suffix`, where `copy` repeats the
//! source span's tokens. The reference rows of `copy` are overwritten with
//! the source span's rows, so the gold candidate pools to exactly the source
//! representation. Everything else comes from [`HashEmbedder`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, EmbeddingStore, HashEmbedder, Side};
use crate::error::Result;
use crate::model::{AlignmentExample, Span, TokenizedSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub dim: usize,
    pub vocab: usize,
    /// Inclusive source length range.
    pub source_len: (usize, usize),
    /// Inclusive source span length range.
    pub span_len: (usize, usize),
    /// Inclusive range for each of the reference prefix and suffix lengths.
    pub context_len: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 2000,
            dim: 32,
            vocab: 500,
            source_len: (5, 12),
            span_len: (1, 3),
            context_len: (0, 6),
            seed: 0,
        }
    }
}

/// Examples and the store holding their embeddings.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Vec<AlignmentExample>, EmbeddingStore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words: Vec<String> = (0..cfg.vocab.max(2)).map(|i| format!("w{i}")).collect();
    let embedder = HashEmbedder::new(cfg.dim);
    let mut store = EmbeddingStore::new(cfg.dim);
    let mut out = Vec::with_capacity(cfg.pairs);
    while out.len() < cfg.pairs {
        let n = rng.gen_range(cfg.source_len.0..=cfg.source_len.1);
        let len = rng.gen_range(cfg.span_len.0..=cfg.span_len.1.min(n));
        let start = rng.gen_range(0..=n - len);
        let src_tokens: Vec<&String> = (0..n).map(|_| words.choose(&mut rng).expect("non-empty")).collect();
        let pre = rng.gen_range(cfg.context_len.0..=cfg.context_len.1);
        let post = rng.gen_range(cfg.context_len.0..=cfg.context_len.1);
        let mut ref_tokens: Vec<&String> = (0..pre).map(|_| words.choose(&mut rng).expect("non-empty")).collect();
        ref_tokens.extend_from_slice(&src_tokens[start..start + len]);
        ref_tokens.extend((0..post).map(|_| words.choose(&mut rng).expect("non-empty")));

        let source = TokenizedSentence::from_tokens(&src_tokens)?;
        let reference = TokenizedSentence::from_tokens(&ref_tokens)?;
        let mut m = embedder.embed_pair(&source, &reference)?;
        for i in 0..len {
            let from = m.row_index(Side::Source, start + i);
            let to = m.row_index(Side::Reference, pre + i);
            let row = m.row(from).to_vec();
            m.row_mut(to).copy_from_slice(&row);
        }
        // Duplicate pairs are skipped so every example has its own rows.
        if store.insert(&source, &reference, m)? {
            out.push(AlignmentExample::new(
                source,
                Span::new(start, start + len - 1)?,
                reference,
                Some(Span::new(pre, pre + len - 1)?),
            )?);
        }
    }
    Ok((out, store))
}
