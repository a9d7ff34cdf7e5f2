//! Beam search over a pluggable token scorer with negative lexical
//! constraints enforced exactly.
//!
//! At every expansion step, tokens that would complete a banned phrase get
//! log-probability −∞ before top-k selection. The remaining distribution is
//! not renormalized, so a hypothesis score is always the plain sum of the
//! scorer's log-probabilities along its path.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, MatchState};
use crate::error::{Error, Result};
use crate::model::TokenizedSentence;
use crate::par;

pub type TokenId = u32;

pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Finite ordered token inventory including an end-of-sequence marker.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

impl Vocab {
    /// Build from `tokens`; [`EOS`] is appended when absent. Duplicates are
    /// dropped, keeping first occurrence order.
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for t in tokens {
            let t = t.as_ref();
            if !index.contains_key(t) {
                index.insert(t.to_string(), out.len() as TokenId);
                out.push(t.to_string());
            }
        }
        if !index.contains_key(EOS) {
            index.insert(EOS.to_string(), out.len() as TokenId);
            out.push(EOS.to_string());
        }
        let eos = index[EOS];
        Self {
            tokens: out,
            index,
            eos,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Autoregressive next-token model.
///
/// `log_probs` returns one log-probability per vocabulary entry (dense, in
/// vocabulary order); `f64::NEG_INFINITY` marks impossible tokens. The
/// probabilities must sum to 1 and depend only on `(source, prefix)`.
/// Implementations are shared across decoding threads.
pub trait TokenScorer: Send + Sync {
    fn vocab(&self) -> &Vocab;
    fn log_probs(&self, source: &TokenizedSentence, prefix: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum number of emitted tokens, excluding end-of-sequence. A
    /// hypothesis reaching this length terminates without an EOS term.
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub logprob_sum: f64,
    /// `1 − exp(mean token log-prob)`; lower means more model-confident.
    pub decoder_score: f64,
}

impl Hypothesis {
    fn new(tokens: Vec<String>, logprob_sum: f64) -> Self {
        let decoder_score = decoder_score(logprob_sum, tokens.len());
        Self {
            tokens,
            logprob_sum,
            decoder_score,
        }
    }
}

pub fn decoder_score(logprob_sum: f64, len: usize) -> f64 {
    1.0 - (logprob_sum / len.max(1) as f64).exp()
}

#[derive(Debug, Clone)]
struct Item {
    ids: Vec<TokenId>,
    logprob: f64,
    state: MatchState,
    finished: bool,
}

/// Expansion of a beam item, materialized only if it survives pruning.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    parent: usize,
    /// `None` keeps a finished parent as-is.
    token: Option<TokenId>,
    logprob: f64,
    finished: bool,
}

/// Descending score, then lexicographic token order, then finished first.
fn rank(vocab: &Vocab, a_ids: TokenSeq<'_>, a_lp: f64, a_fin: bool, b_ids: TokenSeq<'_>, b_lp: f64, b_fin: bool) -> Ordering {
    b_lp.total_cmp(&a_lp)
        .then_with(|| a_ids.cmp_lex(&b_ids, vocab))
        .then_with(|| b_fin.cmp(&a_fin))
}

#[derive(Clone, Copy)]
struct TokenSeq<'a> {
    head: &'a [TokenId],
    tail: Option<TokenId>,
}

impl TokenSeq<'_> {
    fn get(&self, i: usize) -> Option<TokenId> {
        if i < self.head.len() {
            Some(self.head[i])
        } else if i == self.head.len() {
            self.tail
        } else {
            None
        }
    }

    fn cmp_lex(&self, other: &TokenSeq<'_>, vocab: &Vocab) -> Ordering {
        let mut i = 0;
        loop {
            match (self.get(i), other.get(i)) {
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some(a), Some(b)) if a == b => i += 1,
                (Some(a), Some(b)) => return vocab.token(a).cmp(vocab.token(b)),
            }
        }
    }
}

/// Beam search under negative constraints.
///
/// Returns at most `beam_size` hypotheses in descending log-probability,
/// ties broken by lexicographic token order. Fails with
/// [`Error::NoFeasibleOutput`] when the constraints prune every path.
pub fn decode(
    source: &TokenizedSentence,
    constraints: &ConstraintSet,
    cfg: DecodeConfig,
    scorer: &dyn TokenScorer,
) -> Result<Vec<Hypothesis>> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidInput("beam_size and max_len must be at least 1".into()));
    }
    let vocab = scorer.vocab();
    let mut beam = vec![Item {
        ids: Vec::new(),
        logprob: 0.0,
        state: constraints.start(),
        finished: false,
    }];

    for _ in 0..cfg.max_len {
        if beam.iter().all(|it| it.finished) {
            break;
        }
        let expansions = par::map_range(beam.len(), |parent| expand(&beam, parent, source, constraints, scorer));
        let mut pool: Vec<Candidate> = expansions.into_iter().flatten().collect();
        if pool.is_empty() {
            return Err(Error::NoFeasibleOutput);
        }
        let seq = |c: &Candidate| TokenSeq {
            head: &beam[c.parent].ids,
            tail: c.token.filter(|&t| t != vocab.eos()),
        };
        pool.sort_by(|a, b| rank(vocab, seq(a), a.logprob, a.finished, seq(b), b.logprob, b.finished));
        pool.truncate(cfg.beam_size);
        beam = pool
            .into_iter()
            .map(|c| {
                let parent = &beam[c.parent];
                match c.token {
                    Some(t) if t != vocab.eos() => {
                        let mut ids = parent.ids.clone();
                        ids.push(t);
                        Item {
                            ids,
                            logprob: c.logprob,
                            state: constraints.advance(&parent.state, vocab.token(t)),
                            finished: false,
                        }
                    }
                    _ => Item {
                        ids: parent.ids.clone(),
                        logprob: c.logprob,
                        state: parent.state.clone(),
                        finished: true,
                    },
                }
            })
            .collect();
    }

    // Survivors at max_len are complete; the beam is already ranked.
    Ok(beam
        .into_iter()
        .map(|it| {
            let tokens = it.ids.iter().map(|&t| vocab.token(t).to_string()).collect();
            Hypothesis::new(tokens, it.logprob)
        })
        .collect())
}

fn expand(
    beam: &[Item],
    parent: usize,
    source: &TokenizedSentence,
    constraints: &ConstraintSet,
    scorer: &dyn TokenScorer,
) -> Vec<Candidate> {
    let item = &beam[parent];
    if item.finished {
        return vec![Candidate {
            parent,
            token: None,
            logprob: item.logprob,
            finished: true,
        }];
    }
    let vocab = scorer.vocab();
    let mut lp = scorer.log_probs(source, &item.ids);
    debug_assert_eq!(lp.len(), vocab.len());
    constraints.for_each_blocked(&item.state, |tok| {
        if let Some(id) = vocab.id(tok) {
            lp[id as usize] = f64::NEG_INFINITY;
        }
    });
    lp.iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(id, &v)| Candidate {
            parent,
            token: Some(id as TokenId),
            logprob: item.logprob + v,
            finished: id as TokenId == vocab.eos(),
        })
        .collect()
}

/// First `n` hypotheses of a ranked list.
pub fn top_n(hyps: &[Hypothesis], n: usize) -> Vec<Hypothesis> {
    hyps.iter().take(n).cloned().collect()
}

/// One row of a synonym table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionEntry {
    pub token: String,
    pub substitutes: Vec<Substitute>,
    pub copy_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitute {
    pub token: String,
    pub p: f64,
}

/// Length-preserving toy paraphraser: at each source position, either copy
/// the source token or replace it by one of its listed substitutes.
///
/// Lookup is exact first, then lowercased; a capitalized source token passes
/// its capitalization on to lowercase-keyed substitutes. Tokens absent from
/// the table are copied with probability 1. Source tokens outside the
/// vocabulary are emitted as [`UNK`].
#[derive(Debug, Clone)]
pub struct SubstitutionLatticeScorer {
    vocab: Vocab,
    table: HashMap<String, SubstitutionEntry>,
}

impl SubstitutionLatticeScorer {
    /// `extra_tokens` should cover every token of the sentences to be
    /// paraphrased.
    pub fn new<S: AsRef<str>>(
        entries: Vec<SubstitutionEntry>,
        extra_tokens: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let mut words = BTreeSet::new();
        let mut table = HashMap::new();
        for e in entries {
            let total = e.copy_p + e.substitutes.iter().map(|s| s.p).sum::<f64>();
            let in_range = |p: f64| (0.0..=1.0).contains(&p);
            if (total - 1.0).abs() > 1e-9 || !in_range(e.copy_p) || !e.substitutes.iter().all(|s| in_range(s.p)) {
                return Err(Error::format(
                    "synonym table",
                    format!("probabilities for {:?} sum to {total}", e.token),
                ));
            }
            for t in std::iter::once(&e.token).chain(e.substitutes.iter().map(|s| &s.token)) {
                words.insert(t.clone());
                words.insert(capitalize(t));
            }
            table.insert(e.token.clone(), e);
        }
        words.extend(extra_tokens.into_iter().map(|t| t.as_ref().to_string()));
        words.insert(UNK.to_string());
        words.insert(EOS.to_string());
        Ok(Self {
            vocab: Vocab::new(words),
            table,
        })
    }

    /// Read a JSONL synonym table.
    pub fn read_table(path: impl AsRef<Path>) -> Result<Vec<SubstitutionEntry>> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    /// Probability mass over output tokens for one source token.
    pub fn distribution(&self, token: &str) -> Vec<(String, f64)> {
        let (entry, recase) = match self.table.get(token) {
            Some(e) => (Some(e), false),
            None => {
                let lower = token.to_lowercase();
                (self.table.get(&lower), lower != token && is_capitalized(token))
            }
        };
        let copy = if self.vocab.id(token).is_some() { token } else { UNK };
        match entry {
            None => vec![(copy.to_string(), 1.0)],
            Some(e) => {
                let mut out: Vec<(String, f64)> = Vec::with_capacity(e.substitutes.len() + 1);
                let mut add = |t: String, p: f64| match out.iter_mut().find(|(u, _)| *u == t) {
                    Some(slot) => slot.1 += p,
                    None => out.push((t, p)),
                };
                add(copy.to_string(), e.copy_p);
                for s in &e.substitutes {
                    let t = if recase { capitalize(&s.token) } else { s.token.clone() };
                    add(t, s.p);
                }
                out
            }
        }
    }
}

impl TokenScorer for SubstitutionLatticeScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn log_probs(&self, source: &TokenizedSentence, prefix: &[TokenId]) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; self.vocab.len()];
        match source.tokens().get(prefix.len()) {
            None => out[self.vocab.eos() as usize] = 0.0,
            Some(tok) => {
                for (t, p) in self.distribution(tok) {
                    let id = self.vocab.id(&t).expect("table tokens are in the vocabulary");
                    out[id as usize] = p.ln();
                }
            }
        }
        out
    }
}

fn is_capitalized(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
