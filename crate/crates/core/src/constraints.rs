//! Negative lexical constraints: phrase expansion and a trie matcher that
//! reports which next tokens would complete a banned phrase.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::lexicon::InflectionLexicon;

pub type Phrase = Vec<String>;

/// Expand `phrase` into its inflectional and case variants.
///
/// Each token position is varied independently over every form of every
/// lemma the token inflects (no cross product). Every resulting sequence is
/// then also emitted first-letter-uppercased, all-lowercase and
/// all-uppercase. The input phrase is always included.
pub fn expand_phrase<S: AsRef<str>>(phrase: &[S], lexicon: &InflectionLexicon) -> BTreeSet<Phrase> {
    let base: Phrase = phrase.iter().map(|t| t.as_ref().to_string()).collect();
    let mut seqs = BTreeSet::new();
    seqs.insert(base.clone());
    for (i, tok) in base.iter().enumerate() {
        for variant in lexicon.variants(tok) {
            let mut seq = base.clone();
            seq[i] = variant;
            seqs.insert(seq);
        }
    }
    let mut out = BTreeSet::new();
    for seq in seqs {
        out.insert(capitalize_first(&seq));
        out.insert(seq.iter().map(|t| t.to_lowercase()).collect());
        out.insert(seq.iter().map(|t| t.to_uppercase()).collect());
        out.insert(seq);
    }
    out
}

fn capitalize_first(seq: &[String]) -> Phrase {
    let mut out = seq.to_vec();
    if let Some(first) = out.first_mut() {
        let mut chars = first.chars();
        if let Some(c) = chars.next() {
            *first = c.to_uppercase().chain(chars).collect();
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<String, u32>,
    terminal: bool,
    /// Child tokens whose node is terminal: emitting one completes a phrase.
    completes: Vec<String>,
}

/// Prefix tree over token phrases.
#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<Node>,
}

const ROOT: u32 = 0;

impl Trie {
    fn build<'a>(phrases: impl IntoIterator<Item = &'a Phrase>) -> Self {
        let mut nodes = vec![Node::default()];
        for phrase in phrases {
            let mut at = ROOT;
            for tok in phrase {
                let next = nodes.len() as u32;
                at = *nodes[at as usize].children.entry(tok.clone()).or_insert_with(|| {
                    next
                });
                if at == next {
                    nodes.push(Node::default());
                }
            }
            nodes[at as usize].terminal = true;
        }
        for i in 0..nodes.len() {
            let mut completes: Vec<String> = nodes[i]
                .children
                .iter()
                .filter(|(_, &c)| nodes[c as usize].terminal)
                .map(|(t, _)| t.clone())
                .collect();
            completes.sort();
            nodes[i].completes = completes;
        }
        Self { nodes }
    }

    fn child(&self, node: u32, tok: &str) -> Option<u32> {
        self.nodes[node as usize].children.get(tok).copied()
    }

    fn walk<S: AsRef<str>>(&self, toks: &[S]) -> Option<u32> {
        toks.iter().try_fold(ROOT, |n, t| self.child(n, t.as_ref()))
    }
}

/// An immutable set of banned phrases with a trie index.
///
/// Matching is exact and case-sensitive; case coverage comes from inserting
/// case variants via [`expand_phrase`].
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    phrases: BTreeSet<Phrase>,
    trie: Trie,
    max_len: usize,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::new(BTreeSet::new())
    }
}

impl PartialEq for ConstraintSet {
    fn eq(&self, other: &Self) -> bool {
        self.phrases == other.phrases
    }
}

impl ConstraintSet {
    /// Build from phrases; empty phrases are dropped.
    pub fn new(phrases: impl IntoIterator<Item = Phrase>) -> Self {
        let phrases: BTreeSet<Phrase> = phrases.into_iter().filter(|p| !p.is_empty()).collect();
        let trie = Trie::build(&phrases);
        let max_len = phrases.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            phrases,
            trie,
            max_len,
        }
    }

    pub fn from_strs(phrases: &[&[&str]]) -> Self {
        Self::new(
            phrases
                .iter()
                .map(|p| p.iter().map(|t| t.to_string()).collect()),
        )
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// A new set with `phrase`'s expansion added.
    pub fn with_expansion<S: AsRef<str>>(&self, phrase: &[S], lexicon: &InflectionLexicon) -> Self {
        let added = expand_phrase(phrase, lexicon);
        if added.is_subset(&self.phrases) {
            return self.clone();
        }
        Self::new(self.phrases.iter().cloned().chain(added))
    }

    pub fn union(&self, other: &ConstraintSet) -> Self {
        Self::new(self.phrases.union(&other.phrases).cloned())
    }

    pub fn phrases(&self) -> &BTreeSet<Phrase> {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn is_superset(&self, other: &ConstraintSet) -> bool {
        self.phrases.is_superset(&other.phrases)
    }

    /// Trie membership test.
    pub fn contains<S: AsRef<str>>(&self, phrase: &[S]) -> bool {
        !phrase.is_empty()
            && self
                .trie
                .walk(phrase)
                .is_some_and(|n| self.trie.nodes[n as usize].terminal)
    }

    /// Tokens that would complete a banned phrase if emitted after `history`.
    pub fn blocked_continuations<S: AsRef<str>>(&self, history: &[S]) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if self.is_empty() {
            return out;
        }
        let lo = history.len().saturating_sub(self.max_len - 1);
        for start in lo..=history.len() {
            if let Some(node) = self.trie.walk(&history[start..]) {
                out.extend(self.trie.nodes[node as usize].completes.iter().cloned());
            }
        }
        out
    }

    /// First banned phrase occurring contiguously in `seq`, if any.
    pub fn find_violation<S: AsRef<str>>(&self, seq: &[S]) -> Option<Phrase> {
        for start in 0..seq.len() {
            let mut node = ROOT;
            for (off, tok) in seq[start..].iter().enumerate() {
                match self.trie.child(node, tok.as_ref()) {
                    Some(next) => node = next,
                    None => break,
                }
                if self.trie.nodes[node as usize].terminal {
                    return Some(seq[start..=start + off].iter().map(|t| t.as_ref().to_string()).collect());
                }
            }
        }
        None
    }

    /// Matcher state for the empty history.
    pub fn start(&self) -> MatchState {
        MatchState(Vec::new())
    }

    /// Extend `state` by one emitted token.
    pub fn advance(&self, state: &MatchState, tok: &str) -> MatchState {
        let mut next: Vec<u32> = std::iter::once(ROOT)
            .chain(state.0.iter().copied())
            .filter_map(|n| self.trie.child(n, tok))
            .filter(|&c| !self.trie.nodes[c as usize].children.is_empty())
            .collect();
        next.sort_unstable();
        next.dedup();
        MatchState(next)
    }

    /// Blocked tokens at `state`, as a callback to avoid allocation on the
    /// decoder hot path. Tokens may repeat.
    pub fn for_each_blocked(&self, state: &MatchState, mut f: impl FnMut(&str)) {
        for &n in std::iter::once(&ROOT).chain(state.0.iter()) {
            for tok in &self.trie.nodes[n as usize].completes {
                f(tok);
            }
        }
    }

    pub fn blocked_at(&self, state: &MatchState) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.for_each_blocked(state, |t| {
            out.insert(t.to_string());
        });
        out
    }
}

/// Trie nodes reachable by proper suffixes of the tokens emitted so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchState(Vec<u32>);

/// Per frame, the union of all of that frame's constraint sets.
pub fn union_framewise(
    sets: &BTreeMap<String, Vec<ConstraintSet>>,
) -> BTreeMap<String, ConstraintSet> {
    sets.iter()
        .map(|(frame, list)| {
            let phrases = list.iter().flat_map(|cs| cs.phrases.iter().cloned());
            (frame.clone(), ConstraintSet::new(phrases))
        })
        .collect()
}
