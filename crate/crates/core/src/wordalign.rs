//! IBM Model 1/2 word alignment trained by EM, grow-diag-final-and
//! symmetrization, and conversion of word links to span predictions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Span;
use crate::par;

/// Source sentence, target sentence.
pub type SentencePair = (Vec<String>, Vec<String>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
}

const NULL: u32 = 0;
/// Pairs per E-step work unit.
const CHUNK: usize = 64;

/// Lexical table `t(target | source)` over co-occurring pairs, with source
/// id 0 reserved for NULL, plus the Model-2 table `a(i | j, n, m)`.
#[derive(Debug, Clone)]
pub struct IbmModel {
    pub variant: Variant,
    src_index: HashMap<String, u32>,
    tgt_index: HashMap<String, u32>,
    /// Per source id: (target id, probability), sorted by target id.
    t: Vec<Vec<(u32, f64)>>,
    /// (j, n, m) → probabilities over source positions 0 (NULL) ..= n.
    a: BTreeMap<(usize, usize, usize), Vec<f64>>,
}

/// Sorted, de-duplicated `(source index, target index)` links.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct WordAlignment {
    pub links: BTreeSet<(usize, usize)>,
}

impl WordAlignment {
    pub fn new(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            links: links.into_iter().collect(),
        }
    }

    /// Swap source and target roles.
    pub fn transposed(&self) -> Self {
        Self::new(self.links.iter().map(|&(i, j)| (j, i)))
    }

    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        match self.links.iter().find(|&&(i, j)| i >= n || j >= m) {
            Some(&(i, j)) => Err(Error::InvalidInput(format!("link {i}-{j} outside a {n}×{m} grid"))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for WordAlignment {
    /// Conventional `i-j i-j ...` text form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for WordAlignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut links = BTreeSet::new();
        for part in s.split_whitespace() {
            let bad = || Error::format("alignment", format!("bad link {part:?}"));
            let (i, j) = part.split_once('-').ok_or_else(bad)?;
            links.insert((i.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?));
        }
        Ok(Self { links })
    }
}

struct Encoded {
    src: Vec<u32>,
    tgt: Vec<u32>,
}

/// What one pair adds to the expected counts, in E-step order.
#[derive(Default)]
struct Contribution {
    log_likelihood: f64,
    lexical: Vec<(u32, usize, f64)>,
    positional: Vec<((usize, usize, usize), usize, f64)>,
}

impl IbmModel {
    fn uniform(corpus: &[SentencePair], variant: Variant) -> Self {
        let mut src_index = HashMap::from([("<NULL>".to_string(), NULL)]);
        let mut tgt_index = HashMap::new();
        for (s, t) in corpus {
            for w in s {
                let next = src_index.len() as u32;
                src_index.entry(w.clone()).or_insert(next);
            }
            for w in t {
                let next = tgt_index.len() as u32;
                tgt_index.entry(w.clone()).or_insert(next);
            }
        }
        let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); src_index.len()];
        for (s, t) in corpus {
            let tids: Vec<u32> = t.iter().map(|w| tgt_index[w]).collect();
            for e in std::iter::once(NULL).chain(s.iter().map(|w| src_index[w])) {
                cooc[e as usize].extend(tids.iter().copied());
            }
        }
        let init = 1.0 / tgt_index.len().max(1) as f64;
        let t = cooc
            .into_iter()
            .map(|set| set.into_iter().map(|f| (f, init)).collect())
            .collect();
        Self {
            variant,
            src_index,
            tgt_index,
            t,
            a: BTreeMap::new(),
        }
    }

    fn encode(&self, pair: &SentencePair) -> Option<Encoded> {
        Some(Encoded {
            src: pair.0.iter().map(|w| self.src_index.get(w).copied()).collect::<Option<_>>()?,
            tgt: pair.1.iter().map(|w| self.tgt_index.get(w).copied()).collect::<Option<_>>()?,
        })
    }

    fn slot(&self, e: u32, f: u32) -> Option<usize> {
        self.t.get(e as usize)?.binary_search_by_key(&f, |&(id, _)| id).ok()
    }

    /// `t(target | source)`; 0 for unseen pairs. `None` as source is NULL.
    pub fn lexical(&self, source: Option<&str>, target: &str) -> f64 {
        let e = match source {
            None => Some(NULL),
            Some(w) => self.src_index.get(w).copied(),
        };
        match (e, self.tgt_index.get(target)) {
            (Some(e), Some(&f)) => self.t_by_id(e, f),
            _ => 0.0,
        }
    }

    fn t_by_id(&self, e: u32, f: u32) -> f64 {
        self.slot(e, f).map_or(0.0, |s| self.t[e as usize][s].1)
    }

    /// `a(i | j, n, m)` with `i = 0` meaning NULL; uniform under Model 1 or
    /// for unseen contexts.
    pub fn position(&self, i: usize, j: usize, n: usize, m: usize) -> f64 {
        match self.variant {
            Variant::M1 => 1.0 / (n + 1) as f64,
            Variant::M2 => self
                .a
                .get(&(j, n, m))
                .map_or(1.0 / (n + 1) as f64, |row| row[i]),
        }
    }

    fn e_step(&self, enc: &Encoded) -> Contribution {
        let (n, m) = (enc.src.len(), enc.tgt.len());
        let mut out = Contribution::default();
        let mut weights = vec![0.0; n + 1];
        for (j, &f) in enc.tgt.iter().enumerate() {
            for i in 0..=n {
                let e = if i == 0 { NULL } else { enc.src[i - 1] };
                weights[i] = self.position(i, j, n, m) * self.t_by_id(e, f);
            }
            let denom: f64 = weights.iter().sum();
            if denom <= 0.0 {
                out.log_likelihood = f64::NEG_INFINITY;
                continue;
            }
            out.log_likelihood += denom.ln();
            for (i, &w) in weights.iter().enumerate() {
                let c = w / denom;
                let e = if i == 0 { NULL } else { enc.src[i - 1] };
                let slot = self.slot(e, f).expect("co-occurring pair has a slot");
                out.lexical.push((e, slot, c));
                if self.variant == Variant::M2 {
                    out.positional.push(((j, n, m), i, c));
                }
            }
        }
        out
    }

    /// One EM iteration; returns the corpus log-likelihood under the
    /// parameters before the update.
    fn iterate(&mut self, encoded: &[Encoded]) -> f64 {
        let mut lex_counts: Vec<Vec<f64>> = self.t.iter().map(|row| vec![0.0; row.len()]).collect();
        let mut pos_counts: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
        let mut ll = 0.0;
        let chunks: Vec<&[Encoded]> = encoded.chunks(CHUNK).collect();
        let model = &*self;
        let results = par::map(&chunks, |chunk| chunk.iter().map(|e| model.e_step(e)).collect::<Vec<_>>());
        // Apply contributions in corpus order: identical sums for any worker count.
        for c in results.into_iter().flatten() {
            ll += c.log_likelihood;
            for (e, slot, v) in c.lexical {
                lex_counts[e as usize][slot] += v;
            }
            for (key, i, v) in c.positional {
                pos_counts.entry(key).or_insert_with(|| vec![0.0; key.1 + 1])[i] += v;
            }
        }
        for (row, counts) in self.t.iter_mut().zip(&lex_counts) {
            let total: f64 = counts.iter().sum();
            if total > 0.0 {
                for (entry, c) in row.iter_mut().zip(counts) {
                    entry.1 = c / total;
                }
            }
        }
        if self.variant == Variant::M2 {
            for (key, counts) in pos_counts {
                let total: f64 = counts.iter().sum();
                if total > 0.0 {
                    self.a.insert(key, counts.iter().map(|c| c / total).collect());
                }
            }
        }
        ll
    }

    /// Corpus log-likelihood under the current parameters.
    pub fn log_likelihood(&self, corpus: &[SentencePair]) -> f64 {
        corpus
            .iter()
            .filter_map(|p| self.encode(p))
            .map(|e| self.e_step(&e).log_likelihood)
            .sum()
    }

    /// Continue EM from the current parameters, possibly switching variant
    /// (Model 1 → Model 2 starts from a uniform position table).
    pub fn continue_em(&mut self, corpus: &[SentencePair], variant: Variant, iterations: usize) -> Vec<f64> {
        self.variant = variant;
        let encoded: Vec<Encoded> = corpus.iter().filter_map(|p| self.encode(p)).collect();
        let mut trace: Vec<f64> = (0..iterations).map(|_| self.iterate(&encoded)).collect();
        trace.push(self.log_likelihood(corpus));
        trace
    }

    /// Most probable source position per target word. NULL wins only when
    /// strictly better than every real word; ties go to the smallest index.
    pub fn viterbi_align(&self, pair: &SentencePair) -> WordAlignment {
        let (n, m) = (pair.0.len(), pair.1.len());
        let mut links = BTreeSet::new();
        for (j, f) in pair.1.iter().enumerate() {
            let null = self.position(0, j, n, m) * self.lexical(None, f);
            let mut best: Option<(usize, f64)> = None;
            for (i, e) in pair.0.iter().enumerate() {
                let p = self.position(i + 1, j, n, m) * self.lexical(Some(e), f);
                if best.is_none_or(|(_, b)| p > b) {
                    best = Some((i, p));
                }
            }
            if let Some((i, p)) = best {
                if p > 0.0 && p >= null {
                    links.insert((i, j));
                }
            }
        }
        WordAlignment { links }
    }

    /// Rows of `t` (NULL first), for invariant checks.
    pub fn lexical_rows(&self) -> impl Iterator<Item = &[(u32, f64)]> {
        self.t.iter().map(Vec::as_slice)
    }

    pub fn position_rows(&self) -> impl Iterator<Item = (&(usize, usize, usize), &Vec<f64>)> {
        self.a.iter()
    }
}

/// Batch EM from a uniform start. Returns the model and the log-likelihood
/// before each iteration followed by the final value (`iterations + 1`
/// entries).
pub fn em_train(corpus: &[SentencePair], variant: Variant, iterations: usize) -> Result<(IbmModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be at least 1".into()));
    }
    let mut model = IbmModel::uniform(corpus, variant);
    let trace = model.continue_em(corpus, variant, iterations);
    Ok((model, trace))
}

/// Model 1 for `m1_iters` iterations, then Model 2 for `m2_iters`.
pub fn train_staged(corpus: &[SentencePair], m1_iters: usize, m2_iters: usize) -> Result<IbmModel> {
    let (mut model, _) = em_train(corpus, Variant::M1, m1_iters.max(1))?;
    if m2_iters > 0 {
        model.continue_em(corpus, Variant::M2, m2_iters);
    }
    Ok(model)
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

struct Grid {
    m: usize,
    cells: Vec<bool>,
    src_count: Vec<usize>,
    tgt_count: Vec<usize>,
}

impl Grid {
    fn new(n: usize, m: usize) -> Self {
        Self {
            m,
            cells: vec![false; n * m],
            src_count: vec![0; n],
            tgt_count: vec![0; m],
        }
    }

    fn has(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.m + j]
    }

    fn add(&mut self, i: usize, j: usize) {
        if !self.has(i, j) {
            self.cells[i * self.m + j] = true;
            self.src_count[i] += 1;
            self.tgt_count[j] += 1;
        }
    }
}

/// Grow-diag-final-and symmetrization of a forward and a backward
/// alignment, both given as (source, target) links on an `n × m` grid.
pub fn gdfa(forward: &WordAlignment, backward: &WordAlignment, n: usize, m: usize) -> Result<WordAlignment> {
    forward.check(n, m)?;
    backward.check(n, m)?;
    let mut fwd = Grid::new(n, m);
    forward.links.iter().for_each(|&(i, j)| fwd.add(i, j));
    let mut bwd = Grid::new(n, m);
    backward.links.iter().for_each(|&(i, j)| bwd.add(i, j));
    let in_union = |i: usize, j: usize| fwd.has(i, j) || bwd.has(i, j);

    let mut out = Grid::new(n, m);
    for &(i, j) in &forward.links {
        if bwd.has(i, j) {
            out.add(i, j);
        }
    }

    // grow-diag
    loop {
        let mut added = false;
        for i in 0..n {
            for j in 0..m {
                if !out.has(i, j) {
                    continue;
                }
                for (di, dj) in NEIGHBOURS {
                    let (Some(ni), Some(nj)) = (i.checked_add_signed(di), j.checked_add_signed(dj)) else {
                        continue;
                    };
                    if ni >= n || nj >= m || out.has(ni, nj) {
                        continue;
                    }
                    if (out.src_count[ni] == 0 || out.tgt_count[nj] == 0) && in_union(ni, nj) {
                        out.add(ni, nj);
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    // final-and, forward then backward
    for grid in [&fwd, &bwd] {
        for i in 0..n {
            for j in 0..m {
                if grid.has(i, j) && out.src_count[i] == 0 && out.tgt_count[j] == 0 {
                    out.add(i, j);
                }
            }
        }
    }

    Ok(WordAlignment::new(
        (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| out.has(i, j)),
    ))
}

/// Smallest target span covering every link from `src_span`, or `None` if
/// no source word in the span is linked.
pub fn words_to_span(al: &WordAlignment, src_span: Span) -> Option<Span> {
    let targets = al
        .links
        .iter()
        .filter(|(i, _)| src_span.indices().contains(i))
        .map(|&(_, j)| j);
    let (lo, hi) = targets.fold((usize::MAX, 0), |(lo, hi), j| (lo.min(j), hi.max(j)));
    (lo != usize::MAX).then_some(Span { start: lo, end: hi })
}

/// Symmetrized alignments for `pairs`, training forward and backward models
/// on `train` (which should include `pairs`).
pub fn symmetrized_alignments(
    train: &[SentencePair],
    pairs: &[SentencePair],
    m1_iters: usize,
    m2_iters: usize,
) -> Result<Vec<WordAlignment>> {
    let reversed: Vec<SentencePair> = train.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
    let fwd = train_staged(train, m1_iters, m2_iters)?;
    let bwd = train_staged(&reversed, m1_iters, m2_iters)?;
    par::map(pairs, |pair| {
        let f = fwd.viterbi_align(pair);
        let b = bwd.viterbi_align(&(pair.1.clone(), pair.0.clone())).transposed();
        gdfa(&f, &b, pair.0.len(), pair.1.len())
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: &str, t: &str) -> SentencePair {
        (
            s.split_whitespace().map(String::from).collect(),
            t.split_whitespace().map(String::from).collect(),
        )
    }

    #[test]
    fn single_pair_one_iteration() {
        // One target word, candidates NULL and x, both t = 1 initially: the
        // posterior is 1/2 each, and each source normalizes to t(y|·) = 1.
        let corpus = vec![pair("x", "y")];
        let (model, trace) = em_train(&corpus, Variant::M1, 1).unwrap();
        assert_eq!(model.lexical(Some("x"), "y"), 1.0);
        assert_eq!(model.lexical(None, "y"), 1.0);
        // LL = ln(a·t(y|NULL) + a·t(y|x)) = ln(1/2 + 1/2) = 0.
        assert_eq!(trace, vec![0.0, 0.0]);
    }

    #[test]
    fn alignment_text_format() {
        let al: WordAlignment = "0-0 2-1 1-3".parse().unwrap();
        assert_eq!(al.to_string(), "0-0 1-3 2-1");
        assert!("0_1".parse::<WordAlignment>().is_err());
        assert_eq!("".parse::<WordAlignment>().unwrap(), WordAlignment::default());
    }

    #[test]
    fn gdfa_agreement_and_sandwich() {
        let a = WordAlignment::new([(0, 0)]);
        assert_eq!(gdfa(&a, &a, 1, 1).unwrap(), a);
        let f = WordAlignment::new([(0, 0), (1, 1)]);
        let b = WordAlignment::new([(1, 1)]);
        let out = gdfa(&f, &b, 2, 2).unwrap();
        assert!(out.links.contains(&(1, 1)));
        assert!(out.links.is_subset(&f.links));
    }

    #[test]
    fn gdfa_rejects_out_of_grid_links() {
        let a = WordAlignment::new([(3, 0)]);
        assert!(gdfa(&a, &a, 2, 2).is_err());
    }

    #[test]
    fn words_to_span_examples() {
        let s = |a, b| Span::new(a, b).unwrap();
        assert_eq!(words_to_span(&WordAlignment::new([(1, 2), (2, 4)]), s(1, 2)), Some(s(2, 4)));
        assert_eq!(words_to_span(&WordAlignment::default(), s(0, 0)), None);
        assert_eq!(words_to_span(&WordAlignment::new([(1, 5), (2, 2)]), s(1, 2)), Some(s(2, 5)));
        assert_eq!(words_to_span(&WordAlignment::new([(0, 5)]), s(1, 2)), None);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(em_train(&[], Variant::M1, 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn trained_tables_are_normalized() {
        let corpus = vec![pair("a b c", "x y"), pair("b c", "y z w"), pair("a", "x")];
        for variant in [Variant::M1, Variant::M2] {
            let (model, _) = em_train(&corpus, variant, 4).unwrap();
            for row in model.lexical_rows() {
                let total: f64 = row.iter().map(|e| e.1).sum();
                assert!((total - 1.0).abs() < 1e-6 && row.iter().all(|e| e.1 >= 0.0));
            }
            for (_, row) in model.position_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
