//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanaug::aligner::{AlignerConfig, AlignerModel};
use spanaug::decoder::{Substitute, SubstitutionEntry, SubstitutionLatticeScorer, TokenId, TokenScorer, Vocab, EOS};
use spanaug::model::{FrameAnnotation, LexicalUnit, Span, TokenizedSentence};

/// Scorer whose next-token distribution is a fixed pseudo-random function
/// of (seed, prefix), ignoring the source.
pub struct RandomScorer {
    pub vocab: Vocab,
    pub seed: u64,
}

impl RandomScorer {
    pub fn new(words: &[String], seed: u64) -> Self {
        Self {
            vocab: Vocab::new(words.iter().map(String::as_str).chain([EOS])),
            seed,
        }
    }
}

impl TokenScorer for RandomScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn log_probs(&self, _source: &TokenizedSentence, prefix: &[TokenId]) -> Vec<f64> {
        let mut h = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for &t in prefix {
            h = (h ^ (t as u64 + 1)).wrapping_mul(0x1000_0000_01b3).rotate_left(17);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.iter().map(|l| l - z).collect()
    }
}

pub fn contains_phrase(seq: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && seq.len() >= phrase.len() && seq.windows(phrase.len()).any(|w| w == phrase)
}

pub fn violates(seq: &[String], banned: &BTreeSet<Vec<String>>) -> bool {
    banned.iter().any(|p| contains_phrase(seq, p))
}

/// Best complete sequence by exhaustive enumeration: sequences shorter than
/// `max_len` end with EOS (whose log-prob counts); length-`max_len`
/// sequences end without it. Ties go to the lexicographically smaller
/// token sequence.
pub fn exhaustive_best(
    scorer: &dyn TokenScorer,
    source: &TokenizedSentence,
    banned: &BTreeSet<Vec<String>>,
    max_len: usize,
) -> Option<(Vec<String>, f64)> {
    let vocab = scorer.vocab();
    let words: Vec<TokenId> = (0..vocab.len() as TokenId).filter(|&t| t != vocab.eos()).collect();
    let mut best: Option<(Vec<String>, f64)> = None;
    let mut consider = |toks: Vec<String>, lp: f64| {
        let better = match &best {
            None => true,
            Some((bt, blp)) => lp > *blp || (lp == *blp && toks < *bt),
        };
        if better {
            best = Some((toks, lp));
        }
    };
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((ids, lp)) = stack.pop() {
        let toks: Vec<String> = ids.iter().map(|&t| vocab.token(t).to_string()).collect();
        if violates(&toks, banned) {
            continue;
        }
        if ids.len() == max_len {
            consider(toks, lp);
            continue;
        }
        let next = scorer.log_probs(source, &ids);
        consider(toks, lp + next[vocab.eos() as usize]);
        for &w in &words {
            let mut longer = ids.clone();
            longer.push(w);
            stack.push((longer, lp + next[w as usize]));
        }
    }
    best
}

/// Number of sequences the oracle enumerates, ignoring constraints.
pub fn search_space(words: usize, max_len: usize) -> usize {
    (0..=max_len).map(|l| words.pow(l as u32)).sum()
}

pub fn random_phrases(rng: &mut impl Rng, words: &[String], count: usize, max_len: usize) -> BTreeSet<Vec<String>> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| words.choose(rng).unwrap().clone()).collect()
        })
        .collect()
}

/// Grow-diag-final-and written directly from the published pseudocode,
/// with alignments as sets of (source, target) points.
pub fn reference_gdfa(
    e2f: &BTreeSet<(usize, usize)>,
    f2e: &BTreeSet<(usize, usize)>,
    n: usize,
    m: usize,
) -> BTreeSet<(usize, usize)> {
    let neighboring: [(i64, i64); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];
    let union: HashSet<(usize, usize)> = e2f.union(f2e).copied().collect();
    let mut alignment: BTreeSet<(usize, usize)> = e2f.intersection(f2e).copied().collect();
    let e_aligned = |a: &BTreeSet<(usize, usize)>, e: usize| a.iter().any(|&(x, _)| x == e);
    let f_aligned = |a: &BTreeSet<(usize, usize)>, f: usize| a.iter().any(|&(_, y)| y == f);
    loop {
        let mut added = false;
        for e in 0..n {
            for f in 0..m {
                if !alignment.contains(&(e, f)) {
                    continue;
                }
                for (de, df) in neighboring {
                    let (en, fnew) = (e as i64 + de, f as i64 + df);
                    if en < 0 || fnew < 0 || en >= n as i64 || fnew >= m as i64 {
                        continue;
                    }
                    let p = (en as usize, fnew as usize);
                    if (!e_aligned(&alignment, p.0) || !f_aligned(&alignment, p.1)) && union.contains(&p) {
                        alignment.insert(p);
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }
    for a in [e2f, f2e] {
        for e in 0..n {
            for f in 0..m {
                if !e_aligned(&alignment, e) && !f_aligned(&alignment, f) && a.contains(&(e, f)) {
                    alignment.insert((e, f));
                }
            }
        }
    }
    alignment
}

/// Aligner scoring `sigmoid(-|candidate start - source start|)`, candidates
/// restricted to the source span length.
pub fn positional_aligner(dim: usize) -> AlignerModel {
    let mut m = AlignerModel::zeros(dim, AlignerConfig { k: 0, hidden_units: 2, ..Default::default() });
    let (src, cand) = (2 * dim, 2 * dim + 2);
    m.w1[src * 2] = -1.0;
    m.w1[cand * 2] = 1.0;
    m.w1[src * 2 + 1] = 1.0;
    m.w1[cand * 2 + 1] = -1.0;
    m.w2 = vec![-1.0, -1.0];
    m
}

/// Toy pipeline world: `frames` frames, each with a clique of `group`
/// interchangeable trigger words and `per_frame` seed sentences.
pub struct ToyWorld {
    pub seeds: Vec<FrameAnnotation>,
    pub scorer: SubstitutionLatticeScorer,
}

pub fn toy_world(frames: usize, per_frame: usize, group: usize, seed: u64) -> ToyWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers: Vec<String> = (0..12).map(|i| format!("filler{i}")).collect();
    let mut entries = Vec::new();
    let mut seeds = Vec::new();
    let mut order = 0u64;
    for f in 0..frames {
        let words: Vec<String> = (0..group).map(|i| format!("f{f}word{i}")).collect();
        for w in &words {
            let others: Vec<&String> = words.iter().filter(|o| *o != w).collect();
            let raw: Vec<f64> = (0..=others.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut substitutes: Vec<Substitute> = others
                .iter()
                .zip(&raw[1..])
                .map(|(t, p)| Substitute { token: (*t).clone(), p: p / total })
                .collect();
            let mass: f64 = substitutes.iter().map(|s| s.p).sum();
            let copy_p = 1.0 - mass;
            substitutes.sort_by(|a, b| a.token.cmp(&b.token));
            entries.push(SubstitutionEntry { token: w.clone(), substitutes, copy_p });
        }
        for s in 0..per_frame {
            let n = rng.gen_range(3..8);
            let at = rng.gen_range(0..n);
            let mut tokens: Vec<String> = (0..n).map(|_| fillers.choose(&mut rng).unwrap().clone()).collect();
            tokens[at] = words[s % group].clone();
            order += 1;
            seeds.push(
                FrameAnnotation::new(
                    format!("f{f}s{s}"),
                    format!("Frame{f}"),
                    LexicalUnit::parse(&format!("{}.v", words[s % group])).unwrap(),
                    Span::at(at),
                    TokenizedSentence::from_tokens(&tokens).unwrap(),
                    Some(order),
                )
                .unwrap(),
            );
        }
    }
    let scorer = SubstitutionLatticeScorer::new(entries, fillers).unwrap();
    ToyWorld { seeds, scorer }
}

/// Records grouped by frame id.
pub fn by_frame<T: Clone>(items: &[T], frame: impl Fn(&T) -> String) -> BTreeMap<String, Vec<T>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for it in items {
        out.entry(frame(it)).or_default().push(it.clone());
    }
    out
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest per-parameter relative error; the denominator is floored so that
/// parameters with vanishing gradients are compared absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
