//! Iterative augmentation: expand constraints, paraphrase under them, align
//! the trigger into the paraphrase, repeat.
//!
//! A chain's constraint set always holds the expansions of every trigger the
//! chain has used so far, including the seed trigger. A newly aligned
//! trigger is folded in at the end of its iteration, so frame-wise unioning
//! at the barrier sees it before any chain decodes again.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aligner::{self, AlignerModel};
use crate::constraints::{union_framewise, ConstraintSet};
use crate::decoder::{decode, DecodeConfig, TokenScorer};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::lexicon::InflectionLexicon;
use crate::model::{AugmentationRecord, FrameAnnotation, Span, TokenizedSentence};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rerank {
    /// Highest aligner score wins.
    #[default]
    Aligner,
    /// Highest `aligner_score × (1 − decoder_score)` wins.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub iterations: u32,
    pub beam_size: usize,
    /// Beam elements passed to the aligner.
    pub align_top_n: usize,
    pub framewise_union: bool,
    /// Seeds longer than this are dropped.
    pub max_source_tokens: usize,
    /// Aligner abstention threshold.
    pub threshold: f64,
    /// Recorded for provenance; every stage is deterministic.
    pub seed: u64,
    pub rerank: Rerank,
    /// Decode length limit is the source length plus this.
    pub max_len_extra: usize,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            beam_size: 20,
            align_top_n: 3,
            framewise_union: false,
            max_source_tokens: 80,
            threshold: 0.0,
            seed: 0,
            rerank: Rerank::Aligner,
            max_len_extra: 5,
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be at least 1".into()));
        }
        if self.align_top_n == 0 || self.align_top_n > self.beam_size {
            return Err(Error::InvalidInput(format!(
                "align_top_n must be in 1..={} (beam_size), got {}",
                self.beam_size, self.align_top_n
            )));
        }
        Ok(())
    }
}

/// Models and resources shared by every chain.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub scorer: &'a dyn TokenScorer,
    pub aligner: &'a AlignerModel,
    pub provider: &'a dyn EmbeddingProvider,
    pub lexicon: &'a InflectionLexicon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub chain: usize,
    pub seed_id: String,
    pub frame_id: String,
    /// POS of the seed lexical unit, used to lemmatize triggers.
    pub pos: String,
    pub sentence: TokenizedSentence,
    pub trigger: Span,
    pub constraints: ConstraintSet,
    /// Completed iterations.
    pub iteration: u32,
    /// Normalized triggers this chain may not reuse.
    pub used: BTreeSet<String>,
    pub last_id: String,
}

impl ChainState {
    pub fn from_seed(chain: usize, seed: &FrameAnnotation, lexicon: &InflectionLexicon) -> Self {
        let trigger_tokens = seed.sentence.span_tokens(seed.trigger).expect("validated seed");
        let pos = seed.lexical_unit.pos.clone();
        Self {
            chain,
            seed_id: seed.id.clone(),
            frame_id: seed.frame_id.clone(),
            constraints: ConstraintSet::empty().with_expansion(trigger_tokens, lexicon),
            used: BTreeSet::from([normalize_trigger(trigger_tokens, &pos, lexicon)]),
            pos,
            sentence: seed.sentence.clone(),
            trigger: seed.trigger,
            iteration: 0,
            last_id: seed.id.clone(),
        }
    }
}

/// Lowercased, lemmatized trigger tokens joined by spaces.
pub fn normalize_trigger<S: AsRef<str>>(tokens: &[S], pos: &str, lexicon: &InflectionLexicon) -> String {
    tokens
        .iter()
        .map(|t| lexicon.lemmatize(t.as_ref(), pos))
        .collect::<Vec<_>>()
        .join(" ")
}

/// An aligned beam element eligible to become the chain's next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub paraphrase: TokenizedSentence,
    pub trigger: Span,
    pub normalized: String,
    pub decoder_score: f64,
    pub aligner_score: f64,
}

impl Proposal {
    fn rank_key(&self, rerank: Rerank) -> f64 {
        match rerank {
            Rerank::Aligner => self.aligner_score,
            Rerank::Product => self.aligner_score * (1.0 - self.decoder_score),
        }
    }
}

/// Decode and align one chain step, returning eligible proposals best
/// first. Ties keep beam order.
pub fn propose(state: &ChainState, res: Resources<'_>, cfg: &PipelineConfig) -> Result<Vec<Proposal>> {
    let exhausted = |reason: String| Error::ChainExhausted {
        chain: state.chain,
        iteration: state.iteration + 1,
        reason,
    };
    let dc = DecodeConfig {
        beam_size: cfg.beam_size,
        max_len: state.sentence.len() + cfg.max_len_extra,
    };
    let hyps = match decode(&state.sentence, &state.constraints, dc, res.scorer) {
        Ok(h) => h,
        Err(Error::NoFeasibleOutput) => return Err(exhausted("no feasible paraphrase".into())),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for hyp in hyps.iter().take(cfg.align_top_n) {
        if hyp.tokens.is_empty() {
            continue;
        }
        let paraphrase = TokenizedSentence::from_tokens(&hyp.tokens)?;
        let Some(al) = aligner::align(
            res.aligner,
            res.provider,
            &state.sentence,
            &paraphrase,
            state.trigger,
            cfg.threshold,
        )?
        else {
            continue;
        };
        let tokens = paraphrase.span_tokens(al.span)?;
        let normalized = normalize_trigger(tokens, &state.pos, res.lexicon);
        if state.used.contains(&normalized) {
            continue;
        }
        out.push(Proposal {
            trigger: al.span,
            normalized,
            decoder_score: hyp.decoder_score,
            aligner_score: al.score,
            paraphrase,
        });
    }
    if out.is_empty() {
        return Err(exhausted("no aligned paraphrase with an unused trigger".into()));
    }
    // Stable: equal keys keep beam order.
    out.sort_by(|a, b| b.rank_key(cfg.rerank).total_cmp(&a.rank_key(cfg.rerank)));
    Ok(out)
}

/// Accept `p` as the chain's next step.
pub fn commit(state: &ChainState, p: &Proposal, lexicon: &InflectionLexicon) -> (AugmentationRecord, ChainState) {
    let iteration = state.iteration + 1;
    let record = AugmentationRecord {
        record_id: format!("{}:{iteration}", state.seed_id),
        parent_id: state.last_id.clone(),
        frame_id: state.frame_id.clone(),
        iteration,
        paraphrase: p.paraphrase.clone(),
        trigger: p.trigger,
        decoder_score: p.decoder_score,
        aligner_score: p.aligner_score,
        p_filter_score: None,
        r_filter_score: None,
    };
    let tokens = p.paraphrase.span_tokens(p.trigger).expect("aligned span is valid");
    let mut used = state.used.clone();
    used.insert(p.normalized.clone());
    let next = ChainState {
        constraints: state.constraints.with_expansion(tokens, lexicon),
        used,
        sentence: p.paraphrase.clone(),
        trigger: p.trigger,
        iteration,
        last_id: record.record_id.clone(),
        ..state.clone()
    };
    (record, next)
}

/// One full step for a single chain.
pub fn run_iteration(
    state: &ChainState,
    res: Resources<'_>,
    cfg: &PipelineConfig,
) -> Result<(AugmentationRecord, ChainState)> {
    let proposals = propose(state, res, cfg)?;
    Ok(commit(state, &proposals[0], res.lexicon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exhaustion {
    pub chain: usize,
    pub seed_id: String,
    pub iteration: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seeds: usize,
    pub dropped_long: usize,
    pub chains: usize,
    pub records: usize,
    pub exhausted: Vec<Exhaustion>,
    /// Distinct (frame, trigger text) pairs among records.
    pub unique_frame_triggers: usize,
    /// Distinct (frame, normalized trigger) pairs among records.
    pub unique_frame_lemmas: usize,
}

/// Run every seed for `cfg.iterations` steps. Records come back ordered by
/// (chain, iteration); chain ids index the seeds that survive the length cap.
pub fn run(seeds: &[FrameAnnotation], cfg: &PipelineConfig, res: Resources<'_>) -> Result<(Vec<AugmentationRecord>, RunReport)> {
    cfg.validate()?;
    let mut report = RunReport {
        seeds: seeds.len(),
        ..Default::default()
    };
    let kept: Vec<&FrameAnnotation> = seeds
        .iter()
        .filter(|s| s.sentence.len() <= cfg.max_source_tokens)
        .collect();
    report.dropped_long = seeds.len() - kept.len();
    report.chains = kept.len();

    let mut states: Vec<ChainState> = kept
        .iter()
        .enumerate()
        .map(|(i, s)| ChainState::from_seed(i, s, res.lexicon))
        .collect();
    let mut active: Vec<bool> = vec![true; states.len()];
    let mut per_chain: Vec<Vec<AugmentationRecord>> = vec![Vec::new(); states.len()];

    par::with_workers(cfg.workers, || -> Result<()> {
        for _ in 0..cfg.iterations {
            if cfg.framewise_union {
                share_within_frames(&mut states, &active);
            }
            let live: Vec<usize> = (0..states.len()).filter(|&i| active[i]).collect();
            if live.is_empty() {
                break;
            }
            let proposals = par::map(&live, |&i| propose(&states[i], res, cfg));
            // Claims are resolved in chain order, so same-iteration
            // collisions within a frame go to the lower chain id.
            let mut claimed: BTreeSet<(String, String)> = BTreeSet::new();
            for (&i, outcome) in live.iter().zip(proposals) {
                let outcome = outcome.and_then(|ps| {
                    let frame = &states[i].frame_id;
                    ps.into_iter()
                        .find(|p| !cfg.framewise_union || !claimed.contains(&(frame.clone(), p.normalized.clone())))
                        .ok_or_else(|| Error::ChainExhausted {
                            chain: i,
                            iteration: states[i].iteration + 1,
                            reason: "every trigger was claimed by another chain in the frame".into(),
                        })
                });
                match outcome {
                    Ok(p) => {
                        claimed.insert((states[i].frame_id.clone(), p.normalized.clone()));
                        let (record, next) = commit(&states[i], &p, res.lexicon);
                        per_chain[i].push(record);
                        states[i] = next;
                    }
                    Err(Error::ChainExhausted { chain, iteration, reason }) => {
                        active[i] = false;
                        report.exhausted.push(Exhaustion {
                            chain,
                            seed_id: states[i].seed_id.clone(),
                            iteration,
                            reason,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    })?;

    let records: Vec<AugmentationRecord> = per_chain.into_iter().flatten().collect();
    report.records = records.len();
    let (triggers, lemmas) = unique_counts(&records, &states, res.lexicon)?;
    report.unique_frame_triggers = triggers;
    report.unique_frame_lemmas = lemmas;
    Ok((records, report))
}

/// Union constraint sets and used-trigger sets across chains of each frame.
fn share_within_frames(states: &mut [ChainState], active: &[bool]) {
    let mut sets: BTreeMap<String, Vec<ConstraintSet>> = BTreeMap::new();
    let mut used: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in states.iter() {
        sets.entry(s.frame_id.clone()).or_default().push(s.constraints.clone());
        used.entry(s.frame_id.clone()).or_default().extend(s.used.iter().cloned());
    }
    let merged = union_framewise(&sets);
    for (s, &live) in states.iter_mut().zip(active) {
        if live {
            s.constraints = merged[&s.frame_id].clone();
            s.used = used[&s.frame_id].clone();
        }
    }
}

fn unique_counts(
    records: &[AugmentationRecord],
    states: &[ChainState],
    lexicon: &InflectionLexicon,
) -> Result<(usize, usize)> {
    let pos_by_seed: BTreeMap<&str, &str> = states.iter().map(|s| (s.seed_id.as_str(), s.pos.as_str())).collect();
    let mut triggers = BTreeSet::new();
    let mut lemmas = BTreeSet::new();
    for r in records {
        let seed = r.record_id.rsplit_once(':').map_or(r.record_id.as_str(), |(s, _)| s);
        let pos = pos_by_seed.get(seed).copied().unwrap_or("");
        let tokens = r.paraphrase.span_tokens(r.trigger)?;
        triggers.insert((r.frame_id.clone(), tokens.join(" ")));
        lemmas.insert((r.frame_id.clone(), normalize_trigger(tokens, pos, lexicon)));
    }
    Ok((triggers.len(), lemmas.len()))
}

/// Keep the `n_frames` earliest frames, the `n_lus` earliest lexical units of
/// each, and the `n_anns` earliest annotations of each unit. A frame or unit
/// is as early as its earliest annotation.
pub fn seed_ablation(corpus: &[FrameAnnotation], n_frames: usize, n_lus: usize, n_anns: usize) -> Result<Vec<FrameAnnotation>> {
    type Dated<'a> = Vec<(u64, &'a FrameAnnotation)>;
    let mut by_frame: BTreeMap<&str, BTreeMap<String, Dated>> = BTreeMap::new();
    for a in corpus {
        let order = a.created_order.ok_or_else(|| Error::MissingMetadata(a.id.clone()))?;
        by_frame
            .entry(a.frame_id.as_str())
            .or_default()
            .entry(a.lexical_unit.to_string())
            .or_default()
            .push((order, a));
    }
    let earliest = |anns: &Dated| anns.iter().map(|(o, _)| *o).min().unwrap_or(u64::MAX);
    let mut frames: Vec<_> = by_frame
        .into_iter()
        .map(|(frame, lus)| {
            let lus: Vec<_> = lus.into_iter().map(|(lu, anns)| (earliest(&anns), lu, anns)).collect();
            let first = lus.iter().map(|l| l.0).min().unwrap_or(u64::MAX);
            (first, frame, lus)
        })
        .collect();
    frames.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = Vec::new();
    for (_, _, mut lus) in frames.into_iter().take(n_frames) {
        lus.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        for (_, _, mut anns) in lus.into_iter().take(n_lus) {
            anns.sort_by(|a, b| (a.0, &a.1.id).cmp(&(b.0, &b.1.id)));
            out.extend(anns.into_iter().take(n_anns).map(|(_, a)| a.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::AlignerConfig;
    use crate::decoder::{SubstitutionEntry, SubstitutionLatticeScorer, Substitute};
    use crate::embedding::HashEmbedder;
    use crate::model::LexicalUnit;

    fn ann(id: &str, frame: &str, lu: &str, order: Option<u64>) -> FrameAnnotation {
        let s = TokenizedSentence::whitespace_tokenize("a b c").unwrap();
        FrameAnnotation::new(id, frame, LexicalUnit::parse(lu).unwrap(), Span::at(1), s, order).unwrap()
    }

    #[test]
    fn ablation_full_ontology_gives_180() {
        let mut corpus = Vec::new();
        let mut order = 0;
        for f in 0..25 {
            for l in 0..4 {
                for a in 0..5 {
                    order += 1;
                    corpus.push(ann(&format!("{f}-{l}-{a}"), &format!("F{f}"), &format!("w{l}.v"), Some(1000 - order)));
                }
            }
        }
        assert_eq!(seed_ablation(&corpus, 20, 3, 3).unwrap().len(), 180);
        let one = seed_ablation(&corpus, 1, 1, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].created_order, corpus.iter().filter_map(|a| a.created_order).min());
    }

    #[test]
    fn ablation_clamps_and_requires_metadata() {
        let corpus = vec![ann("1", "F", "a.v", Some(1)), ann("2", "F", "b.v", Some(2))];
        assert_eq!(seed_ablation(&corpus, 5, 3, 3).unwrap().len(), 2);
        let bad = vec![ann("x", "F", "a.v", None)];
        assert!(matches!(seed_ablation(&bad, 1, 1, 1), Err(Error::MissingMetadata(_))));
    }

    /// Scores `sigmoid(-|candidate start - source start|)`.
    fn positional_aligner(dim: usize) -> AlignerModel {
        let mut m = AlignerModel::zeros(dim, AlignerConfig { k: 0, hidden_units: 2, ..Default::default() });
        let (src, cand) = (2 * dim, 2 * dim + 2);
        m.w1[src * 2] = -1.0;
        m.w1[cand * 2] = 1.0;
        m.w1[src * 2 + 1] = 1.0;
        m.w1[cand * 2 + 1] = -1.0;
        m.w2 = vec![-1.0, -1.0];
        m
    }

    fn toy_scorer() -> SubstitutionLatticeScorer {
        let entries = vec![SubstitutionEntry {
            token: "corroborated".into(),
            substitutes: vec![
                Substitute { token: "confirmed".into(), p: 0.3 },
                Substitute { token: "verified".into(), p: 0.2 },
            ],
            copy_p: 0.5,
        }, SubstitutionEntry {
            token: "confirmed".into(),
            substitutes: vec![Substitute { token: "verified".into(), p: 0.6 }],
            copy_p: 0.4,
        }];
        SubstitutionLatticeScorer::new(entries, ["He", "it"]).unwrap()
    }

    #[test]
    fn corroborate_becomes_confirm() {
        let lexicon = InflectionLexicon::bundled();
        let scorer = toy_scorer();
        let provider = HashEmbedder::new(16);
        let model = positional_aligner(16);
        let res = Resources { scorer: &scorer, aligner: &model, provider: &provider, lexicon };
        let seed = FrameAnnotation::new(
            "s",
            "Evidence",
            LexicalUnit::parse("corroborate.v").unwrap(),
            Span::at(1),
            TokenizedSentence::whitespace_tokenize("He corroborated it").unwrap(),
            Some(0),
        )
        .unwrap();
        let cfg = PipelineConfig { beam_size: 4, align_top_n: 1, ..Default::default() };
        let state = ChainState::from_seed(0, &seed, lexicon);
        let (rec, next) = run_iteration(&state, res, &cfg).unwrap();
        assert_eq!(rec.paraphrase.raw_text(), "He confirmed it");
        assert_eq!(rec.trigger_text().unwrap(), "confirmed");
        assert_eq!(rec.parent_id, "s");
        assert!(next.constraints.is_superset(&state.constraints));
        for w in ["corroborates", "corroborating", "confirm", "confirms", "confirming"] {
            assert!(next.constraints.contains(&[w]), "{w}");
        }
        let (rec2, next2) = run_iteration(&next, res, &cfg).unwrap();
        assert_eq!(rec2.trigger_text().unwrap(), "verified");
        assert_eq!(rec2.parent_id, rec.record_id);
        let err = run_iteration(&next2, res, &cfg).unwrap_err();
        assert!(matches!(err, Error::ChainExhausted { iteration: 3, .. }));
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { align_top_n: 30, ..Default::default() }.validate().is_err());
        let json = r#"{"iterations": 5, "beam_size": 4, "align_top_n": 2}"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!((cfg.iterations, cfg.max_source_tokens), (5, 80));
    }
}
