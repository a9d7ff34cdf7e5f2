mod common;

use std::collections::BTreeSet;

use spanaug::constraints::ConstraintSet;
use spanaug::decoder::{Substitute, SubstitutionEntry, SubstitutionLatticeScorer};
use spanaug::embedding::HashEmbedder;
use spanaug::lexicon::InflectionLexicon;
use spanaug::model::{FrameAnnotation, LexicalUnit, Span, TokenizedSentence};
use spanaug::pipeline::{self, normalize_trigger, run_iteration, ChainState, PipelineConfig, Resources};
use spanaug::Error;

use common::*;

fn resources<'a>(
    scorer: &'a SubstitutionLatticeScorer,
    model: &'a spanaug::aligner::AlignerModel,
    provider: &'a HashEmbedder,
) -> Resources<'a> {
    Resources { scorer, aligner: model, provider, lexicon: InflectionLexicon::bundled() }
}

#[test]
fn full_scale_chain_count_times_iterations() {
    let world = toy_world(9, 19, 30, 1);
    assert_eq!(world.seeds.len(), 171);
    let (provider, model) = (HashEmbedder::new(8), positional_aligner(8));
    let cfg = PipelineConfig { iterations: 10, beam_size: 12, align_top_n: 12, ..Default::default() };
    let (records, report) = pipeline::run(&world.seeds, &cfg, resources(&world.scorer, &model, &provider)).unwrap();
    assert!(report.exhausted.is_empty());
    assert_eq!(records.len(), 1710);
    assert_eq!(report.records, 1710);
}

#[test]
fn unique_counts_match_recount() {
    let world = toy_world(3, 5, 12, 2);
    let (provider, model) = (HashEmbedder::new(8), positional_aligner(8));
    let cfg = PipelineConfig { iterations: 4, beam_size: 6, align_top_n: 6, ..Default::default() };
    let (records, report) = pipeline::run(&world.seeds, &cfg, resources(&world.scorer, &model, &provider)).unwrap();
    let lexicon = InflectionLexicon::bundled();
    let triggers: BTreeSet<(String, String)> = records
        .iter()
        .map(|r| (r.frame_id.clone(), r.trigger_text().unwrap()))
        .collect();
    let lemmas: BTreeSet<(String, String)> = records
        .iter()
        .map(|r| (r.frame_id.clone(), normalize_trigger(&[r.trigger_text().unwrap()], "v", lexicon)))
        .collect();
    assert_eq!(report.unique_frame_triggers, triggers.len());
    assert_eq!(report.unique_frame_lemmas, lemmas.len());
    // Without unioning, chains of one frame may revisit each other's triggers.
    assert!(report.unique_frame_lemmas <= records.len());
}

#[test]
fn chains_evolve_independently_without_unioning() {
    let world = toy_world(2, 3, 10, 3);
    let (provider, model) = (HashEmbedder::new(8), positional_aligner(8));
    let res = resources(&world.scorer, &model, &provider);
    let cfg = PipelineConfig { iterations: 3, beam_size: 5, align_top_n: 5, ..Default::default() };
    let (together, _) = pipeline::run(&world.seeds, &cfg, res).unwrap();
    for seed in &world.seeds {
        let (alone, _) = pipeline::run(std::slice::from_ref(seed), &cfg, res).unwrap();
        let mine: Vec<_> = together.iter().filter(|r| r.record_id.starts_with(&format!("{}:", seed.id))).cloned().collect();
        assert_eq!(alone, mine);
    }
}

#[test]
fn long_seeds_are_dropped_and_counted() {
    let world = toy_world(1, 4, 10, 4);
    let (provider, model) = (HashEmbedder::new(8), positional_aligner(8));
    let cfg = PipelineConfig { iterations: 1, beam_size: 3, align_top_n: 3, max_source_tokens: 4, ..Default::default() };
    let (records, report) = pipeline::run(&world.seeds, &cfg, resources(&world.scorer, &model, &provider)).unwrap();
    let short = world.seeds.iter().filter(|s| s.sentence.len() <= 4).count();
    assert_eq!(report.dropped_long, 4 - short);
    assert_eq!(records.len(), short);
}

#[test]
fn covering_the_inventory_exhausts_the_chain() {
    let entry = SubstitutionEntry {
        token: "buy".into(),
        substitutes: vec![Substitute { token: "purchase".into(), p: 0.5 }],
        copy_p: 0.5,
    };
    let scorer = SubstitutionLatticeScorer::new(vec![entry], ["I", "it"]).unwrap();
    let (provider, model) = (HashEmbedder::new(8), positional_aligner(8));
    let seed = FrameAnnotation::new(
        "s",
        "Commerce_buy",
        LexicalUnit::parse("buy.v").unwrap(),
        Span::at(1),
        TokenizedSentence::whitespace_tokenize("I buy it").unwrap(),
        None,
    )
    .unwrap();
    let lexicon = InflectionLexicon::bundled();
    let mut state = ChainState::from_seed(0, &seed, lexicon);
    state.constraints = state.constraints.union(&ConstraintSet::empty().with_expansion(&["purchase"], lexicon));
    let err = run_iteration(&state, resources(&scorer, &model, &provider), &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::ChainExhausted { chain: 0, iteration: 1, .. }));

    let cfg = PipelineConfig { iterations: 3, ..Default::default() };
    let (records, report) = pipeline::run(&[seed], &cfg, resources(&scorer, &model, &provider)).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].trigger_text().unwrap(), "purchase");
    assert_eq!(report.exhausted.len(), 1);
    assert_eq!(report.exhausted[0].iteration, 2);
}
