use proptest::prelude::*;

use spanaug::filters::{apply_rule, attach_scores, train_filter, Atom, FilterConfig, FilterMode, FilterRule};
use spanaug::model::{AugmentationRecord, Span, TokenizedSentence};

fn record(i: usize, iteration: u32, dec: f64, align: f64) -> AugmentationRecord {
    AugmentationRecord {
        record_id: format!("r{i}"),
        parent_id: "s".into(),
        frame_id: "F".into(),
        iteration,
        paraphrase: TokenizedSentence::from_tokens(&["x"]).unwrap(),
        trigger: Span::at(0),
        decoder_score: dec,
        aligner_score: align,
        p_filter_score: None,
        r_filter_score: None,
    }
}

fn labeled() -> impl Strategy<Value = Vec<(AugmentationRecord, Option<bool>)>> {
    prop::collection::vec((1u32..=10, 0.0..1.0f64, 0.0..1.0f64, any::<bool>()), 0..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (it, d, a, l))| (record(i, it, d, a), Some(l)))
            .collect()
    })
}

fn rule() -> impl Strategy<Value = FilterRule> {
    (proptest::option::of(1u32..10), proptest::option::of(0.0..1.0f64), proptest::option::of(0.0..1.0f64)).prop_map(
        |(i, d, a)| {
            let mut r = FilterRule::all();
            if let Some(i) = i {
                r = r.and(Atom::IterationAtMost(i));
            }
            if let Some(d) = d {
                r = r.and(Atom::DecoderScoreAtMost(d));
            }
            if let Some(a) = a {
                r = r.and(Atom::AlignerScoreAtLeast(a));
            }
            r
        },
    )
}

proptest! {
    #[test]
    fn conjunction_subset_is_inside_each_conjunct(recs in labeled(), r in rule()) {
        let plain: Vec<AugmentationRecord> = recs.iter().map(|(r, _)| r.clone()).collect();
        let all = r.select(&plain);
        for atom in &r.atoms {
            let single = FilterRule::all().and(*atom).select(&plain);
            prop_assert!(all.iter().all(|i| single.contains(i)));
        }
    }

    #[test]
    fn report_matches_recount(recs in labeled(), r in rule(), seed in 1usize..200) {
        let rep = apply_rule(&r, &recs, seed).unwrap();
        let kept: Vec<&(AugmentationRecord, Option<bool>)> = recs.iter().filter(|(x, _)| {
            r.atoms.iter().all(|a| match *a {
                Atom::IterationAtMost(n) => x.iteration <= n,
                Atom::DecoderScoreAtMost(d) => x.decoder_score <= d,
                Atom::AlignerScoreAtLeast(y) => x.aligner_score >= y,
            })
        }).collect();
        let good_kept = kept.iter().filter(|(_, l)| *l == Some(true)).count() as f64;
        let good = recs.iter().filter(|(_, l)| *l == Some(true)).count() as f64;
        prop_assert_eq!(rep.kept.len(), kept.len());
        prop_assert_eq!(rep.precision, if kept.is_empty() { 0.0 } else { good_kept / kept.len() as f64 });
        prop_assert_eq!(rep.recall, if good == 0.0 { 0.0 } else { good_kept / good });
        prop_assert_eq!(rep.multiple, (seed + kept.len()) as f64 / seed as f64);
    }
}

/// Two overlapping classes driven by aligner score, with label noise.
fn noisy(n: usize) -> Vec<([f64; 3], u8)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|_| {
            let f = [rng.gen_range(1..=10) as f64, rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let p = 0.2 + 0.6 * f[2];
            (f, u8::from(rng.gen_bool(p)))
        })
        .collect()
}

#[test]
fn precision_mode_weight_lowers_positive_rate() {
    let data = noisy(300);
    let rate = |w: f64| {
        let cfg = FilterConfig { mode: FilterMode::P, class_weight: w, epochs: 100, ..Default::default() };
        let net = train_filter(&data, &cfg).unwrap();
        data.iter().filter(|(f, _)| net.score_features(*f) >= 0.5).count()
    };
    assert!(rate(0.05) < rate(1.0));
}

#[test]
fn recall_mode_weight_raises_positive_rate() {
    let data = noisy(300);
    let rate = |w: f64| {
        let cfg = FilterConfig { mode: FilterMode::R, class_weight: w, epochs: 100, ..Default::default() };
        let net = train_filter(&data, &cfg).unwrap();
        data.iter().filter(|(f, _)| net.score_features(*f) >= 0.5).count()
    };
    assert!(rate(0.05) > rate(1.0));
}

#[test]
fn training_is_deterministic_and_scores_stay_finite() {
    let data = noisy(100);
    let cfg = FilterConfig { epochs: 30, ..Default::default() };
    let a = train_filter(&data, &cfg).unwrap();
    let b = train_filter(&data, &cfg).unwrap();
    assert_eq!(a, b);
    let r_net = train_filter(&data, &FilterConfig { mode: FilterMode::R, ..cfg }).unwrap();
    let mut recs: Vec<AugmentationRecord> = (0..50).map(|i| record(i, 3, 0.4, 1.0 - i as f64 / 49.0)).collect();
    attach_scores(&mut recs, &a, &r_net);
    for r in &recs {
        for s in [r.p_filter_score.unwrap(), r.r_filter_score.unwrap()] {
            assert!(s.is_finite() && s > 0.0 && s < 1.0);
        }
    }
}
