use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use spanaug::aligner::{self, AlignerConfig, AlignerModel};
use spanaug::decoder::SubstitutionLatticeScorer;
use spanaug::embedding::{EmbeddingProvider, FileStoreProvider, HashEmbedder};
use spanaug::eval::{exact_prf, lexical_unit_prf, soft_prf, Average, LexicalUnitSet, Report};
use spanaug::filters::{self, train_filter, FilterConfig, FilterMode, FilterNet, FilterRule, LabeledFeatures};
use spanaug::io::{read_jsonl, read_seeds, write_jsonl, write_seeds};
use spanaug::model::{AlignmentExample, AugmentationRecord, Span, TokenizedSentence};
use spanaug::pipeline::{self, normalize_trigger, PipelineConfig, Resources};
use spanaug::synthetic::{self, SyntheticConfig};
use spanaug::wordalign::{symmetrized_alignments, words_to_span, SentencePair};
use spanaug::{InflectionLexicon, LexicalUnit};

#[derive(Parser)]
#[command(name = "spanaug", version, about = "Iterative paraphrastic augmentation of frame-annotated corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paraphrase and align a seed corpus for several iterations.
    Augment(AugmentArgs),
    /// Train the span aligner on gold alignments.
    TrainAligner(TrainAlignerArgs),
    /// Exact and soft span scores of a trained aligner.
    EvalAligner(EvalAlignerArgs),
    /// IBM Model 2 + grow-diag-final-and span baseline.
    BaselineAlign(BaselineArgs),
    /// Train a precision- or recall-leaning filter classifier.
    TrainFilter(TrainFilterArgs),
    /// Keep records accepted by a filter classifier or threshold rule.
    Filter(FilterArgs),
    /// Lexical-unit precision and recall of augmented triggers.
    EvalLu(EvalLuArgs),
    /// Select the earliest frames, lexical units and annotations.
    SeedAblate(SeedAblateArgs),
    /// Write a synthetic alignment corpus and its embedding store.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ProviderArgs {
    /// Embedding store written by the exporter.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Use the hash test embedder with this dimension instead of a store.
    #[arg(long, value_name = "DIM")]
    test_embedder: Option<usize>,
}

impl ProviderArgs {
    fn open(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match (&self.embeddings, self.test_embedder) {
            (Some(path), _) => {
                let store = FileStoreProvider::open(path, None).with_context(|| format!("opening {}", path.display()))?;
                Box::new(store)
            }
            (None, Some(dim)) if dim > 0 => Box::new(HashEmbedder::new(dim)),
            _ => bail!("--test-embedder needs a positive dimension"),
        })
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Seed corpus JSONL.
    #[arg(long)]
    seed: PathBuf,
    /// Pipeline config JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Synonym table JSONL for the lattice paraphraser.
    #[arg(long)]
    synonyms: PathBuf,
    /// Trained aligner model.
    #[arg(long)]
    aligner: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Inflection lexicon TSV; defaults to the bundled English lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Write the run report JSON here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Attach scores from a precision-mode filter.
    #[arg(long, requires = "r_filter")]
    p_filter: Option<PathBuf>,
    /// Attach scores from a recall-mode filter.
    #[arg(long, requires = "p_filter")]
    r_filter: Option<PathBuf>,
}

#[derive(Args)]
struct TrainAlignerArgs {
    /// Alignment examples JSONL.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Aligner config JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Fraction of examples held out for evaluation.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    /// Seed of the train/held-out shuffle.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AverageArg {
    Macro,
    Micro,
}

impl From<AverageArg> for Average {
    fn from(a: AverageArg) -> Self {
        match a {
            AverageArg::Macro => Average::Macro,
            AverageArg::Micro => Average::Micro,
        }
    }
}

#[derive(Args)]
struct EvalAlignerArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Abstention threshold; defaults to the model's.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "macro")]
    average: AverageArg,
    /// Write predicted spans (JSONL, null for abstentions).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainOn {
    /// Only the evaluation pairs.
    Test,
    /// The evaluation pairs followed by every `--extra` corpus.
    Concat,
}

#[derive(Args)]
struct BaselineArgs {
    /// Alignment examples JSONL to align and score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    train_on: TrainOn,
    /// Extra JSONL corpora with `source` and `reference` sentences.
    #[arg(long)]
    extra: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    m1_iterations: usize,
    #[arg(long, default_value_t = 5)]
    m2_iterations: usize,
    /// Write symmetrized word alignments, one `i-j` line per pair.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "macro")]
    average: AverageArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    P,
    R,
}

impl From<ModeArg> for FilterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::P => FilterMode::P,
            ModeArg::R => FilterMode::R,
        }
    }
}

#[derive(Args)]
struct TrainFilterArgs {
    /// Labeled-judgment JSONL: {record_id, features, label}.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    /// Loss weight of the down-weighted class.
    #[arg(long)]
    weight: Option<f64>,
    /// Filter config JSON; `--mode` and `--weight` override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// Augmentation records JSONL.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, requires = "model")]
    mode: Option<ModeArg>,
    /// Trained filter network.
    #[arg(long, conflicts_with = "rule")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Threshold rule such as `iter<=3,dec<=0.6,align>=0.9`.
    #[arg(long)]
    rule: Option<String>,
    /// Labeled-judgment JSONL; enables the precision/recall report.
    #[arg(long, requires = "seed_count")]
    labels: Option<PathBuf>,
    /// Seed corpus size for the size multiple.
    #[arg(long)]
    seed_count: Option<usize>,
}

#[derive(Args)]
struct EvalLuArgs {
    /// Augmentation records JSONL.
    #[arg(long)]
    records: PathBuf,
    /// Gold lexical units JSONL: {frame, lexical_unit}.
    #[arg(long)]
    gold: PathBuf,
    /// Seed corpus; its lexical units set each chain's POS and are counted
    /// as system output.
    #[arg(long)]
    seed: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct SeedAblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    lus: usize,
    #[arg(long, default_value_t = 3)]
    anns: usize,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Alignment examples JSONL to write.
    #[arg(long)]
    out_data: PathBuf,
    /// Embedding store to write.
    #[arg(long)]
    out_store: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Augment(a) => augment(a),
        Command::TrainAligner(a) => train_aligner(a),
        Command::EvalAligner(a) => eval_aligner(a),
        Command::BaselineAlign(a) => baseline_align(a),
        Command::TrainFilter(a) => train_filter_cmd(a),
        Command::Filter(a) => filter(a),
        Command::EvalLu(a) => eval_lu(a),
        Command::SeedAblate(a) => seed_ablate(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<std::borrow::Cow<'static, InflectionLexicon>> {
    Ok(match path {
        Some(p) => std::borrow::Cow::Owned(InflectionLexicon::load(p)?),
        None => std::borrow::Cow::Borrowed(InflectionLexicon::bundled()),
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let mut cfg: PipelineConfig = read_json(a.config.as_deref())?;
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    let seeds = read_seeds(&a.seed)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let vocab_tokens: Vec<String> = seeds.iter().flat_map(|s| s.sentence.tokens().to_vec()).collect();
    let scorer = SubstitutionLatticeScorer::new(SubstitutionLatticeScorer::read_table(&a.synonyms)?, vocab_tokens)?;
    let model = AlignerModel::load(&a.aligner).with_context(|| format!("loading {}", a.aligner.display()))?;
    let provider = a.provider.open()?;
    let res = Resources {
        scorer: &scorer,
        aligner: &model,
        provider: provider.as_ref(),
        lexicon: &lexicon,
    };
    let (mut records, report) = pipeline::run(&seeds, &cfg, res)?;
    if let (Some(p), Some(r)) = (&a.p_filter, &a.r_filter) {
        filters::attach_scores(&mut records, &FilterNet::load(p)?, &FilterNet::load(r)?);
    }
    write_jsonl(&a.out, &records)?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&report)
}

fn train_aligner(a: TrainAlignerArgs) -> Result<()> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let cfg: AlignerConfig = read_json(a.config.as_deref())?;
    let mut data: Vec<AlignmentExample> = read_jsonl(&a.data)?;
    if !(0.0..1.0).contains(&a.holdout) {
        bail!("--holdout must be in [0, 1)");
    }
    data.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(a.split_seed));
    let held = (data.len() as f64 * a.holdout).round() as usize;
    let (test, train) = data.split_at(held);
    let provider = a.provider.open()?;
    let (model, report) = aligner::train(train, provider.as_ref(), &cfg)?;
    model.save(&a.out)?;
    let mut out = json!({
        "examples_used": report.examples_used,
        "skipped_none": report.skipped_none,
        "window_violations": report.window_violations.len(),
        "epoch_losses": report.epoch_losses,
    });
    if !test.is_empty() {
        let (exact, soft) = score_aligner(&model, provider.as_ref(), test, cfg.threshold, Average::Macro)?;
        out["heldout"] = json!([exact, soft]);
    }
    print_json(&out)
}

fn score_aligner(
    model: &AlignerModel,
    provider: &dyn EmbeddingProvider,
    data: &[AlignmentExample],
    threshold: f64,
    average: Average,
) -> Result<(Report, Report)> {
    let preds: Vec<Option<Span>> = aligner::align_all(model, provider, data, threshold)?
        .into_iter()
        .map(|a| a.map(|a| a.span))
        .collect();
    let golds: Vec<Option<Span>> = data.iter().map(|ex| ex.gold_span).collect();
    span_reports(&preds, &golds, average)
}

fn span_reports(preds: &[Option<Span>], golds: &[Option<Span>], average: Average) -> Result<(Report, Report)> {
    let (exact, ec) = exact_prf(preds, golds)?;
    let (soft, sc) = soft_prf(preds, golds, average)?;
    Ok((Report::new("exact", exact, ec), Report::new("soft", soft, sc)))
}

fn eval_aligner(a: EvalAlignerArgs) -> Result<()> {
    let data: Vec<AlignmentExample> = read_jsonl(&a.data)?;
    let model = AlignerModel::load(&a.model)?;
    let provider = a.provider.open()?;
    let threshold = a.threshold.unwrap_or(model.config.threshold);
    let preds: Vec<Option<Span>> = aligner::align_all(&model, provider.as_ref(), &data, threshold)?
        .into_iter()
        .map(|x| x.map(|x| x.span))
        .collect();
    if let Some(path) = &a.predictions {
        write_jsonl(path, &preds)?;
    }
    let golds: Vec<Option<Span>> = data.iter().map(|ex| ex.gold_span).collect();
    let (exact, soft) = span_reports(&preds, &golds, a.average.into())?;
    print_json(&exact)?;
    print_json(&soft)
}

#[derive(serde::Deserialize)]
struct PairRow {
    source: TokenizedSentence,
    reference: TokenizedSentence,
}

fn as_pair(source: &TokenizedSentence, reference: &TokenizedSentence) -> SentencePair {
    (source.tokens().to_vec(), reference.tokens().to_vec())
}

fn baseline_align(a: BaselineArgs) -> Result<()> {
    let data: Vec<AlignmentExample> = read_jsonl(&a.data)?;
    let pairs: Vec<SentencePair> = data.iter().map(|ex| as_pair(&ex.source, &ex.reference)).collect();
    let mut train = pairs.clone();
    match a.train_on {
        TrainOn::Test if !a.extra.is_empty() => bail!("--extra needs --train-on concat"),
        TrainOn::Test => {}
        TrainOn::Concat => {
            for path in &a.extra {
                let rows: Vec<PairRow> = read_jsonl(path)?;
                train.extend(rows.iter().map(|r| as_pair(&r.source, &r.reference)));
            }
        }
    }
    let alignments = symmetrized_alignments(&train, &pairs, a.m1_iterations, a.m2_iterations)?;
    if let Some(path) = &a.out {
        let text: String = alignments.iter().map(|al| format!("{al}\n")).collect();
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let preds: Vec<Option<Span>> = alignments
        .iter()
        .zip(&data)
        .map(|(al, ex)| words_to_span(al, ex.source_span))
        .collect();
    let golds: Vec<Option<Span>> = data.iter().map(|ex| ex.gold_span).collect();
    let (exact, soft) = span_reports(&preds, &golds, a.average.into())?;
    print_json(&exact)?;
    print_json(&soft)
}

fn train_filter_cmd(a: TrainFilterArgs) -> Result<()> {
    let mut cfg: FilterConfig = read_json(a.config.as_deref())?;
    cfg.mode = a.mode.into();
    if let Some(w) = a.weight {
        cfg.class_weight = w;
    }
    let rows: Vec<LabeledFeatures> = read_jsonl(&a.data)?;
    let labeled: Vec<([f64; 3], u8)> = rows.iter().map(|r| (r.features, r.label)).collect();
    let net = train_filter(&labeled, &cfg)?;
    net.save(&a.out)?;
    let correct = labeled
        .iter()
        .filter(|(f, l)| (net.score_features(*f) >= 0.5) == (*l == 1))
        .count();
    print_json(&json!({
        "mode": cfg.mode,
        "class_weight": cfg.class_weight,
        "examples": labeled.len(),
        "train_accuracy": correct as f64 / labeled.len() as f64,
    }))
}

fn filter(a: FilterArgs) -> Result<()> {
    let mut records: Vec<AugmentationRecord> = read_jsonl(&a.records)?;
    let keep: Vec<bool> = match (&a.model, &a.rule) {
        (Some(path), None) => {
            let net = FilterNet::load(path)?;
            if let Some(mode) = a.mode {
                if FilterMode::from(mode) != net.config.mode {
                    bail!("{} is not a {:?}-mode filter", path.display(), FilterMode::from(mode));
                }
            }
            records
                .iter_mut()
                .map(|r| {
                    let s = net.score(r);
                    match net.config.mode {
                        FilterMode::P => r.p_filter_score = Some(s),
                        FilterMode::R => r.r_filter_score = Some(s),
                    }
                    s >= a.threshold
                })
                .collect()
        }
        (None, Some(rule)) => {
            let rule: FilterRule = rule.parse()?;
            records.iter().map(|r| rule.accepts(r)).collect()
        }
        _ => bail!("give exactly one of --model or --rule"),
    };
    if let (Some(labels), Some(seed_count)) = (&a.labels, a.seed_count) {
        let rows: Vec<LabeledFeatures> = read_jsonl(labels)?;
        let by_id: BTreeMap<&str, u8> = rows.iter().map(|r| (r.record_id.as_str(), r.label)).collect();
        let labeled: Vec<(AugmentationRecord, Option<bool>)> = records
            .iter()
            .map(|r| (r.clone(), by_id.get(r.record_id.as_str()).map(|&l| l == 1)))
            .collect();
        // Precision and the size multiple come from the kept records; recall
        // is relative to every acceptable record.
        let kept: Vec<(AugmentationRecord, Option<bool>)> = labeled
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(x, _)| x.clone())
            .collect();
        let full = filters::apply_rule(&FilterRule::all(), &labeled, seed_count)?;
        let sub = filters::apply_rule(&FilterRule::all(), &kept, seed_count)?;
        let acceptable = |xs: &[(AugmentationRecord, Option<bool>)]| xs.iter().filter(|(_, l)| *l == Some(true)).count();
        let recall = if acceptable(&labeled) == 0 {
            0.0
        } else {
            acceptable(&kept) as f64 / acceptable(&labeled) as f64
        };
        print_json(&json!({
            "kept": kept.len(),
            "P": sub.precision * 100.0,
            "R": recall * 100.0,
            "multiple": sub.multiple,
            "unfiltered_P": full.precision * 100.0,
        }))?;
    }
    let kept: Vec<AugmentationRecord> = records.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect();
    write_jsonl(&a.out, &kept)?;
    eprintln!("kept {} records", kept.len());
    Ok(())
}

#[derive(serde::Deserialize)]
struct GoldUnit {
    frame: String,
    lexical_unit: String,
}

fn eval_lu(a: EvalLuArgs) -> Result<()> {
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let gold_rows: Vec<GoldUnit> = read_jsonl(&a.gold)?;
    let mut gold = LexicalUnitSet::new();
    for g in gold_rows {
        gold.insert((g.frame, LexicalUnit::parse(&g.lexical_unit)?.lemma));
    }
    let mut system = LexicalUnitSet::new();
    let mut pos_by_seed: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = &a.seed {
        for s in read_seeds(path)? {
            system.insert((s.frame_id.clone(), s.lexical_unit.lemma.clone()));
            pos_by_seed.insert(s.id, s.lexical_unit.pos);
        }
    }
    let records: Vec<AugmentationRecord> = read_jsonl(&a.records)?;
    for r in &records {
        let seed = r.record_id.rsplit_once(':').map_or(r.record_id.as_str(), |(s, _)| s);
        let pos = pos_by_seed.get(seed).map_or("v", String::as_str);
        let tokens = r.paraphrase.span_tokens(r.trigger)?;
        system.insert((r.frame_id.clone(), normalize_trigger(tokens, pos, &lexicon)));
    }
    let (prf, counts) = lexical_unit_prf(&system, &gold);
    print_json(&Report::new("lexical_unit", prf, counts))
}

fn seed_ablate(a: SeedAblateArgs) -> Result<()> {
    let corpus = read_seeds(&a.corpus)?;
    let kept = pipeline::seed_ablation(&corpus, a.frames, a.lus, a.anns)?;
    write_seeds(&a.out, &kept)?;
    print_json(&json!({ "input": corpus.len(), "kept": kept.len() }))
}

fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        pairs: a.pairs,
        dim: a.dim,
        seed: a.seed,
        ..Default::default()
    };
    let (data, store) = synthetic::generate(&cfg)?;
    write_jsonl(&a.out_data, &data)?;
    store.write(&a.out_store)?;
    print_json(&json!({ "pairs": data.len(), "dim": a.dim }))
}
