//! Filtering augmented records: heuristic threshold rules and the two
//! class-weighted filter classifiers over (iteration, decoder score,
//! aligner score).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AugmentationRecord;
use crate::nn::{self, bce_with_logits, prelu, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    IterationAtMost(u32),
    DecoderScoreAtMost(f64),
    AlignerScoreAtLeast(f64),
}

impl Atom {
    pub fn accepts(&self, r: &AugmentationRecord) -> bool {
        match *self {
            Atom::IterationAtMost(n) => r.iteration <= n,
            Atom::DecoderScoreAtMost(x) => r.decoder_score <= x,
            Atom::AlignerScoreAtLeast(y) => r.aligner_score >= y,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::IterationAtMost(n) => write!(f, "iter<={n}"),
            Atom::DecoderScoreAtMost(x) => write!(f, "dec<={x}"),
            Atom::AlignerScoreAtLeast(y) => write!(f, "align>={y}"),
        }
    }
}

/// Conjunction of atoms; the empty conjunction accepts everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterRule {
    pub atoms: Vec<Atom>,
}

impl FilterRule {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn and(mut self, atom: Atom) -> Self {
        self.atoms.push(atom);
        self
    }

    pub fn accepts(&self, r: &AugmentationRecord) -> bool {
        self.atoms.iter().all(|a| a.accepts(r))
    }

    /// Indices of accepted records.
    pub fn select(&self, records: &[AugmentationRecord]) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.accepts(r))
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("all");
        }
        let parts: Vec<String> = self.atoms.iter().map(Atom::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for FilterRule {
    type Err = Error;

    /// `all`, or comma-separated atoms: `iter<=N`, `dec<=X`, `align>=Y`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Self::all());
        }
        let mut rule = Self::all();
        for part in s.split(',') {
            let part = part.trim();
            let bad = || Error::InvalidInput(format!("bad filter atom {part:?}"));
            let atom = if let Some(v) = part.strip_prefix("iter<=") {
                Atom::IterationAtMost(v.parse().map_err(|_| bad())?)
            } else if let Some(v) = part.strip_prefix("dec<=") {
                Atom::DecoderScoreAtMost(v.parse().map_err(|_| bad())?)
            } else if let Some(v) = part.strip_prefix("align>=") {
                Atom::AlignerScoreAtLeast(v.parse().map_err(|_| bad())?)
            } else {
                return Err(bad());
            };
            rule.atoms.push(atom);
        }
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleReport {
    pub kept: Vec<usize>,
    /// Acceptable share of the kept subset.
    pub precision: f64,
    /// Share of all acceptable records that were kept.
    pub recall: f64,
    /// Corpus size after adding the kept records, relative to the seed
    /// corpus: `(seed + kept) / seed`.
    pub multiple: f64,
}

/// Apply `rule` to labeled records and report precision, recall and size
/// multiple against a seed corpus of `seed_count` sentences.
pub fn apply_rule(rule: &FilterRule, records: &[(AugmentationRecord, Option<bool>)], seed_count: usize) -> Result<RuleReport> {
    if seed_count == 0 {
        return Err(Error::InvalidInput("seed corpus size must be positive".into()));
    }
    let mut acceptable_total = 0usize;
    for (r, label) in records {
        match label {
            Some(true) => acceptable_total += 1,
            Some(false) => {}
            None => return Err(Error::MissingLabels(r.record_id.clone())),
        }
    }
    let kept: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, (r, _))| rule.accepts(r))
        .map(|(i, _)| i)
        .collect();
    let acceptable_kept = kept.iter().filter(|&&i| records[i].1 == Some(true)).count();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(RuleReport {
        precision: frac(acceptable_kept, kept.len()),
        recall: frac(acceptable_kept, acceptable_total),
        multiple: (seed_count + kept.len()) as f64 / seed_count as f64,
        kept,
    })
}

/// Binary label from 0–100 judgments: reject when the mean is below 50.
pub fn label_from_judgments(scores: &[f64]) -> Option<u8> {
    if scores.is_empty() {
        return None;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Some(u8::from(mean >= 50.0))
}

/// One line of a labeled-judgment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub record_id: String,
    pub features: [f64; 3],
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Down-weight the loss on positive labels.
    P,
    /// Down-weight the loss on negative labels.
    R,
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" | "P" => Ok(Self::P),
            "r" | "R" => Ok(Self::R),
            other => Err(Error::InvalidInput(format!("unknown filter mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub mode: FilterMode,
    /// Loss multiplier for the down-weighted class.
    pub class_weight: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::P,
            class_weight: 0.3,
            hidden: 10,
            learning_rate: 0.1,
            epochs: 300,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl FilterConfig {
    fn weight_for(&self, label: f64) -> f64 {
        match self.mode {
            FilterMode::P if label > 0.5 => self.class_weight,
            FilterMode::R if label < 0.5 => self.class_weight,
            _ => 1.0,
        }
    }
}

/// 3 → hidden → hidden → 1 network with PReLU hidden layers and a sigmoid
/// output. Inputs are z-scored with stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterNet {
    pub config: FilterConfig,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// 3 × hidden, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub a1: Vec<f64>,
    /// hidden × hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub a2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub a1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub a2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl FilterGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in [&self.w1, &self.b1, &self.a1, &self.w2, &self.b2, &self.a2, &self.w3] {
            v.extend_from_slice(t);
        }
        v.push(self.b3);
        v
    }
}

struct Activations {
    x: [f64; 3],
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    logit: f64,
}

impl FilterNet {
    pub fn new(config: FilterConfig) -> Self {
        let h = config.hidden.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            w1: nn::glorot(&mut rng, 3, h),
            b1: vec![0.0; h],
            a1: vec![0.25; h],
            w2: nn::glorot(&mut rng, h, h),
            b2: vec![0.0; h],
            a2: vec![0.25; h],
            w3: nn::glorot(&mut rng, h, 1),
            b3: 0.0,
            config,
        }
    }

    /// All-zero weights; scores 0.5 everywhere.
    pub fn zeros(config: FilterConfig) -> Self {
        let mut net = Self::new(config);
        for t in [&mut net.w1, &mut net.w2, &mut net.w3] {
            t.fill(0.0);
        }
        net
    }

    fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn activations(&self, features: [f64; 3]) -> Activations {
        let h = self.hidden();
        let x: [f64; 3] = std::array::from_fn(|i| (features[i] - self.mean[i]) / self.std[i]);
        let mut z1 = self.b1.clone();
        for (i, xi) in x.iter().enumerate() {
            for j in 0..h {
                z1[j] += xi * self.w1[i * h + j];
            }
        }
        let h1: Vec<f64> = z1.iter().zip(&self.a1).map(|(&z, &a)| prelu(z, a)).collect();
        let mut z2 = self.b2.clone();
        for (i, hi) in h1.iter().enumerate() {
            for j in 0..h {
                z2[j] += hi * self.w2[i * h + j];
            }
        }
        let h2: Vec<f64> = z2.iter().zip(&self.a2).map(|(&z, &a)| prelu(z, a)).collect();
        let logit = self.b3 + h2.iter().zip(&self.w3).map(|(a, b)| a * b).sum::<f64>();
        Activations { x, z1, h1, z2, h2, logit }
    }

    /// Keep-probability for raw features (iteration, decoder, aligner).
    pub fn score_features(&self, features: [f64; 3]) -> f64 {
        sigmoid(self.activations(features).logit)
    }

    pub fn score(&self, record: &AugmentationRecord) -> f64 {
        self.score_features(record.features())
    }

    /// Weighted BCE summed over `data` and its gradients.
    pub fn loss_and_grads(&self, data: &[([f64; 3], f64)]) -> (f64, FilterGrads) {
        let h = self.hidden();
        let mut g = FilterGrads {
            w1: vec![0.0; 3 * h],
            b1: vec![0.0; h],
            a1: vec![0.0; h],
            w2: vec![0.0; h * h],
            b2: vec![0.0; h],
            a2: vec![0.0; h],
            w3: vec![0.0; h],
            b3: 0.0,
        };
        let mut loss = 0.0;
        for &(features, label) in data {
            let w = self.config.weight_for(label);
            let act = self.activations(features);
            loss += w * bce_with_logits(act.logit, label);
            let dlogit = w * (sigmoid(act.logit) - label);
            g.b3 += dlogit;
            let mut dz2 = vec![0.0; h];
            for j in 0..h {
                g.w3[j] += dlogit * act.h2[j];
                let dh2 = dlogit * self.w3[j];
                if act.z2[j] > 0.0 {
                    dz2[j] = dh2;
                } else {
                    dz2[j] = self.a2[j] * dh2;
                    g.a2[j] += dh2 * act.z2[j];
                }
            }
            let mut dz1 = vec![0.0; h];
            for i in 0..h {
                let mut dh1 = 0.0;
                for j in 0..h {
                    g.w2[i * h + j] += act.h1[i] * dz2[j];
                    dh1 += self.w2[i * h + j] * dz2[j];
                }
                if act.z1[i] > 0.0 {
                    dz1[i] = dh1;
                } else {
                    dz1[i] = self.a1[i] * dh1;
                    g.a1[i] += dh1 * act.z1[i];
                }
            }
            for j in 0..h {
                g.b2[j] += dz2[j];
                g.b1[j] += dz1[j];
                for i in 0..3 {
                    g.w1[i * h + j] += act.x[i] * dz1[j];
                }
            }
        }
        (loss, g)
    }

    pub fn trainable(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in [&self.w1, &self.b1, &self.a1, &self.w2, &self.b2, &self.a2, &self.w3] {
            v.extend_from_slice(t);
        }
        v.push(self.b3);
        v
    }

    pub fn set_trainable(&mut self, flat: &[f64]) {
        let mut at = 0;
        for t in [
            &mut self.w1,
            &mut self.b1,
            &mut self.a1,
            &mut self.w2,
            &mut self.b2,
            &mut self.a2,
            &mut self.w3,
        ] {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        self.b3 = flat[at];
    }

    fn step(&mut self, g: &FilterGrads, scale: f64) {
        let flat: Vec<f64> = self
            .trainable()
            .iter()
            .zip(g.flatten())
            .map(|(p, d)| p - scale * d)
            .collect();
        self.set_trainable(&flat);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let b3 = [self.b3];
        nn::write_net(
            path.as_ref(),
            "filter",
            &self.config,
            &[
                ("mean", &self.mean),
                ("std", &self.std),
                ("W1", &self.w1),
                ("b1", &self.b1),
                ("a1", &self.a1),
                ("W2", &self.w2),
                ("b2", &self.b2),
                ("a2", &self.a2),
                ("W3", &self.w3),
                ("b3", &b3),
            ],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, mut t): (FilterConfig, _) = nn::read_net(path.as_ref(), "filter")?;
        let h = config.hidden.max(1);
        let arr3 = |v: Vec<f64>| -> [f64; 3] { [v[0], v[1], v[2]] };
        Ok(Self {
            mean: arr3(nn::take_tensor(&mut t, "mean", 3)?),
            std: arr3(nn::take_tensor(&mut t, "std", 3)?),
            w1: nn::take_tensor(&mut t, "W1", 3 * h)?,
            b1: nn::take_tensor(&mut t, "b1", h)?,
            a1: nn::take_tensor(&mut t, "a1", h)?,
            w2: nn::take_tensor(&mut t, "W2", h * h)?,
            b2: nn::take_tensor(&mut t, "b2", h)?,
            a2: nn::take_tensor(&mut t, "a2", h)?,
            w3: nn::take_tensor(&mut t, "W3", h)?,
            b3: nn::take_tensor(&mut t, "b3", 1)?[0],
            config,
        })
    }
}

/// Train a filter classifier on (features, 0|1) pairs.
pub fn train_filter(labeled: &[([f64; 3], u8)], cfg: &FilterConfig) -> Result<FilterNet> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let positives = labeled.iter().filter(|(_, l)| *l == 1).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::DegenerateLabels);
    }
    if let Some((_, l)) = labeled.iter().find(|(_, l)| *l > 1) {
        return Err(Error::InvalidInput(format!("label {l} is not 0 or 1")));
    }
    let mut net = FilterNet::new(cfg.clone());
    let n = labeled.len() as f64;
    for i in 0..3 {
        let mean = labeled.iter().map(|(f, _)| f[i]).sum::<f64>() / n;
        let var = labeled.iter().map(|(f, _)| (f[i] - mean).powi(2)).sum::<f64>() / n;
        net.mean[i] = mean;
        // A constant column leaves rounding noise in `var`; scaling by that
        // would amplify the f32 rounding of the stored mean.
        let std = var.sqrt();
        net.std[i] = if std > 1e-6 * mean.abs().max(1.0) { std } else { 1.0 };
    }
    let data: Vec<([f64; 3], f64)> = labeled.iter().map(|&(f, l)| (f, l as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let slice: Vec<([f64; 3], f64)> = chunk.iter().map(|&i| data[i]).collect();
            let (_, g) = net.loss_and_grads(&slice);
            net.step(&g, cfg.learning_rate / chunk.len() as f64);
        }
    }
    Ok(net)
}

/// Set both filter scores on every record.
pub fn attach_scores(records: &mut [AugmentationRecord], p_net: &FilterNet, r_net: &FilterNet) {
    for r in records {
        r.p_filter_score = Some(p_net.score(r));
        r.r_filter_score = Some(r_net.score(r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Span, TokenizedSentence};

    fn record(iteration: u32, dec: f64, align: f64) -> AugmentationRecord {
        AugmentationRecord {
            record_id: format!("r{iteration}"),
            parent_id: "s".into(),
            frame_id: "F".into(),
            iteration,
            paraphrase: TokenizedSentence::from_tokens(&["a"]).unwrap(),
            trigger: Span::at(0),
            decoder_score: dec,
            aligner_score: align,
            p_filter_score: None,
            r_filter_score: None,
        }
    }

    #[test]
    fn rule_parsing_round_trips() {
        let rule: FilterRule = "iter<=3,dec<=0.6,align>=0.99".parse().unwrap();
        assert_eq!(rule.atoms.len(), 3);
        assert_eq!(rule.to_string().parse::<FilterRule>().unwrap(), rule);
        assert_eq!("all".parse::<FilterRule>().unwrap(), FilterRule::all());
        assert!("iter<3".parse::<FilterRule>().is_err());
    }

    #[test]
    fn exclude_everything_gives_zero_recall() {
        let recs = vec![(record(1, 0.1, 0.9), Some(true)), (record(2, 0.1, 0.9), Some(false))];
        let rule = FilterRule::all().and(Atom::IterationAtMost(0));
        let rep = apply_rule(&rule, &recs, 1).unwrap();
        assert!(rep.kept.is_empty());
        assert_eq!((rep.recall, rep.precision, rep.multiple), (0.0, 0.0, 1.0));
    }

    #[test]
    fn unlabeled_records_fail_reporting() {
        let recs = vec![(record(1, 0.1, 0.9), None)];
        assert!(matches!(apply_rule(&FilterRule::all(), &recs, 1), Err(Error::MissingLabels(_))));
    }

    #[test]
    fn judgments_threshold_at_fifty() {
        assert_eq!(label_from_judgments(&[40.0, 60.0, 50.0]), Some(1));
        assert_eq!(label_from_judgments(&[40.0, 60.0, 49.0]), Some(0));
        assert_eq!(label_from_judgments(&[]), None);
    }

    #[test]
    fn zero_net_scores_half() {
        let net = FilterNet::zeros(FilterConfig::default());
        assert_eq!(net.score(&record(3, 0.5, 0.5)), 0.5);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let data = vec![([1.0, 0.2, 0.9], 1u8), ([2.0, 0.3, 0.8], 1u8)];
        assert!(matches!(train_filter(&data, &FilterConfig::default()), Err(Error::DegenerateLabels)));
        assert!(matches!(train_filter(&[], &FilterConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn separable_data_is_fit() {
        let mut data = Vec::new();
        for i in 0..40 {
            let a = i as f64 / 40.0;
            data.push(([1.0 + (i % 10) as f64, 0.3, a], u8::from(a >= 0.5)));
        }
        let cfg = FilterConfig { class_weight: 1.0, epochs: 600, ..Default::default() };
        let net = train_filter(&data, &cfg).unwrap();
        let correct = data
            .iter()
            .filter(|(f, l)| (net.score_features(*f) >= 0.5) == (*l == 1))
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn constant_feature_survives_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.net");
        let data: Vec<([f64; 3], u8)> = (0..40).map(|i| ([1.0, i as f64 / 40.0, 0.9], u8::from(i < 20))).collect();
        let net = train_filter(&data, &FilterConfig::default()).unwrap();
        assert_eq!(net.std[2], 1.0);
        net.save(&path).unwrap();
        let back = FilterNet::load(&path).unwrap();
        for (f, _) in &data {
            assert!((back.score_features(*f) - net.score_features(*f)).abs() < 1e-4);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.net");
        let mut net = FilterNet::new(FilterConfig { mode: FilterMode::R, ..Default::default() });
        net.mean = [1.0, 2.0, 3.0];
        net.save(&path).unwrap();
        let back = FilterNet::load(&path).unwrap();
        assert_eq!(back.config, net.config);
        assert_eq!(back.mean, net.mean);
        let f = [2.0, 0.4, 0.9];
        assert!((back.score_features(f) - net.score_features(f)).abs() < 1e-5);
    }
}
