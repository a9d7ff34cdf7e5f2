//! Discriminative span aligner.
//!
//! Every reference-side span whose length is within `k` of the source span's
//! length is a candidate. A candidate is scored by a one-hidden-layer network
//! over the concatenation of the element-wise difference and maximum of the
//! two mean-pooled span vectors plus four positional cues:
//!
//! ```text
//! score = sigmoid(w2 · batchnorm(prelu(W1 · v + b1)) + b2)
//! ```
//!
//! Training minimizes binary cross entropy against soft labels
//! `2^-(|Δstart| + |Δend|)` with plain mini-batch gradient descent. One
//! batchnorm batch is all candidates of one example.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{span_pool, EmbeddingMatrix, EmbeddingProvider, Side};
use crate::error::{Error, Result};
use crate::model::{AlignmentExample, Span, TokenizedSentence};
use crate::nn::{self, bce_with_logits, prelu, sigmoid, BN_EPS};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignerConfig {
    /// Candidate length window.
    pub k: usize,
    pub hidden_units: usize,
    /// Abstain when the best score is below this.
    pub threshold: f64,
    pub learning_rate: f64,
    /// Examples per gradient step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight kept on the old running statistic at each batchnorm update.
    pub bn_momentum: f64,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self {
            k: 5,
            hidden_units: 770,
            threshold: 0.0,
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            bn_momentum: 0.9,
        }
    }
}

/// All spans `(i, j)` of a length-`m` sentence with `|(j - i + 1) - len| ≤ k`,
/// in lexicographic order.
pub fn candidates(m: usize, src_len: usize, k: usize) -> Vec<Span> {
    let lo = src_len.saturating_sub(k).max(1);
    let hi = src_len + k;
    let mut out = Vec::new();
    for i in 0..m {
        for j in i..m {
            let len = j - i + 1;
            if len >= lo && len <= hi {
                out.push(Span { start: i, end: j });
            }
        }
    }
    out
}

/// `2^-d` with `d = |Δstart| + |Δend|`; exact for every representable `d`.
pub fn soft_label(gold: Span, cand: Span) -> f64 {
    let d = gold.start.abs_diff(cand.start) + gold.end.abs_diff(cand.end);
    if d > 1074 {
        0.0
    } else {
        0.5f64.powi(d as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub df: Vec<f64>,
    pub mx: Vec<f64>,
    /// Source start, source length, candidate start, candidate length.
    pub cue: [f64; 4],
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.df.len() + self.mx.len() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.df);
        v.extend_from_slice(&self.mx);
        v.extend_from_slice(&self.cue);
        v
    }
}

pub fn features(source_rep: &[f64], cand_rep: &[f64], src_span: Span, cand_span: Span) -> Result<FeatureVector> {
    if source_rep.len() != cand_rep.len() {
        return Err(Error::DimMismatch {
            expected: source_rep.len(),
            found: cand_rep.len(),
        });
    }
    Ok(FeatureVector {
        df: source_rep.iter().zip(cand_rep).map(|(s, c)| s - c).collect(),
        mx: source_rep.iter().zip(cand_rep).map(|(s, c)| s.max(*c)).collect(),
        cue: [
            src_span.start as f64,
            src_span.len() as f64,
            cand_span.start as f64,
            cand_span.len() as f64,
        ],
    })
}

/// Candidate spans and their stacked feature rows for one pair.
pub fn candidate_features(m: &EmbeddingMatrix, src_span: Span, k: usize) -> Result<(Vec<Span>, Vec<f64>)> {
    let src = span_pool(m, src_span, Side::Source)?;
    let dim = m.dim();
    let refs = m.reference_len();
    // Prefix sums over reference rows make each candidate pool O(dim).
    let mut prefix = vec![0.0f64; (refs + 1) * dim];
    for i in 0..refs {
        let row = m.row(m.row_index(Side::Reference, i));
        for d in 0..dim {
            prefix[(i + 1) * dim + d] = prefix[i * dim + d] + row[d] as f64;
        }
    }
    let cands = candidates(refs, src_span.len(), k);
    let mut rows = Vec::with_capacity(cands.len() * (2 * dim + 4));
    let mut rep = vec![0.0; dim];
    for c in &cands {
        let len = c.len() as f64;
        for d in 0..dim {
            rep[d] = (prefix[(c.end + 1) * dim + d] - prefix[c.start * dim + d]) / len;
        }
        rows.extend(features(&src, &rep, src_span, *c)?.to_vec());
    }
    Ok((cands, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerModel {
    dim: usize,
    hidden: usize,
    /// Input × hidden, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub slope: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub mode: Mode,
    pub config: AlignerConfig,
}

/// Gradients of the trainable parameters, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignerGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub slope: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl AlignerGrads {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; input * hidden],
            b1: vec![0.0; hidden],
            slope: vec![0.0; hidden],
            gamma: vec![0.0; hidden],
            beta: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    fn add(&mut self, other: &AlignerGrads) {
        let pairs = [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.slope, &other.slope),
            (&mut self.gamma, &other.gamma),
            (&mut self.beta, &other.beta),
            (&mut self.w2, &other.w2),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.b2 += other.b2;
    }

    /// Flattened in parameter order (W1, b1, a, γ, β, W2, b2).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in [&self.w1, &self.b1, &self.slope, &self.gamma, &self.beta, &self.w2] {
            v.extend_from_slice(t);
        }
        v.push(self.b2);
        v
    }
}

/// Per-hidden-unit batch statistics from a train-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub size: usize,
}

/// A scored alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub span: Span,
    pub score: f64,
}

struct Pass {
    z: Vec<f64>,
    xhat: Vec<f64>,
    y: Vec<f64>,
    logits: Vec<f64>,
    inv_std: Vec<f64>,
    stats: BatchStats,
}

impl AlignerModel {
    /// Randomly initialized model for embedding dimension `dim`, seeded from
    /// `config.seed`.
    pub fn new(dim: usize, config: AlignerConfig) -> Self {
        let hidden = config.hidden_units.max(1);
        let input = 2 * dim + 4;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w1 = nn::glorot(&mut rng, input, hidden);
        let w2 = nn::glorot(&mut rng, hidden, 1);
        Self {
            dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            slope: vec![0.25; hidden],
            gamma: vec![1.0; hidden],
            beta: vec![0.0; hidden],
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            w2,
            b2: 0.0,
            mode: Mode::Train,
            config,
        }
    }

    /// All-zero weights; scores 0.5 everywhere.
    pub fn zeros(dim: usize, config: AlignerConfig) -> Self {
        let mut m = Self::new(dim, config);
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        m.slope.fill(0.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim + 4
    }

    /// Score one feature vector. In train mode the batch is just `v`.
    pub fn forward(&self, v: &FeatureVector) -> Result<f64> {
        Ok(self.forward_batch(&v.to_vec(), self.mode)?[0])
    }

    /// Scores for a stacked batch of feature rows.
    pub fn forward_batch(&self, rows: &[f64], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.pass(rows, mode)?.logits.into_iter().map(sigmoid).collect())
    }

    fn check_rows(&self, rows: &[f64]) -> Result<usize> {
        let input = self.input_dim();
        if rows.is_empty() || !rows.len().is_multiple_of(input) {
            return Err(Error::DimMismatch {
                expected: input,
                found: rows.len(),
            });
        }
        Ok(rows.len() / input)
    }

    fn pass(&self, rows: &[f64], mode: Mode) -> Result<Pass> {
        let b = self.check_rows(rows)?;
        let (input, h) = (self.input_dim(), self.hidden);
        let mut z = vec![0.0; b * h];
        for r in 0..b {
            let zr = &mut z[r * h..(r + 1) * h];
            zr.copy_from_slice(&self.b1);
            for (i, &x) in rows[r * input..(r + 1) * input].iter().enumerate() {
                if x != 0.0 {
                    let w = &self.w1[i * h..(i + 1) * h];
                    zr.iter_mut().zip(w).for_each(|(zv, wv)| *zv += x * wv);
                }
            }
        }
        let p: Vec<f64> = z.iter().enumerate().map(|(idx, &v)| prelu(v, self.slope[idx % h])).collect();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; h];
                for r in 0..b {
                    mean.iter_mut().zip(&p[r * h..(r + 1) * h]).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; h];
                for r in 0..b {
                    for j in 0..h {
                        var[j] += (p[r * h + j] - mean[j]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= b as f64);
                (mean, var)
            }
            Mode::Inference => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; b * h];
        let mut y = vec![0.0; b * h];
        let mut logits = vec![self.b2; b];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                xhat[idx] = (p[idx] - mean[j]) * inv_std[j];
                y[idx] = self.gamma[j] * xhat[idx] + self.beta[j];
                logits[r] += self.w2[j] * y[idx];
            }
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NumericalError("aligner forward"));
        }
        Ok(Pass {
            z,
            xhat,
            y,
            logits,
            inv_std,
            stats: BatchStats { mean, var, size: b },
        })
    }

    /// Summed soft BCE over a train-mode batch and its gradients.
    pub fn loss_and_grads(&self, rows: &[f64], labels: &[f64]) -> Result<(f64, AlignerGrads, BatchStats)> {
        let pass = self.pass(rows, Mode::Train)?;
        let b = pass.logits.len();
        if labels.len() != b {
            return Err(Error::InputMismatch {
                left: b,
                right: labels.len(),
            });
        }
        let (input, h) = (self.input_dim(), self.hidden);
        let loss: f64 = pass.logits.iter().zip(labels).map(|(&l, &t)| bce_with_logits(l, t)).sum();
        let mut g = AlignerGrads::zeros(input, h);
        let dlogit: Vec<f64> = pass.logits.iter().zip(labels).map(|(&l, &t)| sigmoid(l) - t).collect();
        let mut dxhat = vec![0.0; b * h];
        for r in 0..b {
            g.b2 += dlogit[r];
            for j in 0..h {
                let idx = r * h + j;
                g.w2[j] += dlogit[r] * pass.y[idx];
                let dy = dlogit[r] * self.w2[j];
                g.gamma[j] += dy * pass.xhat[idx];
                g.beta[j] += dy;
                dxhat[idx] = dy * self.gamma[j];
            }
        }
        // Batchnorm backward with batch statistics.
        let mut sum_dxhat = vec![0.0; h];
        let mut sum_dxhat_xhat = vec![0.0; h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                sum_dxhat[j] += dxhat[idx];
                sum_dxhat_xhat[j] += dxhat[idx] * pass.xhat[idx];
            }
        }
        let bf = b as f64;
        let mut dz = vec![0.0; b * h];
        for r in 0..b {
            for j in 0..h {
                let idx = r * h + j;
                let dp = pass.inv_std[j] / bf * (bf * dxhat[idx] - sum_dxhat[j] - pass.xhat[idx] * sum_dxhat_xhat[j]);
                let zv = pass.z[idx];
                if zv > 0.0 {
                    dz[idx] = dp;
                } else {
                    dz[idx] = self.slope[j] * dp;
                    g.slope[j] += dp * zv;
                }
            }
        }
        for r in 0..b {
            let dzr = &dz[r * h..(r + 1) * h];
            g.b1.iter_mut().zip(dzr).for_each(|(gb, d)| *gb += d);
            for (i, &x) in rows[r * input..(r + 1) * input].iter().enumerate() {
                if x != 0.0 {
                    let gw = &mut g.w1[i * h..(i + 1) * h];
                    gw.iter_mut().zip(dzr).for_each(|(gv, d)| *gv += x * d);
                }
            }
        }
        Ok((loss, g, pass.stats))
    }

    /// Trainable parameters flattened in gradient order.
    pub fn trainable(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in [&self.w1, &self.b1, &self.slope, &self.gamma, &self.beta, &self.w2] {
            v.extend_from_slice(t);
        }
        v.push(self.b2);
        v
    }

    pub fn set_trainable(&mut self, flat: &[f64]) {
        let mut at = 0;
        for t in [
            &mut self.w1,
            &mut self.b1,
            &mut self.slope,
            &mut self.gamma,
            &mut self.beta,
            &mut self.w2,
        ] {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        self.b2 = flat[at];
    }

    fn step(&mut self, g: &AlignerGrads, scale: f64) {
        let pairs = [
            (&mut self.w1, &g.w1),
            (&mut self.b1, &g.b1),
            (&mut self.slope, &g.slope),
            (&mut self.gamma, &g.gamma),
            (&mut self.beta, &g.beta),
            (&mut self.w2, &g.w2),
        ];
        for (p, d) in pairs {
            p.iter_mut().zip(d).for_each(|(x, y)| *x -= scale * y);
        }
        self.b2 -= scale * g.b2;
    }

    fn update_running(&mut self, stats: &BatchStats) {
        let mom = self.config.bn_momentum;
        // Unbiased variance for the running estimate.
        let corr = if stats.size > 1 {
            stats.size as f64 / (stats.size - 1) as f64
        } else {
            1.0
        };
        for j in 0..self.hidden {
            self.running_mean[j] = mom * self.running_mean[j] + (1.0 - mom) * stats.mean[j];
            self.running_var[j] = mom * self.running_var[j] + (1.0 - mom) * stats.var[j] * corr;
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = ModelHeader {
            dim: self.dim,
            hidden: self.hidden,
            config: self.config.clone(),
        };
        let b2 = [self.b2];
        nn::write_net(
            path.as_ref(),
            "span-aligner",
            &header,
            &[
                ("W1", &self.w1),
                ("b1", &self.b1),
                ("a", &self.slope),
                ("gamma", &self.gamma),
                ("beta", &self.beta),
                ("running_mean", &self.running_mean),
                ("running_var", &self.running_var),
                ("W2", &self.w2),
                ("b2", &b2),
            ],
        )
    }

    /// Load a saved model in inference mode.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, mut t): (ModelHeader, _) = nn::read_net(path.as_ref(), "span-aligner")?;
        let (input, h) = (2 * header.dim + 4, header.hidden);
        let running_var = nn::take_tensor(&mut t, "running_var", h)?;
        if running_var.iter().any(|v| *v <= 0.0) {
            return Err(Error::format("network file", "running variance must be positive"));
        }
        Ok(Self {
            dim: header.dim,
            hidden: h,
            w1: nn::take_tensor(&mut t, "W1", input * h)?,
            b1: nn::take_tensor(&mut t, "b1", h)?,
            slope: nn::take_tensor(&mut t, "a", h)?,
            gamma: nn::take_tensor(&mut t, "gamma", h)?,
            beta: nn::take_tensor(&mut t, "beta", h)?,
            running_mean: nn::take_tensor(&mut t, "running_mean", h)?,
            running_var,
            w2: nn::take_tensor(&mut t, "W2", h)?,
            b2: nn::take_tensor(&mut t, "b2", 1)?[0],
            mode: Mode::Inference,
            config: header.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    dim: usize,
    hidden: usize,
    config: AlignerConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-candidate loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub examples_used: usize,
    /// Examples without a gold span.
    pub skipped_none: usize,
    /// (example index, error) for gold spans outside the candidate window.
    pub window_violations: Vec<(usize, String)>,
}

/// Train an aligner on examples with gold spans.
pub fn train(
    data: &[AlignmentExample],
    provider: &dyn EmbeddingProvider,
    cfg: &AlignerConfig,
) -> Result<(AlignerModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be at least 1".into()));
    }
    let mut report = TrainReport::default();
    let mut usable = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        let Some(gold) = ex.gold_span else {
            report.skipped_none += 1;
            continue;
        };
        if gold.len().abs_diff(ex.source_span.len()) > cfg.k {
            let err = Error::WindowViolation {
                gold,
                src_len: ex.source_span.len(),
                k: cfg.k,
            };
            report.window_violations.push((i, err.to_string()));
            continue;
        }
        usable.push((ex, gold));
    }
    if usable.is_empty() {
        return Err(Error::EmptyDataset);
    }
    report.examples_used = usable.len();

    let mut model = AlignerModel::new(provider.dim(), cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_cands = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let current = &model;
            let results = par::map(chunk, |&i| -> Result<(f64, usize, AlignerGrads, BatchStats)> {
                let (ex, gold) = usable[i];
                let m = provider.embed_pair(&ex.source, &ex.reference)?;
                let (cands, rows) = candidate_features(&m, ex.source_span, cfg.k)?;
                let labels: Vec<f64> = cands.iter().map(|c| soft_label(gold, *c)).collect();
                let (loss, g, stats) = current.loss_and_grads(&rows, &labels)?;
                Ok((loss, cands.len(), g, stats))
            });
            // Reduce in chunk order so results do not depend on scheduling.
            let mut total = AlignerGrads::zeros(model.input_dim(), model.hidden);
            let mut stats = Vec::with_capacity(chunk.len());
            for r in results {
                let (loss, n, g, s) = r?;
                epoch_loss += loss;
                epoch_cands += n;
                total.add(&g);
                stats.push(s);
            }
            model.step(&total, cfg.learning_rate / chunk.len() as f64);
            for s in &stats {
                model.update_running(s);
            }
        }
        report.epoch_losses.push(epoch_loss / epoch_cands.max(1) as f64);
    }
    model.mode = Mode::Inference;
    Ok((model, report))
}

/// Best candidate for `src_span`, or `None` when its score is below
/// `threshold`. Ties go to the lexicographically smallest span.
pub fn align(
    model: &AlignerModel,
    provider: &dyn EmbeddingProvider,
    source: &TokenizedSentence,
    reference: &TokenizedSentence,
    src_span: Span,
    threshold: f64,
) -> Result<Option<Alignment>> {
    let scored = score_candidates(model, provider, source, reference, src_span)?;
    Ok(best_of(&scored, threshold))
}

/// Inference-mode scores of every candidate, in candidate order.
pub fn score_candidates(
    model: &AlignerModel,
    provider: &dyn EmbeddingProvider,
    source: &TokenizedSentence,
    reference: &TokenizedSentence,
    src_span: Span,
) -> Result<Vec<Alignment>> {
    src_span.check(source.len())?;
    if provider.dim() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            found: provider.dim(),
        });
    }
    let m = provider.embed_pair(source, reference)?;
    let (cands, rows) = candidate_features(&m, src_span, model.config.k)?;
    let scores = model.forward_batch(&rows, Mode::Inference)?;
    Ok(cands
        .into_iter()
        .zip(scores)
        .map(|(span, score)| Alignment { span, score })
        .collect())
}

/// Argmax with abstention; candidates must be in lexicographic order.
pub fn best_of(scored: &[Alignment], threshold: f64) -> Option<Alignment> {
    let mut best: Option<Alignment> = None;
    for a in scored {
        if best.is_none_or(|b| a.score > b.score) {
            best = Some(*a);
        }
    }
    best.filter(|b| b.score >= threshold)
}

/// Align every example (in parallel), keeping input order.
pub fn align_all(
    model: &AlignerModel,
    provider: &dyn EmbeddingProvider,
    data: &[AlignmentExample],
    threshold: f64,
) -> Result<Vec<Option<Alignment>>> {
    par::map(data, |ex| align(model, provider, &ex.source, &ex.reference, ex.source_span, threshold))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;

    fn sent(s: &str) -> TokenizedSentence {
        TokenizedSentence::whitespace_tokenize(s).unwrap()
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidates(10, 2, 5).len(), 49);
        assert_eq!(candidates(3, 1, 0), vec![Span::at(0), Span::at(1), Span::at(2)]);
        let all: Vec<Span> = (0..5).flat_map(|i| (i..5).map(move |j| Span { start: i, end: j })).collect();
        assert_eq!(candidates(5, 4, 5), all);
    }

    #[test]
    fn soft_label_examples() {
        let s = |a, b| Span::new(a, b).unwrap();
        assert_eq!(soft_label(s(3, 5), s(3, 5)), 1.0);
        assert_eq!(soft_label(s(3, 5), s(4, 6)), 0.25);
        assert_eq!(soft_label(s(0, 0), s(5, 9)), 1.0 / 16384.0);
    }

    #[test]
    fn feature_examples() {
        let f = features(&[1.0, 5.0], &[3.0, 2.0], Span::new(2, 3).unwrap(), Span::new(2, 4).unwrap()).unwrap();
        assert_eq!(f.df, vec![-2.0, 3.0]);
        assert_eq!(f.mx, vec![3.0, 5.0]);
        assert_eq!(f.cue, [2.0, 2.0, 2.0, 3.0]);
        let same = features(&[0.3, -0.1], &[0.3, -0.1], Span::at(0), Span::at(0)).unwrap();
        assert!(same.df.iter().all(|v| *v == 0.0));
        assert!(matches!(features(&[1.0], &[1.0, 2.0], Span::at(0), Span::at(0)), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn zero_model_scores_half() {
        let cfg = AlignerConfig { hidden_units: 4, ..Default::default() };
        let mut m = AlignerModel::zeros(3, cfg);
        let v = FeatureVector { df: vec![1.0; 3], mx: vec![-2.0; 3], cue: [1.0, 2.0, 3.0, 4.0] };
        assert_eq!(m.forward(&v).unwrap(), 0.5);
        m.mode = Mode::Inference;
        assert_eq!(m.forward(&v).unwrap(), 0.5);
    }

    #[test]
    fn input_dim_matches_bert_base() {
        let m = AlignerModel::new(768, AlignerConfig { hidden_units: 2, ..Default::default() });
        assert_eq!(m.input_dim(), 1540);
    }

    #[test]
    fn zero_threshold_never_abstains() {
        let e = HashEmbedder::new(8);
        let m = AlignerModel::new(8, AlignerConfig { hidden_units: 6, ..Default::default() });
        let out = align(&m, &e, &sent("a b c"), &sent("d e"), Span::at(1), 0.0).unwrap();
        assert!(out.is_some());
        let out = align(&m, &e, &sent("a b c"), &sent("d e"), Span::at(1), 1.1).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn memorizes_single_example() {
        let e = HashEmbedder::new(16);
        let ex = AlignmentExample::new(
            sent("the committee will corroborate the findings"),
            Span::at(3),
            sent("the findings will be confirmed by the committee"),
            Some(Span::at(4)),
        )
        .unwrap();
        let cfg = AlignerConfig { hidden_units: 16, epochs: 300, batch_size: 1, learning_rate: 0.05, ..Default::default() };
        let (model, report) = train(std::slice::from_ref(&ex), &e, &cfg).unwrap();
        assert_eq!(report.examples_used, 1);
        let got = align(&model, &e, &ex.source, &ex.reference, ex.source_span, 0.0).unwrap().unwrap();
        assert_eq!(got.span, Span::at(4));
    }

    #[test]
    fn training_rejects_empty_and_reports_violations() {
        let e = HashEmbedder::new(4);
        assert!(matches!(train(&[], &e, &AlignerConfig::default()), Err(Error::EmptyDataset)));
        let ex = AlignmentExample::new(sent("a"), Span::at(0), sent("b c d e f g h i"), Some(Span::new(0, 7).unwrap())).unwrap();
        let none = AlignmentExample::new(sent("a"), Span::at(0), sent("b"), None).unwrap();
        let cfg = AlignerConfig { k: 2, hidden_units: 3, epochs: 1, ..Default::default() };
        assert!(matches!(train(&[ex.clone(), none.clone()], &e, &cfg), Err(Error::EmptyDataset)));
        let ok = AlignmentExample::new(sent("a"), Span::at(0), sent("b c"), Some(Span::at(1))).unwrap();
        let (_, report) = train(&[ex, none, ok], &e, &cfg).unwrap();
        assert_eq!(report.window_violations.len(), 1);
        assert_eq!(report.window_violations[0].0, 0);
        assert_eq!(report.skipped_none, 1);
        assert_eq!(report.examples_used, 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aligner.bin");
        let mut m = AlignerModel::new(5, AlignerConfig { hidden_units: 7, seed: 3, ..Default::default() });
        m.running_var[2] = 2.5;
        m.b2 = 0.125;
        m.save(&path).unwrap();
        let back = AlignerModel::load(&path).unwrap();
        assert_eq!(back.mode, Mode::Inference);
        assert_eq!((back.dim(), back.hidden()), (5, 7));
        assert_eq!(back.config, m.config);
        for (a, b) in back.trainable().iter().zip(m.trainable()) {
            assert_eq!(*a, b as f32 as f64);
        }
        assert_eq!(back.running_var[2], 2.5);
    }
}
