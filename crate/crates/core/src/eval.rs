//! Span and lexical-unit scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Span;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    fn from_counts(tp: f64, fp: f64, fn_: f64) -> Self {
        Self::new(ratio(tp, tp + fp), ratio(tp, tp + fn_))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// True/false positive and false negative totals (token mass for soft match).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

/// JSON report line: `{metric, P, R, F1, counts}` with P/R/F1 ×100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: String,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub counts: Counts,
}

impl Report {
    pub fn new(metric: &str, prf: Prf, counts: Counts) -> Self {
        Self {
            metric: metric.to_string(),
            p: prf.precision * 100.0,
            r: prf.recall * 100.0,
            f1: prf.f1 * 100.0,
            counts,
        }
    }
}

fn check_lengths<A, B>(preds: &[A], golds: &[B]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::InputMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    Ok(())
}

/// Exact-match span P/R/F1. A wrong prediction is both a false positive and
/// a false negative; an abstention on a present gold is only a false
/// negative.
pub fn exact_prf(preds: &[Option<Span>], golds: &[Option<Span>]) -> Result<(Prf, Counts)> {
    check_lengths(preds, golds)?;
    let mut c = Counts::default();
    for (p, g) in preds.iter().zip(golds) {
        match (p, g) {
            (Some(p), Some(g)) if p == g => c.tp += 1.0,
            (Some(_), Some(_)) => {
                c.fp += 1.0;
                c.fn_ += 1.0;
            }
            (Some(_), None) => c.fp += 1.0,
            (None, Some(_)) => c.fn_ += 1.0,
            (None, None) => {}
        }
    }
    Ok((Prf::from_counts(c.tp, c.fp, c.fn_), c))
}

/// How soft-match overlap is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    /// Per pair: precision averaged over pairs with a prediction, recall
    /// over pairs with a gold span. Never below exact-match F1.
    #[default]
    Macro,
    /// Token mass pooled over all pairs.
    Micro,
}

impl std::str::FromStr for Average {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Self::Macro),
            "micro" => Ok(Self::Micro),
            other => Err(Error::InvalidInput(format!("unknown average {other:?}"))),
        }
    }
}

/// Soft-match (token overlap) P/R/F1. Counts are token mass.
pub fn soft_prf(preds: &[Option<Span>], golds: &[Option<Span>], average: Average) -> Result<(Prf, Counts)> {
    check_lengths(preds, golds)?;
    let mut c = Counts::default();
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        let overlap = match (p, g) {
            (Some(p), Some(g)) => p.overlap(g) as f64,
            _ => 0.0,
        };
        let plen = p.map_or(0.0, |s| s.len() as f64);
        let glen = g.map_or(0.0, |s| s.len() as f64);
        c.tp += overlap;
        c.fp += plen - overlap;
        c.fn_ += glen - overlap;
        if p.is_some() {
            p_sum += overlap / plen;
            p_n += 1;
        }
        if g.is_some() {
            r_sum += overlap / glen;
            r_n += 1;
        }
    }
    let prf = match average {
        Average::Micro => Prf::from_counts(c.tp, c.fp, c.fn_),
        Average::Macro => Prf::new(ratio(p_sum, p_n as f64), ratio(r_sum, r_n as f64)),
    };
    Ok((prf, c))
}

/// Set of (frame, lemma) pairs.
pub type LexicalUnitSet = BTreeSet<(String, String)>;

/// Set-overlap P/R/F1 of system lexical units against gold.
pub fn lexical_unit_prf(system: &LexicalUnitSet, gold: &LexicalUnitSet) -> (Prf, Counts) {
    let tp = system.intersection(gold).count() as f64;
    let c = Counts {
        tp,
        fp: system.len() as f64 - tp,
        fn_: gold.len() as f64 - tp,
    };
    (Prf::from_counts(c.tp, c.fp, c.fn_), c)
}

/// P/R/F1 from raw counts.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    Prf::from_counts(tp as f64, fp as f64, fn_ as f64)
}
