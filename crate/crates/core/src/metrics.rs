//! Evaluation metrics: word-level edit distance, simple string accuracy,
//! compression rate, F1 over kept leaves, and the accuracy/compression
//! trade-off `t = accuracy² / compression`.
//!
//! All values are fractions; percentages only appear in rendered tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::{mask_to_sentence, CompressionExample, KeepMask};
use crate::model::{ModelError, Transducer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("reference compression is empty")]
    EmptyReference,
    #[error("original sentence is empty")]
    ZeroOriginal,
    #[error("compression rate is zero")]
    ZeroCompression,
    #[error("masks differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Levenshtein distance with unit costs, over whole tokens.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `max(0, 1 - d(hypothesis, reference) / |reference|)`
pub fn ssa<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let d = edit_distance(hypothesis, reference) as f64;
    Ok((1.0 - d / reference.len() as f64).max(0.0))
}

pub fn compression_rate(compressed_len: usize, original_len: usize) -> Result<f64, MetricsError> {
    if original_len == 0 {
        return Err(MetricsError::ZeroOriginal);
    }
    Ok(compressed_len as f64 / original_len as f64)
}

/// F1 of the kept positions. Two all-delete masks agree perfectly.
pub fn f1(predicted: &KeepMask, gold: &KeepMask) -> Result<f64, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), gold.len()));
    }
    let tp = predicted.iter().zip(gold.iter()).filter(|&(p, g)| p && g).count() as f64;
    let kept_pred = predicted.kept() as f64;
    let kept_gold = gold.kept() as f64;
    if kept_pred == 0.0 && kept_gold == 0.0 {
        return Ok(1.0);
    }
    let precision = if kept_pred > 0.0 { tp / kept_pred } else { 0.0 };
    let recall = if kept_gold > 0.0 { tp / kept_gold } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn tradeoff_t(accuracy: f64, compression: f64) -> Result<f64, MetricsError> {
    if compression <= 0.0 {
        return Err(MetricsError::ZeroCompression);
    }
    Ok(accuracy * accuracy / compression)
}

/// Sentence counts per accuracy class: [0.3,0.4), ..., [0.8,0.9), [0.9,1.0].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyHistogram {
    pub counts: [usize; 7],
}

impl AccuracyHistogram {
    pub const LABELS: [&'static str; 7] = [
        "[0.3,0.4)",
        "[0.4,0.5)",
        "[0.5,0.6)",
        "[0.6,0.7)",
        "[0.7,0.8)",
        "[0.8,0.9)",
        "[0.9,1.0]",
    ];

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin,count,percent` rows with a header.
    pub fn to_csv(&self) -> String {
        let total = self.total().max(1) as f64;
        let mut out = String::from("bin,count,percent\n");
        for (label, &count) in Self::LABELS.iter().zip(&self.counts) {
            let _ = writeln!(out, "{label},{count},{:.2}", 100.0 * count as f64 / total);
        }
        out
    }
}

/// Values under 0.3 land in the first bin. Bin edges are compared as
/// `k / 10` so that, e.g., `0.7` falls into `[0.7,0.8)`.
pub fn accuracy_histogram(per_sentence: &[f64]) -> AccuracyHistogram {
    let mut counts = [0usize; 7];
    let mut below = 0;
    for &v in per_sentence {
        if v < 0.3 {
            below += 1;
        }
        let bin = (4..=9).filter(|&k| v >= k as f64 / 10.0).count();
        counts[bin] += 1;
    }
    if below > 0 {
        log::warn!("{below} sentence(s) with accuracy below 0.3 counted in the first bin");
    }
    AccuracyHistogram { counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sentences: usize,
    pub accuracy: f64,
    pub compression_rate: f64,
    pub gold_compression_rate: f64,
    pub f1: f64,
    pub t: f64,
    /// Fraction of leaves whose keep/delete decision matches the gold mask.
    pub leaf_accuracy: f64,
    pub per_sentence_accuracies: Vec<f64>,
}

impl MetricsReport {
    pub fn histogram(&self) -> AccuracyHistogram {
        accuracy_histogram(&self.per_sentence_accuracies)
    }

    /// Aligned text table with percentage columns.
    pub fn to_table(&self, corpus: &str) -> String {
        let mut out = String::new();
        let w = corpus.len().max(14);
        let _ = writeln!(
            out,
            "{:<w$} {:>10} {:>22} {:>10} {:>8}",
            "Corpus", "Accuracy %", "Compress. (Gold) %", "F1 %", "t"
        );
        let _ = writeln!(
            out,
            "{:<w$} {:>10.2} {:>22} {:>10.2} {:>8.4}",
            corpus,
            100.0 * self.accuracy,
            format!(
                "{:.2} ({:.2})",
                100.0 * self.compression_rate,
                100.0 * self.gold_compression_rate
            ),
            100.0 * self.f1,
            self.t
        );
        out
    }

    /// Element-wise mean of several reports (e.g. repeated runs).
    pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let n = reports.len();
        if n == 0 {
            return None;
        }
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
        let sentences = reports[0].sentences;
        let per_sentence_accuracies: Vec<f64> = if reports.iter().all(|r| r.sentences == sentences) {
            (0..sentences)
                .map(|i| reports.iter().map(|r| r.per_sentence_accuracies[i]).sum::<f64>() / n as f64)
                .collect()
        } else {
            reports.iter().flat_map(|r| r.per_sentence_accuracies.clone()).collect()
        };
        let accuracy = mean(|r| r.accuracy);
        let compression_rate = mean(|r| r.compression_rate);
        Some(MetricsReport {
            sentences: per_sentence_accuracies.len(),
            accuracy,
            compression_rate,
            gold_compression_rate: mean(|r| r.gold_compression_rate),
            f1: mean(|r| r.f1),
            t: tradeoff_t(accuracy, compression_rate).unwrap_or(0.0),
            leaf_accuracy: mean(|r| r.leaf_accuracy),
            per_sentence_accuracies,
        })
    }
}

/// Per-sentence scores of one prediction against its gold mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceScore {
    pub accuracy: f64,
    pub compression: f64,
    pub gold_compression: f64,
    pub f1: f64,
    pub leaves: usize,
    pub correct_leaves: usize,
}

/// Scores a predicted mask. An empty gold compression scores accuracy 1
/// when the prediction is also empty and 0 otherwise.
pub fn score_sentence(example: &CompressionExample, predicted: &KeepMask) -> Result<SentenceScore, MetricsError> {
    let gold = &example.mask;
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), gold.len()));
    }
    let hyp = mask_to_sentence(&example.tree, predicted).expect("length checked");
    let reference = example.gold_tokens();
    let accuracy = match ssa(&hyp, &reference) {
        Ok(a) => a,
        Err(MetricsError::EmptyReference) => f64::from(u8::from(hyp.is_empty())),
        Err(e) => return Err(e),
    };
    let n = gold.len();
    Ok(SentenceScore {
        accuracy,
        compression: compression_rate(predicted.kept(), n)?,
        gold_compression: compression_rate(gold.kept(), n)?,
        f1: f1(predicted, gold)?,
        leaves: n,
        correct_leaves: predicted.iter().zip(gold.iter()).filter(|(p, g)| p == g).count(),
    })
}

/// Aggregates per-sentence scores; `t` is zero when nothing was kept.
pub fn aggregate(scores: &[SentenceScore]) -> MetricsReport {
    let n = scores.len().max(1) as f64;
    let accuracy = scores.iter().map(|s| s.accuracy).sum::<f64>() / n;
    let compression = scores.iter().map(|s| s.compression).sum::<f64>() / n;
    let leaves: usize = scores.iter().map(|s| s.leaves).sum();
    let correct: usize = scores.iter().map(|s| s.correct_leaves).sum();
    let t = match tradeoff_t(accuracy, compression) {
        Ok(t) => t,
        Err(_) => {
            if !scores.is_empty() {
                log::debug!("model deletes every word; t reported as 0");
            }
            0.0
        }
    };
    MetricsReport {
        sentences: scores.len(),
        accuracy,
        compression_rate: compression,
        gold_compression_rate: scores.iter().map(|s| s.gold_compression).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        t,
        leaf_accuracy: if leaves == 0 { 0.0 } else { correct as f64 / leaves as f64 },
        per_sentence_accuracies: scores.iter().map(|s| s.accuracy).collect(),
    }
}

pub fn evaluate(model: &Transducer, corpus: &[CompressionExample]) -> Result<MetricsReport, ModelError> {
    let scores = corpus
        .par_iter()
        .map(|ex| {
            let predicted = model.predict_mask(&ex.tree)?;
            Ok(score_sentence(ex, &predicted).expect("prediction has one bit per leaf"))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(aggregate(&scores))
}
