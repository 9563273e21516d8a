//! Leaf output heads. Each head is a strategy behind [`OutputHead`] and is
//! looked up by name in a [`HeadRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, Encoder};
use crate::linalg::{dot, norm, sigmoid};
use crate::loss::{self, LossError};

use super::params::HeadParameters;
use super::ModelError;

/// `Wh h + Wc c + b`, shared by both heads.
pub fn head_affine(h: &[f64], c: &[f64], hp: &HeadParameters) -> Result<Vec<f64>, ModelError> {
    let d_h = hp.wh.cols();
    if h.len() != d_h || c.len() != d_h {
        return Err(ModelError::DimensionMismatch {
            what: "leaf state",
            expected: d_h,
            found: if h.len() != d_h { h.len() } else { c.len() },
        });
    }
    let mut z = hp.b.as_slice().to_vec();
    hp.wh.mul_vec_acc(h, &mut z);
    hp.wc.mul_vec_acc(c, &mut z);
    Ok(z)
}

/// Probability that a leaf is kept.
pub fn binary_head(h: &[f64], c: &[f64], hp: &HeadParameters) -> Result<f64, ModelError> {
    if hp.output_dim() != 1 {
        return Err(ModelError::DimensionMismatch {
            what: "binary head rows",
            expected: 1,
            found: hp.output_dim(),
        });
    }
    Ok(sigmoid(head_affine(h, c, hp)?[0]))
}

/// Affine output vector, compared against word embeddings.
pub fn vectorial_head(h: &[f64], c: &[f64], hp: &HeadParameters) -> Result<Vec<f64>, ModelError> {
    head_affine(h, c, hp)
}

/// Result of nearest-neighbour decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nearest {
    /// Word index into the vocabulary.
    Word(usize),
    Null,
}

/// Cosine nearest neighbour over the table rows and the NULL vector.
///
/// Ties go to the lowest word index; NULL must be strictly closer than every
/// word to win. All-zero table rows (UNK, uncovered words) never match. A
/// zero query has no direction and decodes to NULL.
pub fn nearest_word(v: &[f64], table: &EmbeddingTable, null_vector: &[f64]) -> Nearest {
    let v_norm = norm(v);
    if v_norm == 0.0 {
        log::warn!("zero output vector has no cosine similarity; decoding as NULL");
        return Nearest::Null;
    }
    let cosine = |w: &[f64]| {
        let w_norm = norm(w);
        (w_norm > 0.0).then(|| dot(v, w) / (v_norm * w_norm))
    };
    let mut best: Option<(usize, f64)> = None;
    for (id, row) in table.rows().iter().enumerate() {
        if let Some(sim) = cosine(row) {
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((id, sim));
            }
        }
    }
    match (best, cosine(null_vector)) {
        (Some((id, s)), Some(null_sim)) if s >= null_sim => Nearest::Word(id),
        (Some((id, _)), None) => Nearest::Word(id),
        _ => Nearest::Null,
    }
}

/// Options shared by the built-in heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOptions {
    /// Keep threshold for the binary head.
    pub threshold: f64,
    /// Whether a probability exactly at the threshold keeps the leaf.
    pub tie_keeps: bool,
    /// Entry value of the NULL vector for the vectorial head.
    pub null_value: f64,
}

impl Default for HeadOptions {
    fn default() -> Self {
        HeadOptions {
            threshold: 0.5,
            tie_keeps: true,
            null_value: 1.0,
        }
    }
}

/// A leaf output layer: how the affine head output is activated, scored
/// against the target, and turned into a keep/delete decision.
pub trait OutputHead: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Rows of the head weight matrices.
    fn output_dim(&self, encoder: &Encoder) -> usize;

    /// Maps the affine output of one leaf to the head's output.
    fn activate(&self, pre: Vec<f64>) -> Vec<f64>;

    /// Training target for one leaf.
    fn leaf_target(&self, keep: bool, word: &[f64], encoder: &Encoder) -> Vec<f64>;

    /// Tree loss (mean over leaves) and its gradient with respect to each
    /// leaf's affine output.
    fn loss_and_grad(
        &self,
        outputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Vec<Vec<f64>>), LossError>;

    fn keeps(&self, output: &[f64], encoder: &Encoder) -> bool;
}

#[derive(Debug, Clone)]
pub struct BinaryHead {
    threshold: f64,
    tie_keeps: bool,
}

impl BinaryHead {
    pub fn new(options: &HeadOptions) -> Self {
        BinaryHead {
            threshold: options.threshold,
            tie_keeps: options.tie_keeps,
        }
    }
}

impl OutputHead for BinaryHead {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn output_dim(&self, _encoder: &Encoder) -> usize {
        1
    }

    fn activate(&self, pre: Vec<f64>) -> Vec<f64> {
        pre.into_iter().map(sigmoid).collect()
    }

    fn leaf_target(&self, keep: bool, _word: &[f64], _encoder: &Encoder) -> Vec<f64> {
        vec![if keep { 1.0 } else { 0.0 }]
    }

    fn loss_and_grad(
        &self,
        outputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Vec<Vec<f64>>), LossError> {
        let p: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
        let y: Vec<f64> = targets.iter().map(|t| t[0]).collect();
        let loss = loss::bce_loss_values(&p, &y)?;
        let grad = loss::bce_logit_grad(&p, &y).into_iter().map(|g| vec![g]).collect();
        Ok((loss, grad))
    }

    fn keeps(&self, output: &[f64], _encoder: &Encoder) -> bool {
        let p = output[0];
        p > self.threshold || (self.tie_keeps && p == self.threshold)
    }
}

#[derive(Debug, Clone)]
pub struct VectorialHead {
    null_value: f64,
}

impl VectorialHead {
    pub fn new(options: &HeadOptions) -> Self {
        VectorialHead {
            null_value: options.null_value,
        }
    }

    pub fn null_vector(&self, dim: usize) -> Vec<f64> {
        vec![self.null_value; dim]
    }
}

impl OutputHead for VectorialHead {
    fn name(&self) -> &'static str {
        "vectorial"
    }

    fn output_dim(&self, encoder: &Encoder) -> usize {
        encoder.embedding_dim()
    }

    fn activate(&self, pre: Vec<f64>) -> Vec<f64> {
        pre
    }

    fn leaf_target(&self, keep: bool, word: &[f64], encoder: &Encoder) -> Vec<f64> {
        if keep {
            word.to_vec()
        } else {
            self.null_vector(encoder.embedding_dim())
        }
    }

    fn loss_and_grad(
        &self,
        outputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Vec<Vec<f64>>), LossError> {
        let loss = loss::mse_loss(outputs, targets)?;
        Ok((loss, loss::mse_grad(outputs, targets)))
    }

    fn keeps(&self, output: &[f64], encoder: &Encoder) -> bool {
        let null = self.null_vector(output.len());
        nearest_word(output, encoder.table(), &null) != Nearest::Null
    }
}

pub type HeadFactory = fn(&HeadOptions) -> Arc<dyn OutputHead>;

/// Output heads by name.
#[derive(Clone)]
pub struct HeadRegistry {
    factories: BTreeMap<&'static str, HeadFactory>,
}

impl fmt::Debug for HeadRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for HeadRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl HeadRegistry {
    pub fn empty() -> Self {
        HeadRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `binary` and `vectorial`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("binary", |o| Arc::new(BinaryHead::new(o)));
        r.register("vectorial", |o| Arc::new(VectorialHead::new(o)));
        r
    }

    /// Adds or replaces a head.
    pub fn register(&mut self, name: &'static str, factory: HeadFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, options: &HeadOptions) -> Result<Arc<dyn OutputHead>, ModelError> {
        self.factories
            .get(name)
            .map(|f| f(options))
            .ok_or_else(|| ModelError::UnknownHead {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}
