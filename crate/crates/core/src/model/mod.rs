//! Top-down TreeLSTM: cell, unfolding and leaf output heads.

mod cell;
mod head;
mod params;

use std::sync::Arc;

use thiserror::Error;

pub use cell::{cell_forward, unfold, CellState, NodeStates};
pub use head::{
    binary_head, head_affine, nearest_word, vectorial_head, BinaryHead, HeadFactory, HeadOptions,
    HeadRegistry, Nearest, OutputHead, VectorialHead,
};
pub use params::{
    CellParameters, Gate, GateParams, GradientSet, HeadParameters, ModelParameters, TensorKind,
};

use crate::encoder::{Encoder, EncoderError};
use crate::labeling::{apply_mask, KeepMask, LabelingError};
use crate::ptb::ParseTree;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unknown output head {name:?} (known: {known})")]
    UnknownHead { name: String, known: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
}

/// A fully assembled model: encoder, parameters and output head.
#[derive(Debug, Clone)]
pub struct Transducer {
    encoder: Arc<Encoder>,
    params: ModelParameters,
    head: Arc<dyn OutputHead>,
}

/// A compressed sentence and the pruned tree it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub mask: KeepMask,
    pub tokens: Vec<String>,
    pub tree: ParseTree,
}

impl Transducer {
    pub fn new(
        encoder: Arc<Encoder>,
        params: ModelParameters,
        head: Arc<dyn OutputHead>,
    ) -> Result<Self, ModelError> {
        if params.input_dim() != encoder.input_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "cell input width",
                expected: encoder.input_dim(),
                found: params.input_dim(),
            });
        }
        let d_out = head.output_dim(&encoder);
        if params.output_dim() != d_out {
            return Err(ModelError::DimensionMismatch {
                what: "head output width",
                expected: d_out,
                found: params.output_dim(),
            });
        }
        Ok(Transducer {
            encoder,
            params,
            head,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_arc(&self) -> &Arc<Encoder> {
        &self.encoder
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParameters {
        self.params
    }

    pub fn head(&self) -> &Arc<dyn OutputHead> {
        &self.head
    }

    pub fn with_params(&self, params: ModelParameters) -> Result<Self, ModelError> {
        Self::new(self.encoder.clone(), params, self.head.clone())
    }

    pub fn forward(&self, t: &ParseTree) -> Result<(Vec<Vec<f64>>, NodeStates), ModelError> {
        let x = self.encoder.encode_tree(t)?;
        let states = unfold(t, &x, &self.params)?;
        Ok((x, states))
    }

    /// Activated head output at each leaf, left to right.
    pub fn leaf_outputs(&self, t: &ParseTree) -> Result<Vec<Vec<f64>>, ModelError> {
        let (_, states) = self.forward(t)?;
        t.leaves()
            .into_iter()
            .map(|leaf| {
                let s = states.get(leaf);
                Ok(self.head.activate(head_affine(&s.h, &s.c, self.params.head())?))
            })
            .collect()
    }

    pub fn predict_mask(&self, t: &ParseTree) -> Result<KeepMask, ModelError> {
        let outputs = self.leaf_outputs(t)?;
        Ok(KeepMask::new(
            outputs
                .iter()
                .map(|o| self.head.keeps(o, &self.encoder))
                .collect(),
        ))
    }

    pub fn compress(&self, t: &ParseTree) -> Result<Compressed, ModelError> {
        let mask = self.predict_mask(t)?;
        let tree = apply_mask(t, &mask)?;
        let tokens = crate::labeling::mask_to_sentence(t, &mask)?;
        Ok(Compressed { mask, tokens, tree })
    }
}
