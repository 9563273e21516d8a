//! Training: backpropagation through structure, Adam with an L2 penalty on
//! weight matrices, early stopping on validation `t`, and hidden-size grid
//! search.

mod adam;
mod backward;

use std::fmt::Write as _;
use std::io::{self, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use backward::{backward, data_gradient, leaf_targets, tree_loss};

use crate::encoder::Encoder;
use crate::labeling::CompressionExample;
use crate::loss::LossError;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    unfold, GradientSet, HeadOptions, HeadRegistry, ModelError, ModelParameters, OutputHead,
    TensorKind, Transducer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("forward states were computed with different parameters")]
    StaleStates,
    #[error("gradient and parameter shapes differ")]
    ShapeMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Run configuration for training. Defaults follow common practice where
/// nothing more specific is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub hidden_size: usize,
    /// Registered output head name.
    pub head: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 weight on weight matrices (biases are not penalized).
    pub l2: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Trees per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    pub tie_keeps: bool,
    pub null_value: f64,
    pub forget_bias: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let head = HeadOptions::default();
        TrainingConfig {
            hidden_size: 250,
            head: "binary".into(),
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            l2: 1e-4,
            max_epochs: 300,
            patience: 15,
            batch_size: 16,
            seed: 1,
            threshold: head.threshold,
            tie_keeps: head.tie_keeps,
            null_value: head.null_value,
            forget_bias: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn head_options(&self) -> HeadOptions {
        HeadOptions {
            threshold: self.threshold,
            tie_keeps: self.tie_keeps,
            null_value: self.null_value,
        }
    }

    /// Builds the configured head from `registry`.
    pub fn make_head(&self, registry: &HeadRegistry) -> Result<Arc<dyn OutputHead>, ModelError> {
        registry.create(&self.head, &self.head_options())
    }

    /// Freshly initialized model for `encoder`, seeded by `self.seed`.
    pub fn init_model(
        &self,
        encoder: Arc<Encoder>,
        head: Arc<dyn OutputHead>,
    ) -> Result<Transducer, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d_out = head.output_dim(&encoder);
        let params = ModelParameters::init(
            encoder.input_dim(),
            self.hidden_size,
            d_out,
            self.forget_bias,
            &mut rng,
        );
        Transducer::new(encoder, params, head)
    }
}

/// `λ Σ w²` over weight matrices.
pub fn l2_penalty(params: &ModelParameters, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * params
            .tensors()
            .iter()
            .filter(|(_, kind, _)| *kind == TensorKind::Weight)
            .map(|(_, _, m)| m.squared_norm())
            .sum::<f64>()
}

/// Adds `2λW` to the gradient of every weight matrix.
pub fn l2_gradient(params: &ModelParameters, lambda: f64, grads: &mut GradientSet) {
    if lambda == 0.0 {
        return;
    }
    for ((_, kind, p), (_, _, g)) in params.tensors().into_iter().zip(grads.tensors_mut()) {
        if kind == TensorKind::Weight {
            for (gv, pv) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *gv += 2.0 * lambda * pv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_compression: f64,
    pub val_t: f64,
    pub val_leaf_accuracy: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_accuracy,val_compression,val_t";

pub fn write_history_csv(history: &[EpochRecord], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_accuracy, r.val_compression, r.val_t
        )?;
    }
    Ok(())
}

struct Prepared<'a> {
    example: &'a CompressionExample,
    encodings: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

/// Epoch-at-a-time optimizer over a fixed training split.
pub struct Trainer<'a> {
    model: Transducer,
    optimizer: OptimizerState,
    config: TrainingConfig,
    data: Vec<Prepared<'a>>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Transducer,
        config: &TrainingConfig,
        train: &'a [CompressionExample],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("training"));
        }
        let data = train
            .iter()
            .map(|example| {
                let encodings = model.encoder().encode_tree(&example.tree).map_err(ModelError::from)?;
                let targets = leaf_targets(&example.tree, &example.mask, model.encoder(), &**model.head());
                Ok(Prepared {
                    example,
                    encodings,
                    targets,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let optimizer = OptimizerState::new(model.params(), config.adam());
        // Shuffling draws from a stream separate from initialization.
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        Ok(Trainer {
            model,
            optimizer,
            config: config.clone(),
            order: (0..data.len()).collect(),
            data,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Transducer {
        &self.model
    }

    pub fn into_model(self) -> Transducer {
        self.model
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// Gradient of the mean data loss over `batch` plus the penalty.
    fn batch_gradient(&self, batch: &[usize]) -> Result<(f64, GradientSet), TrainError> {
        let params = self.model.params();
        let head = &**self.model.head();
        let parts = batch
            .par_iter()
            .map(|&i| {
                let p = &self.data[i];
                let states = unfold(&p.example.tree, &p.encodings, params)?;
                data_gradient(&p.example.tree, &p.encodings, &states, &p.targets, params, head)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let mut total = params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.add_assign(g);
        }
        let n = batch.len() as f64;
        total.scale(1.0 / n);
        l2_gradient(params, self.config.l2, &mut total);
        Ok((loss / n, total))
    }

    /// One pass over the shuffled training split. Returns the mean data loss.
    pub fn run_epoch(&mut self) -> Result<f64, TrainError> {
        self.epoch += 1;
        self.order.shuffle(&mut self.rng);
        let order = self.order.clone();
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let (loss, grads) = self.batch_gradient(batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::DivergedLoss { epoch: self.epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(self.model.params_mut(), &grads, &mut self.optimizer)?;
        }
        if !self.model.params().is_finite() {
            return Err(TrainError::DivergedLoss { epoch: self.epoch });
        }
        Ok(loss_sum / self.data.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation `t`.
    pub best: Transducer,
    pub best_epoch: usize,
    pub best_report: MetricsReport,
    pub history: Vec<EpochRecord>,
}

/// Trains with early stopping on the validation trade-off metric.
pub fn train(
    model: Transducer,
    train_split: &[CompressionExample],
    validation: &[CompressionExample],
    config: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    if validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut trainer = Trainer::new(model, config, train_split)?;
    let mut history = Vec::new();
    let mut best: Option<(Transducer, usize, MetricsReport)> = None;
    let mut stale = 0usize;
    while trainer.epochs_run() < config.max_epochs {
        let train_loss = trainer.run_epoch()?;
        let report = evaluate(trainer.model(), validation)?;
        let epoch = trainer.epochs_run();
        log::info!(
            "epoch {epoch}: loss {train_loss:.6} val acc {:.4} comp {:.4} t {:.4}",
            report.accuracy,
            report.compression_rate,
            report.t
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy: report.accuracy,
            val_compression: report.compression_rate,
            val_t: report.t,
            val_leaf_accuracy: report.leaf_accuracy,
        });
        let improved = best.as_ref().is_none_or(|(_, _, b)| report.t > b.t);
        if improved {
            best = Some((trainer.model().clone(), epoch, report));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    let (best, best_epoch, best_report) = match best {
        Some(b) => b,
        None => {
            let report = evaluate(trainer.model(), validation)?;
            (trainer.into_model(), 0, report)
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_report,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub hidden_size: usize,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub corpus: String,
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridReport {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }

    /// Corpus, memory size, accuracy, compression (gold) and `t` per size;
    /// the best row is starred.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>11} {:>10} {:>22} {:>8}",
            "Corpus", "Memory Size", "Accuracy %", "Compress. (Gold) %", "t"
        );
        for (i, row) in self.rows.iter().enumerate() {
            let r = &row.outcome.best_report;
            let _ = writeln!(
                out,
                "{:<14} {:>11} {:>10.2} {:>22} {:>8.4}{}",
                self.corpus,
                row.hidden_size,
                100.0 * r.accuracy,
                format!("{:.2} ({:.2})", 100.0 * r.compression_rate, 100.0 * r.gold_compression_rate),
                r.t,
                if i == self.best { " *" } else { "" }
            );
        }
        out
    }
}

/// Trains one model per hidden size and ranks them by validation `t`.
pub fn grid_search(
    corpus: &str,
    encoder: Arc<Encoder>,
    head: Arc<dyn OutputHead>,
    train_split: &[CompressionExample],
    validation: &[CompressionExample],
    base: &TrainingConfig,
    sizes: &[usize],
) -> Result<GridReport, TrainError> {
    if sizes.is_empty() {
        return Err(TrainError::InvalidConfig("no hidden sizes given".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &hidden_size in sizes {
        let config = TrainingConfig {
            hidden_size,
            ..base.clone()
        };
        let model = config.init_model(encoder.clone(), head.clone())?;
        let outcome = train(model, train_split, validation, &config)?;
        rows.push(GridRow {
            hidden_size,
            outcome,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.outcome.best_report.t > rows[b].outcome.best_report.t { i } else { b });
    Ok(GridReport {
        corpus: corpus.to_string(),
        rows,
        best,
    })
}
