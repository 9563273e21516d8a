//! Central finite-difference verification of the analytic gradients.
//!
//! The numeric side only evaluates forward losses, so it shares no code with
//! the backward pass it checks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{random_embeddings, Encoder, Vocabulary};
use crate::labeling::KeepMask;
use crate::model::{unfold, Gate, GradientSet, HeadOptions, HeadRegistry, ModelParameters, OutputHead};
use crate::ptb::ParseTree;
use crate::synthetic::random_small_tree;
use crate::training::{backward, l2_penalty, leaf_targets, tree_loss, TrainError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors; gradients smaller than this are
/// compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Objective `loss(t) + λ Σ W²` at `params`, from scratch.
pub fn objective(
    t: &ParseTree,
    encodings: &[Vec<f64>],
    targets: &[Vec<f64>],
    params: &ModelParameters,
    head: &dyn OutputHead,
    lambda: f64,
) -> Result<f64, TrainError> {
    let states = unfold(t, encodings, params)?;
    Ok(tree_loss(t, &states, targets, params, head)? + l2_penalty(params, lambda))
}

/// Central differences of [`objective`] for every parameter entry.
pub fn numeric_gradient(
    t: &ParseTree,
    encodings: &[Vec<f64>],
    targets: &[Vec<f64>],
    params: &ModelParameters,
    head: &dyn OutputHead,
    lambda: f64,
    step: f64,
) -> Result<GradientSet, TrainError> {
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|(_, _, m)| m.as_slice().len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for k in 0..len {
            let orig = probe.tensors()[ti].2.as_slice()[k];
            probe.tensors_mut()[ti].2.as_mut_slice()[k] = orig + step;
            let plus = objective(t, encodings, targets, &probe, head, lambda)?;
            probe.tensors_mut()[ti].2.as_mut_slice()[k] = orig - step;
            let minus = objective(t, encodings, targets, &probe, head, lambda)?;
            probe.tensors_mut()[ti].2.as_mut_slice()[k] = orig;
            grads.tensors_mut()[ti].2.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Largest [`relative_error`] per tensor, in parameter order.
pub fn compare(analytic: &GradientSet, numeric: &GradientSet) -> Vec<(String, f64)> {
    analytic
        .tensors()
        .into_iter()
        .zip(numeric.tensors())
        .map(|((name, _, a), (_, _, n))| {
            let worst = a
                .as_slice()
                .iter()
                .zip(n.as_slice())
                .map(|(&x, &y)| relative_error(x, y))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trees: usize,
    /// Largest hidden size drawn; each instance picks one in `1..=max_hidden`.
    pub max_hidden: usize,
    pub max_nodes: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub heads: Vec<String>,
    pub lambdas: Vec<f64>,
    /// Negative control: perturb the analytic gradient before comparing.
    pub corrupt_backward: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trees: 20,
            max_hidden: 4,
            max_nodes: 15,
            seed: 0,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            heads: vec!["binary".into(), "vectorial".into()],
            lambdas: vec![0.0, 1e-4],
            corrupt_backward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per tensor over all instances.
    pub tensors: Vec<(String, f64)>,
    pub instances: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|(_, e)| *e < self.tolerance)
    }

    pub fn worst(&self) -> (&str, f64) {
        self.tensors
            .iter()
            .fold(("", 0.0), |(n, w), (name, e)| if *e > w { (name, *e) } else { (n, w) })
    }

    pub fn failing(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|(_, e)| *e >= self.tolerance)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

const TAGS: [&str; 5] = ["S", "NP", "VP", "PP", "NN"];
const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// One random instance: tree, encoder, parameters and targets.
pub struct Instance {
    pub tree: ParseTree,
    pub encoder: Encoder,
    pub params: ModelParameters,
    pub mask: KeepMask,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize, hidden: usize, d_out_for: &dyn OutputHead) -> Instance {
    let tree = random_small_tree(rng, max_nodes, &TAGS, &WORDS);
    let vocab = Vocabulary::from_parts(
        std::iter::once(crate::encoder::UNK.to_string())
            .chain(WORDS.iter().map(|w| w.to_string()))
            .collect(),
        TAGS.iter().map(|t| t.to_string()).collect(),
    );
    let dim = rng.gen_range(2..=6);
    let table = random_embeddings(&vocab, dim, rng.gen()).expect("dim ≥ 2");
    // Stretch the small default embeddings so leaf inputs matter.
    let rows = table.rows().iter().map(|r| r.iter().map(|v| v * 8.0).collect()).collect();
    let encoder = Encoder::new(vocab, crate::encoder::EmbeddingTable::new(dim, rows).expect("rows"));
    let d_out = d_out_for.output_dim(&encoder);
    let mut params = ModelParameters::init(encoder.input_dim(), hidden, d_out, 0.0, rng);
    for (_, _, m) in params.tensors_mut() {
        for v in m.as_mut_slice() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let bits: Vec<bool> = (0..tree.leaf_count()).map(|_| rng.gen_bool(0.5)).collect();
    Instance {
        tree,
        encoder,
        params,
        mask: KeepMask::new(bits),
    }
}

/// Runs the check over `config.trees` random instances, cycling through the
/// configured heads and penalty weights.
pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport, TrainError> {
    let registry = HeadRegistry::builtin();
    let heads: Vec<Arc<dyn OutputHead>> = config
        .heads
        .iter()
        .map(|h| registry.create(h, &HeadOptions::default()))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut combos: Vec<(usize, f64)> = Vec::new();
    for h in 0..heads.len() {
        for &l in &config.lambdas {
            combos.push((h, l));
        }
    }
    for n in 0..config.trees {
        let (h, lambda) = *combos.get(n % combos.len().max(1)).unwrap_or(&(0, 0.0));
        let head = &*heads[h];
        let hidden = rng.gen_range(1..=config.max_hidden.max(1));
        let inst = random_instance(&mut rng, config.max_nodes, hidden, head);
        let x = inst.encoder.encode_tree(&inst.tree).map_err(crate::model::ModelError::from)?;
        let targets = leaf_targets(&inst.tree, &inst.mask, &inst.encoder, head);
        let states = unfold(&inst.tree, &x, &inst.params)?;
        let (_, mut analytic) = backward(&inst.tree, &x, &states, &targets, &inst.params, head, lambda)?;
        if config.corrupt_backward {
            for v in analytic.cell_mut().gate_mut(Gate::Forget).b.as_mut_slice() {
                *v += 1e-2;
            }
        }
        let numeric = numeric_gradient(&inst.tree, &x, &targets, &inst.params, head, lambda, config.step)?;
        let errs = compare(&analytic, &numeric);
        if worst.is_empty() {
            worst = errs;
        } else {
            for (w, (_, e)) in worst.iter_mut().zip(errs) {
                w.1 = w.1.max(e);
            }
        }
    }
    Ok(GradCheckReport {
        tensors: worst,
        instances: config.trees,
        tolerance: config.tolerance,
    })
}
