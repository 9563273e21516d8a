use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// The four affine gates of the cell, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// tanh candidate
    Recurrence,
    Input,
    Output,
    Forget,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Recurrence, Gate::Input, Gate::Output, Gate::Forget];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Recurrence => "r",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Forget => "f",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// d_h × d_in
    pub w: Matrix,
    /// d_h × d_h
    pub u: Matrix,
    /// d_h × 1
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParameters {
    pub gates: [GateParams; 4],
}

impl CellParameters {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let gate = || GateParams {
            w: Matrix::zeros(d_h, d_in),
            u: Matrix::zeros(d_h, d_h),
            b: Matrix::zeros(d_h, 1),
        };
        CellParameters {
            gates: [gate(), gate(), gate(), gate()],
        }
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g.index()]
    }

    pub fn gate_mut(&mut self, g: Gate) -> &mut GateParams {
        &mut self.gates[g.index()]
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gates[0].w.rows()
    }
}

/// Output layer weights shared by every leaf: `Wh h + Wc c + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParameters {
    /// d_out × d_h
    pub wh: Matrix,
    /// d_out × d_h
    pub wc: Matrix,
    /// d_out × 1
    pub b: Matrix,
}

impl HeadParameters {
    pub fn zeros(d_h: usize, d_out: usize) -> Self {
        HeadParameters {
            wh: Matrix::zeros(d_out, d_h),
            wc: Matrix::zeros(d_out, d_h),
            b: Matrix::zeros(d_out, 1),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.wh.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Every trainable tensor of the model. Gradients use the same shape.
///
/// Each mutable access stamps a new version so that cached forward states
/// can be checked against the parameters they were computed with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParameters {
    cell: CellParameters,
    head: HeadParameters,
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

/// Accumulated gradients, shaped like [`ModelParameters`].
pub type GradientSet = ModelParameters;

impl PartialEq for ModelParameters {
    fn eq(&self, other: &Self) -> bool {
        self.cell == other.cell && self.head == other.head
    }
}

impl ModelParameters {
    pub fn new(cell: CellParameters, head: HeadParameters) -> Self {
        assert_eq!(cell.hidden_dim(), head.wh.cols(), "head must read the cell's hidden size");
        ModelParameters {
            cell,
            head,
            version: fresh_version(),
        }
    }

    pub fn zeros(d_in: usize, d_h: usize, d_out: usize) -> Self {
        Self::new(CellParameters::zeros(d_in, d_h), HeadParameters::zeros(d_h, d_out))
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim())
    }

    /// Uniform ±sqrt(6 / (fan_in + fan_out)) per matrix; biases zero except
    /// the forget gate, which starts at `forget_bias`.
    pub fn init(
        d_in: usize,
        d_h: usize,
        d_out: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(d_in, d_h, d_out);
        for (_, kind, m) in p.tensors_mut() {
            if kind == TensorKind::Weight {
                let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
                m.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..=limit));
            }
        }
        p.cell.gate_mut(Gate::Forget).b.fill(forget_bias);
        p
    }

    pub fn cell(&self) -> &CellParameters {
        &self.cell
    }

    pub fn head(&self) -> &HeadParameters {
        &self.head
    }

    pub fn cell_mut(&mut self) -> &mut CellParameters {
        self.version = fresh_version();
        &mut self.cell
    }

    pub fn head_mut(&mut self) -> &mut HeadParameters {
        self.version = fresh_version();
        &mut self.head
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_dim(&self) -> usize {
        self.cell.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Named tensors in a fixed order: the gates r, i, o, f (W, U, b each),
    /// then the head (Wh, Wc, b).
    pub fn tensors(&self) -> Vec<(String, TensorKind, &Matrix)> {
        let mut out = Vec::with_capacity(15);
        for g in Gate::ALL {
            let gp = self.cell.gate(g);
            let s = g.suffix();
            out.push((format!("W_{s}"), TensorKind::Weight, &gp.w));
            out.push((format!("U_{s}"), TensorKind::Weight, &gp.u));
            out.push((format!("b_{s}"), TensorKind::Bias, &gp.b));
        }
        out.push(("head.Wh".into(), TensorKind::Weight, &self.head.wh));
        out.push(("head.Wc".into(), TensorKind::Weight, &self.head.wc));
        out.push(("head.b".into(), TensorKind::Bias, &self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut Matrix)> {
        self.version = fresh_version();
        let mut out = Vec::with_capacity(15);
        for (g, gp) in Gate::ALL.iter().zip(self.cell.gates.iter_mut()) {
            let s = g.suffix();
            out.push((format!("W_{s}"), TensorKind::Weight, &mut gp.w));
            out.push((format!("U_{s}"), TensorKind::Weight, &mut gp.u));
            out.push((format!("b_{s}"), TensorKind::Bias, &mut gp.b));
        }
        out.push(("head.Wh".into(), TensorKind::Weight, &mut self.head.wh));
        out.push(("head.Wc".into(), TensorKind::Weight, &mut self.head.wc));
        out.push(("head.b".into(), TensorKind::Bias, &mut self.head.b));
        out
    }

    pub fn same_shape(&self, other: &ModelParameters) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|((_, _, a), (_, _, b))| a.shape() == b.shape())
    }

    pub fn add_assign(&mut self, other: &ModelParameters) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, _, m) in self.tensors_mut() {
            m.scale(k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().fold(0.0, |m, (_, _, t)| m.max(t.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.as_slice().len()).sum()
    }
}
