//! The top-down LSTM cell and its unfolding from the root to every leaf.

use crate::linalg::sigmoid;
use crate::ptb::ParseTree;
use crate::tree::NodeId;

use super::params::{CellParameters, Gate, ModelParameters};
use super::ModelError;

/// Forward quantities of one node, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// tanh candidate
    pub r: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub f: Vec<f64>,
}

/// One step of the cell for node input `x` given the parent's state:
///
/// ```text
/// r = tanh(W_r x + U_r h_pa + b_r)
/// i = σ(W_i x + U_i h_pa + b_i)
/// o = σ(W_o x + U_o h_pa + b_o)
/// f = σ(W_f x + U_f h_pa + b_f)
/// c = i ⊙ r + f ⊙ c_pa
/// h = o ⊙ tanh(c)
/// ```
pub fn cell_forward(
    x: &[f64],
    h_pa: &[f64],
    c_pa: &[f64],
    p: &CellParameters,
) -> Result<CellState, ModelError> {
    let d_h = p.hidden_dim();
    if x.len() != p.input_dim() {
        return Err(ModelError::DimensionMismatch {
            what: "node input",
            expected: p.input_dim(),
            found: x.len(),
        });
    }
    if h_pa.len() != d_h || c_pa.len() != d_h {
        return Err(ModelError::DimensionMismatch {
            what: "parent state",
            expected: d_h,
            found: if h_pa.len() != d_h { h_pa.len() } else { c_pa.len() },
        });
    }
    let affine = |g: Gate| {
        let gp = p.gate(g);
        let mut z = gp.b.as_slice().to_vec();
        gp.w.mul_vec_acc(x, &mut z);
        gp.u.mul_vec_acc(h_pa, &mut z);
        z
    };
    let r: Vec<f64> = affine(Gate::Recurrence).into_iter().map(f64::tanh).collect();
    let i: Vec<f64> = affine(Gate::Input).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = affine(Gate::Output).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = affine(Gate::Forget).into_iter().map(sigmoid).collect();
    let c: Vec<f64> = (0..d_h).map(|k| i[k] * r[k] + f[k] * c_pa[k]).collect();
    let h: Vec<f64> = (0..d_h).map(|k| o[k] * c[k].tanh()).collect();
    Ok(CellState { h, c, r, i, o, f })
}

/// Per-node states of one unfolded tree, indexed by node id.
#[derive(Debug, Clone)]
pub struct NodeStates {
    states: Vec<CellState>,
    version: u64,
}

impl NodeStates {
    pub fn get(&self, u: NodeId) -> &CellState {
        &self.states[u.index()]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Version of the parameters these states were computed with.
    pub fn parameter_version(&self) -> u64 {
        self.version
    }
}

/// Runs the cell over the tree in top-down order. The root reads a zero
/// parent state.
pub fn unfold(
    t: &ParseTree,
    encodings: &[Vec<f64>],
    params: &ModelParameters,
) -> Result<NodeStates, ModelError> {
    let tree = t.tree();
    if encodings.len() != tree.len() {
        return Err(ModelError::DimensionMismatch {
            what: "encodings per node",
            expected: tree.len(),
            found: encodings.len(),
        });
    }
    let d_h = params.hidden_dim();
    let zero = vec![0.0; d_h];
    let mut states: Vec<Option<CellState>> = vec![None; tree.len()];
    for u in tree.topdown_order() {
        let state = match tree.parent(u) {
            None => cell_forward(&encodings[u.index()], &zero, &zero, params.cell())?,
            Some(p) => {
                let parent = states[p.index()].as_ref().expect("parents first");
                cell_forward(&encodings[u.index()], &parent.h, &parent.c, params.cell())?
            }
        };
        states[u.index()] = Some(state);
    }
    Ok(NodeStates {
        states: states.into_iter().map(|s| s.expect("every node visited")).collect(),
        version: params.version(),
    })
}
