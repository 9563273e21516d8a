//! Backpropagation through structure for the top-down cell.
//!
//! Nodes are visited in reverse top-down order, so every child has pushed
//! its contribution into the parent's `dh`/`dc` before the parent is
//! processed. Gradients of shared weights are summed over all nodes.

use crate::labeling::KeepMask;
use crate::model::{head_affine, Gate, GradientSet, ModelParameters, NodeStates, OutputHead};
use crate::encoder::Encoder;
use crate::ptb::ParseTree;

use super::{l2_gradient, l2_penalty, TrainError};

/// Per-leaf training targets for the given head.
pub fn leaf_targets(
    t: &ParseTree,
    mask: &KeepMask,
    encoder: &Encoder,
    head: &dyn OutputHead,
) -> Vec<Vec<f64>> {
    t.leaves()
        .into_iter()
        .zip(mask.iter())
        .map(|(leaf, keep)| head.leaf_target(keep, encoder.word_vector(t.tree().label(leaf)), encoder))
        .collect()
}

/// Data loss of one tree (no penalty) from its forward states.
pub fn tree_loss(
    t: &ParseTree,
    states: &NodeStates,
    targets: &[Vec<f64>],
    params: &ModelParameters,
    head: &dyn OutputHead,
) -> Result<f64, TrainError> {
    let outputs = leaf_outputs(t, states, params, head)?;
    Ok(head.loss_and_grad(&outputs, targets)?.0)
}

fn leaf_outputs(
    t: &ParseTree,
    states: &NodeStates,
    params: &ModelParameters,
    head: &dyn OutputHead,
) -> Result<Vec<Vec<f64>>, TrainError> {
    t.leaves()
        .into_iter()
        .map(|leaf| {
            let s = states.get(leaf);
            Ok(head.activate(head_affine(&s.h, &s.c, params.head())?))
        })
        .collect()
}

/// Gradient of the data loss of one tree, without the penalty term.
/// Returns the loss alongside.
pub fn data_gradient(
    t: &ParseTree,
    encodings: &[Vec<f64>],
    states: &NodeStates,
    targets: &[Vec<f64>],
    params: &ModelParameters,
    head: &dyn OutputHead,
) -> Result<(f64, GradientSet), TrainError> {
    if states.parameter_version() != params.version() {
        return Err(TrainError::StaleStates);
    }
    let tree = t.tree();
    if states.len() != tree.len() || encodings.len() != tree.len() {
        return Err(TrainError::StaleStates);
    }
    let d_h = params.hidden_dim();
    let outputs = leaf_outputs(t, states, params, head)?;
    let (loss, out_grads) = head.loss_and_grad(&outputs, targets)?;

    let mut grads = params.zeros_like();
    let mut dh = vec![vec![0.0; d_h]; tree.len()];
    let mut dc = vec![vec![0.0; d_h]; tree.len()];

    {
        let hp = params.head();
        let gh = grads.head_mut();
        for (leaf, dz) in t.leaves().into_iter().zip(&out_grads) {
            let s = states.get(leaf);
            gh.wh.add_outer(dz, &s.h);
            gh.wc.add_outer(dz, &s.c);
            for (b, g) in gh.b.as_mut_slice().iter_mut().zip(dz) {
                *b += g;
            }
            hp.wh.mul_t_vec_acc(dz, &mut dh[leaf.index()]);
            hp.wc.mul_t_vec_acc(dz, &mut dc[leaf.index()]);
        }
    }

    let zero = vec![0.0; d_h];
    let cell = params.cell();
    let gcell = grads.cell_mut();
    let mut dz = [vec![0.0; d_h], vec![0.0; d_h], vec![0.0; d_h], vec![0.0; d_h]];
    for u in tree.topdown_order().into_iter().rev() {
        let s = states.get(u);
        let (h_pa, c_pa) = match tree.parent(u) {
            Some(p) => {
                let ps = states.get(p);
                (&ps.h[..], &ps.c[..])
            }
            None => (&zero[..], &zero[..]),
        };
        let x = &encodings[u.index()];
        let dh_u = &dh[u.index()];
        let mut dc_pa = vec![0.0; d_h];
        for k in 0..d_h {
            let tanh_c = s.c[k].tanh();
            let d_o = dh_u[k] * tanh_c;
            let dct = dc[u.index()][k] + dh_u[k] * s.o[k] * (1.0 - tanh_c * tanh_c);
            let d_i = dct * s.r[k];
            let d_r = dct * s.i[k];
            let d_f = dct * c_pa[k];
            dc_pa[k] = dct * s.f[k];
            dz[Gate::Recurrence.index()][k] = d_r * (1.0 - s.r[k] * s.r[k]);
            dz[Gate::Input.index()][k] = d_i * s.i[k] * (1.0 - s.i[k]);
            dz[Gate::Output.index()][k] = d_o * s.o[k] * (1.0 - s.o[k]);
            dz[Gate::Forget.index()][k] = d_f * s.f[k] * (1.0 - s.f[k]);
        }
        let mut dh_pa = vec![0.0; d_h];
        for g in Gate::ALL {
            let dzg = &dz[g.index()];
            let gg = gcell.gate_mut(g);
            gg.w.add_outer(dzg, x);
            gg.u.add_outer(dzg, h_pa);
            for (b, v) in gg.b.as_mut_slice().iter_mut().zip(dzg) {
                *b += v;
            }
            cell.gate(g).u.mul_t_vec_acc(dzg, &mut dh_pa);
        }
        if let Some(p) = tree.parent(u) {
            for k in 0..d_h {
                dh[p.index()][k] += dh_pa[k];
                dc[p.index()][k] += dc_pa[k];
            }
        }
    }
    Ok((loss, grads))
}

/// Gradient of `loss + λ Σ W²` for one tree. Returns the total objective.
pub fn backward(
    t: &ParseTree,
    encodings: &[Vec<f64>],
    states: &NodeStates,
    targets: &[Vec<f64>],
    params: &ModelParameters,
    head: &dyn OutputHead,
    lambda: f64,
) -> Result<(f64, GradientSet), TrainError> {
    let (loss, mut grads) = data_gradient(t, encodings, states, targets, params, head)?;
    l2_gradient(params, lambda, &mut grads);
    Ok((loss + l2_penalty(params, lambda), grads))
}
