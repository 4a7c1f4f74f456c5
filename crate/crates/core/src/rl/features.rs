//! Per-node input features.
//!
//! Layout, in order: one-hot op kind over [`OP_KINDS`] plus an unknown
//! bucket, compute cost, output bytes and parameter bytes (each divided by
//! the graph maximum), in and out degree (divided by the maximum degree),
//! depth fraction, and a one-hot of the previous action (all zeros on the
//! first refinement step).

use ndarray::Array2;

use crate::generate::OP_KINDS;
use crate::graph::ComputationGraph;

const STATIC_EXTRA: usize = 6;

pub fn static_dim() -> usize {
    OP_KINDS.len() + 1 + STATIC_EXTRA
}

pub fn feature_dim(num_chips: usize) -> usize {
    static_dim() + num_chips
}

fn op_index(op: &str) -> usize {
    OP_KINDS.iter().position(|&k| k == op).unwrap_or(OP_KINDS.len())
}

fn ratio(x: f64, max: f64) -> f64 {
    if max > 0.0 {
        x / max
    } else {
        0.0
    }
}

/// Label-independent part of the features, `N x static_dim()`.
pub fn static_features(g: &ComputationGraph) -> Array2<f64> {
    let n = g.num_nodes();
    let mut x = Array2::zeros((n, static_dim()));
    if n == 0 {
        return x;
    }
    let max_of = |f: &dyn Fn(usize) -> f64| (0..n).map(f).fold(0.0, f64::max);
    let nodes = g.nodes();
    let max_cost = max_of(&|i| nodes[i].compute_cost);
    let max_out = max_of(&|i| nodes[i].output_bytes as f64);
    let max_param = max_of(&|i| nodes[i].param_bytes as f64);
    let max_in_deg = max_of(&|i| g.preds(i).len() as f64);
    let max_out_deg = max_of(&|i| g.succs(i).len() as f64);
    let depths = g.depths();
    let max_depth = depths.iter().copied().max().unwrap_or(0) as f64;
    let base = OP_KINDS.len() + 1;
    for (i, node) in nodes.iter().enumerate() {
        x[[i, op_index(&node.op_kind)]] = 1.0;
        x[[i, base]] = ratio(node.compute_cost, max_cost);
        x[[i, base + 1]] = ratio(node.output_bytes as f64, max_out);
        x[[i, base + 2]] = ratio(node.param_bytes as f64, max_param);
        x[[i, base + 3]] = ratio(g.preds(i).len() as f64, max_in_deg);
        x[[i, base + 4]] = ratio(g.succs(i).len() as f64, max_out_deg);
        x[[i, base + 5]] = ratio(depths[i] as f64, max_depth);
    }
    x
}

/// Full feature matrix for one refinement step.
pub fn with_previous(static_feats: &Array2<f64>, num_chips: usize, prev: Option<&[u32]>) -> Array2<f64> {
    let (n, s) = static_feats.dim();
    let mut x = Array2::zeros((n, s + num_chips));
    x.slice_mut(ndarray::s![.., ..s]).assign(static_feats);
    if let Some(prev) = prev {
        for (i, &c) in prev.iter().enumerate() {
            x[[i, s + c as usize]] = 1.0;
        }
    }
    x
}
