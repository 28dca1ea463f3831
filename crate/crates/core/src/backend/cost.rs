//! Deterministic per-op cost table. Only ratios of these numbers are ever
//! compared, so the units are arbitrary.

use crate::graph::{ConvParams, Graph, Node, OpKind, PoolParams};

/// Backward work for a node is this multiple of its forward cost.
pub const BACKWARD_FACTOR: u64 = 2;

pub fn node_cost(g: &Graph, node: &Node) -> u64 {
    use OpKind::*;
    let out = node.shape.numel() as u64;
    let input_numel = |k: usize| g.node(node.inputs[k]).shape.numel() as u64;
    match node.op {
        Input | Const => 0,
        MatMul => {
            let a = g.node(node.inputs[0]).shape.dims();
            let n = node.shape.dims()[1];
            (a[0] * a[1] * n) as u64
        }
        Conv2D => {
            let p = ConvParams::from_attrs(&node.attrs).expect("validated");
            out * (p.in_channels * p.kernel[0] * p.kernel[1]) as u64
        }
        MaxPool2D | AvgPool2D => {
            let p = PoolParams::from_attrs(&node.attrs).expect("validated");
            out * (p.kernel[0] * p.kernel[1]) as u64
        }
        ReduceMean | ReduceSum => input_numel(0),
        SoftmaxCrossEntropy => input_numel(0),
        _ => out,
    }
}

/// Forward cost of the whole graph: the sum of its node costs.
pub fn graph_cost(g: &Graph) -> u64 {
    g.nodes().iter().map(|n| node_cost(g, n)).sum()
}

/// Nodes that receive a gradient in a training step: float nodes downstream
/// of an input or a trainable constant.
pub fn requires_grad(g: &Graph) -> Vec<bool> {
    let mut requires = vec![false; g.len()];
    for n in g.nodes() {
        requires[n.id] = n.dtype.is_float()
            && match n.op {
                OpKind::Input => true,
                OpKind::Const => n.is_trainable(),
                _ => n.inputs.iter().any(|&i| requires[i]),
            };
    }
    requires
}

/// Cost a correct backend charges for one training step: the forward pass,
/// the loss over the first output and backward work for every
/// gradient-carrying non-leaf node.
pub fn training_step_cost(g: &Graph) -> u64 {
    let requires = requires_grad(g);
    let out = g.outputs().first().map_or(0, |&o| g.node(o).shape.numel() as u64);
    let backward: u64 = g
        .nodes()
        .iter()
        .filter(|n| requires[n.id] && !n.op.is_leaf())
        .map(|n| BACKWARD_FACTOR * node_cost(g, n))
        .sum();
    graph_cost(g) + out + backward
}
