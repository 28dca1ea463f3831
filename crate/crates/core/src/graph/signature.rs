//! Structural fingerprints used by the diversity metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Graph, Node, OpKind};

/// An op together with a canonical rendering of its attributes. Two internal
/// nodes share a signature exactly when op and every attribute agree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerSignature {
    pub op: OpKind,
    pub attrs: String,
}

impl LayerSignature {
    pub fn of(node: &Node) -> Self {
        let attrs = node.attrs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",");
        Self { op: node.op, attrs }
    }
}

/// `(producer, consumer)` op kinds of one dataflow edge.
pub type EdgePair = (OpKind, OpKind);

pub fn signatures(g: &Graph) -> BTreeSet<LayerSignature> {
    g.nodes().iter().filter(|n| !n.op.is_leaf()).map(LayerSignature::of).collect()
}

/// Edges touching an `Input` or `Const` node are skipped.
pub fn edge_pairs(g: &Graph) -> BTreeSet<EdgePair> {
    let mut out = BTreeSet::new();
    for n in g.nodes().iter().filter(|n| !n.op.is_leaf()) {
        for &i in &n.inputs {
            let producer = g.node(i).op;
            if !producer.is_leaf() {
                out.insert((producer, n.op));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConvParams, DType, GraphBuilder};

    #[test]
    fn duplicate_relus_share_a_signature() {
        let mut b = GraphBuilder::new("g");
        let x = b.input(DType::F32, [2]);
        let r1 = b.unary(OpKind::ReLU, x).unwrap();
        let r2 = b.unary(OpKind::ReLU, r1).unwrap();
        b.output(r2);
        let g = b.finish().unwrap();
        assert_eq!(signatures(&g).len(), 1);
    }

    #[test]
    fn conv_relu_edges() {
        let mut b = GraphBuilder::new("g");
        let x = b.input(DType::F32, [1, 1, 4, 4]);
        let w = b.constant(DType::F32, [1, 1, 3, 3], vec![0.0; 9], true);
        let bias = b.constant(DType::F32, [1], vec![0.0], true);
        let p = ConvParams { kernel: [3, 3], stride: [1, 1], padding: [0, 0], in_channels: 1, out_channels: 1 };
        let c = b.op(OpKind::Conv2D, &[x, w, bias], p.to_attrs()).unwrap();
        let r = b.unary(OpKind::ReLU, c).unwrap();
        b.output(r);
        let g = b.finish().unwrap();
        assert_eq!(edge_pairs(&g), BTreeSet::from([(OpKind::Conv2D, OpKind::ReLU)]));
    }

    #[test]
    fn no_internal_edges() {
        let mut b = GraphBuilder::new("g");
        let x = b.input(DType::F32, [2]);
        let r = b.unary(OpKind::ReLU, x).unwrap();
        b.output(r);
        assert!(edge_pairs(&b.finish().unwrap()).is_empty());
    }
}
