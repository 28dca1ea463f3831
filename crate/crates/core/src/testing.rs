//! Random graph generators for property tests and benchmarks.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::backend::Feeds;
use crate::graph::{attrs, ints, DType, Graph, GraphBuilder, NodeId, OpKind};
use crate::tensor::TensorValue;

const ROWS: usize = 2;
const COLS: usize = 3;

fn normal(rng: &mut impl RngCore, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A random `F64` graph of smooth ops (no kinks, no integer ops) with at most
/// `max_nodes` nodes. One `[2, 3]` input, trainable constants, and a single
/// `[2, 3]` output whose mean is the loss.
pub fn random_smooth_graph(rng: &mut impl RngCore, max_nodes: usize) -> Graph {
    assert!(max_nodes >= 4, "need room for an input, a constant and two ops");
    let mut b = GraphBuilder::new("random_smooth");
    let x = b.input(DType::F64, [ROWS, COLS]);
    let w = b.constant(DType::F64, [ROWS, COLS], normal(rng, ROWS * COLS, 0.5), true);
    let mut wide: Vec<NodeId> = vec![x, w];
    let mut tall: Vec<NodeId> = Vec::new();
    let mut last = b.binary(OpKind::Mul, x, w).expect("same shapes");
    wide.push(last);
    let mut used = 3;
    while used + 2 <= max_nodes {
        let pick = |rng: &mut dyn RngCore, pool: &[NodeId]| pool[rng.random_range(0..pool.len())];
        let choice = rng.random_range(0..8);
        last = match choice {
            0..=2 => {
                let op = [OpKind::Add, OpKind::Sub, OpKind::Mul][choice];
                let (p, q) = (pick(rng, &wide), pick(rng, &wide));
                b.binary(op, p, q).expect("same shapes")
            }
            3 | 4 => {
                let op = [OpKind::Tanh, OpKind::Sigmoid, OpKind::Square, OpKind::Neg][rng.random_range(0..4)];
                let p = pick(rng, &wide);
                b.unary(op, p).expect("elementwise")
            }
            5 => {
                let m = b.constant(DType::F64, [COLS, COLS], normal(rng, COLS * COLS, 0.4), true);
                used += 1;
                let p = pick(rng, &wide);
                b.binary(OpKind::MatMul, p, m).expect("[2,3] x [3,3]")
            }
            6 => {
                let p = pick(rng, &wide);
                let t = b.op(OpKind::Transpose, &[p], attrs([("perm", ints(&[1, 0]))])).expect("rank 2");
                tall.push(t);
                used += 1;
                continue;
            }
            _ => {
                if tall.is_empty() {
                    continue;
                }
                let p = pick(rng, &tall);
                b.op(OpKind::Reshape, &[p], attrs([("shape", ints(&[ROWS, COLS]))])).expect("same numel")
            }
        };
        wide.push(last);
        used += 1;
    }
    b.output(last);
    b.finish().expect("generated graphs are well formed")
}

/// Standard-normal feeds for every float input of `g`.
pub fn random_float_feeds(g: &Graph, rng: &mut impl RngCore) -> Feeds {
    g.inputs()
        .iter()
        .map(|&i| {
            let n = g.node(i);
            (i, TensorValue::new(n.dtype, n.shape.clone(), normal(rng, n.shape.numel(), 1.0)).expect("length matches"))
        })
        .collect()
}
