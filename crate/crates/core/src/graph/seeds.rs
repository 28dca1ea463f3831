//! Built-in seed models.
//!
//! Weights are drawn from a fixed per-label stream, so every call returns
//! identical graphs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{attrs, ints, AttrValue, ConvParams, DType, Graph, GraphBuilder, NodeId, OpKind, PoolParams, Shape};

pub const SEED_LABELS: [&str; 6] =
    ["cnn", "resnet_block", "mlp", "conv_autoencoder", "slice_concat", "transpose_reshape"];

pub fn seed_library() -> Vec<Graph> {
    SEED_LABELS.iter().map(|l| seed_by_label(l).expect("built-in label")).collect()
}

pub fn seed_by_label(label: &str) -> Option<Graph> {
    let g = match label {
        "cnn" => cnn(),
        "resnet_block" => resnet_block(),
        "mlp" => mlp(),
        "conv_autoencoder" => conv_autoencoder(),
        "slice_concat" => slice_concat(),
        "transpose_reshape" => transpose_reshape(),
        _ => return None,
    };
    Some(g)
}

struct Seeded {
    b: GraphBuilder,
    rng: ChaCha8Rng,
}

impl Seeded {
    fn new(label: &str, stream: u64) -> Self {
        Self { b: GraphBuilder::new(label), rng: ChaCha8Rng::seed_from_u64(0x5eed_0000 + stream) }
    }

    fn weight(&mut self, shape: impl Into<Shape>, fan_in: usize) -> NodeId {
        let shape = shape.into();
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..shape.numel()).map(|_| normal.sample(&mut self.rng)).collect();
        self.b.constant(DType::F32, shape, data, true)
    }

    fn fill(&mut self, shape: impl Into<Shape>, value: f64, trainable: bool) -> NodeId {
        let shape = shape.into();
        let n = shape.numel();
        self.b.constant(DType::F32, shape, vec![value; n], trainable)
    }

    fn op(&mut self, op: OpKind, inputs: &[NodeId], a: super::Attrs) -> NodeId {
        self.b.op(op, inputs, a).expect("seed graphs are well-formed")
    }

    fn unary(&mut self, op: OpKind, x: NodeId) -> NodeId {
        self.b.unary(op, x).expect("seed graphs are well-formed")
    }

    fn binary(&mut self, op: OpKind, x: NodeId, y: NodeId) -> NodeId {
        self.b.binary(op, x, y).expect("seed graphs are well-formed")
    }

    fn conv(&mut self, x: NodeId, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> NodeId {
        let w = self.weight([cout, cin, k, k], cin * k * k);
        let bias = self.fill([cout], 0.0, true);
        let p = ConvParams { kernel: [k, k], stride: [stride, stride], padding: [pad, pad], in_channels: cin, out_channels: cout };
        self.op(OpKind::Conv2D, &[x, w, bias], p.to_attrs())
    }

    fn batch_norm(&mut self, x: NodeId, c: usize) -> NodeId {
        let gamma = self.fill([c], 1.0, true);
        let beta = self.fill([c], 0.0, true);
        let mean = self.fill([c], 0.0, false);
        let var = self.fill([c], 1.0, false);
        self.op(OpKind::BatchNormInference, &[x, gamma, beta, mean, var], Default::default())
    }

    fn dense(&mut self, x: NodeId, k: usize, n: usize) -> NodeId {
        let w = self.weight([k, n], k);
        self.binary(OpKind::MatMul, x, w)
    }

    fn finish(mut self, out: NodeId) -> Graph {
        self.b.output(out);
        self.b.finish().expect("seed graphs are well-formed")
    }
}

fn cnn() -> Graph {
    let mut s = Seeded::new("cnn", 1);
    let x = s.b.input(DType::F32, [2, 3, 8, 8]);
    let c = s.conv(x, 3, 4, 3, 1, 1);
    let bn = s.batch_norm(c, 4);
    let r = s.unary(OpKind::ReLU, bn);
    let p = s.op(OpKind::MaxPool2D, &[r], PoolParams { kernel: [2, 2], stride: [2, 2] }.to_attrs());
    let f = s.unary(OpKind::Flatten, p);
    let logits = s.dense(f, 64, 5);
    s.finish(logits)
}

fn resnet_block() -> Graph {
    let mut s = Seeded::new("resnet_block", 2);
    let mut x = s.b.input(DType::F32, [1, 4, 6, 6]);
    for _ in 0..2 {
        let c1 = s.conv(x, 4, 4, 3, 1, 1);
        let b1 = s.batch_norm(c1, 4);
        let r1 = s.unary(OpKind::ReLU, b1);
        let c2 = s.conv(r1, 4, 4, 3, 1, 1);
        let sum = s.binary(OpKind::Add, c2, x);
        x = s.unary(OpKind::ReLU, sum);
    }
    let pooled = s.op(OpKind::ReduceMean, &[x], attrs([("axes", ints(&[2, 3]))]));
    s.finish(pooled)
}

fn mlp() -> Graph {
    let mut s = Seeded::new("mlp", 3);
    let x = s.b.input(DType::F32, [4, 8]);
    let h1 = s.dense(x, 8, 16);
    let a1 = s.unary(OpKind::ReLU6, h1);
    let h2 = s.dense(a1, 16, 16);
    let a2 = s.unary(OpKind::Tanh, h2);
    let out = s.dense(a2, 16, 3);
    s.finish(out)
}

fn conv_autoencoder() -> Graph {
    let mut s = Seeded::new("conv_autoencoder", 4);
    let x = s.b.input(DType::F32, [1, 2, 8, 8]);
    let e1 = s.conv(x, 2, 4, 3, 2, 1);
    let a1 = s.unary(OpKind::ReLU, e1);
    let e2 = s.conv(a1, 4, 8, 1, 1, 0);
    let a2 = s.unary(OpKind::Tanh, e2);
    let up = s.op(OpKind::Reshape, &[a2], attrs([("shape", ints(&[1, 2, 8, 8]))]));
    let d = s.conv(up, 2, 2, 3, 1, 1);
    let out = s.unary(OpKind::Sigmoid, d);
    s.finish(out)
}

fn slice_concat() -> Graph {
    let mut s = Seeded::new("slice_concat", 5);
    let x = s.b.input(DType::F32, [2, 8]);
    let slice = |s: &mut Seeded, x, begin: [usize; 2], size: [usize; 2]| {
        s.op(OpKind::Slice, &[x], attrs([("begin", ints(&begin)), ("size", ints(&size))]))
    };
    let left = slice(&mut s, x, [0, 0], [2, 5]);
    let left = s.unary(OpKind::Tanh, left);
    let empty = slice(&mut s, x, [0, 8], [2, 0]);
    let filler = s.op(OpKind::Pad, &[empty], attrs([("pads", ints(&[0, 0, 0, 3]))]));
    let cat = s.op(OpKind::Concat, &[left, filler], attrs([("axis", AttrValue::Int(1))]));
    let right = slice(&mut s, x, [0, 4], [2, 4]);
    let right = s.unary(OpKind::ReLU, right);
    let cat2 = s.op(OpKind::Concat, &[cat, right], attrs([("axis", AttrValue::Int(1))]));
    let out = s.dense(cat2, 12, 4);
    s.finish(out)
}

fn transpose_reshape() -> Graph {
    let mut s = Seeded::new("transpose_reshape", 6);
    let x = s.b.input(DType::F32, [2, 3, 4]);
    let t = s.op(OpKind::Transpose, &[x], attrs([("perm", ints(&[2, 0, 1]))]));
    let r = s.op(OpKind::Reshape, &[t], attrs([("shape", ints(&[4, 6]))]));
    let a = s.unary(OpKind::Tanh, r);
    let t2 = s.op(OpKind::Transpose, &[a], attrs([("perm", ints(&[1, 0]))]));
    let r2 = s.op(OpKind::Reshape, &[t2], attrs([("shape", ints(&[2, 12]))]));
    let out = s.dense(r2, 12, 3);
    s.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    #[test]
    fn library_is_complete_and_valid() {
        let lib = seed_library();
        assert!(lib.len() >= 6);
        for g in &lib {
            validate(g).unwrap();
        }
        assert_eq!(seed_by_label("mlp"), seed_by_label("mlp"));
        assert!(seed_by_label("nope").is_none());
    }
}
