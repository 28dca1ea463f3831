//! The insert-structure library: subgraphs spliced behind a zero gate.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{attrs, ints, AttrValue, ConvParams, GraphEditor, GraphError, NodeId, OpKind, PoolParams};

/// Standard deviation of freshly drawn insert weights.
pub const INSERT_WEIGHT_STD: f64 = 0.05;

/// Templates that widen their input stop doing so past this many elements.
const MAX_WIDENED_NUMEL: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InsertKind {
    SingleOp,
    ConvBnRelu,
    DownSample,
    MatMulTanh,
    SliceConcat,
    PoolBlock,
}

impl InsertKind {
    pub const ALL: [InsertKind; 6] = [
        InsertKind::SingleOp,
        InsertKind::ConvBnRelu,
        InsertKind::DownSample,
        InsertKind::MatMulTanh,
        InsertKind::SliceConcat,
        InsertKind::PoolBlock,
    ];
}

const SINGLE_OPS: [OpKind; 8] = [
    OpKind::Neg,
    OpKind::Abs,
    OpKind::Square,
    OpKind::ReLU,
    OpKind::ReLU6,
    OpKind::Tanh,
    OpKind::Sigmoid,
    OpKind::Mul,
];

struct Builder<'a, R: RngCore> {
    e: &'a mut GraphEditor,
    rng: &'a mut R,
    dtype: crate::graph::DType,
}

impl<R: RngCore> Builder<'_, R> {
    fn weights(&mut self, shape: &[usize]) -> NodeId {
        let normal = Normal::new(0.0, INSERT_WEIGHT_STD).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut *self.rng)).collect();
        self.e.constant(self.dtype, shape.to_vec(), data, true)
    }

    fn fill(&mut self, c: usize, value: f64, trainable: bool) -> NodeId {
        self.e.constant(self.dtype, [c], vec![value; c], trainable)
    }

    fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId, GraphError> {
        if self.e.shape(x).dims() == dims {
            return Ok(x);
        }
        self.e.op(OpKind::Reshape, &[x], attrs([("shape", ints(dims))]))
    }

    /// Views `x` as a single-channel image `[1, 1, h, w]` with `h * w = numel`.
    fn as_image(&mut self, x: NodeId) -> Result<(NodeId, usize, usize), GraphError> {
        let n = self.e.shape(x).numel();
        let h = (1..=n).take_while(|d| d * d <= n).filter(|d| n.is_multiple_of(*d)).last().unwrap_or(1);
        let w = n / h;
        Ok((self.reshape(x, &[1, 1, h, w])?, h, w))
    }

    fn conv(&mut self, x: NodeId, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<NodeId, GraphError> {
        let w = self.weights(&[cout, cin, k, k]);
        let b = self.fill(cout, 0.0, true);
        let p = ConvParams { kernel: [k, k], stride: [stride, stride], padding: [pad, pad], in_channels: cin, out_channels: cout };
        self.e.op(OpKind::Conv2D, &[x, w, b], p.to_attrs())
    }

    fn batch_norm(&mut self, x: NodeId, c: usize) -> Result<NodeId, GraphError> {
        let gamma = self.fill(c, 1.0, true);
        let beta = self.fill(c, 0.0, true);
        let mean = self.fill(c, 0.0, false);
        let var = self.fill(c, 1.0, false);
        self.e.op(OpKind::BatchNormInference, &[x, gamma, beta, mean, var], Default::default())
    }
}

/// Builds the template on top of `input` and returns its output node. The
/// output shape is template-specific; the caller fits it to the splice target.
pub fn build_insert(
    kind: InsertKind,
    e: &mut GraphEditor,
    input: NodeId,
    rng: &mut impl RngCore,
) -> Result<NodeId, GraphError> {
    let dtype = e.dtype(input);
    let mut b = Builder { e, rng, dtype };
    match kind {
        InsertKind::SingleOp => {
            let op = SINGLE_OPS[b.rng.random_range(0..SINGLE_OPS.len())];
            if op == OpKind::Mul {
                b.e.binary(OpKind::Mul, input, input)
            } else {
                b.e.unary(op, input)
            }
        }
        InsertKind::ConvBnRelu => {
            let (img, h, w) = b.as_image(input)?;
            let channels = if h * w > MAX_WIDENED_NUMEL / 2 { 1 } else { 2 };
            let c = b.conv(img, 1, channels, 3, 1, 1)?;
            let bn = b.batch_norm(c, channels)?;
            b.e.unary(OpKind::ReLU, bn)
        }
        InsertKind::DownSample => {
            let (img, _, _) = b.as_image(input)?;
            let c1 = b.conv(img, 1, 2, 3, 2, 1)?;
            let b1 = b.batch_norm(c1, 2)?;
            let r1 = b.e.unary(OpKind::ReLU, b1)?;
            let c2 = b.conv(r1, 2, 2, 3, 1, 1)?;
            let b2 = b.batch_norm(c2, 2)?;
            let shortcut = b.conv(img, 1, 2, 1, 2, 0)?;
            let sum = b.e.binary(OpKind::Add, b2, shortcut)?;
            b.e.unary(OpKind::ReLU, sum)
        }
        InsertKind::MatMulTanh => {
            let n = b.e.shape(input).numel();
            let row = b.reshape(input, &[1, n])?;
            let m = n.clamp(1, 16);
            let w = b.weights(&[n, m]);
            let mm = b.e.binary(OpKind::MatMul, row, w)?;
            b.e.unary(OpKind::Tanh, mm)
        }
        InsertKind::SliceConcat => {
            let n = b.e.shape(input).numel();
            let row = b.reshape(input, &[1, n])?;
            let half = n / 2;
            let slice = |b: &mut Builder<'_, _>, begin: usize, size: usize| {
                b.e.op(OpKind::Slice, &[row], attrs([("begin", ints(&[0, begin])), ("size", ints(&[1, size]))]))
            };
            let (lo, hi) = if half == 0 { (row, row) } else { (slice(&mut b, 0, half)?, slice(&mut b, half, n - half)?) };
            let hi = b.e.unary(OpKind::Tanh, hi)?;
            let lo = b.e.unary(OpKind::Sigmoid, lo)?;
            b.e.op(OpKind::Concat, &[hi, lo], attrs([("axis", AttrValue::Int(1))]))
        }
        InsertKind::PoolBlock => {
            let (img, h, w) = b.as_image(input)?;
            let k = [h.min(2), w.min(2)];
            let max = b.e.op(OpKind::MaxPool2D, &[img], PoolParams { kernel: k, stride: k }.to_attrs())?;
            let avg = b.e.op(OpKind::AvgPool2D, &[img], PoolParams { kernel: k, stride: k }.to_attrs())?;
            b.e.binary(OpKind::Sub, max, avg)
        }
    }
}
