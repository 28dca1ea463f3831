//! Operator vocabulary, attribute schema and per-op shape/dtype inference.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::dtype::{DType, Shape, MAX_RANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Square,
    ReLU,
    ReLU6,
    Tanh,
    Sigmoid,
    MatMul,
    Conv2D,
    MaxPool2D,
    AvgPool2D,
    Pad,
    Transpose,
    Reshape,
    Flatten,
    Slice,
    Concat,
    ReduceMean,
    ReduceSum,
    BatchNormInference,
    SoftmaxCrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 26] = [
        OpKind::Input,
        OpKind::Const,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Abs,
        OpKind::Square,
        OpKind::ReLU,
        OpKind::ReLU6,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::MatMul,
        OpKind::Conv2D,
        OpKind::MaxPool2D,
        OpKind::AvgPool2D,
        OpKind::Pad,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Flatten,
        OpKind::Slice,
        OpKind::Concat,
        OpKind::ReduceMean,
        OpKind::ReduceSum,
        OpKind::BatchNormInference,
        OpKind::SoftmaxCrossEntropy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn arity(self) -> usize {
        use OpKind::*;
        match self {
            Input | Const => 0,
            Neg | Abs | Square | ReLU | ReLU6 | Tanh | Sigmoid => 1,
            MaxPool2D | AvgPool2D | Pad | Transpose | Reshape | Flatten | Slice => 1,
            ReduceMean | ReduceSum => 1,
            Add | Sub | Mul | MatMul | Concat | SoftmaxCrossEntropy => 2,
            Conv2D => 3,
            BatchNormInference => 5,
        }
    }

    /// Graph leaves: excluded from layer signatures and edge pairs.
    pub fn is_leaf(self) -> bool {
        matches!(self, OpKind::Input | OpKind::Const)
    }

    pub fn is_unary_elementwise(self) -> bool {
        use OpKind::*;
        matches!(self, Neg | Abs | Square | ReLU | ReLU6 | Tanh | Sigmoid)
    }

    pub fn is_binary_elementwise(self) -> bool {
        matches!(self, OpKind::Add | OpKind::Sub | OpKind::Mul)
    }

    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            Input => "Input",
            Const => "Const",
            Add => "Add",
            Sub => "Sub",
            Mul => "Mul",
            Neg => "Neg",
            Abs => "Abs",
            Square => "Square",
            ReLU => "ReLU",
            ReLU6 => "ReLU6",
            Tanh => "Tanh",
            Sigmoid => "Sigmoid",
            MatMul => "MatMul",
            Conv2D => "Conv2D",
            MaxPool2D => "MaxPool2D",
            AvgPool2D => "AvgPool2D",
            Pad => "Pad",
            Transpose => "Transpose",
            Reshape => "Reshape",
            Flatten => "Flatten",
            Slice => "Slice",
            Concat => "Concat",
            ReduceMean => "ReduceMean",
            ReduceSum => "ReduceSum",
            BatchNormInference => "BatchNormInference",
            SoftmaxCrossEntropy => "SoftmaxCrossEntropy",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Attribute values. Floating payloads never appear here; constant tensors
/// carry their data on the node itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Ints(Vec<i64>),
    Str(String),
    Strs(Vec<String>),
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Int(v) => write!(f, "{v}"),
            AttrValue::Ints(v) => write!(f, "{v:?}"),
            AttrValue::Str(s) => write!(f, "{s:?}"),
            AttrValue::Strs(v) => write!(f, "{v:?}"),
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

/// Builds an attribute map from `(key, value)` pairs.
pub fn attrs<const N: usize>(pairs: [(&str, AttrValue); N]) -> Attrs {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn ints(values: &[usize]) -> AttrValue {
    AttrValue::Ints(values.iter().map(|&v| v as i64).collect())
}

pub(crate) fn get_ints(attrs: &Attrs, key: &str) -> Result<Vec<usize>, String> {
    match attrs.get(key) {
        Some(AttrValue::Ints(v)) => v
            .iter()
            .map(|&x| usize::try_from(x).map_err(|_| format!("attr `{key}` has negative entry {x}")))
            .collect(),
        Some(other) => Err(format!("attr `{key}` must be an int list, got {other}")),
        None => Err(format!("missing attr `{key}`")),
    }
}

pub(crate) fn get_int(attrs: &Attrs, key: &str) -> Result<i64, String> {
    match attrs.get(key) {
        Some(AttrValue::Int(v)) => Ok(*v),
        Some(other) => Err(format!("attr `{key}` must be an int, got {other}")),
        None => Err(format!("missing attr `{key}`")),
    }
}

fn get_pair(attrs: &Attrs, key: &str) -> Result<[usize; 2], String> {
    let v = get_ints(attrs, key)?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("attr `{key}` must have two entries")),
    }
}

/// Typed view of Conv2D attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    pub fn from_attrs(attrs: &Attrs) -> Result<Self, String> {
        let p = ConvParams {
            kernel: get_pair(attrs, "kernel")?,
            stride: get_pair(attrs, "stride")?,
            padding: get_pair(attrs, "padding")?,
            in_channels: usize::try_from(get_int(attrs, "in_channels")?).map_err(|e| e.to_string())?,
            out_channels: usize::try_from(get_int(attrs, "out_channels")?).map_err(|e| e.to_string())?,
        };
        if p.stride.contains(&0) || p.kernel.contains(&0) {
            return Err("conv kernel and stride must be positive".into());
        }
        Ok(p)
    }

    pub fn to_attrs(&self) -> Attrs {
        attrs([
            ("kernel", ints(&self.kernel)),
            ("stride", ints(&self.stride)),
            ("padding", ints(&self.padding)),
            ("in_channels", AttrValue::Int(self.in_channels as i64)),
            ("out_channels", AttrValue::Int(self.out_channels as i64)),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolParams {
    pub fn from_attrs(attrs: &Attrs) -> Result<Self, String> {
        let p = PoolParams { kernel: get_pair(attrs, "kernel")?, stride: get_pair(attrs, "stride")? };
        if p.stride.contains(&0) || p.kernel.contains(&0) {
            return Err("pool kernel and stride must be positive".into());
        }
        Ok(p)
    }

    pub fn to_attrs(&self) -> Attrs {
        attrs([("kernel", ints(&self.kernel)), ("stride", ints(&self.stride))])
    }
}

/// `[before_0, after_0, before_1, after_1, ...]`
pub(crate) fn pad_amounts(attrs: &Attrs, rank: usize) -> Result<Vec<(usize, usize)>, String> {
    let pads = get_ints(attrs, "pads")?;
    if pads.len() != 2 * rank {
        return Err(format!("pads needs {} entries for rank {rank}, got {}", 2 * rank, pads.len()));
    }
    Ok(pads.chunks(2).map(|c| (c[0], c[1])).collect())
}

pub(crate) fn reduce_axes(attrs: &Attrs, rank: usize) -> Result<Vec<usize>, String> {
    let axes = get_ints(attrs, "axes")?;
    if axes.is_empty() {
        return Ok((0..rank).collect());
    }
    let mut sorted = axes.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != axes.len() || sorted.last().is_some_and(|&a| a >= rank) {
        return Err(format!("bad reduce axes {axes:?} for rank {rank}"));
    }
    Ok(sorted)
}

/// Broadcast rule for binary elementwise ops: equal shapes, or one side has a
/// single element.
pub(crate) fn broadcast_shape(a: &Shape, b: &Shape) -> Option<Shape> {
    if a == b || (b.numel() == 1 && (a.numel() != 1 || a.rank() >= b.rank())) {
        Some(a.clone())
    } else if a.numel() == 1 {
        Some(b.clone())
    } else {
        None
    }
}

/// Operand type seen by shape inference.
pub(crate) struct Operand<'a> {
    pub dtype: DType,
    pub shape: &'a Shape,
}

pub(crate) enum InferError {
    Shape(String),
    Attr(String),
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, InferError> {
    Err(InferError::Shape(msg.into()))
}

fn attr<T>(r: Result<T, String>) -> Result<T, InferError> {
    r.map_err(InferError::Attr)
}

fn require_float(op: OpKind, o: &Operand<'_>) -> Result<(), InferError> {
    if o.dtype.is_float() {
        Ok(())
    } else {
        shape_err(format!("{op} needs a float operand, got {}", o.dtype))
    }
}

/// Infers the output dtype and shape of a non-leaf node from its operands.
pub(crate) fn infer_node(op: OpKind, attrs: &Attrs, ins: &[Operand<'_>]) -> Result<(DType, Shape), InferError> {
    use OpKind::*;
    if ins.len() != op.arity() {
        return Err(InferError::Attr(format!("{op} takes {} inputs, got {}", op.arity(), ins.len())));
    }
    let out = match op {
        Input | Const => unreachable!("leaves carry declared types"),
        Add | Sub | Mul => {
            let (a, b) = (&ins[0], &ins[1]);
            if a.dtype != b.dtype {
                return shape_err(format!("{op} dtype mismatch {} vs {}", a.dtype, b.dtype));
            }
            if a.dtype == DType::Bool {
                return shape_err(format!("{op} does not accept bool"));
            }
            match broadcast_shape(a.shape, b.shape) {
                Some(s) => (a.dtype, s),
                None => return shape_err(format!("{op} cannot combine {} and {}", a.shape, b.shape)),
            }
        }
        Neg | Abs | Square | ReLU | ReLU6 | Tanh | Sigmoid => {
            require_float(op, &ins[0])?;
            (ins[0].dtype, ins[0].shape.clone())
        }
        MatMul => {
            let (a, b) = (&ins[0], &ins[1]);
            require_float(op, a)?;
            if a.dtype != b.dtype {
                return shape_err("MatMul dtype mismatch");
            }
            match (a.shape.dims(), b.shape.dims()) {
                ([m, k], [k2, n]) if k == k2 => (a.dtype, Shape::from([*m, *n])),
                _ => return shape_err(format!("MatMul cannot multiply {} by {}", a.shape, b.shape)),
            }
        }
        Conv2D => {
            let p = attr(ConvParams::from_attrs(attrs))?;
            let (x, w, b) = (&ins[0], &ins[1], &ins[2]);
            require_float(op, x)?;
            if w.dtype != x.dtype || b.dtype != x.dtype {
                return shape_err("Conv2D dtype mismatch");
            }
            let [n, c, h, wd] = match x.shape.dims() {
                [n, c, h, w] => [*n, *c, *h, *w],
                _ => return shape_err(format!("Conv2D input must be NCHW, got {}", x.shape)),
            };
            if c != p.in_channels {
                return shape_err(format!("Conv2D expects {} input channels, got {c}", p.in_channels));
            }
            let wshape = [p.out_channels, p.in_channels, p.kernel[0], p.kernel[1]];
            if w.shape.dims() != wshape {
                return shape_err(format!("Conv2D weight must be {wshape:?}, got {}", w.shape));
            }
            if b.shape.dims() != [p.out_channels] {
                return shape_err(format!("Conv2D bias must be [{}], got {}", p.out_channels, b.shape));
            }
            let (ph, pw) = (h + 2 * p.padding[0], wd + 2 * p.padding[1]);
            if ph < p.kernel[0] || pw < p.kernel[1] {
                return shape_err("Conv2D kernel larger than padded input");
            }
            let oh = (ph - p.kernel[0]) / p.stride[0] + 1;
            let ow = (pw - p.kernel[1]) / p.stride[1] + 1;
            (x.dtype, Shape::from([n, p.out_channels, oh, ow]))
        }
        MaxPool2D | AvgPool2D => {
            let p = attr(PoolParams::from_attrs(attrs))?;
            let x = &ins[0];
            require_float(op, x)?;
            let [n, c, h, w] = match x.shape.dims() {
                [n, c, h, w] => [*n, *c, *h, *w],
                _ => return shape_err(format!("{op} input must be NCHW, got {}", x.shape)),
            };
            if h < p.kernel[0] || w < p.kernel[1] {
                return shape_err(format!("{op} window larger than input"));
            }
            let oh = (h - p.kernel[0]) / p.stride[0] + 1;
            let ow = (w - p.kernel[1]) / p.stride[1] + 1;
            (x.dtype, Shape::from([n, c, oh, ow]))
        }
        Pad => {
            let x = &ins[0];
            let pads = attr(pad_amounts(attrs, x.shape.rank()))?;
            let dims = x.shape.dims().iter().zip(&pads).map(|(d, (b, a))| d + b + a).collect::<Vec<_>>();
            (x.dtype, Shape::new(dims))
        }
        Transpose => {
            let x = &ins[0];
            let perm = attr(get_ints(attrs, "perm"))?;
            let mut seen = vec![false; x.shape.rank()];
            if perm.len() != x.shape.rank() {
                return Err(InferError::Attr(format!("perm {perm:?} does not match rank {}", x.shape.rank())));
            }
            for &p in &perm {
                if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                    return Err(InferError::Attr(format!("perm {perm:?} is not a permutation")));
                }
            }
            let dims = perm.iter().map(|&p| x.shape.dims()[p]).collect::<Vec<_>>();
            (x.dtype, Shape::new(dims))
        }
        Reshape => {
            let x = &ins[0];
            let dims = attr(get_ints(attrs, "shape"))?;
            let target = Shape::new(dims);
            if target.numel() != x.shape.numel() {
                return shape_err(format!("cannot reshape {} into {}", x.shape, target));
            }
            (x.dtype, target)
        }
        Flatten => {
            let x = &ins[0];
            match x.shape.dims() {
                [] => return shape_err("cannot flatten a scalar"),
                [d0, rest @ ..] => (x.dtype, Shape::from([*d0, rest.iter().product()])),
            }
        }
        Slice => {
            let x = &ins[0];
            let begin = attr(get_ints(attrs, "begin"))?;
            let size = attr(get_ints(attrs, "size"))?;
            let rank = x.shape.rank();
            if begin.len() != rank || size.len() != rank {
                return Err(InferError::Attr(format!("slice begin/size must have {rank} entries")));
            }
            for ((b, s), d) in begin.iter().zip(&size).zip(x.shape.dims()) {
                if b + s > *d {
                    return shape_err(format!("slice {b}+{s} exceeds dim {d}"));
                }
            }
            (x.dtype, Shape::new(size))
        }
        Concat => {
            let (a, b) = (&ins[0], &ins[1]);
            let axis = attr(get_int(attrs, "axis"))?;
            let axis = usize::try_from(axis).map_err(|_| InferError::Attr("negative concat axis".into()))?;
            if a.dtype != b.dtype || a.shape.rank() != b.shape.rank() || axis >= a.shape.rank() {
                return shape_err(format!("cannot concat {} and {} on axis {axis}", a.shape, b.shape));
            }
            let mut dims = a.shape.dims().to_vec();
            for (i, (da, db)) in a.shape.dims().iter().zip(b.shape.dims()).enumerate() {
                if i == axis {
                    dims[i] = da + db;
                } else if da != db {
                    return shape_err(format!("cannot concat {} and {} on axis {axis}", a.shape, b.shape));
                }
            }
            (a.dtype, Shape::new(dims))
        }
        ReduceMean | ReduceSum => {
            let x = &ins[0];
            require_float(op, x)?;
            let axes = attr(reduce_axes(attrs, x.shape.rank()))?;
            let dims = x
                .shape
                .dims()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, d)| *d)
                .collect::<Vec<_>>();
            (x.dtype, Shape::new(dims))
        }
        BatchNormInference => {
            let x = &ins[0];
            require_float(op, x)?;
            if x.shape.rank() < 2 {
                return shape_err("BatchNormInference needs rank >= 2");
            }
            let c = x.shape.dims()[1];
            for p in &ins[1..] {
                if p.dtype != x.dtype || p.shape.dims() != [c] {
                    return shape_err(format!("BatchNormInference parameters must be [{c}]"));
                }
            }
            (x.dtype, x.shape.clone())
        }
        SoftmaxCrossEntropy => {
            let (logits, labels) = (&ins[0], &ins[1]);
            require_float(op, logits)?;
            match (logits.shape.dims(), labels.shape.dims()) {
                ([n, k], [n2]) if n == n2 && *k > 0 && labels.dtype == DType::I32 => {
                    (logits.dtype, Shape::scalar())
                }
                _ => {
                    return shape_err(format!(
                        "SoftmaxCrossEntropy needs [N,K] logits and [N] i32 labels, got {} and {}",
                        logits.shape, labels.shape
                    ))
                }
            }
        }
    };
    if out.1.rank() > MAX_RANK {
        return shape_err(format!("rank {} exceeds {MAX_RANK}", out.1.rank()));
    }
    Ok(out)
}
