//! Forward kernels. Everything is computed in `f64`; the caller rounds the
//! result to the node's dtype.

use crate::graph::{broadcast_shape, get_int, get_ints, pad_amounts, reduce_axes, ConvParams, Node, OpKind, PoolParams};
use crate::tensor::TensorValue;

pub(crate) const BN_EPS: f64 = 1e-5;

/// Calls `f(flat, index)` for every position of `dims` in row-major order.
pub(crate) fn for_each_index(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = dims.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    for flat in 0..total {
        f(flat, &idx);
        for d in (0..dims.len()).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn dot(idx: &[usize], strides: &[usize]) -> usize {
    idx.iter().zip(strides).map(|(i, s)| i * s).sum()
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

pub(crate) fn relu6(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else {
        x.clamp(0.0, 6.0)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn unary(op: OpKind, x: f64) -> f64 {
    match op {
        OpKind::Neg => -x,
        OpKind::Abs => x.abs(),
        OpKind::Square => x * x,
        OpKind::ReLU => relu(x),
        OpKind::ReLU6 => relu6(x),
        OpKind::Tanh => x.tanh(),
        OpKind::Sigmoid => sigmoid(x),
        _ => unreachable!("{op} is not unary elementwise"),
    }
}

fn binary(op: OpKind, a: f64, b: f64) -> f64 {
    match op {
        OpKind::Add => a + b,
        OpKind::Sub => a - b,
        OpKind::Mul => a * b,
        _ => unreachable!("{op} is not binary elementwise"),
    }
}

/// Index into an operand that is either full-size or a single broadcast element.
#[inline]
pub(crate) fn bidx(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}

/// Computes the raw (unrounded) output of `node`. Errors are kernel-level
/// failures such as out-of-range labels.
pub(crate) fn forward(node: &Node, ins: &[&TensorValue]) -> Result<Vec<f64>, String> {
    use OpKind::*;
    let out_numel = node.shape.numel();
    let out = match node.op {
        Input | Const => unreachable!("leaves are not computed"),
        Add | Sub | Mul => {
            let (a, b) = (ins[0], ins[1]);
            debug_assert!(broadcast_shape(&a.shape, &b.shape).is_some());
            (0..out_numel).map(|i| binary(node.op, a.data[bidx(a.numel(), i)], b.data[bidx(b.numel(), i)])).collect()
        }
        Neg | Abs | Square | ReLU | ReLU6 | Tanh | Sigmoid => ins[0].data.iter().map(|&x| unary(node.op, x)).collect(),
        MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (m, k) = (a.shape.dims()[0], a.shape.dims()[1]);
            let n = b.shape.dims()[1];
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += av * b.data[p * n + j];
                    }
                }
            }
            out
        }
        Conv2D => conv2d(node, ins)?,
        MaxPool2D | AvgPool2D => pool(node, ins[0])?,
        Pad => {
            let x = ins[0];
            let pads = pad_amounts(&node.attrs, x.shape.rank())?;
            let out_strides = node.shape.strides();
            let mut out = vec![0.0; out_numel];
            for_each_index(x.shape.dims(), |flat, idx| {
                let o: usize = idx.iter().zip(&pads).zip(&out_strides).map(|((i, (b, _)), s)| (i + b) * s).sum();
                out[o] = x.data[flat];
            });
            out
        }
        Transpose => {
            let x = ins[0];
            let perm = get_ints(&node.attrs, "perm")?;
            let in_strides = x.shape.strides();
            let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            let mut out = vec![0.0; out_numel];
            for_each_index(node.shape.dims(), |flat, idx| out[flat] = x.data[dot(idx, &strides)]);
            out
        }
        Reshape | Flatten => ins[0].data.clone(),
        Slice => {
            let x = ins[0];
            let begin = get_ints(&node.attrs, "begin")?;
            let in_strides = x.shape.strides();
            let mut out = vec![0.0; out_numel];
            for_each_index(node.shape.dims(), |flat, idx| {
                let src: usize = idx.iter().zip(&begin).zip(&in_strides).map(|((i, b), s)| (i + b) * s).sum();
                out[flat] = x.data[src];
            });
            out
        }
        Concat => {
            let axis = get_int(&node.attrs, "axis")? as usize;
            let (a, b) = (ins[0], ins[1]);
            let split = a.shape.dims()[axis];
            let (sa, sb) = (a.shape.strides(), b.shape.strides());
            let mut out = vec![0.0; out_numel];
            for_each_index(node.shape.dims(), |flat, idx| {
                out[flat] = if idx[axis] < split {
                    a.data[dot(idx, &sa)]
                } else {
                    let off: usize = idx
                        .iter()
                        .enumerate()
                        .map(|(d, &i)| if d == axis { (i - split) * sb[d] } else { i * sb[d] })
                        .sum();
                    b.data[off]
                };
            });
            out
        }
        ReduceMean | ReduceSum => {
            let x = ins[0];
            let axes = reduce_axes(&node.attrs, x.shape.rank())?;
            let (sums, count) = reduce_sum(x, &axes, node);
            if node.op == ReduceMean {
                sums.into_iter().map(|s| s / count as f64).collect()
            } else {
                sums
            }
        }
        BatchNormInference => {
            let (x, gamma, beta, mean, var) = (ins[0], ins[1], ins[2], ins[3], ins[4]);
            let (c, inner) = bn_layout(x);
            x.data
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = (i / inner) % c;
                    (v - mean.data[ch]) / (var.data[ch] + BN_EPS).sqrt() * gamma.data[ch] + beta.data[ch]
                })
                .collect()
        }
        SoftmaxCrossEntropy => vec![softmax_xent(ins[0], ins[1])?.0],
    };
    Ok(out)
}

/// Channel count and the number of elements per (batch, channel) slab.
pub(crate) fn bn_layout(x: &TensorValue) -> (usize, usize) {
    let dims = x.shape.dims();
    (dims[1], dims[2..].iter().product())
}

/// Sums `x` over `axes`; returns the flat sums in output order and the count
/// of elements folded into each.
pub(crate) fn reduce_sum(x: &TensorValue, axes: &[usize], node: &Node) -> (Vec<f64>, usize) {
    let out_strides = reduce_out_strides(x, axes);
    let mut sums = vec![0.0; node.shape.numel()];
    for_each_index(x.shape.dims(), |flat, idx| sums[dot(idx, &out_strides)] += x.data[flat]);
    let count = axes.iter().map(|&a| x.shape.dims()[a]).product();
    (sums, count)
}

/// Strides that map an input multi-index to the flat index of its reduced
/// output position (zero stride on reduced axes).
pub(crate) fn reduce_out_strides(x: &TensorValue, axes: &[usize]) -> Vec<usize> {
    let dims = x.shape.dims();
    let mut strides = vec![0usize; dims.len()];
    let mut acc = 1;
    for d in (0..dims.len()).rev() {
        if !axes.contains(&d) {
            strides[d] = acc;
            acc *= dims[d];
        }
    }
    strides
}

/// Mean negative log-likelihood and the softmax probabilities.
pub(crate) fn softmax_xent(logits: &TensorValue, labels: &TensorValue) -> Result<(f64, Vec<f64>), String> {
    let (n, k) = (logits.shape.dims()[0], logits.shape.dims()[1]);
    let mut probs = vec![0.0; n * k];
    let mut total = 0.0;
    for r in 0..n {
        let row = &logits.data[r * k..(r + 1) * k];
        let label = labels.data[r];
        if !(0.0..k as f64).contains(&label) {
            return Err(format!("label {label} out of range for {k} classes"));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max = if row.iter().any(|x| x.is_nan()) { f64::NAN } else { max };
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        for (j, &x) in row.iter().enumerate() {
            probs[r * k + j] = (x - max).exp() / denom;
        }
        total += denom.ln() - (row[label as usize] - max);
    }
    let loss = if n == 0 { 0.0 } else { total / n as f64 };
    Ok((loss, probs))
}

fn conv2d(node: &Node, ins: &[&TensorValue]) -> Result<Vec<f64>, String> {
    let p = ConvParams::from_attrs(&node.attrs)?;
    let (x, w, b) = (ins[0], ins[1], ins[2]);
    let [n, c, h, wd] = dims4(x);
    let [_, oc, oh, ow] = dims4_of(node.shape.dims());
    let [kh, kw] = p.kernel;
    let mut out = vec![0.0; n * oc * oh * ow];
    for bn in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data[o];
                    for ci in 0..c {
                        for i in 0..kh {
                            let iy = (y * p.stride[0] + i) as isize - p.padding[0] as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let ix = (xo * p.stride[1] + j) as isize - p.padding[1] as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((bn * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data[((o * c + ci) * kh + i) * kw + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bn * oc + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Ok(out)
}

fn pool(node: &Node, x: &TensorValue) -> Result<Vec<f64>, String> {
    let p = PoolParams::from_attrs(&node.attrs)?;
    let [n, c, h, w] = dims4(x);
    let [_, _, oh, ow] = dims4_of(node.shape.dims());
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut vals = Vec::with_capacity(p.kernel[0] * p.kernel[1]);
                for i in 0..p.kernel[0] {
                    for j in 0..p.kernel[1] {
                        vals.push(x.data[(plane * h + y * p.stride[0] + i) * w + xo * p.stride[1] + j]);
                    }
                }
                out[(plane * oh + y) * ow + xo] = if node.op == OpKind::MaxPool2D {
                    if vals.iter().any(|v| v.is_nan()) {
                        f64::NAN
                    } else {
                        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    }
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
            }
        }
    }
    Ok(out)
}

/// Flat index of the window element selected by max pooling (first maximum).
pub(crate) fn pool_argmax(x: &TensorValue, p: &PoolParams, plane: usize, y: usize, xo: usize) -> usize {
    let [_, _, h, w] = dims4(x);
    let mut best = None::<(usize, f64)>;
    for i in 0..p.kernel[0] {
        for j in 0..p.kernel[1] {
            let idx = (plane * h + y * p.stride[0] + i) * w + xo * p.stride[1] + j;
            let v = x.data[idx];
            match best {
                Some((_, bv)) if v.partial_cmp(&bv) != Some(std::cmp::Ordering::Greater) => {}
                _ => best = Some((idx, v)),
            }
        }
    }
    best.map_or(0, |(i, _)| i)
}

pub(crate) fn dims4(x: &TensorValue) -> [usize; 4] {
    dims4_of(x.shape.dims())
}

pub(crate) fn dims4_of(d: &[usize]) -> [usize; 4] {
    [d[0], d[1], d[2], d[3]]
}
