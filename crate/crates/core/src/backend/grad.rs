//! Reverse-mode kernels: given a node, its inputs, its output and the upstream
//! gradient, produce one gradient contribution per input.

use super::kernels::{bidx, bn_layout, dims4, for_each_index, pool_argmax, reduce_out_strides, softmax_xent, BN_EPS};
use crate::fsum::fsum;
use crate::graph::{get_int, get_ints, pad_amounts, reduce_axes, ConvParams, Node, OpKind, PoolParams};
use crate::tensor::TensorValue;

/// Collapses a full-size contribution onto a broadcast single-element operand.
fn unbroadcast(operand: &TensorValue, full: Vec<f64>) -> Vec<f64> {
    if operand.numel() == full.len() {
        full
    } else {
        vec![fsum(full)]
    }
}

/// Contributions are `None` for inputs that carry no gradient (integer labels).
pub(crate) fn backward(
    node: &Node,
    ins: &[&TensorValue],
    out: &TensorValue,
    g: &[f64],
) -> Result<Vec<Option<Vec<f64>>>, String> {
    use OpKind::*;
    let n = g.len();
    let grads = match node.op {
        Input | Const => Vec::new(),
        Add | Sub => {
            let (a, b) = (ins[0], ins[1]);
            let ga = g.to_vec();
            let gb = if node.op == Add { g.to_vec() } else { g.iter().map(|v| -v).collect() };
            vec![Some(unbroadcast(a, ga)), Some(unbroadcast(b, gb))]
        }
        Mul => {
            let (a, b) = (ins[0], ins[1]);
            let ga = (0..n).map(|i| g[i] * b.data[bidx(b.numel(), i)]).collect();
            let gb = (0..n).map(|i| g[i] * a.data[bidx(a.numel(), i)]).collect();
            vec![Some(unbroadcast(a, ga)), Some(unbroadcast(b, gb))]
        }
        Neg => vec![Some(g.iter().map(|v| -v).collect())],
        Abs | Square | ReLU | ReLU6 => {
            let x = &ins[0].data;
            let gx = (0..n)
                .map(|i| match node.op {
                    Abs if x[i] > 0.0 => g[i],
                    Abs if x[i] < 0.0 => -g[i],
                    Square => 2.0 * x[i] * g[i],
                    ReLU if x[i] > 0.0 => g[i],
                    ReLU6 if x[i] > 0.0 && x[i] < 6.0 => g[i],
                    _ => 0.0,
                })
                .collect();
            vec![Some(gx)]
        }
        Tanh => vec![Some((0..n).map(|i| g[i] * (1.0 - out.data[i] * out.data[i])).collect())],
        Sigmoid => vec![Some((0..n).map(|i| g[i] * out.data[i] * (1.0 - out.data[i])).collect())],
        MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (m, k) = (a.shape.dims()[0], a.shape.dims()[1]);
            let cols = b.shape.dims()[1];
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * cols];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..cols {
                        acc += g[i * cols + j] * b.data[p * cols + j];
                        gb[p * cols + j] += a.data[i * k + p] * g[i * cols + j];
                    }
                    ga[i * k + p] = acc;
                }
            }
            vec![Some(ga), Some(gb)]
        }
        Conv2D => conv2d_backward(node, ins, g)?,
        MaxPool2D | AvgPool2D => vec![Some(pool_backward(node, ins[0], g)?)],
        Pad => {
            let x = ins[0];
            let pads = pad_amounts(&node.attrs, x.shape.rank())?;
            let out_strides = node.shape.strides();
            let mut gx = vec![0.0; x.numel()];
            for_each_index(x.shape.dims(), |flat, idx| {
                let o: usize = idx.iter().zip(&pads).zip(&out_strides).map(|((i, (b, _)), s)| (i + b) * s).sum();
                gx[flat] = g[o];
            });
            vec![Some(gx)]
        }
        Transpose => {
            let x = ins[0];
            let perm = get_ints(&node.attrs, "perm")?;
            let in_strides = x.shape.strides();
            let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            let mut gx = vec![0.0; x.numel()];
            for_each_index(node.shape.dims(), |flat, idx| {
                gx[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()] = g[flat];
            });
            vec![Some(gx)]
        }
        Reshape | Flatten => vec![Some(g.to_vec())],
        Slice => {
            let x = ins[0];
            let begin = get_ints(&node.attrs, "begin")?;
            let in_strides = x.shape.strides();
            let mut gx = vec![0.0; x.numel()];
            for_each_index(node.shape.dims(), |flat, idx| {
                let dst: usize = idx.iter().zip(&begin).zip(&in_strides).map(|((i, b), s)| (i + b) * s).sum();
                gx[dst] = g[flat];
            });
            vec![Some(gx)]
        }
        Concat => {
            let axis = get_int(&node.attrs, "axis")? as usize;
            let (a, b) = (ins[0], ins[1]);
            let split = a.shape.dims()[axis];
            let (sa, sb) = (a.shape.strides(), b.shape.strides());
            let mut ga = vec![0.0; a.numel()];
            let mut gb = vec![0.0; b.numel()];
            for_each_index(node.shape.dims(), |flat, idx| {
                if idx[axis] < split {
                    ga[idx.iter().zip(&sa).map(|(i, s)| i * s).sum::<usize>()] = g[flat];
                } else {
                    let off: usize = idx
                        .iter()
                        .enumerate()
                        .map(|(d, &i)| if d == axis { (i - split) * sb[d] } else { i * sb[d] })
                        .sum();
                    gb[off] = g[flat];
                }
            });
            vec![Some(ga), Some(gb)]
        }
        ReduceMean | ReduceSum => {
            let x = ins[0];
            let axes = reduce_axes(&node.attrs, x.shape.rank())?;
            let strides = reduce_out_strides(x, &axes);
            let count: usize = axes.iter().map(|&a| x.shape.dims()[a]).product();
            let scale = if node.op == ReduceMean { 1.0 / count as f64 } else { 1.0 };
            let mut gx = vec![0.0; x.numel()];
            for_each_index(x.shape.dims(), |flat, idx| {
                gx[flat] = g[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()] * scale;
            });
            vec![Some(gx)]
        }
        BatchNormInference => {
            let (x, gamma, mean, var) = (ins[0], ins[1], ins[3], ins[4]);
            let (c, inner) = bn_layout(x);
            let mut gx = vec![0.0; x.numel()];
            let mut parts = vec![[Vec::new(), Vec::new(), Vec::new(), Vec::new()]; c];
            for i in 0..x.numel() {
                let ch = (i / inner) % c;
                let inv = 1.0 / (var.data[ch] + BN_EPS).sqrt();
                let centered = x.data[i] - mean.data[ch];
                gx[i] = g[i] * gamma.data[ch] * inv;
                let p = &mut parts[ch];
                p[0].push(g[i] * centered * inv);
                p[1].push(g[i]);
                p[2].push(-g[i] * gamma.data[ch] * inv);
                p[3].push(g[i] * gamma.data[ch] * centered * -0.5 * inv * inv * inv);
            }
            let reduce = |k: usize| parts.iter().map(|p| fsum(p[k].iter().copied())).collect::<Vec<_>>();
            vec![Some(gx), Some(reduce(0)), Some(reduce(1)), Some(reduce(2)), Some(reduce(3))]
        }
        SoftmaxCrossEntropy => {
            let (logits, labels) = (ins[0], ins[1]);
            let (rows, k) = (logits.shape.dims()[0], logits.shape.dims()[1]);
            let (_, probs) = softmax_xent(logits, labels)?;
            let scale = if rows == 0 { 0.0 } else { g[0] / rows as f64 };
            let mut gl = probs;
            for r in 0..rows {
                gl[r * k + labels.data[r] as usize] -= 1.0;
            }
            gl.iter_mut().for_each(|v| *v *= scale);
            vec![Some(gl), None]
        }
    };
    Ok(grads)
}

fn conv2d_backward(node: &Node, ins: &[&TensorValue], g: &[f64]) -> Result<Vec<Option<Vec<f64>>>, String> {
    let p = ConvParams::from_attrs(&node.attrs)?;
    let (x, w) = (ins[0], ins[1]);
    let [n, c, h, wd] = dims4(x);
    let d = node.shape.dims();
    let (oc, oh, ow) = (d[1], d[2], d[3]);
    let [kh, kw] = p.kernel;
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; w.numel()];
    let mut gb = vec![0.0; oc];
    for bn in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let gv = g[((bn * oc + o) * oh + y) * ow + xo];
                    gb[o] += gv;
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
                                let xi = ((bn * c + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((o * c + ci) * kh + i) * kw + j;
                                gx[xi] += gv * w.data[wi];
                                gw[wi] += gv * x.data[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(vec![Some(gx), Some(gw), Some(gb)])
}

fn pool_backward(node: &Node, x: &TensorValue, g: &[f64]) -> Result<Vec<f64>, String> {
    let p = PoolParams::from_attrs(&node.attrs)?;
    let [n, c, h, w] = dims4(x);
    let d = node.shape.dims();
    let (oh, ow) = (d[2], d[3]);
    let mut gx = vec![0.0; x.numel()];
    let window = (p.kernel[0] * p.kernel[1]) as f64;
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let gv = g[(plane * oh + y) * ow + xo];
                if node.op == OpKind::MaxPool2D {
                    gx[pool_argmax(x, &p, plane, y, xo)] += gv;
                } else {
                    for i in 0..p.kernel[0] {
                        for j in 0..p.kernel[1] {
                            gx[(plane * h + y * p.stride[0] + i) * w + xo * p.stride[1] + j] += gv / window;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}
