//! Structure relations: a branch that evaluates to exact zero is gated with an
//! insert structure and added onto a target node.

use rand::RngCore;

use super::align::{aligned_shape, fit_to, lift_and_pad};
use super::insert::{build_insert, InsertKind};
use super::{Anchors, RewriteError, SmrKind};
use crate::graph::{GraphEditor, NodeId, OpKind};

/// Builds the zero branch over the source anchors and returns its output.
pub(crate) fn zero_branch(e: &mut GraphEditor, kind: SmrKind, sources: &[NodeId]) -> Result<NodeId, RewriteError> {
    use OpKind::*;
    let z = match kind {
        SmrKind::Smr1 => {
            // ReLU(-(a + b + ...)^2)
            let sum = aligned_sum(e, sources)?;
            let sq = e.unary(Square, sum)?;
            let neg = e.unary(Neg, sq)?;
            e.unary(ReLU, neg)?
        }
        SmrKind::Smr2 => {
            // ReLU(|a + b + ...| - (|a| + |b| + ...))
            let aligned = align_all(e, sources)?;
            let mut sum = aligned[0];
            let mut abs_sum = e.unary(Abs, aligned[0])?;
            for &x in &aligned[1..] {
                sum = e.binary(Add, sum, x)?;
                let ax = e.unary(Abs, x)?;
                abs_sum = e.binary(Add, abs_sum, ax)?;
            }
            let abs_of_sum = e.unary(Abs, sum)?;
            let diff = e.binary(Sub, abs_of_sum, abs_sum)?;
            e.unary(ReLU, diff)?
        }
        SmrKind::Smr3 => {
            // ReLU(||a| - |b|| - |a + b|)
            let aligned = align_all(e, &sources[..2])?;
            let (a, b) = (aligned[0], aligned[1]);
            let aa = e.unary(Abs, a)?;
            let ab = e.unary(Abs, b)?;
            let d = e.binary(Sub, aa, ab)?;
            let ad = e.unary(Abs, d)?;
            let s = e.binary(Add, a, b)?;
            let as_ = e.unary(Abs, s)?;
            let diff = e.binary(Sub, ad, as_)?;
            e.unary(ReLU, diff)?
        }
        SmrKind::Smr4 => {
            // a + a * (-1)
            let a = sources[0];
            let minus_one = e.constant(e.dtype(a), [1], vec![-1.0], false);
            let neg = e.binary(Mul, a, minus_one)?;
            e.binary(Add, a, neg)?
        }
    };
    Ok(z)
}

fn align_all(e: &mut GraphEditor, sources: &[NodeId]) -> Result<Vec<NodeId>, RewriteError> {
    let mut target = e.shape(sources[0]).clone();
    for &s in &sources[1..] {
        target = aligned_shape(&target, e.shape(s))?;
    }
    sources.iter().map(|&s| Ok(lift_and_pad(e, s, &target)?)).collect()
}

fn aligned_sum(e: &mut GraphEditor, sources: &[NodeId]) -> Result<NodeId, RewriteError> {
    let aligned = align_all(e, sources)?;
    let mut sum = aligned[0];
    for &x in &aligned[1..] {
        sum = e.binary(OpKind::Add, sum, x)?;
    }
    Ok(sum)
}

/// Applies one structure relation in place. Returns the Add node that now
/// stands in for the target in the target's original consumers.
pub(crate) fn splice(
    e: &mut GraphEditor,
    kind: SmrKind,
    insert: InsertKind,
    anchors: &Anchors,
    rng: &mut impl RngCore,
) -> Result<NodeId, RewriteError> {
    let target = anchors.n5;
    let target_shape = e.shape(target).clone();
    let consumers = e.consumers_of(target);
    let z = zero_branch(e, kind, &anchors.sources())?;
    let z_fit = fit_to(e, z, &target_shape)?;
    let s = build_insert(insert, e, anchors.insert_input, rng)?;
    let s_fit = fit_to(e, s, &target_shape)?;
    let gate = e.binary(OpKind::Mul, z_fit, s_fit)?;
    let joined = e.binary(OpKind::Add, target, gate)?;
    for c in consumers {
        e.rewire(c, target, joined)?;
    }
    Ok(joined)
}
