//! Shape plumbing for spliced branches: zero-pad alignment of two operands and
//! fitting a branch output onto a target shape.

use crate::graph::{attrs, ints, GraphEditor, GraphError, NodeId, OpKind, Shape};

/// Aligned operands larger than this are rejected to keep rewrites desk-sized.
pub const MAX_ALIGNED_NUMEL: usize = 1 << 13;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("cannot align {a} with {b}: dimension {dim} is empty on one side only")]
    EmptyDim { a: Shape, b: Shape, dim: usize },
    #[error("aligned shape {0} exceeds {MAX_ALIGNED_NUMEL} elements")]
    TooLarge(Shape),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Shape both operands take after alignment: ranks right-aligned, then the
/// per-dimension maximum.
pub fn aligned_shape(a: &Shape, b: &Shape) -> Result<Shape, AlignError> {
    let rank = a.rank().max(b.rank());
    let lift = |s: &Shape| -> Vec<usize> {
        let mut d = vec![1; rank - s.rank()];
        d.extend_from_slice(s.dims());
        d
    };
    let (da, db) = (lift(a), lift(b));
    let mut dims = Vec::with_capacity(rank);
    for (i, (&x, &y)) in da.iter().zip(&db).enumerate() {
        if (x == 0) != (y == 0) {
            return Err(AlignError::EmptyDim { a: a.clone(), b: b.clone(), dim: i });
        }
        dims.push(x.max(y));
    }
    let shape = Shape::new(dims);
    if shape.numel() > MAX_ALIGNED_NUMEL {
        return Err(AlignError::TooLarge(shape));
    }
    Ok(shape)
}

/// Reshapes `x` to `rank` by prepending unit dims, then zero-pads trailing
/// edges up to `target`.
pub(crate) fn lift_and_pad(e: &mut GraphEditor, x: NodeId, target: &Shape) -> Result<NodeId, GraphError> {
    let shape = e.shape(x).clone();
    let mut node = x;
    let mut dims = vec![1; target.rank() - shape.rank()];
    dims.extend_from_slice(shape.dims());
    if shape.rank() != target.rank() {
        node = e.op(OpKind::Reshape, &[node], attrs([("shape", ints(&dims))]))?;
    }
    if dims != target.dims() {
        let pads: Vec<usize> = dims.iter().zip(target.dims()).flat_map(|(&d, &t)| [0, t - d]).collect();
        node = e.op(OpKind::Pad, &[node], attrs([("pads", ints(&pads))]))?;
    }
    Ok(node)
}

/// Makes `a` and `b` the same shape. A no-op when they already agree.
pub fn align_shapes(e: &mut GraphEditor, a: NodeId, b: NodeId) -> Result<(NodeId, NodeId), AlignError> {
    let target = aligned_shape(e.shape(a), e.shape(b))?;
    Ok((lift_and_pad(e, a, &target)?, lift_and_pad(e, b, &target)?))
}

/// Re-shapes `x` into `target` by flattening, truncating or zero-extending,
/// and reshaping. Each step is skipped when unnecessary.
pub fn fit_to(e: &mut GraphEditor, x: NodeId, target: &Shape) -> Result<NodeId, GraphError> {
    if e.shape(x) == target {
        return Ok(x);
    }
    let (n, want) = (e.shape(x).numel(), target.numel());
    let mut node = x;
    if e.shape(x).dims() != [1, n] {
        node = e.op(OpKind::Reshape, &[node], attrs([("shape", ints(&[1, n]))]))?;
    }
    if n > want {
        node = e.op(OpKind::Slice, &[node], attrs([("begin", ints(&[0, 0])), ("size", ints(&[1, want]))]))?;
    } else if n < want {
        node = e.op(OpKind::Pad, &[node], attrs([("pads", ints(&[0, 0, 0, want - n]))]))?;
    }
    if e.shape(node) != target {
        node = e.op(OpKind::Reshape, &[node], attrs([("shape", ints(target.dims()))]))?;
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, GraphBuilder};

    fn editor_with(shapes: &[&[usize]]) -> (GraphEditor, Vec<NodeId>) {
        let mut b = GraphBuilder::new("align");
        let ids: Vec<NodeId> = shapes.iter().map(|s| b.input(DType::F32, s.to_vec())).collect();
        let r = b.unary(OpKind::ReLU, ids[0]).unwrap();
        b.output(r);
        (GraphEditor::new(&b.finish().unwrap()), ids)
    }

    #[test]
    fn equal_shapes_untouched() {
        let (mut e, ids) = editor_with(&[&[2, 3], &[2, 3]]);
        let before = e.len();
        assert_eq!(align_shapes(&mut e, ids[0], ids[1]).unwrap(), (ids[0], ids[1]));
        assert_eq!(e.len(), before);
    }

    #[test]
    fn pads_trailing_edge() {
        let (mut e, ids) = editor_with(&[&[2, 3], &[2, 5]]);
        let (a, b) = align_shapes(&mut e, ids[0], ids[1]).unwrap();
        assert_eq!(e.node(a).op, OpKind::Pad);
        assert_eq!(e.shape(a), &Shape::from([2, 5]));
        assert_eq!(b, ids[1]);
    }

    #[test]
    fn lifts_rank_then_pads() {
        let (mut e, ids) = editor_with(&[&[3], &[2, 3]]);
        let (a, _) = align_shapes(&mut e, ids[0], ids[1]).unwrap();
        let pad = e.node(a);
        assert_eq!(pad.op, OpKind::Pad);
        let reshape = e.node(pad.inputs[0]);
        assert_eq!(reshape.op, OpKind::Reshape);
        assert_eq!(reshape.shape, Shape::from([1, 3]));
        assert_eq!(e.shape(a), &Shape::from([2, 3]));
    }

    #[test]
    fn empty_dim_cannot_align() {
        assert!(matches!(
            aligned_shape(&Shape::from([0, 3]), &Shape::from([2, 3])),
            Err(AlignError::EmptyDim { dim: 0, .. })
        ));
    }

    #[test]
    fn fit_truncates_and_extends() {
        let (mut e, ids) = editor_with(&[&[2, 3], &[4]]);
        let small = fit_to(&mut e, ids[0], &Shape::from([4])).unwrap();
        assert_eq!(e.node(e.node(small).inputs[0]).op, OpKind::Slice);
        let big = fit_to(&mut e, ids[1], &Shape::from([3, 3])).unwrap();
        assert_eq!(e.shape(big), &Shape::from([3, 3]));
        assert_eq!(fit_to(&mut e, ids[0], &Shape::from([2, 3])).unwrap(), ids[0]);
    }
}
