//! Interface relations: single-operator re-expressions of an input or a
//! parameter.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::{ImrKind, RewriteError};
use crate::graph::{attrs, ints, AttrValue, ConvParams, Graph, GraphEditor, NodeId, OpKind};

/// Constant added and subtracted again by IMR1b.
pub const IMR1B_CONSTANT: f64 = 1e-30;

fn candidates(g: &Graph, kind: ImrKind) -> Vec<NodeId> {
    g.nodes()
        .iter()
        .filter(|n| match kind {
            ImrKind::Imr1a => {
                n.op.is_unary_elementwise() && g.node(n.inputs[0]).shape.rank() >= 2
            }
            ImrKind::Imr1b => {
                matches!(n.op, OpKind::MatMul | OpKind::Conv2D | OpKind::BatchNormInference)
                    && g.node(n.inputs[0]).dtype.is_float()
            }
            ImrKind::Imr2a => {
                n.op == OpKind::Conv2D && ConvParams::from_attrs(&n.attrs).is_ok_and(|p| p.padding != [0, 0])
            }
            ImrKind::Imr2b => n.op == OpKind::Slice,
        })
        .map(|n| n.id)
        .collect()
}

fn random_nonidentity_perm(rank: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let identity: Vec<usize> = (0..rank).collect();
    loop {
        let mut p = identity.clone();
        p.shuffle(rng);
        if p != identity {
            return p;
        }
    }
}

/// Applies `kind` at a uniformly chosen applicable site. Returns the new graph
/// and, for every node of `g`, the node of the result carrying the same value.
pub(crate) fn apply(g: &Graph, kind: ImrKind, rng: &mut impl RngCore) -> Result<(Graph, Vec<NodeId>), RewriteError> {
    let sites = candidates(g, kind);
    if sites.is_empty() {
        return Err(RewriteError::NotApplicable(kind));
    }
    let site = sites[rng.random_range(0..sites.len())];
    let mut e = GraphEditor::new(g);
    let node = g.node(site).clone();
    let mut relocated = None;
    match kind {
        ImrKind::Imr1a => {
            let x = node.inputs[0];
            let perm = random_nonidentity_perm(g.node(x).shape.rank(), rng);
            let mut inverse = vec![0; perm.len()];
            perm.iter().enumerate().for_each(|(i, &p)| inverse[p] = i);
            let consumers = e.consumers_of(site);
            let t = e.op(OpKind::Transpose, &[x], attrs([("perm", ints(&perm))]))?;
            e.rewire(site, x, t)?;
            let back = e.op(OpKind::Transpose, &[site], attrs([("perm", ints(&inverse))]))?;
            for c in consumers {
                e.rewire(c, site, back)?;
            }
            e.redirect_outputs(site, back);
            relocated = Some(back);
        }
        ImrKind::Imr1b => {
            let x = node.inputs[0];
            let c = e.constant(e.dtype(x), [1], vec![IMR1B_CONSTANT], false);
            let up = e.binary(OpKind::Add, x, c)?;
            let down = e.binary(OpKind::Sub, up, c)?;
            e.rewire(site, x, down)?;
        }
        ImrKind::Imr2a => {
            let x = node.inputs[0];
            let mut p = ConvParams::from_attrs(&node.attrs).map_err(RewriteError::Internal)?;
            let [ph, pw] = p.padding;
            let pad = e.op(OpKind::Pad, &[x], attrs([("pads", ints(&[0, 0, 0, 0, ph, ph, pw, pw]))]))?;
            p.padding = [0, 0];
            e.rewire(site, x, pad)?;
            e.set_attrs(site, p.to_attrs())?;
        }
        ImrKind::Imr2b => {
            let x = node.inputs[0];
            let rank = g.node(x).shape.rank();
            let pads: Vec<usize> = vec![1; 2 * rank];
            let pad = e.op(OpKind::Pad, &[x], attrs([("pads", ints(&pads))]))?;
            let begin = crate::graph::get_ints(&node.attrs, "begin").map_err(RewriteError::Internal)?;
            let shifted: Vec<usize> = begin.iter().map(|b| b + 1).collect();
            let mut a = node.attrs.clone();
            a.insert("begin".into(), AttrValue::Ints(shifted.iter().map(|&v| v as i64).collect()));
            e.rewire(site, x, pad)?;
            e.set_attrs(site, a)?;
        }
    }
    let (out, remap) = e.finish()?;
    let mut map: Vec<NodeId> = remap[..g.len()].to_vec();
    if let Some(back) = relocated {
        map[site] = remap[back];
    }
    Ok((out, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::seeds::seed_by_label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn applicability() {
        let mlp = seed_by_label("mlp").unwrap();
        assert!(candidates(&mlp, ImrKind::Imr2a).is_empty());
        assert!(candidates(&mlp, ImrKind::Imr2b).is_empty());
        assert!(!candidates(&mlp, ImrKind::Imr1a).is_empty());
        let sc = seed_by_label("slice_concat").unwrap();
        assert_eq!(candidates(&sc, ImrKind::Imr2b).len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(apply(&mlp, ImrKind::Imr2a, &mut rng), Err(RewriteError::NotApplicable(ImrKind::Imr2a))));
    }

    #[test]
    fn imr2a_moves_padding_into_a_pad_node() {
        let cnn = seed_by_label("cnn").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, map) = apply(&cnn, ImrKind::Imr2a, &mut rng).unwrap();
        let conv = g.nodes().iter().find(|n| n.op == OpKind::Conv2D).unwrap();
        assert_eq!(ConvParams::from_attrs(&conv.attrs).unwrap().padding, [0, 0]);
        assert_eq!(g.node(conv.inputs[0]).op, OpKind::Pad);
        for (old, &new) in map.iter().enumerate() {
            assert_eq!(cnn.node(old).shape, g.node(new).shape);
        }
    }

    #[test]
    fn imr1a_maps_site_to_inverse_transpose() {
        let mlp = seed_by_label("mlp").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, map) = apply(&mlp, ImrKind::Imr1a, &mut rng).unwrap();
        assert_eq!(g.len(), mlp.len() + 2);
        for (old, &new) in map.iter().enumerate() {
            assert_eq!(mlp.node(old).shape, g.node(new).shape);
        }
        let moved: Vec<_> = map.iter().filter(|&&n| g.node(n).op == OpKind::Transpose).collect();
        assert_eq!(moved.len(), 1);
    }
}
