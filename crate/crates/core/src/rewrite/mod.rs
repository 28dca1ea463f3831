//! Equivalence-preserving graph rewrites: structure relations (SMR1-4) that
//! splice a zero-gated insert structure, and interface relations that
//! re-express one operator.

pub mod align;
mod imr;
pub mod insert;
mod smr;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{ExecutionError, Phase};
use crate::graph::{Graph, GraphEditor, GraphError, NodeId};

pub use align::{align_shapes, aligned_shape, fit_to, AlignError};
pub use imr::IMR1B_CONSTANT;
pub use insert::{build_insert, InsertKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SmrKind {
    /// Complete square: `ReLU(-(a + b)^2)`.
    #[serde(rename = "SMR1")]
    Smr1,
    /// Absolute inequality: `ReLU(|a + b| - (|a| + |b|))`.
    #[serde(rename = "SMR2")]
    Smr2,
    /// Triangle inequality: `ReLU(||a| - |b|| - |a + b|)`.
    #[serde(rename = "SMR3")]
    Smr3,
    /// Inverse number: `a + a * (-1)`.
    #[serde(rename = "SMR4")]
    Smr4,
}

impl SmrKind {
    pub const ALL: [SmrKind; 4] = [SmrKind::Smr1, SmrKind::Smr2, SmrKind::Smr3, SmrKind::Smr4];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ImrKind {
    /// Transpose in, inverse transpose out around an elementwise node.
    #[serde(rename = "IMR1a")]
    Imr1a,
    /// Add then subtract a tiny constant in front of an affine node.
    #[serde(rename = "IMR1b")]
    Imr1b,
    /// Conv2D padding attribute moved into an explicit Pad.
    #[serde(rename = "IMR2a")]
    Imr2a,
    /// Slice re-indexed over a padded input.
    #[serde(rename = "IMR2b")]
    Imr2b,
}

impl ImrKind {
    pub const ALL: [ImrKind; 4] = [ImrKind::Imr1a, ImrKind::Imr1b, ImrKind::Imr2a, ImrKind::Imr2b];

    pub fn class(self) -> EquivalenceClass {
        match self {
            ImrKind::Imr1b => EquivalenceClass::Approx,
            _ => EquivalenceClass::Exact,
        }
    }
}

/// Whether a rewrite is bit-exact or only equal up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquivalenceClass {
    Exact,
    Approx,
}

/// Node roles of a structure relation. `n2`/`n4` (and `extra` for wider
/// sums) feed the zero branch, `n5` receives the gated insert, and
/// `insert_input` feeds the insert structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchors {
    pub n2: NodeId,
    pub n4: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<NodeId>,
    pub n5: NodeId,
    pub insert_input: NodeId,
}

impl Anchors {
    pub fn sources(&self) -> Vec<NodeId> {
        std::iter::once(self.n2).chain(self.n4).chain(self.extra.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewriteError {
    #[error("no eligible anchor nodes")]
    NoAnchor,
    #[error("{0:?} is not applicable to this graph")]
    NotApplicable(ImrKind),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOptions {
    /// Number of source anchors summed by SMR1/SMR2 (at least 2).
    pub anchor_count: usize,
}

impl Default for RewriteOptions {
    fn default() -> Self {
        Self { anchor_count: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewriteStatus {
    Ok,
    Crash(ExecutionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    /// The rewritten graph; the input graph when the rewrite crashed.
    pub graph: Graph,
    pub smr: SmrKind,
    /// The interface relation actually applied (`None` when not applicable).
    pub imr: Option<ImrKind>,
    pub insert: InsertKind,
    pub anchors: Option<Anchors>,
    pub class: EquivalenceClass,
    /// For every node of the input graph, the node of `graph` carrying the same value.
    pub layer_map: Vec<NodeId>,
    pub status: RewriteStatus,
}

/// Float, non-leaf, non-empty nodes with at least one consumer.
pub fn eligible_anchors(g: &Graph) -> Vec<NodeId> {
    let consumers = g.consumers();
    g.nodes()
        .iter()
        .filter(|n| !n.op.is_leaf() && n.dtype.is_float() && n.shape.numel() > 0 && !consumers[n.id].is_empty())
        .map(|n| n.id)
        .collect()
}

fn source_count(smr: SmrKind, opts: &RewriteOptions) -> usize {
    match smr {
        SmrKind::Smr4 => 1,
        SmrKind::Smr3 => 2,
        SmrKind::Smr1 | SmrKind::Smr2 => opts.anchor_count.max(2),
    }
}

/// Samples anchor roles uniformly. The target `n5` never precedes a source
/// and the insert input never follows `n5`, which keeps the splice acyclic.
pub fn pick_anchors(
    g: &Graph,
    smr: SmrKind,
    rng: &mut impl RngCore,
    opts: &RewriteOptions,
) -> Result<Anchors, RewriteError> {
    pick_anchors_within(g, smr, None, rng, opts)
}

/// Like [`pick_anchors`], but the target is drawn from `preferred` whenever
/// one of those nodes is a valid target.
pub fn pick_anchors_within(
    g: &Graph,
    smr: SmrKind,
    preferred: Option<&[NodeId]>,
    rng: &mut impl RngCore,
    opts: &RewriteOptions,
) -> Result<Anchors, RewriteError> {
    let need = source_count(smr, opts);
    let eligible = eligible_anchors(g);
    if eligible.len() < need {
        return Err(RewriteError::NoAnchor);
    }
    let first = eligible[rng.random_range(0..eligible.len())];
    let dtype = g.node(first).dtype;
    let pool: Vec<NodeId> = eligible.iter().copied().filter(|&n| n != first && g.node(n).dtype == dtype).collect();
    if pool.len() + 1 < need {
        return Err(RewriteError::NoAnchor);
    }
    let mut sources = vec![first];
    sources.extend(sample(rng, pool.len(), need - 1).into_iter().map(|i| pool[i]));
    let latest = *sources.iter().max().expect("non-empty");
    let same_dtype: Vec<NodeId> = eligible.iter().copied().filter(|&n| g.node(n).dtype == dtype).collect();
    let mut targets: Vec<NodeId> = same_dtype.iter().copied().filter(|&n| n >= latest).collect();
    if let Some(p) = preferred {
        let within: Vec<NodeId> = targets.iter().copied().filter(|n| p.contains(n)).collect();
        if !within.is_empty() {
            targets = within;
        }
    }
    let n5 = targets[rng.random_range(0..targets.len())];
    let inputs: Vec<NodeId> = same_dtype.iter().copied().filter(|&n| n <= n5).collect();
    let insert_input = inputs[rng.random_range(0..inputs.len())];
    Ok(Anchors { n2: sources[0], n4: sources.get(1).copied(), extra: sources[2.min(sources.len())..].to_vec(), n5, insert_input })
}

/// Applies one structure relation with explicit anchors.
pub fn apply_smr_at(
    g: &Graph,
    smr: SmrKind,
    insert: InsertKind,
    anchors: &Anchors,
    rng: &mut impl RngCore,
) -> Result<(Graph, Vec<NodeId>), RewriteError> {
    let mut e = GraphEditor::new(g);
    smr::splice(&mut e, smr, insert, anchors, rng)?;
    let (out, remap) = e.finish()?;
    Ok((out, remap[..g.len()].to_vec()))
}

/// Samples anchors and applies one structure relation.
pub fn apply_smr(
    g: &Graph,
    smr: SmrKind,
    insert: InsertKind,
    rng: &mut impl RngCore,
    opts: &RewriteOptions,
) -> Result<(Graph, Vec<NodeId>, Anchors), RewriteError> {
    let anchors = pick_anchors(g, smr, rng, opts)?;
    let (out, map) = apply_smr_at(g, smr, insert, &anchors, rng)?;
    Ok((out, map, anchors))
}

/// Applies one interface relation at a uniformly chosen applicable site.
pub fn apply_imr(g: &Graph, kind: ImrKind, rng: &mut impl RngCore) -> Result<(Graph, Vec<NodeId>), RewriteError> {
    imr::apply(g, kind, rng)
}

/// One generation step: the structure relation, then the interface relation
/// on its result. Fully determined by the arguments.
pub fn transform(
    g: &Graph,
    smr: SmrKind,
    imr: Option<ImrKind>,
    insert: InsertKind,
    rng_seed: u64,
    opts: &RewriteOptions,
) -> RewriteOutcome {
    transform_within(g, None, smr, imr, insert, rng_seed, opts)
}

/// [`transform`] with the structure relation's target drawn from `preferred`
/// when possible. Campaigns pass the nodes carrying the seed's values so the
/// inserted branch lands on the model's main computation.
pub fn transform_within(
    g: &Graph,
    preferred: Option<&[NodeId]>,
    smr: SmrKind,
    imr: Option<ImrKind>,
    insert: InsertKind,
    rng_seed: u64,
    opts: &RewriteOptions,
) -> RewriteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let crashed = |err: RewriteError, anchors: Option<Anchors>| RewriteOutcome {
        graph: g.clone(),
        smr,
        imr,
        insert,
        anchors,
        class: EquivalenceClass::Exact,
        layer_map: (0..g.len()).collect(),
        status: RewriteStatus::Crash(ExecutionError::new(Phase::Rewrite, None, err.to_string())),
    };
    let anchors = match pick_anchors_within(g, smr, preferred, &mut rng, opts) {
        Ok(a) => a,
        Err(err) => return crashed(err, None),
    };
    let (mut graph, mut layer_map) = match apply_smr_at(g, smr, insert, &anchors, &mut rng) {
        Ok(r) => r,
        Err(err) => return crashed(err, Some(anchors)),
    };
    let mut applied = None;
    if let Some(kind) = imr {
        match imr::apply(&graph, kind, &mut rng) {
            Ok((g2, map2)) => {
                layer_map = layer_map.iter().map(|&i| map2[i]).collect();
                graph = g2;
                applied = Some(kind);
            }
            Err(RewriteError::NotApplicable(_)) => {}
            Err(err) => return crashed(err, Some(anchors)),
        }
    }
    RewriteOutcome {
        graph,
        smr,
        imr: applied,
        insert,
        anchors: Some(anchors),
        class: applied.map_or(EquivalenceClass::Exact, ImrKind::class),
        layer_map,
        status: RewriteStatus::Ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{seeds::seed_by_label, validate, DType, GraphBuilder, OpKind};

    fn two_eligible() -> Graph {
        let mut b = GraphBuilder::new("two");
        let x = b.input(DType::F32, [3]);
        let a = b.unary(OpKind::Tanh, x).unwrap();
        let c = b.unary(OpKind::ReLU, a).unwrap();
        let d = b.unary(OpKind::Neg, c).unwrap();
        b.output(d);
        b.finish().unwrap()
    }

    #[test]
    fn forced_anchor_choice() {
        let g = two_eligible();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = pick_anchors(&g, SmrKind::Smr1, &mut rng, &RewriteOptions::default()).unwrap();
            let mut src = a.sources();
            src.sort();
            assert_eq!(src, vec![1, 2]);
            assert_eq!(a.n5, 2);
        }
    }

    #[test]
    fn single_node_graph_has_no_anchor() {
        let mut b = GraphBuilder::new("one");
        let x = b.input(DType::F32, [3]);
        let r = b.unary(OpKind::ReLU, x).unwrap();
        b.output(r);
        let g = b.finish().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pick_anchors(&g, SmrKind::Smr1, &mut rng, &RewriteOptions::default()), Err(RewriteError::NoAnchor));
        let out = transform(&g, SmrKind::Smr2, None, InsertKind::SingleOp, 0, &RewriteOptions::default());
        assert!(matches!(out.status, RewriteStatus::Crash(ref e) if e.phase == Phase::Rewrite));
    }

    #[test]
    fn anchors_are_deterministic() {
        let g = seed_by_label("cnn").unwrap();
        let pick = |s| pick_anchors(&g, SmrKind::Smr3, &mut ChaCha8Rng::seed_from_u64(s), &RewriteOptions::default());
        assert_eq!(pick(9), pick(9));
    }

    #[test]
    fn smr_grows_graph_and_keeps_it_valid() {
        for label in crate::graph::seeds::SEED_LABELS {
            let g = seed_by_label(label).unwrap();
            for smr in SmrKind::ALL {
                for insert in InsertKind::ALL {
                    let out = transform(&g, smr, Some(ImrKind::Imr1a), insert, 11, &RewriteOptions::default());
                    assert_eq!(out.status, RewriteStatus::Ok, "{label} {smr:?} {insert:?}");
                    assert!(out.graph.len() > g.len());
                    validate(&out.graph).unwrap();
                    for (old, &new) in out.layer_map.iter().enumerate() {
                        assert_eq!(g.node(old).shape, out.graph.node(new).shape);
                    }
                }
            }
        }
    }

    #[test]
    fn wide_anchor_sum() {
        let g = seed_by_label("resnet_block").unwrap();
        let opts = RewriteOptions { anchor_count: 3 };
        let out = transform(&g, SmrKind::Smr1, None, InsertKind::SingleOp, 5, &opts);
        assert_eq!(out.status, RewriteStatus::Ok);
        assert_eq!(out.anchors.unwrap().sources().len(), 3);
    }
}
