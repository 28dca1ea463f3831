//! Computational-graph IR: typed tensor nodes in a DAG whose node ids are a
//! topological numbering.
//!
//! A [`Graph`] can only be obtained through validation, so every value of the
//! type satisfies the IR invariants: dense ids, inputs referencing earlier ids,
//! correct arities and attributes, and recorded shapes equal to the inferred ones.
//! Rewrites never mutate a graph; they copy it into a [`GraphEditor`] and build a
//! new one.

mod dtype;
mod op;
pub mod seeds;
pub mod serial;
pub mod signature;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

pub use dtype::{DType, Shape, MAX_RANK};
pub use op::{attrs, ints, AttrValue, Attrs, ConvParams, OpKind, PoolParams};
pub(crate) use op::{broadcast_shape, get_int, get_ints, pad_amounts, reduce_axes};

use op::{infer_node, InferError, Operand};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node {node}: input {input} does not precede it (cycle)")]
    Cycle { node: NodeId, input: NodeId },
    #[error("node {node}: input {input} does not exist")]
    DanglingRef { node: NodeId, input: NodeId },
    #[error("node {node}: {reason}")]
    ShapeMismatch { node: NodeId, reason: String },
    #[error("node {node}: bad attribute: {reason}")]
    BadAttr { node: NodeId, reason: String },
    #[error("malformed graph: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
    pub attrs: Attrs,
    pub dtype: DType,
    pub shape: Shape,
    /// Constant payload, present exactly for `Const` nodes.
    pub payload: Option<Arc<[f64]>>,
}

impl Node {
    pub fn is_trainable(&self) -> bool {
        self.op == OpKind::Const && matches!(self.attrs.get("trainable"), Some(AttrValue::Int(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    label: String,
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
}

impl Graph {
    /// Validates the parts and fills in inferred dtypes/shapes of non-leaf nodes.
    pub fn from_parts(
        label: impl Into<String>,
        nodes: Vec<Node>,
        inputs: Vec<NodeId>,
        outputs: Vec<NodeId>,
    ) -> Result<Self, GraphError> {
        check_structure(&nodes, &inputs, &outputs)?;
        let mut g = Graph { label: label.into(), nodes, inputs, outputs };
        fill_shapes(&mut g.nodes)?;
        Ok(g)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    /// Consumer lists indexed by producer id, each in ascending id order.
    pub fn consumers(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            for &i in &n.inputs {
                if out[i].last() != Some(&n.id) {
                    out[i].push(n.id);
                }
            }
        }
        out
    }

    /// Longest input-to-node path length, counted in edges.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            depth[n.id] = n.inputs.iter().map(|&i| depth[i] + 1).max().unwrap_or(0);
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

/// Re-checks every graph invariant, including that recorded shapes match inference.
pub fn validate(g: &Graph) -> Result<(), GraphError> {
    check_structure(&g.nodes, &g.inputs, &g.outputs)?;
    let mut copy = g.nodes.clone();
    fill_shapes(&mut copy)?;
    for (a, b) in g.nodes.iter().zip(&copy) {
        if a.dtype != b.dtype || a.shape != b.shape {
            return Err(GraphError::ShapeMismatch {
                node: a.id,
                reason: format!("recorded {}{} but inferred {}{}", a.dtype, a.shape, b.dtype, b.shape),
            });
        }
    }
    Ok(())
}

/// Returns a copy of `g` with every non-leaf dtype/shape re-inferred.
pub fn infer_shapes(g: &Graph) -> Result<Graph, GraphError> {
    let mut out = g.clone();
    fill_shapes(&mut out.nodes)?;
    Ok(out)
}

/// Kahn's algorithm; ready nodes are emitted in ascending id order.
pub fn topo_order(g: &Graph) -> Vec<NodeId> {
    kahn(g.nodes.len(), |id| &g.nodes[id].inputs)
}

fn kahn<'a>(n: usize, inputs_of: impl Fn(usize) -> &'a [NodeId]) -> Vec<NodeId> {
    let mut indegree = vec![0usize; n];
    let mut consumers = vec![Vec::new(); n];
    for (id, degree) in indegree.iter_mut().enumerate() {
        for &i in inputs_of(id) {
            *degree += 1;
            consumers[i].push(id);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for &c in &consumers[id] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    order
}

fn check_structure(nodes: &[Node], inputs: &[NodeId], outputs: &[NodeId]) -> Result<(), GraphError> {
    if nodes.is_empty() {
        return Err(GraphError::Malformed("graph has no nodes".into()));
    }
    if outputs.is_empty() {
        return Err(GraphError::Malformed("graph has no outputs".into()));
    }
    for (idx, n) in nodes.iter().enumerate() {
        if n.id != idx {
            return Err(GraphError::Malformed(format!("node at position {idx} has id {}", n.id)));
        }
        for &i in &n.inputs {
            if i >= nodes.len() {
                return Err(GraphError::DanglingRef { node: n.id, input: i });
            }
            if i >= n.id {
                return Err(GraphError::Cycle { node: n.id, input: i });
            }
        }
        if n.inputs.len() != n.op.arity() {
            return Err(GraphError::BadAttr {
                node: n.id,
                reason: format!("{} takes {} inputs, got {}", n.op, n.op.arity(), n.inputs.len()),
            });
        }
        match n.op {
            OpKind::Const => {
                let len = n.payload.as_ref().map_or(0, |p| p.len());
                if len != n.shape.numel() {
                    return Err(GraphError::BadAttr {
                        node: n.id,
                        reason: format!("const payload has {len} values for shape {}", n.shape),
                    });
                }
            }
            _ if n.payload.is_some() => {
                return Err(GraphError::BadAttr { node: n.id, reason: "only Const nodes carry payloads".into() })
            }
            _ => {}
        }
        if n.op.is_leaf() && n.shape.rank() > MAX_RANK {
            return Err(GraphError::ShapeMismatch { node: n.id, reason: format!("rank exceeds {MAX_RANK}") });
        }
    }
    let declared: Vec<NodeId> = nodes.iter().filter(|n| n.op == OpKind::Input).map(|n| n.id).collect();
    if declared != inputs {
        return Err(GraphError::Malformed(format!("input list {inputs:?} does not match Input nodes {declared:?}")));
    }
    if let Some(&o) = outputs.iter().find(|&&o| o >= nodes.len()) {
        return Err(GraphError::Malformed(format!("output {o} does not exist")));
    }
    Ok(())
}

fn infer_one(nodes: &[Node], node: &Node) -> Result<(DType, Shape), GraphError> {
    let operands: Vec<Operand<'_>> =
        node.inputs.iter().map(|&i| Operand { dtype: nodes[i].dtype, shape: &nodes[i].shape }).collect();
    infer_node(node.op, &node.attrs, &operands).map_err(|e| match e {
        InferError::Shape(reason) => GraphError::ShapeMismatch { node: node.id, reason },
        InferError::Attr(reason) => GraphError::BadAttr { node: node.id, reason },
    })
}

fn fill_shapes(nodes: &mut [Node]) -> Result<(), GraphError> {
    for idx in 0..nodes.len() {
        if nodes[idx].op.is_leaf() {
            continue;
        }
        let (dtype, shape) = infer_one(nodes, &nodes[idx])?;
        nodes[idx].dtype = dtype;
        nodes[idx].shape = shape;
    }
    Ok(())
}

fn const_node(id: NodeId, dtype: DType, shape: Shape, data: Vec<f64>, trainable: bool) -> Node {
    let payload: Arc<[f64]> = data.into_iter().map(|x| dtype.round(x)).collect();
    let attrs = if trainable { attrs([("trainable", AttrValue::Int(1))]) } else { Attrs::new() };
    Node { id, op: OpKind::Const, inputs: Vec::new(), attrs, dtype, shape, payload: Some(payload) }
}

/// Incremental graph construction with eager shape inference.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    label: String,
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

impl GraphBuilder {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), nodes: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, dtype: DType, shape: impl Into<Shape>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            op: OpKind::Input,
            inputs: Vec::new(),
            attrs: Attrs::new(),
            dtype,
            shape: shape.into(),
            payload: None,
        });
        id
    }

    pub fn constant(&mut self, dtype: DType, shape: impl Into<Shape>, data: Vec<f64>, trainable: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(const_node(id, dtype, shape.into(), data, trainable));
        id
    }

    pub fn op(&mut self, op: OpKind, inputs: &[NodeId], attrs: Attrs) -> Result<NodeId, GraphError> {
        let id = self.nodes.len();
        let mut node =
            Node { id, op, inputs: inputs.to_vec(), attrs, dtype: DType::F32, shape: Shape::scalar(), payload: None };
        if op.is_leaf() {
            return Err(GraphError::BadAttr { node: id, reason: format!("use the dedicated constructor for {op}") });
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= id) {
            return Err(GraphError::DanglingRef { node: id, input: bad });
        }
        let (dtype, shape) = infer_one(&self.nodes, &node)?;
        node.dtype = dtype;
        node.shape = shape;
        self.nodes.push(node);
        Ok(id)
    }

    pub fn unary(&mut self, op: OpKind, x: NodeId) -> Result<NodeId, GraphError> {
        self.op(op, &[x], Attrs::new())
    }

    pub fn binary(&mut self, op: OpKind, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.op(op, &[a, b], Attrs::new())
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn finish(self) -> Result<Graph, GraphError> {
        let inputs = self.nodes.iter().filter(|n| n.op == OpKind::Input).map(|n| n.id).collect();
        Graph::from_parts(self.label, self.nodes, inputs, self.outputs)
    }
}

/// Copy-on-write editing of an existing graph. New nodes receive provisional ids
/// past the original ones; [`GraphEditor::finish`] renumbers everything into a
/// fresh topological order.
#[derive(Debug, Clone)]
pub struct GraphEditor {
    label: String,
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    original_len: usize,
}

impl GraphEditor {
    pub fn new(g: &Graph) -> Self {
        Self {
            label: g.label.clone(),
            nodes: g.nodes.clone(),
            inputs: g.inputs.clone(),
            outputs: g.outputs.clone(),
            original_len: g.nodes.len(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        &self.nodes[id].shape
    }

    pub fn dtype(&self, id: NodeId) -> DType {
        self.nodes[id].dtype
    }

    pub fn constant(&mut self, dtype: DType, shape: impl Into<Shape>, data: Vec<f64>, trainable: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(const_node(id, dtype, shape.into(), data, trainable));
        id
    }

    pub fn op(&mut self, op: OpKind, inputs: &[NodeId], attrs: Attrs) -> Result<NodeId, GraphError> {
        let id = self.nodes.len();
        if op.is_leaf() {
            return Err(GraphError::BadAttr { node: id, reason: format!("cannot add {op} through op()") });
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= id) {
            return Err(GraphError::DanglingRef { node: id, input: bad });
        }
        let mut node =
            Node { id, op, inputs: inputs.to_vec(), attrs, dtype: DType::F32, shape: Shape::scalar(), payload: None };
        let (dtype, shape) = infer_one(&self.nodes, &node)?;
        node.dtype = dtype;
        node.shape = shape;
        self.nodes.push(node);
        Ok(id)
    }

    pub fn unary(&mut self, op: OpKind, x: NodeId) -> Result<NodeId, GraphError> {
        self.op(op, &[x], Attrs::new())
    }

    pub fn binary(&mut self, op: OpKind, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.op(op, &[a, b], Attrs::new())
    }

    /// Consumers of `id` among the current nodes, ascending.
    pub fn consumers_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.inputs.contains(&id)).map(|n| n.id).collect()
    }

    /// Replaces every occurrence of `old` in `node`'s inputs with `new` and
    /// re-infers `node`'s own dtype/shape.
    pub fn rewire(&mut self, node: NodeId, old: NodeId, new: NodeId) -> Result<(), GraphError> {
        for i in &mut self.nodes[node].inputs {
            if *i == old {
                *i = new;
            }
        }
        if !self.nodes[node].op.is_leaf() {
            let (dtype, shape) = infer_one(&self.nodes, &self.nodes[node])?;
            self.nodes[node].dtype = dtype;
            self.nodes[node].shape = shape;
        }
        Ok(())
    }

    /// Points every graph output that refers to `old` at `new`.
    pub fn redirect_outputs(&mut self, old: NodeId, new: NodeId) {
        self.outputs.iter_mut().filter(|o| **o == old).for_each(|o| *o = new);
    }

    /// Replaces the attributes of `node` and re-infers its shape.
    pub fn set_attrs(&mut self, node: NodeId, attrs: Attrs) -> Result<(), GraphError> {
        self.nodes[node].attrs = attrs;
        let (dtype, shape) = infer_one(&self.nodes, &self.nodes[node])?;
        self.nodes[node].dtype = dtype;
        self.nodes[node].shape = shape;
        Ok(())
    }

    /// Renumbers into topological order (ties by ascending provisional id),
    /// validates, and returns the graph plus a map from provisional to final ids.
    pub fn finish(self) -> Result<(Graph, Vec<NodeId>), GraphError> {
        let n = self.nodes.len();
        let order = kahn(n, |id| &self.nodes[id].inputs);
        if order.len() != n {
            let stuck = (0..n).find(|id| !order.contains(id)).unwrap_or(0);
            let input = self.nodes[stuck].inputs.first().copied().unwrap_or(stuck);
            return Err(GraphError::Cycle { node: stuck, input });
        }
        let mut remap = vec![0; n];
        for (new_id, &old) in order.iter().enumerate() {
            remap[old] = new_id;
        }
        let mut nodes: Vec<Node> = order
            .iter()
            .map(|&old| {
                let mut node = self.nodes[old].clone();
                node.id = remap[old];
                node.inputs.iter_mut().for_each(|i| *i = remap[*i]);
                node
            })
            .collect();
        fill_shapes(&mut nodes)?;
        let inputs = self.inputs.iter().map(|&i| remap[i]).collect::<Vec<_>>();
        let mut sorted_inputs = inputs.clone();
        sorted_inputs.sort_unstable();
        let outputs = self.outputs.iter().map(|&o| remap[o]).collect();
        let g = Graph::from_parts(self.label, nodes, sorted_inputs, outputs)?;
        Ok((g, remap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_graph() -> Graph {
        let mut b = GraphBuilder::new("relu");
        let x = b.input(DType::F32, [3]);
        let r = b.unary(OpKind::ReLU, x).unwrap();
        b.output(r);
        b.finish().unwrap()
    }

    fn raw(id: NodeId, op: OpKind, inputs: Vec<NodeId>) -> Node {
        Node { id, op, inputs, attrs: Attrs::new(), dtype: DType::F32, shape: Shape::from([3]), payload: None }
    }

    #[test]
    fn minimal_graph_validates() {
        let g = relu_graph();
        assert!(validate(&g).is_ok());
        assert_eq!(g.node(1).shape, Shape::from([3]));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let nodes = vec![raw(0, OpKind::Input, vec![]), raw(1, OpKind::ReLU, vec![1])];
        assert_eq!(Graph::from_parts("g", nodes, vec![0], vec![1]), Err(GraphError::Cycle { node: 1, input: 1 }));
    }

    #[test]
    fn dangling_input() {
        let nodes = vec![raw(0, OpKind::Input, vec![]), raw(1, OpKind::ReLU, vec![7])];
        assert!(matches!(Graph::from_parts("g", nodes, vec![0], vec![1]), Err(GraphError::DanglingRef { .. })));
    }

    #[test]
    fn add_arity_violation() {
        let nodes = vec![raw(0, OpKind::Input, vec![]), raw(1, OpKind::Add, vec![0])];
        assert!(matches!(Graph::from_parts("g", nodes, vec![0], vec![1]), Err(GraphError::BadAttr { node: 1, .. })));
    }

    #[test]
    fn conv_shape_arithmetic() {
        let mut b = GraphBuilder::new("conv");
        let x = b.input(DType::F32, [1, 3, 8, 8]);
        let w = b.constant(DType::F32, [4, 3, 3, 3], vec![0.0; 108], true);
        let bias = b.constant(DType::F32, [4], vec![0.0; 4], true);
        let p = ConvParams { kernel: [3, 3], stride: [1, 1], padding: [1, 1], in_channels: 3, out_channels: 4 };
        let c = b.op(OpKind::Conv2D, &[x, w, bias], p.to_attrs()).unwrap();
        assert_eq!(b.node(c).shape, Shape::from([1, 4, 8, 8]));
    }

    #[test]
    fn matmul_and_add_shapes() {
        let mut b = GraphBuilder::new("mm");
        let x = b.input(DType::F32, [2, 3]);
        let w = b.constant(DType::F32, [3, 5], vec![0.0; 15], false);
        let m = b.binary(OpKind::MatMul, x, w).unwrap();
        assert_eq!(b.node(m).shape, Shape::from([2, 5]));
        let y = b.input(DType::F32, [4, 3]);
        assert!(matches!(b.binary(OpKind::Add, x, y), Err(GraphError::ShapeMismatch { .. })));
        let s = b.constant(DType::F32, [1], vec![2.0], false);
        let a = b.binary(OpKind::Add, x, s).unwrap();
        assert_eq!(b.node(a).shape, Shape::from([2, 3]));
    }

    #[test]
    fn topo_order_chain_and_diamond() {
        let g = relu_graph();
        assert_eq!(topo_order(&g), vec![0, 1]);

        let mut b = GraphBuilder::new("diamond");
        let a = b.input(DType::F32, [2]);
        let l = b.unary(OpKind::Tanh, a).unwrap();
        let r = b.unary(OpKind::ReLU, a).unwrap();
        let d = b.binary(OpKind::Add, l, r).unwrap();
        b.output(d);
        let g = b.finish().unwrap();
        assert_eq!(topo_order(&g), vec![0, 1, 2, 3]);
        assert_eq!(topo_order(&g), topo_order(&g.clone()));
    }

    #[test]
    fn infer_shapes_is_idempotent() {
        let g = relu_graph();
        let once = infer_shapes(&g).unwrap();
        assert_eq!(once, g);
        assert_eq!(infer_shapes(&once).unwrap(), once);
    }

    #[test]
    fn editor_renumbers_spliced_nodes() {
        let g = relu_graph();
        let mut e = GraphEditor::new(&g);
        let t = e.unary(OpKind::Tanh, 0).unwrap();
        e.rewire(1, 0, t).unwrap();
        let (g2, map) = e.finish().unwrap();
        assert_eq!(map, vec![0, 2, 1]);
        assert_eq!(g2.node(1).op, OpKind::Tanh);
        assert_eq!(g2.node(2).inputs, vec![1]);
        assert_eq!(g2.outputs(), &[2]);
    }
}
