//! Graph execution: the reference interpreter, reverse-mode gradients, cost and
//! allocation accounting, and the planted-fault mutant backends.

pub mod cost;
mod grad;
mod kernels;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::fsum::fsum;
use crate::graph::{topo_order, AttrValue, DType, Graph, NodeId, OpKind};
use crate::tensor::TensorValue;

pub use cost::{graph_cost, node_cost, requires_grad, training_step_cost, BACKWARD_FACTOR};

/// Input feeds keyed by `Input` node id.
pub type Feeds = BTreeMap<NodeId, TensorValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Forward,
    Loss,
    Backward,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{phase:?} failure{}: {message}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
pub struct ExecutionError {
    pub phase: Phase,
    pub node: Option<NodeId>,
    pub message: String,
}

impl ExecutionError {
    pub fn new(phase: Phase, node: Option<NodeId>, message: impl Into<String>) -> Self {
        Self { phase, node, message: message.into() }
    }
}

/// Everything observed while executing one graph on one set of feeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Output of every node, indexed by node id.
    pub outputs: Vec<TensorValue>,
    pub loss: Option<f64>,
    /// Gradients of the loss for every `Input` and trainable `Const` node.
    pub gradients: BTreeMap<NodeId, TensorValue>,
    pub cost_units: u64,
    #[serde(skip)]
    pub wall_time: Duration,
    pub peak_alloc_bytes: u64,
    pub leaked_bytes: u64,
}

impl ExecutionTrace {
    /// Largest finite-or-infinite magnitude over all activations (NaN ignored).
    pub fn max_abs_activation(&self) -> f64 {
        self.outputs.iter().map(TensorValue::max_abs).fold(0.0, f64::max)
    }

    /// Equality of everything except wall time, NaN-aware and ignoring the sign of zero.
    pub fn same_as(&self, other: &ExecutionTrace) -> bool {
        let same_loss = match (self.loss, other.loss) {
            (Some(a), Some(b)) => a == b || (a.is_nan() && b.is_nan()),
            (None, None) => true,
            _ => false,
        };
        same_loss
            && self.outputs.len() == other.outputs.len()
            && self.outputs.iter().zip(&other.outputs).all(|(a, b)| a.same_values(b))
            && self.gradients.len() == other.gradients.len()
            && self.gradients.iter().zip(&other.gradients).all(|((ia, a), (ib, b))| ia == ib && a.same_values(b))
            && self.cost_units == other.cost_units
            && self.peak_alloc_bytes == other.peak_alloc_bytes
            && self.leaked_bytes == other.leaked_bytes
    }
}

/// The planted faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultId {
    /// ReLU6 maps NaN to 0.
    M1,
    /// Mul rounds its result through IEEE binary16.
    M2,
    /// The Slice gradient kernel fails.
    M3,
    /// Conv2D with nonzero padding costs 100x.
    M4,
    /// Every Slice execution leaks 1 KiB.
    M5,
    /// The Abs gradient at exactly 0 is NaN.
    M6,
    /// Pad fails on inputs with a zero-size dimension.
    M7,
}

impl FaultId {
    pub const ALL: [FaultId; 7] =
        [FaultId::M1, FaultId::M2, FaultId::M3, FaultId::M4, FaultId::M5, FaultId::M6, FaultId::M7];

    /// The op at which the fault is planted.
    pub fn site(self) -> OpKind {
        match self {
            FaultId::M1 => OpKind::ReLU6,
            FaultId::M2 => OpKind::Mul,
            FaultId::M3 | FaultId::M5 => OpKind::Slice,
            FaultId::M4 => OpKind::Conv2D,
            FaultId::M6 => OpKind::Abs,
            FaultId::M7 => OpKind::Pad,
        }
    }
}

pub const M4_COST_FACTOR: u64 = 100;
pub const M5_LEAK_BYTES: u64 = 1024;

/// Restricts a fault to nodes whose attribute `key` equals `value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrTrigger {
    pub key: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault: FaultId,
    #[serde(default)]
    pub trigger: Option<AttrTrigger>,
}

impl FaultSpec {
    pub fn new(fault: FaultId) -> Self {
        Self { fault, trigger: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendId {
    Reference,
    Mutant(FaultId),
}

impl BackendId {
    pub fn instantiate(self) -> Interpreter {
        match self {
            BackendId::Reference => Interpreter::reference(),
            BackendId::Mutant(f) => mutant_backend(FaultSpec::new(f)),
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendId::Reference => f.write_str("reference"),
            BackendId::Mutant(m) => write!(f, "mutant:{m:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown backend `{0}` (expected `reference` or `mutant:M1`..`mutant:M7`)")]
pub struct UnknownBackend(pub String);

impl FromStr for BackendId {
    type Err = UnknownBackend;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "reference" {
            return Ok(BackendId::Reference);
        }
        let fault = s.strip_prefix("mutant:").and_then(|m| FaultId::ALL.into_iter().find(|f| format!("{f:?}") == m));
        fault.map(BackendId::Mutant).ok_or_else(|| UnknownBackend(s.to_string()))
    }
}

impl Serialize for BackendId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The execution seam. Adapters to real frameworks would implement this.
pub trait Backend: Send + Sync {
    fn id(&self) -> BackendId;

    fn execute_forward(&self, g: &Graph, feeds: &Feeds) -> Result<ExecutionTrace, ExecutionError>;

    /// Forward pass, scalar loss and reverse-mode gradients. With labels the
    /// loss is softmax cross-entropy of the first output, otherwise its mean.
    /// No weights are updated.
    fn execute_training_step(
        &self,
        g: &Graph,
        feeds: &Feeds,
        labels: Option<&TensorValue>,
    ) -> Result<ExecutionTrace, ExecutionError>;
}

#[derive(Debug, Default)]
struct Arena {
    live: u64,
    peak: u64,
    leaked: u64,
}

impl Arena {
    fn alloc(&mut self, bytes: u64) {
        self.live += bytes;
        self.peak = self.peak.max(self.live);
    }

    fn free(&mut self, bytes: u64) {
        self.live -= bytes;
    }

    fn leak(&mut self, bytes: u64) {
        self.alloc(bytes);
        self.leaked += bytes;
    }
}

fn bytes_of(t: &TensorValue) -> u64 {
    (t.numel() * t.dtype.size_bytes()) as u64
}

/// Single-threaded interpreter; correct unless a fault is planted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Interpreter {
    fault: Option<FaultSpec>,
}

pub fn mutant_backend(spec: FaultSpec) -> Interpreter {
    Interpreter { fault: Some(spec) }
}

struct Forward {
    outputs: Vec<TensorValue>,
    cost: Vec<u64>,
    arena: Arena,
}

impl Interpreter {
    pub fn reference() -> Self {
        Self { fault: None }
    }

    pub fn fault(&self) -> Option<&FaultSpec> {
        self.fault.as_ref()
    }

    fn fires(&self, fault: FaultId, g: &Graph, id: NodeId) -> bool {
        let node = g.node(id);
        match &self.fault {
            Some(spec) if spec.fault == fault && node.op == fault.site() => {
                spec.trigger.as_ref().is_none_or(|t| node.attrs.get(&t.key) == Some(&t.value))
            }
            _ => false,
        }
    }

    fn check_feeds(g: &Graph, feeds: &Feeds) -> Result<(), ExecutionError> {
        for &i in g.inputs() {
            let node = g.node(i);
            match feeds.get(&i) {
                None => return Err(ExecutionError::new(Phase::Forward, Some(i), "missing feed")),
                Some(t) if t.dtype != node.dtype || t.shape != node.shape => {
                    return Err(ExecutionError::new(
                        Phase::Forward,
                        Some(i),
                        format!("feed is {}{} but input expects {}{}", t.dtype, t.shape, node.dtype, node.shape),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn forward(
        &self,
        g: &Graph,
        feeds: &Feeds,
        overrides: &BTreeMap<NodeId, TensorValue>,
        keep_all: bool,
    ) -> Result<Forward, ExecutionError> {
        Self::check_feeds(g, feeds)?;
        let consumers = g.consumers();
        let mut remaining: Vec<usize> = consumers.iter().map(Vec::len).collect();
        let mut is_output = vec![false; g.len()];
        g.outputs().iter().for_each(|&o| is_output[o] = true);
        let mut outputs: Vec<Option<TensorValue>> = vec![None; g.len()];
        let mut cost = vec![0u64; g.len()];
        let mut arena = Arena::default();

        for id in topo_order(g) {
            let node = g.node(id);
            let value = if let Some(v) = overrides.get(&id) {
                v.clone()
            } else {
                match node.op {
                    OpKind::Input => feeds[&id].clone(),
                    OpKind::Const => TensorValue {
                        dtype: node.dtype,
                        shape: node.shape.clone(),
                        data: node.payload.as_ref().expect("validated const").to_vec(),
                    },
                    _ => {
                        let ins: Vec<&TensorValue> =
                            node.inputs.iter().map(|&i| outputs[i].as_ref().expect("topological order")).collect();
                        if self.fires(FaultId::M7, g, id) && ins[0].shape.dims().contains(&0) {
                            return Err(ExecutionError::new(Phase::Forward, Some(id), "Pad kernel: zero-size dimension"));
                        }
                        let mut data = kernels::forward(node, &ins)
                            .map_err(|m| ExecutionError::new(Phase::Forward, Some(id), m))?;
                        if self.fires(FaultId::M1, g, id) {
                            data.iter_mut().filter(|x| x.is_nan()).for_each(|x| *x = 0.0);
                        }
                        if self.fires(FaultId::M2, g, id) {
                            data.iter_mut().for_each(|x| *x = DType::F16.round(*x));
                        }
                        TensorValue::from_raw(node.dtype, node.shape.clone(), data)
                    }
                }
            };
            cost[id] = node_cost(g, node);
            if self.fires(FaultId::M4, g, id) && crate::graph::ConvParams::from_attrs(&node.attrs)
                .is_ok_and(|p| p.padding != [0, 0])
            {
                cost[id] *= M4_COST_FACTOR;
            }
            arena.alloc(bytes_of(&value));
            if self.fires(FaultId::M5, g, id) {
                arena.leak(M5_LEAK_BYTES);
            }
            outputs[id] = Some(value);
            if !keep_all {
                let mut seen = Vec::new();
                for &i in &node.inputs {
                    if seen.contains(&i) {
                        continue;
                    }
                    seen.push(i);
                    remaining[i] -= 1;
                    if remaining[i] == 0 && !is_output[i] {
                        arena.free(bytes_of(outputs[i].as_ref().expect("computed")));
                    }
                }
                if remaining[id] == 0 && !is_output[id] {
                    arena.free(bytes_of(outputs[id].as_ref().expect("computed")));
                }
            }
        }
        let outputs = outputs.into_iter().map(|o| o.expect("every node computed")).collect();
        Ok(Forward { outputs, cost, arena })
    }

    fn execute(
        &self,
        g: &Graph,
        feeds: &Feeds,
        labels: Option<&TensorValue>,
        train: bool,
    ) -> Result<ExecutionTrace, ExecutionError> {
        let start = Instant::now();
        let Forward { outputs, cost, mut arena } = self.forward(g, feeds, &BTreeMap::new(), train)?;
        if !train {
            let live: u64 = g
                .outputs()
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .map(|o| bytes_of(&outputs[o]))
                .sum();
            arena.free(live);
            return Ok(ExecutionTrace {
                outputs,
                loss: None,
                gradients: BTreeMap::new(),
                cost_units: cost.iter().sum(),
                wall_time: start.elapsed(),
                peak_alloc_bytes: arena.peak,
                leaked_bytes: arena.live,
            });
        }

        let out_id = g.outputs()[0];
        let (loss, seed) = loss_and_seed(&outputs[out_id], labels)?;
        let mut total_cost: u64 = cost.iter().sum::<u64>() + outputs[out_id].numel() as u64;

        let requires = requires_grad(g);
        let mut contributions: Vec<Vec<Vec<f64>>> = vec![Vec::new(); g.len()];
        if requires[out_id] {
            contributions[out_id].push(seed);
        }
        let mut gradients = BTreeMap::new();
        for id in topo_order(g).into_iter().rev() {
            if !requires[id] {
                continue;
            }
            let node = g.node(id);
            let parts = std::mem::take(&mut contributions[id]);
            let numel = node.shape.numel();
            let data = match parts.len() {
                0 => vec![0.0; numel],
                1 => parts.into_iter().next().expect("one part"),
                2 => parts[0].iter().zip(&parts[1]).map(|(a, b)| a + b).collect(),
                _ => (0..numel).map(|k| fsum(parts.iter().map(|p| p[k]))).collect(),
            };
            let grad = TensorValue::from_raw(node.dtype, node.shape.clone(), data);
            arena.alloc(bytes_of(&grad));
            if node.op.is_leaf() {
                gradients.insert(id, grad);
                continue;
            }
            if self.fires(FaultId::M3, g, id) {
                return Err(ExecutionError::new(Phase::Backward, Some(id), "SliceGrad kernel failed to launch"));
            }
            let ins: Vec<&TensorValue> = node.inputs.iter().map(|&i| &outputs[i]).collect();
            let mut parts = grad::backward(node, &ins, &outputs[id], &grad.data)
                .map_err(|m| ExecutionError::new(Phase::Backward, Some(id), m))?;
            if self.fires(FaultId::M6, g, id) {
                if let Some(Some(gx)) = parts.first_mut() {
                    for (v, &x) in gx.iter_mut().zip(&ins[0].data) {
                        if x == 0.0 {
                            *v = f64::NAN;
                        }
                    }
                }
            }
            total_cost += BACKWARD_FACTOR * cost[id];
            for (&i, part) in node.inputs.iter().zip(parts) {
                if let Some(mut part) = part.filter(|_| requires[i]) {
                    let dtype = g.node(i).dtype;
                    if dtype != DType::F64 {
                        part.iter_mut().for_each(|v| *v = dtype.round(*v));
                    }
                    contributions[i].push(part);
                }
            }
            arena.free(bytes_of(&grad));
        }
        let held: u64 = outputs.iter().map(bytes_of).sum::<u64>() + gradients.values().map(bytes_of).sum::<u64>();
        arena.free(held);
        Ok(ExecutionTrace {
            outputs,
            loss: Some(loss),
            gradients,
            cost_units: total_cost,
            wall_time: start.elapsed(),
            peak_alloc_bytes: arena.peak,
            leaked_bytes: arena.live,
        })
    }
}

impl Backend for Interpreter {
    fn id(&self) -> BackendId {
        match &self.fault {
            None => BackendId::Reference,
            Some(spec) => BackendId::Mutant(spec.fault),
        }
    }

    fn execute_forward(&self, g: &Graph, feeds: &Feeds) -> Result<ExecutionTrace, ExecutionError> {
        self.execute(g, feeds, None, false)
    }

    fn execute_training_step(
        &self,
        g: &Graph,
        feeds: &Feeds,
        labels: Option<&TensorValue>,
    ) -> Result<ExecutionTrace, ExecutionError> {
        self.execute(g, feeds, labels, true)
    }
}

/// Loss value (rounded to the output dtype) and its gradient w.r.t. the output.
fn loss_and_seed(out: &TensorValue, labels: Option<&TensorValue>) -> Result<(f64, Vec<f64>), ExecutionError> {
    let err = |m: String| ExecutionError::new(Phase::Loss, None, m);
    if !out.dtype.is_float() {
        return Err(err(format!("loss needs a float output, got {}", out.dtype)));
    }
    match labels {
        Some(labels) => {
            let ok = match (out.shape.dims(), labels.shape.dims()) {
                ([n, k], [n2]) => n == n2 && *k > 0 && labels.dtype == DType::I32,
                _ => false,
            };
            if !ok {
                return Err(err(format!("labels {} do not fit logits {}", labels.shape, out.shape)));
            }
            let rows = out.shape.dims()[0];
            let k = out.shape.dims()[1];
            let (loss, mut probs) = kernels::softmax_xent(out, labels).map_err(err)?;
            for r in 0..rows {
                probs[r * k + labels.data[r] as usize] -= 1.0;
            }
            let scale = if rows == 0 { 0.0 } else { 1.0 / rows as f64 };
            probs.iter_mut().for_each(|v| *v *= scale);
            Ok((out.dtype.round(loss), probs))
        }
        None => {
            let n = out.numel();
            if n == 0 {
                return Err(err("mean loss of an empty output".into()));
            }
            let loss = fsum(out.data.iter().copied()) / n as f64;
            Ok((out.dtype.round(loss), vec![1.0 / n as f64; n]))
        }
    }
}

/// Central-difference estimate of the loss gradient w.r.t. leaf `wrt`, using
/// the reference interpreter.
pub fn finite_difference_grad(
    g: &Graph,
    feeds: &Feeds,
    labels: Option<&TensorValue>,
    wrt: NodeId,
    h: f64,
) -> Result<TensorValue, ExecutionError> {
    assert!(h > 0.0, "step must be positive");
    let interp = Interpreter::reference();
    let node = g.node(wrt);
    let base = match node.op {
        OpKind::Input => feeds.get(&wrt).cloned().ok_or_else(|| {
            ExecutionError::new(Phase::Forward, Some(wrt), "missing feed")
        })?,
        OpKind::Const => TensorValue {
            dtype: node.dtype,
            shape: node.shape.clone(),
            data: node.payload.as_ref().expect("validated const").to_vec(),
        },
        _ => return Err(ExecutionError::new(Phase::Loss, Some(wrt), "finite differences need a leaf node")),
    };
    let loss_at = |value: TensorValue| -> Result<f64, ExecutionError> {
        let overrides = BTreeMap::from([(wrt, value)]);
        let fwd = interp.forward(g, feeds, &overrides, false)?;
        Ok(loss_and_seed(&fwd.outputs[g.outputs()[0]], labels)?.0)
    };
    let mut grad = Vec::with_capacity(base.numel());
    for k in 0..base.numel() {
        let mut plus = base.clone();
        plus.data[k] = base.dtype.round(base.data[k] + h);
        let mut minus = base.clone();
        minus.data[k] = base.dtype.round(base.data[k] - h);
        grad.push((loss_at(plus)? - loss_at(minus)?) / (2.0 * h));
    }
    Ok(TensorValue { dtype: DType::F64, shape: base.shape.clone(), data: grad })
}

/// Debug dump: one JSON object per node. Full tensors only when `full` is set.
pub fn trace_jsonl(g: &Graph, trace: &ExecutionTrace, full: bool) -> String {
    let mut out = String::new();
    for (id, t) in trace.outputs.iter().enumerate() {
        let (min, max) = t.min_max().map_or((None, None), |(a, b)| (Some(a), Some(b)));
        let mut rec = json!({
            "id": id,
            "op": g.node(id).op,
            "shape": t.shape,
            "dtype": t.dtype,
            "min": min,
            "max": max,
            "has_nan": t.has_nan(),
            "has_inf": t.has_inf(),
        });
        if full {
            rec["data"] = json!(t.data.iter().map(|x| x.to_string()).collect::<Vec<_>>());
        }
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}
