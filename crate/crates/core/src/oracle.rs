//! Bug oracles over pairs of execution traces and over single traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{training_step_cost, BackendId, ExecutionError, ExecutionTrace, Phase};
use crate::graph::{validate, DType, Graph, NodeId, OpKind};
use crate::lineage::Lineage;
use crate::rewrite::EquivalenceClass;
use crate::tensor::TensorValue;

/// Magnitude above which an activation marks the model as numerically unreasonable.
pub const BLOWUP_MAGNITUDE: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTolerance {
    pub exact: f64,
    pub approx: f64,
}

/// Detection thresholds. Every comparison is a strict `>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Chebyshev bound on mapped layer outputs, per dtype of the original layer.
    pub accuracy: BTreeMap<DType, ClassTolerance>,
    pub loss_tol: f64,
    pub grad_tol: f64,
    pub resource_ratio: f64,
    pub leak_bytes: u64,
    pub efficiency_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let wide = ClassTolerance { exact: 1e-6, approx: 1e-4 };
        let accuracy = BTreeMap::from([
            (DType::F32, wide),
            (DType::F64, wide),
            (DType::F16, ClassTolerance { exact: 1e-3, approx: 1e-2 }),
            (DType::I32, ClassTolerance { exact: 0.0, approx: 0.0 }),
            (DType::Bool, ClassTolerance { exact: 0.0, approx: 0.0 }),
        ]);
        Self { accuracy, loss_tol: 1e-6, grad_tol: 1e-4, resource_ratio: 2.0, leak_bytes: 0, efficiency_ratio: 3.0 }
    }
}

impl Thresholds {
    pub fn accuracy_for(&self, dtype: DType, class: EquivalenceClass) -> f64 {
        let tol = self.accuracy.get(&dtype).or_else(|| self.accuracy.get(&DType::F32)).copied();
        let tol = tol.unwrap_or(ClassTolerance { exact: 1e-6, approx: 1e-4 });
        match class {
            EquivalenceClass::Exact => tol.exact,
            EquivalenceClass::Approx => tol.approx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BugKind {
    Accuracy,
    Crash,
    Resource,
    Efficiency,
}

/// What an oracle observed. Non-finite numbers serialize as strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Evidence {
    Forward {
        layer: NodeId,
        op: OpKind,
        feed: usize,
        #[serde(with = "nonfinite")]
        distance: f64,
    },
    /// NaN or Inf on one side of a mapped layer only.
    Outlier { layer: NodeId, op: OpKind, feed: usize, original_finite: bool, rewritten_finite: bool },
    Loss {
        feed: usize,
        #[serde(with = "nonfinite")]
        original: f64,
        #[serde(with = "nonfinite")]
        rewritten: f64,
    },
    Gradient {
        node: NodeId,
        feed: usize,
        #[serde(with = "nonfinite")]
        distance: f64,
    },
    /// An elementwise node dropped a NaN present in its input.
    NanPropagation { layer: NodeId, op: OpKind, feed: usize, position: usize },
    PeakMemory { peak: u64, baseline_peak: u64, size_ratio: f64, ratio: f64 },
    Leak { bytes: u64 },
    Cost { cost: u64, baseline_cost: u64, expected_ratio: f64, ratio: f64, wall_time_ratio: f64 },
    Crash { phase: Phase, node: Option<NodeId>, message: String },
}

impl Evidence {
    pub fn kind(&self) -> BugKind {
        match self {
            Evidence::Forward { .. }
            | Evidence::Outlier { .. }
            | Evidence::Loss { .. }
            | Evidence::Gradient { .. }
            | Evidence::NanPropagation { .. } => BugKind::Accuracy,
            Evidence::PeakMemory { .. } | Evidence::Leak { .. } => BugKind::Resource,
            Evidence::Cost { .. } => BugKind::Efficiency,
            Evidence::Crash { .. } => BugKind::Crash,
        }
    }

    /// Name of the check that fired.
    pub fn check(&self) -> &'static str {
        match self {
            Evidence::Forward { .. } => "forward",
            Evidence::Outlier { .. } => "outlier",
            Evidence::Loss { .. } => "loss",
            Evidence::Gradient { .. } => "gradient",
            Evidence::NanPropagation { .. } => "nan_propagation",
            Evidence::PeakMemory { .. } => "peak_memory",
            Evidence::Leak { .. } => "leak",
            Evidence::Cost { .. } => "cost",
            Evidence::Crash { .. } => "crash",
        }
    }
}

/// A classified finding, one JSONL line in the campaign output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub kind: BugKind,
    pub backend: BackendId,
    pub seed: String,
    pub round: usize,
    pub lineage: Lineage,
    pub evidence: Evidence,
    pub threshold: Option<f64>,
}

impl BugReport {
    /// The report with wall-clock evidence cleared, for exact comparisons.
    pub fn canonical(&self) -> BugReport {
        let mut r = self.clone();
        if let Evidence::Cost { wall_time_ratio, .. } = &mut r.evidence {
            *wall_time_ratio = 0.0;
        }
        r
    }
}

/// One oracle firing, before campaign context is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub evidence: Evidence,
    pub threshold: Option<f64>,
}

impl Finding {
    fn new(evidence: Evidence, threshold: impl Into<Option<f64>>) -> Self {
        Self { evidence, threshold: threshold.into() }
    }

    pub fn into_report(self, backend: BackendId, round: usize, lineage: &Lineage) -> BugReport {
        BugReport {
            kind: self.evidence.kind(),
            backend,
            seed: lineage.seed.clone(),
            round,
            lineage: lineage.clone(),
            evidence: self.evidence,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("mapped layer {layer} has shape {original} originally but {rewritten} after rewriting")]
    ShapeMismatch { layer: NodeId, original: String, rewritten: String },
    #[error("layer {0} is not in the trace")]
    MissingLayer(NodeId),
}

/// Largest elementwise difference. Matching NaNs and equal infinities count as
/// equal; any other pairing with a non-finite value is infinitely far.
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| {
        let d = if x.is_finite() && y.is_finite() {
            (x - y).abs()
        } else if (x.is_nan() && y.is_nan()) || x == y {
            0.0
        } else {
            f64::INFINITY
        };
        acc.max(d)
    })
}

fn tensor_distance(layer: NodeId, a: &TensorValue, b: &TensorValue) -> Result<f64, OracleError> {
    if a.shape != b.shape {
        return Err(OracleError::ShapeMismatch { layer, original: a.shape.to_string(), rewritten: b.shape.to_string() });
    }
    Ok(chebyshev(&a.data, &b.data))
}

/// Per mapped layer of the original, the Chebyshev distance to its counterpart.
pub fn chebyshev_layer_distance(
    m: &ExecutionTrace,
    n: &ExecutionTrace,
    layer_map: &[NodeId],
) -> Result<BTreeMap<NodeId, f64>, OracleError> {
    let mut out = BTreeMap::new();
    for (orig, &new) in layer_map.iter().enumerate() {
        let a = m.outputs.get(orig).ok_or(OracleError::MissingLayer(orig))?;
        let b = n.outputs.get(new).ok_or(OracleError::MissingLayer(new))?;
        out.insert(orig, tensor_distance(orig, a, b)?);
    }
    Ok(out)
}

/// True when every activation, the loss and every gradient is finite.
pub fn trace_is_finite(t: &ExecutionTrace) -> bool {
    t.outputs.iter().all(TensorValue::is_finite)
        && t.loss.is_none_or(f64::is_finite)
        && t.gradients.values().all(TensorValue::is_finite)
}

/// Forward, outlier, loss and gradient checks between an original trace `m`
/// and the trace `n` of its rewrite. At most one finding per check: the
/// earliest mapped layer (or gradient node) that violates it.
pub fn detect_accuracy(
    original: &Graph,
    m: &ExecutionTrace,
    n: &ExecutionTrace,
    layer_map: &[NodeId],
    class: EquivalenceClass,
    feed: usize,
    th: &Thresholds,
) -> Result<Vec<Finding>, OracleError> {
    let mut found = Vec::new();
    let distances = chebyshev_layer_distance(m, n, layer_map)?;
    let mut forward = None;
    let mut outlier = None;
    for (&layer, &d) in &distances {
        let node = original.node(layer);
        let tol = th.accuracy_for(node.dtype, class);
        if d.is_infinite() && outlier.is_none() {
            let a = m.outputs[layer].is_finite();
            let b = n.outputs[layer_map[layer]].is_finite();
            if a != b {
                let ev = Evidence::Outlier { layer, op: node.op, feed, original_finite: a, rewritten_finite: b };
                outlier = Some(Finding::new(ev, tol));
                continue;
            }
        }
        if d > tol && forward.is_none() {
            forward = Some(Finding::new(Evidence::Forward { layer, op: node.op, feed, distance: d }, tol));
        }
    }
    found.extend(outlier);
    found.extend(forward);

    if let (Some(a), Some(b)) = (m.loss, n.loss) {
        let diff = chebyshev(&[a], &[b]);
        if diff > th.loss_tol {
            found.push(Finding::new(Evidence::Loss { feed, original: a, rewritten: b }, th.loss_tol));
        }
    }
    for (&node, ga) in &m.gradients {
        let Some(gb) = n.gradients.get(&layer_map[node]) else { continue };
        let d = tensor_distance(node, ga, gb)?;
        if d > th.grad_tol {
            found.push(Finding::new(Evidence::Gradient { node, feed, distance: d }, th.grad_tol));
            break;
        }
    }
    Ok(found)
}

/// Single-trace check: an elementwise unary node whose input holds NaN at a
/// position where its output does not.
pub fn detect_nan_propagation(g: &Graph, t: &ExecutionTrace, feed: usize) -> Option<Finding> {
    for node in g.nodes().iter().filter(|n| n.op.is_unary_elementwise()) {
        let input = &t.outputs[node.inputs[0]].data;
        let output = &t.outputs[node.id].data;
        if let Some(position) = input.iter().zip(output).position(|(x, y)| x.is_nan() && !y.is_nan()) {
            return Some(Finding::new(Evidence::NanPropagation { layer: node.id, op: node.op, feed, position }, None));
        }
    }
    None
}

/// Total bytes of all node outputs: the static size of a model.
pub fn model_bytes(g: &Graph) -> u64 {
    g.nodes().iter().map(|n| (n.shape.numel() * n.dtype.size_bytes()) as u64).sum()
}

fn safe_ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Peak allocation relative to the baseline, normalized by model size, and leaks.
pub fn detect_resource(
    original: &Graph,
    rewritten: &Graph,
    baseline: &ExecutionTrace,
    t: &ExecutionTrace,
    th: &Thresholds,
) -> Vec<Finding> {
    let mut found = Vec::new();
    let size_ratio = safe_ratio(model_bytes(rewritten) as f64, model_bytes(original) as f64);
    let ratio = safe_ratio(t.peak_alloc_bytes as f64, baseline.peak_alloc_bytes as f64) / size_ratio;
    if ratio > th.resource_ratio {
        let ev = Evidence::PeakMemory { peak: t.peak_alloc_bytes, baseline_peak: baseline.peak_alloc_bytes, size_ratio, ratio };
        found.push(Finding::new(ev, th.resource_ratio));
    }
    if t.leaked_bytes > th.leak_bytes {
        found.push(Finding::new(Evidence::Leak { bytes: t.leaked_bytes }, th.leak_bytes as f64));
    }
    found
}

/// Cost relative to the baseline, normalized by the ratio of the costs a
/// correct backend would charge for the two graphs.
pub fn detect_efficiency(
    original: &Graph,
    rewritten: &Graph,
    baseline: &ExecutionTrace,
    t: &ExecutionTrace,
    th: &Thresholds,
) -> Option<Finding> {
    let expected_ratio = safe_ratio(training_step_cost(rewritten) as f64, training_step_cost(original) as f64);
    let ratio = safe_ratio(t.cost_units as f64, baseline.cost_units as f64) / expected_ratio;
    (ratio > th.efficiency_ratio).then(|| {
        let wall_time_ratio = safe_ratio(t.wall_time.as_secs_f64(), baseline.wall_time.as_secs_f64());
        let ev = Evidence::Cost { cost: t.cost_units, baseline_cost: baseline.cost_units, expected_ratio, ratio, wall_time_ratio };
        Finding::new(ev, th.efficiency_ratio)
    })
}

/// Outcome of classifying an execution failure.
#[derive(Debug, Clone, PartialEq)]
pub enum CrashClass {
    /// The model itself is unreasonable; not a backend bug.
    Invalid(String),
    Bug(Finding),
}

/// A failure is the model's fault when the graph does not validate, the
/// failure happened while rewriting, or the parent trace had already blown up.
pub fn classify_crash(err: &ExecutionError, g: &Graph, parent_max_abs: Option<f64>) -> CrashClass {
    if let Err(e) = validate(g) {
        return CrashClass::Invalid(format!("graph does not validate: {e}"));
    }
    if err.phase == Phase::Rewrite {
        return CrashClass::Invalid(format!("rewrite failed: {}", err.message));
    }
    if parent_max_abs.is_some_and(|m| m.is_nan() || m > BLOWUP_MAGNITUDE) {
        return CrashClass::Invalid("parent activations exceeded the magnitude guard".into());
    }
    CrashClass::Bug(Finding::new(
        Evidence::Crash { phase: err.phase, node: err.node, message: err.message.clone() },
        None,
    ))
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}
