//! Canonical JSON encoding of graphs.
//!
//! Nodes are written in id order with sorted attribute keys. Constant payloads
//! travel in the `value` attribute as decimal strings using Rust's shortest
//! round-trip float formatting, so decoding reproduces every bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{validate, AttrValue, Attrs, DType, Graph, Node, NodeId, OpKind, Shape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{message}", offset.map(|o| format!("at byte {o}: ")).unwrap_or_default())]
pub struct ParseError {
    /// Byte offset of the syntax error, when the failure is syntactic.
    pub offset: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn semantic(message: impl Into<String>) -> Self {
        Self { offset: None, message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonNode {
    id: NodeId,
    op: OpKind,
    inputs: Vec<NodeId>,
    attrs: Attrs,
    dtype: DType,
    shape: Shape,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonGraph {
    label: String,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    nodes: Vec<JsonNode>,
}

const PAYLOAD_KEY: &str = "value";

fn encode(g: &Graph) -> JsonGraph {
    let nodes = g
        .nodes()
        .iter()
        .map(|n| {
            let mut attrs = n.attrs.clone();
            if let Some(p) = &n.payload {
                attrs.insert(PAYLOAD_KEY.into(), AttrValue::Strs(p.iter().map(|x| x.to_string()).collect()));
            }
            JsonNode { id: n.id, op: n.op, inputs: n.inputs.clone(), attrs, dtype: n.dtype, shape: n.shape.clone() }
        })
        .collect();
    JsonGraph { label: g.label().to_string(), inputs: g.inputs().to_vec(), outputs: g.outputs().to_vec(), nodes }
}

pub fn serialize(g: &Graph) -> Vec<u8> {
    serde_json::to_vec(&encode(g)).expect("graph encoding is infallible")
}

pub fn to_json_pretty(g: &Graph) -> String {
    serde_json::to_string_pretty(&encode(g)).expect("graph encoding is infallible")
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes.split(|&b| b == b'\n').take(line - 1).map(|l| l.len() + 1).sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

pub fn deserialize(bytes: &[u8]) -> Result<Graph, ParseError> {
    let raw: JsonGraph = serde_json::from_slice(bytes).map_err(|e| ParseError {
        offset: Some(byte_offset(bytes, e.line(), e.column())),
        message: e.to_string(),
    })?;
    if raw.nodes.is_empty() {
        return Err(ParseError::semantic("graph has no nodes"));
    }
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for jn in raw.nodes {
        let mut attrs = jn.attrs;
        let payload = if jn.op == OpKind::Const {
            let Some(AttrValue::Strs(values)) = attrs.remove(PAYLOAD_KEY) else {
                return Err(ParseError::semantic(format!("const node {} lacks a `{PAYLOAD_KEY}` string list", jn.id)));
            };
            let parsed = values
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| ParseError::semantic(format!("node {}: bad number {s:?}", jn.id))))
                .collect::<Result<Arc<[f64]>, _>>()?;
            Some(parsed)
        } else {
            None
        };
        nodes.push(Node {
            id: jn.id,
            op: jn.op,
            inputs: jn.inputs,
            attrs,
            dtype: jn.dtype,
            shape: jn.shape,
            payload,
        });
    }
    let recorded: Vec<(DType, Shape)> = nodes.iter().map(|n| (n.dtype, n.shape.clone())).collect();
    let g = Graph::from_parts(raw.label, nodes, raw.inputs, raw.outputs)
        .map_err(|e| ParseError::semantic(e.to_string()))?;
    for (n, (dtype, shape)) in g.nodes().iter().zip(recorded) {
        if n.dtype != dtype || n.shape != shape {
            return Err(ParseError::semantic(format!(
                "node {}: recorded {dtype}{shape} but inferred {}{}",
                n.id, n.dtype, n.shape
            )));
        }
    }
    debug_assert!(validate(&g).is_ok());
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn sample() -> Graph {
        let mut b = GraphBuilder::new("sample");
        let x = b.input(DType::F32, [2]);
        let c = b.constant(DType::F64, [3], vec![0.1, f64::NAN, -f64::INFINITY], false);
        let k = b.constant(DType::F32, [1], vec![1.0 / 3.0], true);
        let y = b.binary(OpKind::Mul, x, k).unwrap();
        let r = b.unary(OpKind::ReLU, c).unwrap();
        b.output(y);
        b.output(r);
        b.finish().unwrap()
    }

    #[test]
    fn round_trip_preserves_payload_bits() {
        let g = sample();
        let bytes = serialize(&g);
        let back = deserialize(&bytes).unwrap();
        let (a, b) = (g.node(1).payload.as_ref().unwrap(), back.node(1).payload.as_ref().unwrap());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.node(2), g.node(2));
        assert_eq!(serialize(&back), bytes);
    }

    #[test]
    fn empty_nodes_rejected() {
        let err = deserialize(br#"{"label":"x","inputs":[],"outputs":[0],"nodes":[]}"#).unwrap_err();
        assert_eq!(err.offset, None);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let bytes = serialize(&sample());
        let cut = &bytes[..bytes.len() / 2];
        let err = deserialize(cut).unwrap_err();
        let offset = err.offset.unwrap();
        assert!(offset + 1 >= cut.len() && offset <= cut.len());
    }

    #[test]
    fn offset_on_later_line() {
        let err = deserialize(b"{\n  \"label\": 3}").unwrap_err();
        assert_eq!(err.offset, Some(13));
    }
}
