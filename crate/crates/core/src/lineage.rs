//! Rewrite chains that reproduce generated models from a seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::seeds::seed_by_label;
use crate::graph::{serial, Graph, NodeId};
use crate::rewrite::{transform_within, Anchors, ImrKind, InsertKind, RewriteOptions, RewriteOutcome, RewriteStatus, SmrKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageStep {
    pub smr: SmrKind,
    /// Interface relation that was applied, if any.
    pub imr: Option<ImrKind>,
    pub insert: InsertKind,
    pub anchors: Option<Anchors>,
    pub rng_seed: u64,
}

/// Seed label plus the ordered rewrite steps that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub seed: String,
    #[serde(default = "default_anchor_count")]
    pub anchor_count: usize,
    pub steps: Vec<LineageStep>,
}

fn default_anchor_count() -> usize {
    RewriteOptions::default().anchor_count
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("unknown seed model `{0}`")]
    UnknownSeed(String),
    #[error("step {step} did not reproduce: {reason}")]
    Diverged { step: usize, reason: String },
}

impl Lineage {
    pub fn new(seed: impl Into<String>, anchor_count: usize) -> Self {
        Self { seed: seed.into(), anchor_count, steps: Vec::new() }
    }

    /// This lineage extended by the step that produced `outcome`.
    pub fn child(&self, outcome: &RewriteOutcome, rng_seed: u64) -> Self {
        let mut next = self.clone();
        next.steps.push(LineageStep {
            smr: outcome.smr,
            imr: outcome.imr,
            insert: outcome.insert,
            anchors: outcome.anchors.clone(),
            rng_seed,
        });
        next
    }

    pub fn options(&self) -> RewriteOptions {
        RewriteOptions { anchor_count: self.anchor_count }
    }

    /// Rebuilds the model. Returns the graph and, for every seed node, the
    /// node carrying its value.
    pub fn replay(&self) -> Result<(Graph, Vec<NodeId>), ReplayError> {
        let mut g = seed_by_label(&self.seed).ok_or_else(|| ReplayError::UnknownSeed(self.seed.clone()))?;
        let mut map: Vec<NodeId> = (0..g.len()).collect();
        let opts = self.options();
        for (k, step) in self.steps.iter().enumerate() {
            let out = transform_within(&g, Some(&map), step.smr, step.imr, step.insert, step.rng_seed, &opts);
            let diverged = |reason: String| ReplayError::Diverged { step: k, reason };
            if let RewriteStatus::Crash(e) = &out.status {
                return Err(diverged(e.to_string()));
            }
            if out.imr != step.imr || out.anchors != step.anchors {
                return Err(diverged("anchors or interface relation differ".into()));
            }
            map = map.iter().map(|&i| out.layer_map[i]).collect();
            g = out.graph;
        }
        Ok((g, map))
    }
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn graph_digest(g: &Graph) -> String {
    hex::encode(Sha256::digest(serial::serialize(g)))
}
