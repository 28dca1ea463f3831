//! Replay pool of non-crashing models and Beta-posterior seed reselection.

use rand::RngCore;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};
use crate::lineage::Lineage;
use crate::metrics::Diversity;
use crate::oracle::Finding;

/// What the campaign observed about a model when it was judged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelStats {
    pub diversity: Option<Diversity>,
    /// Mean |activation| over the finite activations of the first feed.
    pub mean_abs: Option<f64>,
    /// Largest |activation| over all feeds.
    pub max_abs: Option<f64>,
}

/// A retained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(skip)]
    pub graph: Option<Graph>,
    pub round: usize,
    pub reward: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lineage: Lineage,
    /// For each node of the original seed, the node carrying its value here.
    #[serde(skip)]
    pub seed_map: Vec<NodeId>,
    pub stats: ModelStats,
    /// Oracle findings against the seed's traces.
    #[serde(default)]
    pub findings: Vec<Finding>,
}

impl ReplayEntry {
    pub fn new(graph: Graph, round: usize, reward: f64, lineage: Lineage, seed_map: Vec<NodeId>) -> Self {
        Self { graph: Some(graph), round, reward, alpha: 1.0, beta: 1.0, lineage, seed_map, stats: ModelStats::default(), findings: Vec::new() }
    }

    pub fn with_stats(mut self, stats: ModelStats) -> Self {
        self.stats = stats;
        self
    }

    pub fn with_findings(mut self, findings: Vec<Finding>) -> Self {
        self.findings = findings;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayPool {
    pub entries: Vec<ReplayEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("replay pool is empty")]
pub struct EmptyPool;

impl ReplayPool {
    pub fn add(&mut self, entry: ReplayEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Median reward of the pool (mean of the middle two for even sizes).
    pub fn median_reward(&self) -> Option<f64> {
        let mut r: Vec<f64> = self.entries.iter().map(|e| e.reward).collect();
        if r.is_empty() {
            return None;
        }
        r.sort_by(f64::total_cmp);
        let m = r.len() / 2;
        Some(if r.len() % 2 == 1 { r[m] } else { (r[m - 1] + r[m]) / 2.0 })
    }

    /// Index of the entry with the largest `Beta(alpha, beta)` draw. Ties go
    /// to the lowest index.
    pub fn thompson_select(&self, rng: &mut impl RngCore) -> Result<usize, EmptyPool> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let draw = Beta::new(e.alpha, e.beta).expect("positive Beta parameters").sample(rng);
            if best.is_none_or(|(_, b)| draw > b) {
                best = Some((i, draw));
            }
        }
        best.map(|(i, _)| i).ok_or(EmptyPool)
    }

    /// Posterior update after a round that used entry `i` as its seed.
    pub fn update(&mut self, i: usize, child_crashed: bool, child_reward: f64) {
        let success = !child_crashed && self.median_reward().is_some_and(|m| child_reward >= m);
        let e = &mut self.entries[i];
        if success {
            e.alpha += 1.0;
        } else {
            e.beta += 1.0;
        }
    }
}
