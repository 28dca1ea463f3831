//! Fixed-length state featurization of a graph.

use crate::graph::{Graph, OpKind};
use crate::metrics::Diversity;

/// Per-op counts plus nine scalar summaries.
pub const FEATURE_DIM: usize = OpKind::ALL.len() + 9;

/// Campaign context that is not a function of the graph alone.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateContext {
    pub diversity: Option<Diversity>,
    pub rounds_since_seed: usize,
    /// Mean |activation| over the model's last trace.
    pub mean_abs_activation: Option<f64>,
}

pub type Features = [f64; FEATURE_DIM];

/// `ln(1 + m) / ln(1 + 1e30)`, clamped into [0, 1].
fn activation_bucket(m: Option<f64>) -> f64 {
    match m {
        Some(m) if m.is_finite() => ((1.0 + m.abs()).ln() / (1.0f64 + 1e30).ln()).clamp(0.0, 1.0),
        Some(_) => 1.0,
        None => 0.0,
    }
}

pub fn featurize(g: &Graph, ctx: &StateContext) -> Features {
    let mut f = [0.0; FEATURE_DIM];
    let total = g.len().max(1) as f64;
    for n in g.nodes() {
        f[n.op.index()] += 1.0 / total;
    }
    let width = g.consumers().iter().map(Vec::len).max().unwrap_or(0);
    let floats = g.nodes().iter().filter(|n| n.dtype.is_float()).count();
    let d = ctx.diversity.unwrap_or(Diversity { lic: 0.0, lpc: 0.0, lsc: 0.0 });
    let tail = [
        g.depth() as f64 / 64.0,
        width as f64 / 16.0,
        g.len() as f64 / 256.0,
        d.lic,
        d.lpc,
        d.lsc,
        ctx.rounds_since_seed as f64 / 100.0,
        floats as f64 / total,
        activation_bucket(ctx.mean_abs_activation),
    ];
    f[OpKind::ALL.len()..].copy_from_slice(&tail);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::seeds::seed_library;

    #[test]
    fn finite_and_op_fractions_sum_to_one() {
        for g in seed_library() {
            let f = featurize(&g, &StateContext { mean_abs_activation: Some(1e40), ..Default::default() });
            assert!(f.iter().all(|x| x.is_finite()));
            let ops: f64 = f[..OpKind::ALL.len()].iter().sum();
            assert!((ops - 1.0).abs() < 1e-12);
            assert_eq!(f[FEATURE_DIM - 1], 1.0);
        }
    }

    #[test]
    fn dimension() {
        assert_eq!(FEATURE_DIM, 35);
    }
}
