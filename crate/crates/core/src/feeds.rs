//! Random input batches for evaluating a graph.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::Feeds;
use crate::graph::{DType, Graph};
use crate::tensor::TensorValue;

/// How evaluation inputs are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedSpec {
    /// Input batches per evaluation.
    pub count: usize,
    /// Standard deviation of the normal draws.
    pub std: f64,
    /// Plant one NaN at a random position of every float input.
    pub nan_inputs: bool,
}

impl Default for FeedSpec {
    fn default() -> Self {
        Self { count: 3, std: 1.0, nan_inputs: false }
    }
}

/// One evaluation input: feeds plus optional class labels for the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedSet {
    pub feeds: Feeds,
    pub labels: Option<TensorValue>,
}

/// Normal draws for float inputs, small integers for `I32` and coin flips for `Bool`.
pub fn random_feeds(g: &Graph, spec: &FeedSpec, rng: &mut impl RngCore) -> Feeds {
    let mut feeds = Feeds::new();
    for &i in g.inputs() {
        let node = g.node(i);
        let n = node.shape.numel();
        let mut data: Vec<f64> = match node.dtype {
            DType::I32 => (0..n).map(|_| rng.random_range(-8..=8) as f64).collect(),
            DType::Bool => (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect(),
            _ => (0..n).map(|_| spec.std * rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        if spec.nan_inputs && node.dtype.is_float() && n > 0 {
            data[rng.random_range(0..n)] = f64::NAN;
        }
        let t = TensorValue::new(node.dtype, node.shape.clone(), data).expect("length matches shape");
        feeds.insert(i, t);
    }
    feeds
}

/// Class labels when the first output looks like logits (`[batch, classes]`).
pub fn random_labels(g: &Graph, rng: &mut impl RngCore) -> Option<TensorValue> {
    let out = g.node(*g.outputs().first()?);
    match (out.dtype.is_float(), out.shape.dims()) {
        (true, &[n, k]) if k > 0 => {
            let data = (0..n).map(|_| rng.random_range(0..k) as f64).collect();
            Some(TensorValue::new(DType::I32, [n], data).expect("length matches shape"))
        }
        _ => None,
    }
}

/// `spec.count` feed sets for `g`.
pub fn feed_sets(g: &Graph, spec: &FeedSpec, rng: &mut impl RngCore) -> Vec<FeedSet> {
    (0..spec.count).map(|_| FeedSet { feeds: random_feeds(g, spec, rng), labels: random_labels(g, rng) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::seeds::seed_by_label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cnn_feeds_and_labels() {
        let g = seed_by_label("cnn").unwrap();
        let sets = feed_sets(&g, &FeedSpec::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(sets.len(), 3);
        let labels = sets[0].labels.as_ref().unwrap();
        assert_eq!(labels.shape.dims(), &[2]);
        assert!(labels.data.iter().all(|&c| (0.0..5.0).contains(&c)));
        assert!(sets.iter().all(|s| s.feeds.values().all(TensorValue::is_finite)));
    }

    #[test]
    fn nan_inputs_plant_one_nan() {
        let g = seed_by_label("mlp").unwrap();
        let spec = FeedSpec { nan_inputs: true, ..FeedSpec::default() };
        let f = random_feeds(&g, &spec, &mut ChaCha8Rng::seed_from_u64(2));
        let nans: usize = f.values().map(|t| t.data.iter().filter(|x| x.is_nan()).count()).sum();
        assert_eq!(nans, g.inputs().len());
    }
}
