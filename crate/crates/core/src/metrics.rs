//! Diversity metrics (LIC, LPC, LSC) and the reward built from them.

use std::collections::BTreeSet;
use std::io;

use serde::{Deserialize, Serialize};

use crate::graph::signature::{edge_pairs, signatures, EdgePair, LayerSignature};
use crate::graph::{DType, Graph, Shape, MAX_RANK};

/// Size of the dtype universe.
pub const N_TYPE: usize = DType::ALL.len();
/// Ranks 0 through `MAX_RANK`.
pub const N_DIM: usize = MAX_RANK + 1;
/// Shape buckets.
pub const N_SHAPE: usize = 16;
/// Denominator of LIC.
pub const LIC_DENOMINATOR: usize = N_TYPE + N_DIM + N_SHAPE;

/// Reward assigned to a crashed or invalid round.
pub const CRASH_REWARD: f64 = -1.0;

/// Bucket of a shape: numel class (`<=1`, `2-16`, `17-256`, `257-4096`,
/// `>4096`) x rank class (`<=2`, `>2`) x has-unit-dim, capped at 15.
pub fn shape_bucket(shape: &Shape) -> usize {
    let numel_class = match shape.numel() {
        0..=1 => 0,
        2..=16 => 1,
        17..=256 => 2,
        257..=4096 => 3,
        _ => 4,
    };
    let rank_class = usize::from(shape.rank() > 2);
    let raw = numel_class * 4 + rank_class * 2 + usize::from(shape.has_unit_dim());
    raw.min(N_SHAPE - 1)
}

/// Distinct dtypes, ranks and shape buckets among the inputs of internal nodes.
pub fn lic_counts(g: &Graph) -> (usize, usize, usize) {
    let mut types = BTreeSet::new();
    let mut ranks = BTreeSet::new();
    let mut buckets = BTreeSet::new();
    for n in g.nodes().iter().filter(|n| !n.op.is_leaf()) {
        for &i in &n.inputs {
            let input = g.node(i);
            types.insert(input.dtype);
            ranks.insert(input.shape.rank());
            buckets.insert(shape_bucket(&input.shape));
        }
    }
    (types.len(), ranks.len(), buckets.len())
}

pub fn lic_from_counts(n_type: usize, n_dim: usize, n_shape: usize) -> f64 {
    (n_type + n_dim + n_shape) as f64 / LIC_DENOMINATOR as f64
}

pub fn lic(g: &Graph) -> f64 {
    let (t, d, s) = lic_counts(g);
    lic_from_counts(t, d, s)
}

/// Campaign-wide history of layer signatures and edge pairs. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityLedger {
    pub all_signatures: BTreeSet<LayerSignature>,
    pub all_edge_pairs: BTreeSet<EdgePair>,
}

impl DiversityLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the model's signatures and edge pairs to the history.
    pub fn record(&mut self, g: &Graph) {
        self.all_signatures.extend(signatures(g));
        self.all_edge_pairs.extend(edge_pairs(g));
    }

    /// `N_ut`.
    pub fn n_ut(&self) -> usize {
        self.all_signatures.len()
    }

    /// `AP_sum`.
    pub fn ap_sum(&self) -> usize {
        self.all_edge_pairs.len()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `n_ut / N_ut`. Call after the ledger has recorded `g`.
pub fn lpc(g: &Graph, ledger: &DiversityLedger) -> f64 {
    ratio(signatures(g).len(), ledger.n_ut())
}

/// `AP_cur / AP_sum`. Call after the ledger has recorded `g`.
pub fn lsc(g: &Graph, ledger: &DiversityLedger) -> f64 {
    ratio(edge_pairs(g).len(), ledger.ap_sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub lic: f64,
    pub lpc: f64,
    pub lsc: f64,
}

impl Diversity {
    /// Arithmetic mean of the three metrics.
    pub fn reward(&self) -> f64 {
        (self.lic + self.lpc + self.lsc) / 3.0
    }
}

/// Records `g` in the ledger, then scores it.
pub fn cal_diversity(g: &Graph, ledger: &mut DiversityLedger) -> Diversity {
    ledger.record(g);
    score(g, ledger)
}

/// Scores `g` against the ledger without recording it.
pub fn score(g: &Graph, ledger: &DiversityLedger) -> Diversity {
    Diversity { lic: lic(g), lpc: lpc(g, ledger), lsc: lsc(g, ledger) }
}

/// One row of the metric time series. Metric columns are empty for crashed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub lic: Option<f64>,
    pub lpc: Option<f64>,
    pub lsc: Option<f64>,
    pub reward: f64,
}

impl MetricRow {
    pub fn scored(round: usize, d: Diversity) -> Self {
        Self { round, lic: Some(d.lic), lpc: Some(d.lpc), lsc: Some(d.lsc), reward: d.reward() }
    }

    pub fn crashed(round: usize) -> Self {
        Self { round, lic: None, lpc: None, lsc: None, reward: CRASH_REWARD }
    }
}

/// Writes `round,lic,lpc,lsc,reward` with a header line.
pub fn write_csv(rows: &[MetricRow], out: impl io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl io::Read) -> csv::Result<Vec<MetricRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{attrs, ints, GraphBuilder, OpKind};

    fn relu_chain(shape: &[usize], depth: usize) -> Graph {
        let mut b = GraphBuilder::new("chain");
        let mut x = b.input(DType::F32, shape.to_vec());
        for _ in 0..depth {
            x = b.unary(OpKind::ReLU, x).unwrap();
        }
        b.output(x);
        b.finish().unwrap()
    }

    #[test]
    fn buckets() {
        assert_eq!(shape_bucket(&Shape::from([1])), 1);
        assert_eq!(shape_bucket(&Shape::from([2, 3])), 4);
        assert_eq!(shape_bucket(&Shape::from([1, 2, 8])), 7);
        assert_eq!(shape_bucket(&Shape::from([16, 16])), 8);
        assert_eq!(shape_bucket(&Shape::from([8, 8, 8])), 14);
        assert_eq!(shape_bucket(&Shape::from([2, 2, 2, 1000])), 15);
        assert_eq!(shape_bucket(&Shape::from([5000])), 15);
        assert_eq!(shape_bucket(&Shape::scalar()), 0);
    }

    #[test]
    fn single_kind_inputs_give_three_of_27() {
        let g = relu_chain(&[2, 3], 3);
        assert_eq!(lic_counts(&g), (1, 1, 1));
        assert!((lic(&g) - 3.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn lic_formula() {
        assert!((lic_from_counts(2, 1, 3) - 0.2222222222222222).abs() < 1e-15);
        assert_eq!(lic_from_counts(N_TYPE, N_DIM, N_SHAPE), 1.0);
    }

    #[test]
    fn first_model_has_full_lpc_and_lsc() {
        let mut ledger = DiversityLedger::new();
        let g = relu_chain(&[4], 2);
        let d = cal_diversity(&g, &mut ledger);
        assert_eq!((d.lpc, d.lsc), (1.0, 1.0));
        assert_eq!(d.reward(), (d.lic + 2.0) / 3.0);
    }

    #[test]
    fn ledger_grows_monotonically_and_dedups() {
        let mut ledger = DiversityLedger::new();
        let g = relu_chain(&[4], 5);
        cal_diversity(&g, &mut ledger);
        assert_eq!(ledger.n_ut(), 1);
        assert_eq!(ledger.ap_sum(), 1);

        let mut b = GraphBuilder::new("other");
        let x = b.input(DType::F32, [2, 3]);
        let t = b.op(OpKind::Transpose, &[x], attrs([("perm", ints(&[1, 0]))])).unwrap();
        let r = b.unary(OpKind::ReLU, t).unwrap();
        let s = b.unary(OpKind::Tanh, r).unwrap();
        b.output(s);
        let other = b.finish().unwrap();
        let d = cal_diversity(&other, &mut ledger);
        assert_eq!(ledger.n_ut(), 3);
        assert_eq!(ledger.ap_sum(), 3);
        assert!((d.lpc - 1.0).abs() < 1e-15);
        assert!((d.lsc - 2.0 / 3.0).abs() < 1e-15);
        let before = ledger.clone();
        ledger.record(&g);
        assert_eq!(before, ledger);
        assert!((score(&g, &ledger).lpc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reward_is_the_mean() {
        let d = Diversity { lic: 0.3, lpc: 0.6, lsc: 0.9 };
        assert!((d.reward() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow::scored(1, Diversity { lic: 0.25, lpc: 1.0, lsc: 0.5 }),
            MetricRow::crashed(2),
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,lic,lpc,lsc,reward\n"));
        assert!(text.contains("2,,,,-1.0"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
