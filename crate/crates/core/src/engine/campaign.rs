use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CampaignConfig, ConfigError};
use crate::backend::{Backend, ExecutionError, ExecutionTrace, Feeds, Interpreter};
use crate::feeds::{feed_sets, FeedSet};
use crate::graph::seeds::seed_by_label;
use crate::graph::{validate, Graph, NodeId};
use crate::guidance::{
    featurize, select_exact_imr, select_imr, select_insert, select_smr, EpsilonSchedule, ModelStats, QuantileValueFn, ReplayEntry,
    ReplayPool, StateContext, Transition,
};
use crate::lineage::{graph_digest, Lineage, ReplayError};
use crate::metrics::{cal_diversity, write_csv, DiversityLedger, MetricRow, CRASH_REWARD};
use crate::oracle::{
    classify_crash, detect_accuracy, detect_efficiency, detect_nan_propagation, detect_resource, trace_is_finite,
    BugKind, BugReport, CrashClass, Finding, Thresholds, BLOWUP_MAGNITUDE,
};
use crate::par::Parallelism;
use crate::rewrite::{transform_within, EquivalenceClass, ImrKind, InsertKind, RewriteOptions, RewriteStatus, SmrKind};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("checkpoint does not match the config: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RoundOutcome {
    Retained,
    Crash,
    Invalid { reason: String },
}

/// Where the next round's seed came from after a reselection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reselection {
    /// Thompson draw over the replay pool; the value is the pool index.
    Pool(usize),
    /// The pool was empty; back to the original seed model.
    Seed,
}

/// One round of the generation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub smr: SmrKind,
    /// The interface relation drawn for the round (it may not have applied).
    pub imr: ImrKind,
    pub insert: InsertKind,
    #[serde(flatten)]
    pub outcome: RoundOutcome,
    pub reward: f64,
    pub epsilon: f64,
    pub reselected: Option<Reselection>,
    /// Lineage of the generated model.
    pub lineage: Lineage,
    /// Digest of the generated model; absent when the rewrite itself failed.
    pub digest: Option<String>,
}

/// The model the next round rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentModel {
    pub lineage: Lineage,
    pub stats: ModelStats,
    pub rounds_since_seed: usize,
}

/// Serializable campaign state: the guidance checkpoint. Graphs are rebuilt
/// from lineages on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub round: usize,
    pub rng: ChaCha8Rng,
    pub q: QuantileValueFn,
    pub target: QuantileValueFn,
    pub schedule: EpsilonSchedule,
    pub pool: ReplayPool,
    pub ledger: DiversityLedger,
    pub current: CurrentModel,
    /// Pool entry whose posterior is updated after the next round.
    pub pending_thompson: Option<usize>,
    pub metrics: Vec<MetricRow>,
    pub rounds: Vec<RoundRecord>,
    pub crash_reports: Vec<BugReport>,
}

/// What `campaign replay` reads back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub config: CampaignConfig,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub bugs: Vec<BugReport>,
    pub checkpoint: CampaignState,
}

impl CampaignResult {
    pub fn metrics(&self) -> &[MetricRow] {
        &self.checkpoint.metrics
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.checkpoint.rounds
    }

    pub fn pool(&self) -> &ReplayPool {
        &self.checkpoint.pool
    }

    pub fn ledger(&self) -> &DiversityLedger {
        &self.checkpoint.ledger
    }

    fn count(&self, f: impl Fn(&RoundOutcome) -> bool) -> usize {
        self.rounds().iter().filter(|r| f(&r.outcome)).count()
    }

    pub fn retained(&self) -> usize {
        self.count(|o| *o == RoundOutcome::Retained)
    }

    pub fn crashed(&self) -> usize {
        self.count(|o| *o == RoundOutcome::Crash)
    }

    pub fn invalid(&self) -> usize {
        self.count(|o| matches!(o, RoundOutcome::Invalid { .. }))
    }

    pub fn bugs_of(&self, kind: BugKind) -> impl Iterator<Item = &BugReport> {
        self.bugs.iter().filter(move |b| b.kind == kind)
    }

    /// Bug reports with wall-clock evidence cleared.
    pub fn canonical_bugs(&self) -> Vec<BugReport> {
        self.bugs.iter().map(BugReport::canonical).collect()
    }

    pub fn lineage_record(&self) -> ModelRecord {
        ModelRecord { config: self.config.clone(), rounds: self.checkpoint.rounds.clone() }
    }

    /// Writes `bugs.jsonl`, `metrics.csv`, `checkpoint.json` and `lineage.json`.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut bugs = io::BufWriter::new(fs::File::create(dir.join("bugs.jsonl"))?);
        for b in &self.bugs {
            serde_json::to_writer(&mut bugs, b)?;
            bugs.write_all(b"\n")?;
        }
        bugs.flush()?;
        write_csv(self.metrics(), fs::File::create(dir.join("metrics.csv"))?).map_err(io::Error::other)?;
        fs::write(dir.join("checkpoint.json"), serde_json::to_vec_pretty(&self.checkpoint)?)?;
        fs::write(dir.join("lineage.json"), serde_json::to_vec_pretty(&self.lineage_record())?)?;
        Ok(())
    }
}

/// Result of executing a candidate model on every feed.
enum Verdict {
    Pass(ModelStats, Vec<ExecutionTrace>),
    Failed(ExecutionError),
    Malformed(String),
    BlownUp(f64),
}

/// Fixed per-campaign execution context shared by the loop, the sweep and replay.
struct Context {
    backend: Interpreter,
    seed: Graph,
    feeds: Vec<FeedSet>,
    baseline: Vec<Result<ExecutionTrace, ExecutionError>>,
    thresholds: Thresholds,
}

fn remap_feeds(feeds: &Feeds, map: &[NodeId]) -> Feeds {
    feeds.iter().map(|(&i, t)| (map[i], t.clone())).collect()
}

impl Context {
    fn new(config: &CampaignConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let seed = seed_by_label(&config.seed_model).ok_or_else(|| ConfigError::UnknownSeed(config.seed_model.clone()))?;
        let mut feed_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        feed_rng.set_stream(1);
        let feeds = feed_sets(&seed, &config.feeds, &mut feed_rng);
        let mut ctx = Self {
            backend: config.backend.instantiate(),
            thresholds: config.thresholds_for(&config.seed_model).clone(),
            seed,
            feeds,
            baseline: Vec::new(),
        };
        let identity: Vec<NodeId> = (0..ctx.seed.len()).collect();
        ctx.baseline = ctx.feeds.iter().map(|f| ctx.run(&ctx.seed, &identity, f)).collect();
        Ok(ctx)
    }

    fn run(&self, g: &Graph, map: &[NodeId], f: &FeedSet) -> Result<ExecutionTrace, ExecutionError> {
        self.backend.execute_training_step(g, &remap_feeds(&f.feeds, map), f.labels.as_ref())
    }

    /// Validation, one training step per feed, and the magnitude guard.
    fn judge(&self, g: &Graph, map: &[NodeId]) -> Verdict {
        if let Err(e) = validate(g) {
            return Verdict::Malformed(e.to_string());
        }
        let mut max_abs: f64 = 0.0;
        let mut mean_abs = None;
        let mut traces = Vec::with_capacity(self.feeds.len());
        for f in &self.feeds {
            let t = match self.run(g, map, f) {
                Ok(t) => t,
                Err(e) => return Verdict::Failed(e),
            };
            max_abs = max_abs.max(t.max_abs_activation());
            if mean_abs.is_none() {
                let (sum, n) = t
                    .outputs
                    .iter()
                    .flat_map(|o| o.data.iter())
                    .filter(|x| x.is_finite())
                    .fold((0.0, 0usize), |(s, n), x| (s + x.abs(), n + 1));
                mean_abs = Some(if n == 0 { 0.0 } else { sum / n as f64 });
            }
            traces.push(t);
        }
        if max_abs.is_nan() || max_abs > BLOWUP_MAGNITUDE {
            return Verdict::BlownUp(max_abs);
        }
        Verdict::Pass(ModelStats { diversity: None, mean_abs, max_abs: Some(max_abs) }, traces)
    }

    /// All oracles for one generated model, given its trace per feed.
    fn oracles<'a>(
        &self,
        g: &Graph,
        map: &[NodeId],
        lineage: &Lineage,
        traces: impl IntoIterator<Item = (usize, &'a ExecutionTrace)>,
    ) -> Vec<Finding> {
        let class = if lineage.steps.iter().any(|s| s.imr.is_some_and(|i| i.class() == EquivalenceClass::Approx)) {
            EquivalenceClass::Approx
        } else {
            EquivalenceClass::Exact
        };
        let th = &self.thresholds;
        let mut found: Vec<Finding> = Vec::new();
        let push = |f: Finding, found: &mut Vec<Finding>| {
            if !found.iter().any(|x| x.evidence.check() == f.evidence.check()) {
                found.push(f);
            }
        };
        for (k, t) in traces {
            if let Some(x) = detect_nan_propagation(g, t, k) {
                push(x, &mut found);
            }
            let Ok(b) = &self.baseline[k] else { continue };
            if trace_is_finite(b) {
                if let Ok(xs) = detect_accuracy(&self.seed, b, t, map, class, k, th) {
                    xs.into_iter().for_each(|x| push(x, &mut found));
                }
            }
            for x in detect_resource(&self.seed, g, b, t, th) {
                push(x, &mut found);
            }
            if let Some(x) = detect_efficiency(&self.seed, g, b, t, th) {
                push(x, &mut found);
            }
        }
        found
    }

    /// Executes the model on every feed and runs the oracles.
    fn detect(&self, g: &Graph, map: &[NodeId], lineage: &Lineage) -> Vec<Finding> {
        let traces: Vec<(usize, ExecutionTrace)> =
            self.feeds.iter().enumerate().filter_map(|(k, f)| Some((k, self.run(g, map, f).ok()?))).collect();
        self.oracles(g, map, lineage, traces.iter().map(|(k, t)| (*k, t)))
    }

    fn stats_of(&self, g: &Graph, map: &[NodeId]) -> ModelStats {
        match self.judge(g, map) {
            Verdict::Pass(s, _) => s,
            Verdict::BlownUp(m) => ModelStats { max_abs: Some(m), ..ModelStats::default() },
            _ => ModelStats::default(),
        }
    }
}

/// A running campaign: the Algorithm-1 state machine.
pub struct Campaign {
    config: CampaignConfig,
    ctx: Context,
    graph: Graph,
    map: Vec<NodeId>,
    state: CampaignState,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self, CampaignError> {
        let ctx = Context::new(&config)?;
        let identity: Vec<NodeId> = (0..ctx.seed.len()).collect();
        let mut stats = ctx.stats_of(&ctx.seed, &identity);
        stats.diversity = Some(cal_diversity(&ctx.seed, &mut DiversityLedger::new()));
        let q = QuantileValueFn::zeros(config.learning_rate);
        let state = CampaignState {
            round: 0,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            target: q.clone(),
            q,
            schedule: config.epsilon,
            pool: ReplayPool::default(),
            ledger: DiversityLedger::new(),
            current: CurrentModel {
                lineage: Lineage::new(config.seed_model.clone(), config.anchor_count),
                stats,
                rounds_since_seed: 0,
            },
            pending_thompson: None,
            metrics: Vec::new(),
            rounds: Vec::new(),
            crash_reports: Vec::new(),
        };
        Ok(Self { graph: ctx.seed.clone(), map: identity, ctx, config, state })
    }

    /// Continues a campaign from a checkpoint taken with the same config.
    pub fn resume(config: CampaignConfig, mut state: CampaignState) -> Result<Self, CampaignError> {
        let ctx = Context::new(&config)?;
        if state.current.lineage.seed != config.seed_model {
            return Err(CampaignError::Checkpoint(format!(
                "checkpoint seed `{}` but config seed `{}`",
                state.current.lineage.seed, config.seed_model
            )));
        }
        for e in &mut state.pool.entries {
            let (g, map) = e.lineage.replay()?;
            e.graph = Some(g);
            e.seed_map = map;
        }
        let (graph, map) = state.current.lineage.replay()?;
        Ok(Self { config, ctx, graph, map, state })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn current_graph(&self) -> &Graph {
        &self.graph
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    fn reselect(&mut self) -> Reselection {
        let s = &mut self.state;
        match s.pool.thompson_select(&mut s.rng) {
            Ok(i) => {
                let e = &s.pool.entries[i];
                self.graph = e.graph.clone().expect("pool graphs are materialized");
                self.map = e.seed_map.clone();
                s.current = CurrentModel { lineage: e.lineage.clone(), stats: e.stats, rounds_since_seed: 0 };
                s.pending_thompson = Some(i);
                Reselection::Pool(i)
            }
            Err(_) => {
                self.graph = self.ctx.seed.clone();
                self.map = (0..self.graph.len()).collect();
                let mut stats = self.ctx.stats_of(&self.graph, &self.map);
                stats.diversity = Some(cal_diversity(&self.graph, &mut DiversityLedger::new()));
                s.current = CurrentModel {
                    lineage: Lineage::new(self.config.seed_model.clone(), self.config.anchor_count),
                    stats,
                    rounds_since_seed: 0,
                };
                s.pending_thompson = None;
                Reselection::Seed
            }
        }
    }

    /// Runs one round of the generation loop.
    pub fn run_round(&mut self) -> &RoundRecord {
        let round = self.state.round + 1;
        let opts = RewriteOptions { anchor_count: self.config.anchor_count };
        let cur = self.state.current.clone();
        let ctx = StateContext {
            diversity: cur.stats.diversity,
            rounds_since_seed: cur.rounds_since_seed,
            mean_abs_activation: cur.stats.mean_abs,
        };
        let phi = featurize(&self.graph, &ctx);
        let s = &mut self.state;
        let smr = select_smr(&phi, &s.q, &s.schedule, &mut s.rng);
        let insert = select_insert(&mut s.rng);
        let imr = if self.config.exact_mrs_only { select_exact_imr(&mut s.rng) } else { select_imr(&mut s.rng) };
        let step_seed: u64 = s.rng.random();
        let out = transform_within(&self.graph, Some(&self.map), smr, Some(imr), insert, step_seed, &opts);
        let lineage = cur.lineage.child(&out, step_seed);
        let child_map: Vec<NodeId> = self.map.iter().map(|&i| out.layer_map[i]).collect();

        let verdict = match &out.status {
            RewriteStatus::Crash(e) => Verdict::Failed(e.clone()),
            RewriteStatus::Ok => self.ctx.judge(&out.graph, &child_map),
        };
        let rewritten = matches!(out.status, RewriteStatus::Ok);
        let (outcome, stats) = match verdict {
            Verdict::Pass(stats, traces) => {
                let findings = self.ctx.oracles(&out.graph, &child_map, &lineage, traces.iter().enumerate());
                (RoundOutcome::Retained, Some((stats, findings)))
            }
            Verdict::Malformed(reason) => (RoundOutcome::Invalid { reason }, None),
            Verdict::BlownUp(m) => (RoundOutcome::Invalid { reason: format!("activation magnitude {m:e}") }, None),
            Verdict::Failed(err) => match classify_crash(&err, &out.graph, cur.stats.max_abs) {
                CrashClass::Invalid(reason) => (RoundOutcome::Invalid { reason }, None),
                CrashClass::Bug(f) => {
                    let report = f.into_report(self.config.backend, round, &lineage);
                    self.state.crash_reports.push(report);
                    (RoundOutcome::Crash, None)
                }
            },
        };

        let s = &mut self.state;
        let done = stats.is_none();
        let mut reselected = None;
        let (reward, next_ctx) = match stats {
            Some((mut stats, findings)) => {
                let d = cal_diversity(&out.graph, &mut s.ledger);
                stats.diversity = Some(d);
                let reward = d.reward();
                let below_median = s.pool.median_reward().is_some_and(|m| reward < m);
                if let Some(i) = s.pending_thompson.take() {
                    s.pool.update(i, false, reward);
                }
                s.pool.add(ReplayEntry::new(out.graph.clone(), round, reward, lineage.clone(), child_map.clone()).with_stats(stats).with_findings(findings));
                s.metrics.push(MetricRow::scored(round, d));
                s.current = CurrentModel { lineage: lineage.clone(), stats, rounds_since_seed: cur.rounds_since_seed + 1 };
                let next = StateContext {
                    diversity: Some(d),
                    rounds_since_seed: cur.rounds_since_seed + 1,
                    mean_abs_activation: stats.mean_abs,
                };
                self.graph = out.graph.clone();
                self.map = child_map;
                if self.config.reselect_on_low_reward && below_median {
                    reselected = Some(self.reselect());
                }
                (reward, next)
            }
            None => {
                if let Some(i) = s.pending_thompson.take() {
                    s.pool.update(i, true, CRASH_REWARD);
                }
                s.metrics.push(MetricRow::crashed(round));
                reselected = Some(self.reselect());
                (CRASH_REWARD, ctx)
            }
        };

        let s = &mut self.state;
        let transition = Transition {
            state: phi,
            action: smr.index(),
            reward,
            next_state: featurize(&out.graph, &next_ctx),
            done,
        };
        s.q.update(&s.target, &transition, self.config.gamma, self.config.on_action_target);
        s.target.sync_from(&s.q);
        let epsilon = s.schedule.epsilon;
        s.schedule.step();
        s.round = round;
        s.rounds.push(RoundRecord {
            round,
            smr,
            imr,
            insert,
            outcome,
            reward,
            epsilon,
            reselected,
            digest: rewritten.then(|| graph_digest(&out.graph)),
            lineage,
        });
        s.rounds.last().expect("just pushed")
    }

    /// Re-executes every retained model and runs the oracles against the
    /// seed's traces. Gives the same reports as [`Campaign::finish`], which
    /// reuses the findings computed when each model was judged.
    pub fn detection_sweep(&self, parallelism: Parallelism) -> Vec<BugReport> {
        let backend = self.config.backend;
        let per_model = parallelism.map(&self.state.pool.entries, |e| {
            let g = e.graph.as_ref().expect("pool graphs are materialized");
            self.ctx
                .detect(g, &e.seed_map, &e.lineage)
                .into_iter()
                .map(|f| f.into_report(backend, e.round, &e.lineage))
                .collect::<Vec<_>>()
        });
        per_model.into_iter().flatten().collect()
    }

    /// Collects the bug list over every retained model, then the result.
    pub fn finish(self) -> CampaignResult {
        let backend = self.config.backend;
        let mut bugs: Vec<BugReport> = self.state.crash_reports.clone();
        for e in &self.state.pool.entries {
            bugs.extend(e.findings.iter().cloned().map(|f| f.into_report(backend, e.round, &e.lineage)));
        }
        bugs.sort_by_key(|b| b.round);
        CampaignResult { config: self.config, bugs, checkpoint: self.state }
    }

    /// Runs every remaining round and the sweep.
    pub fn run(mut self) -> CampaignResult {
        while !self.is_finished() {
            self.run_round();
        }
        self.finish()
    }
}

/// Regenerates the reports for the model named by `report`'s lineage. A
/// faithful replay contains `report` itself (compare with
/// [`BugReport::canonical`]).
pub fn replay_report(config: &CampaignConfig, report: &BugReport) -> Result<Vec<BugReport>, CampaignError> {
    let ctx = Context::new(config)?;
    let (g, map) = report.lineage.replay()?;
    let mut out = Vec::new();
    if report.kind == BugKind::Crash {
        let mut parent = report.lineage.clone();
        parent.steps.pop();
        let (pg, pmap) = parent.replay()?;
        let parent_stats = ctx.stats_of(&pg, &pmap);
        if let Verdict::Failed(err) = ctx.judge(&g, &map) {
            if let CrashClass::Bug(f) = classify_crash(&err, &g, parent_stats.max_abs) {
                out.push(f.into_report(config.backend, report.round, &report.lineage));
            }
        }
    } else {
        for f in ctx.detect(&g, &map, &report.lineage) {
            out.push(f.into_report(config.backend, report.round, &report.lineage));
        }
    }
    Ok(out)
}

/// Convenience used by tests and the CLI: validate, run and sweep.
pub fn run_campaign(config: CampaignConfig) -> Result<CampaignResult, CampaignError> {
    Ok(Campaign::new(config)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendId, FaultId};

    fn config(seed: &str, backend: BackendId, rounds: usize) -> CampaignConfig {
        let mut c = CampaignConfig::new(seed, backend, 11).with_rounds(rounds);
        c.parallelism = Parallelism::Sequential;
        c
    }

    #[test]
    fn one_round_from_mlp() {
        let r = run_campaign(config("mlp", BackendId::Reference, 1)).unwrap();
        assert_eq!(r.rounds().len(), 1);
        assert_eq!(r.retained(), 1);
        assert_eq!(r.pool().len(), 1);
        assert!(r.bugs.is_empty());
        assert_eq!(r.metrics().len(), 1);
    }

    #[test]
    fn rounds_are_conserved() {
        let r = run_campaign(config("cnn", BackendId::Reference, 25)).unwrap();
        assert_eq!(r.retained() + r.crashed() + r.invalid(), 25);
        assert_eq!(r.pool().len(), r.retained());
        assert_eq!(r.metrics().len(), 25);
        for (row, rec) in r.metrics().iter().zip(r.rounds()) {
            assert_eq!(row.round, rec.round);
            assert_eq!(row.reward, rec.reward);
            if rec.outcome != RoundOutcome::Retained {
                assert_eq!(rec.reward, CRASH_REWARD);
                assert!(rec.reselected.is_some());
            }
        }
    }

    #[test]
    fn m7_crashes_and_falls_back_to_the_seed() {
        let r = run_campaign(config("slice_concat", BackendId::Mutant(FaultId::M7), 5)).unwrap();
        let first = &r.rounds()[0];
        assert_eq!(first.outcome, RoundOutcome::Crash);
        assert_eq!(first.reward, -1.0);
        assert_eq!(first.reselected, Some(Reselection::Seed));
        assert!(r.bugs_of(BugKind::Crash).count() >= 1);
    }

    #[test]
    fn equal_seeds_give_equal_results() {
        let a = run_campaign(config("transpose_reshape", BackendId::Mutant(FaultId::M4), 12)).unwrap();
        let b = run_campaign(config("transpose_reshape", BackendId::Mutant(FaultId::M4), 12)).unwrap();
        assert_eq!(a.canonical_bugs(), b.canonical_bugs());
        assert_eq!(a.checkpoint.rounds, b.checkpoint.rounds);
        assert_eq!(a.checkpoint.q, b.checkpoint.q);
        assert_eq!(a.checkpoint.metrics, b.checkpoint.metrics);
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let full = run_campaign(config("mlp", BackendId::Mutant(FaultId::M5), 10)).unwrap();
        let mut c = Campaign::new(config("mlp", BackendId::Mutant(FaultId::M5), 10)).unwrap();
        for _ in 0..4 {
            c.run_round();
        }
        let json = serde_json::to_string(c.state()).unwrap();
        let state: CampaignState = serde_json::from_str(&json).unwrap();
        let resumed = Campaign::resume(config("mlp", BackendId::Mutant(FaultId::M5), 10), state).unwrap().run();
        assert_eq!(resumed.checkpoint.rounds, full.checkpoint.rounds);
        assert_eq!(resumed.checkpoint.q, full.checkpoint.q);
        assert_eq!(resumed.canonical_bugs(), full.canonical_bugs());
    }

    #[test]
    fn resume_rejects_another_seed() {
        let c = Campaign::new(config("mlp", BackendId::Reference, 3)).unwrap();
        let state = c.state().clone();
        assert!(matches!(
            Campaign::resume(config("cnn", BackendId::Reference, 3), state),
            Err(CampaignError::Checkpoint(_))
        ));
    }

    #[test]
    fn cached_findings_match_the_sweep() {
        let mut c = Campaign::new(config("mlp", BackendId::Mutant(FaultId::M5), 8)).unwrap();
        while !c.is_finished() {
            c.run_round();
        }
        let mut swept = c.detection_sweep(Parallelism::Sequential);
        assert_eq!(swept, c.detection_sweep(Parallelism::Rayon));
        let r = c.finish();
        let mut cached: Vec<BugReport> = r.bugs.iter().filter(|b| b.kind != BugKind::Crash).cloned().collect();
        swept.iter_mut().chain(cached.iter_mut()).for_each(|b| *b = b.canonical());
        swept.sort_by_key(|b| b.round);
        assert!(!cached.is_empty());
        assert_eq!(swept, cached);
    }

    #[test]
    fn reports_replay() {
        let cfg = config("mlp", BackendId::Mutant(FaultId::M3), 10);
        let r = run_campaign(cfg.clone()).unwrap();
        assert!(!r.bugs.is_empty());
        for b in &r.bugs {
            let again = replay_report(&cfg, b).unwrap();
            assert!(again.iter().any(|x| x.canonical() == b.canonical()), "{b:?}");
        }
    }

    #[test]
    fn writes_all_outputs() {
        let dir = std::env::temp_dir().join(format!("graphmeta-campaign-{}", std::process::id()));
        let r = run_campaign(config("mlp", BackendId::Mutant(FaultId::M5), 3)).unwrap();
        r.write_to_dir(&dir).unwrap();
        for f in ["bugs.jsonl", "metrics.csv", "checkpoint.json", "lineage.json"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(csv.starts_with("round,lic,lpc,lsc,reward"));
        let record: ModelRecord = serde_json::from_str(&fs::read_to_string(dir.join("lineage.json")).unwrap()).unwrap();
        assert_eq!(record.rounds, r.checkpoint.rounds);
        fs::remove_dir_all(dir).unwrap();
    }
}
