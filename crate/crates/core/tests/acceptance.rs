//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use graphmeta::backend::{finite_difference_grad, Backend, BackendId, ExecutionTrace, FaultId, Feeds, Interpreter};
use graphmeta::engine::{
    replay_report, run_campaign, run_validation_suite, CampaignConfig, RoundOutcome, ValidationOptions,
};
use graphmeta::feeds::{feed_sets, FeedSet, FeedSpec};
use graphmeta::graph::seeds::{seed_by_label, SEED_LABELS};
use graphmeta::graph::{attrs, ints, DType, Graph, GraphBuilder, NodeId, OpKind};
use graphmeta::guidance::{EpsilonSchedule, QuantileValueFn, ReplayEntry, ReplayPool, Transition, FEATURE_DIM};
use graphmeta::lineage::{graph_digest, Lineage};
use graphmeta::metrics::{cal_diversity, lic, lic_counts, Diversity, DiversityLedger, MetricRow, CRASH_REWARD};
use graphmeta::rewrite::{apply_imr, transform, EquivalenceClass, ImrKind, InsertKind, RewriteOptions, RewriteStatus, SmrKind};
use graphmeta::testing::{random_float_feeds, random_smooth_graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

type Rewritten = Option<(Graph, Vec<NodeId>)>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn remap(feeds: &Feeds, map: &[NodeId]) -> Feeds {
    feeds.iter().map(|(&i, t)| (map[i], t.clone())).collect()
}

fn train(g: &Graph, feeds: &Feeds, f: &FeedSet) -> ExecutionTrace {
    Interpreter::reference().execute_training_step(g, feeds, f.labels.as_ref()).expect("reference run")
}

/// Outputs, loss and the gradients of every leaf the two graphs share.
fn identical(g: &Graph, a: &ExecutionTrace, b: &ExecutionTrace, map: &[NodeId]) -> bool {
    let same_loss = match (a.loss, b.loss) {
        (Some(x), Some(y)) => x == y || (x.is_nan() && y.is_nan()),
        (x, y) => x.is_none() && y.is_none(),
    };
    let same_outputs = g.outputs().iter().all(|&o| a.outputs[o].same_values(&b.outputs[map[o]]));
    let same_grads = a.gradients.iter().all(|(&i, ga)| b.gradients.get(&map[i]).is_some_and(|gb| ga.same_values(gb)));
    same_loss && same_outputs && same_grads
}

fn mr_soundness() -> Outcome {
    const FEEDS: u64 = 10;
    let exact_imrs: Vec<ImrKind> = ImrKind::ALL.into_iter().filter(|k| k.class() == EquivalenceClass::Exact).collect();
    let (mut pairs, mut mismatches, mut not_applicable) = (0, 0, 0);
    let mut first_mismatch = None;
    for (s, label) in SEED_LABELS.iter().enumerate() {
        let seed = seed_by_label(label).expect("built-in seed");
        let feeds = feed_sets(&seed, &FeedSpec { count: FEEDS as usize, ..FeedSpec::default() }, &mut ChaCha8Rng::seed_from_u64(s as u64));
        for (k, f) in feeds.iter().enumerate() {
            let base = train(&seed, &f.feeds, f);
            let rewrite_seed = 1000 * s as u64 + k as u64;
            let mut candidates: Vec<(String, Rewritten)> = Vec::new();
            for (j, smr) in SmrKind::ALL.into_iter().enumerate() {
                let insert = InsertKind::ALL[(k + j) % InsertKind::ALL.len()];
                let out = transform(&seed, smr, None, insert, rewrite_seed, &RewriteOptions::default());
                let ok = out.status == RewriteStatus::Ok;
                candidates.push((format!("{smr:?}"), ok.then_some((out.graph, out.layer_map))));
            }
            for imr in &exact_imrs {
                let applied = apply_imr(&seed, *imr, &mut ChaCha8Rng::seed_from_u64(rewrite_seed)).ok();
                candidates.push((format!("{imr:?}"), applied));
            }
            for (name, c) in candidates {
                let Some((g, map)) = c else {
                    not_applicable += 1;
                    continue;
                };
                pairs += 1;
                let other = train(&g, &remap(&f.feeds, &map), f);
                if !identical(&seed, &base, &other, &map) {
                    mismatches += 1;
                    first_mismatch.get_or_insert(format!("{name} on {label} feed {k}"));
                }
            }
        }
    }
    let detail = format!(
        "{pairs} pairs, {mismatches} mismatches, {not_applicable} not applicable{}",
        first_mismatch.map(|m| format!(", first: {m}")).unwrap_or_default()
    );
    outcome(pairs >= 280 && mismatches == 0, detail)
}

fn planted_faults() -> Outcome {
    let summary = run_validation_suite(&ValidationOptions::default());
    let wrong_kind: Vec<String> = summary
        .faults
        .iter()
        .filter(|f| !f.kinds.contains(&f.case.expected))
        .map(|f| format!("{:?}", f.case.fault))
        .collect();
    let pass = summary.passed() && wrong_kind.is_empty();
    outcome(
        pass,
        format!(
            "{}/{} faults detected in every campaign, {} false positives, {:.1}% invalid reference rounds, {:.0} s",
            summary.faults_detected(),
            summary.faults.len(),
            summary.false_positives(),
            100.0 * summary.invalid_fraction(),
            summary.elapsed_secs
        ),
    )
}

fn gradient_oracle() -> Outcome {
    const POINTS: usize = 1000;
    const H: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let interp = Interpreter::reference();
    let mut worst: f64 = 0.0;
    for _ in 0..POINTS {
        let g = random_smooth_graph(&mut rng, 20);
        let feeds = random_float_feeds(&g, &mut rng);
        let t = interp.execute_training_step(&g, &feeds, None).expect("smooth graphs run");
        for (&leaf, analytic) in &t.gradients {
            let numeric = finite_difference_grad(&g, &feeds, None, leaf, H).expect("leaf");
            for (a, b) in analytic.data.iter().zip(&numeric.data) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
            }
        }
    }
    outcome(worst < 1e-4, format!("{POINTS} points, max rel-err {worst:.2e} (limit 1e-4)"))
}

fn metric_formulas() -> Outcome {
    let mut b = GraphBuilder::new("lic");
    let mut outs = Vec::new();
    for (dtype, shape) in [(DType::F32, vec![2, 3]), (DType::F32, vec![1, 3]), (DType::F64, vec![16, 16])] {
        let x = b.input(dtype, shape);
        outs.push(b.unary(OpKind::ReLU, x).expect("elementwise"));
    }
    for o in outs {
        b.output(o);
    }
    let g = b.finish().expect("valid graph");
    let mut checks = vec![
        ("lic counts", lic_counts(&g) == (2, 1, 3)),
        ("lic 6/27", (lic(&g) - 6.0 / 27.0).abs() < 1e-15),
    ];

    let chain = {
        let mut b = GraphBuilder::new("chain");
        let x = b.input(DType::F32, [4]);
        let r = b.unary(OpKind::ReLU, x).expect("elementwise");
        let t = b.unary(OpKind::Tanh, r).expect("elementwise");
        b.output(t);
        b.finish().expect("valid graph")
    };
    let other = {
        let mut b = GraphBuilder::new("other");
        let x = b.input(DType::F32, [2, 3]);
        let t = b.op(OpKind::Transpose, &[x], attrs([("perm", ints(&[1, 0]))])).expect("rank 2");
        let r = b.unary(OpKind::ReLU, t).expect("elementwise");
        let n = b.unary(OpKind::Neg, r).expect("elementwise");
        b.output(n);
        b.finish().expect("valid graph")
    };
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
    let mut ledger = DiversityLedger::new();
    let first = cal_diversity(&chain, &mut ledger);
    checks.push(("first model lpc = lsc = 1", first.lpc == 1.0 && first.lsc == 1.0));
    let second = cal_diversity(&other, &mut ledger);
    checks.push(("second model lpc 3/4", close(second.lpc, 0.75)));
    checks.push(("second model lsc 2/3", close(second.lsc, 2.0 / 3.0)));
    checks.push(("ledger N_ut 4, AP_sum 3", ledger.n_ut() == 4 && ledger.ap_sum() == 3));
    let again = cal_diversity(&chain, &mut ledger);
    checks.push(("repeat leaves the ledger fixed", ledger.n_ut() == 4 && ledger.ap_sum() == 3));
    checks.push(("repeat scores 2/4 and 1/3", close(again.lpc, 0.5) && close(again.lsc, 1.0 / 3.0)));

    let d = Diversity { lic: 0.2, lpc: 0.5, lsc: 0.8 };
    checks.push(("reward is the mean", (d.reward() - 0.5).abs() < 1e-15));
    checks.push(("crash reward -1", CRASH_REWARD == -1.0 && MetricRow::crashed(3).reward == -1.0));

    let crashes = run_campaign(CampaignConfig::new("slice_concat", BackendId::Mutant(FaultId::M7), 1).with_rounds(5))
        .expect("valid config");
    let crash_rewards_ok = crashes.rounds().iter().filter(|r| r.outcome != RoundOutcome::Retained).all(|r| r.reward == -1.0);
    checks.push(("campaign crash rounds score -1", crashes.crashed() > 0 && crash_rewards_ok));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        format!("failed: {}", failed.join(", "))
    };
    outcome(failed.is_empty(), detail)
}

fn thompson_probabilities(params: &[(f64, f64)]) -> Vec<f64> {
    const STEPS: usize = 20_000;
    let dists: Vec<Beta> = params.iter().map(|&(a, b)| Beta::new(a, b).expect("positive")).collect();
    let integrand = |i: usize, x: f64| {
        dists[i].pdf(x) * dists.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, d)| d.cdf(x)).product::<f64>()
    };
    let h = 1.0 / STEPS as f64;
    (0..dists.len())
        .map(|i| {
            let inner: f64 = (1..STEPS).map(|k| integrand(i, k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
            (integrand(i, 1e-12) + integrand(i, 1.0 - 1e-12) + inner) * h / 3.0
        })
        .collect()
}

fn guidance_mechanics() -> Outcome {
    let mut sched = EpsilonSchedule::default();
    let mut expected = sched.epsilon;
    let mut decay_ok = true;
    for _ in 0..100 {
        sched.step();
        expected = f64::max(0.05, 0.97 * expected);
        decay_ok &= sched.epsilon == expected;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let state: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let t = Transition { state, action: 2, reward: 0.6, next_state: state, done: true };
    let mut q = QuantileValueFn::zeros(0.01);
    let target = q.clone();
    for _ in 0..20_000 {
        q.update(&target, &t, 0.9, false);
    }
    let q_err = (q.q(&state, 2) - 0.6).abs();

    let params = [(1.0, 1.0), (3.0, 2.0), (2.0, 5.0), (6.0, 4.0)];
    let mut pool = ReplayPool::default();
    let seed = seed_by_label("mlp").expect("built-in seed");
    for &(alpha, beta) in &params {
        let mut e = ReplayEntry::new(seed.clone(), 0, 0.0, Lineage::new("mlp", 2), (0..seed.len()).collect());
        e.alpha = alpha;
        e.beta = beta;
        pool.add(e);
    }
    const DRAWS: usize = 10_000;
    let mut counts = vec![0usize; params.len()];
    for _ in 0..DRAWS {
        counts[pool.thompson_select(&mut rng).expect("non-empty")] += 1;
    }
    let probs = thompson_probabilities(&params);
    let ts_err = counts.iter().zip(&probs).map(|(&c, p)| (c as f64 / DRAWS as f64 - p).abs()).fold(0.0, f64::max);

    outcome(
        decay_ok && q_err < 1e-3 && ts_err < 0.02,
        format!("epsilon termwise {decay_ok}, |Q - 0.6| = {q_err:.1e} (limit 1e-3), Thompson max freq err {ts_err:.4} (limit 0.02)"),
    )
}

fn directional_rq4() -> Outcome {
    const PAIRS: u64 = 10;
    let (mut n_ut_wins, mut ap_wins) = (0, 0);
    let (mut qr_invalid, mut random_invalid) = (0.0, 0.0);
    for k in 0..PAIRS {
        let cfg = CampaignConfig::new(SEED_LABELS[k as usize % SEED_LABELS.len()], BackendId::Reference, k);
        let qr = run_campaign(cfg.clone()).expect("valid config");
        let random = run_campaign(cfg.random_ablation()).expect("valid config");
        n_ut_wins += usize::from(qr.ledger().n_ut() >= random.ledger().n_ut());
        ap_wins += usize::from(qr.ledger().ap_sum() >= random.ledger().ap_sum());
        qr_invalid += qr.invalid() as f64 / qr.rounds().len() as f64 / PAIRS as f64;
        random_invalid += random.invalid() as f64 / random.rounds().len() as f64 / PAIRS as f64;
    }
    let need = 6;
    outcome(
        n_ut_wins >= need && ap_wins >= need && qr_invalid <= random_invalid,
        format!(
            "N_ut >= random in {n_ut_wins}/{PAIRS}, AP_sum >= random in {ap_wins}/{PAIRS}, invalid {:.1}% vs {:.1}%",
            100.0 * qr_invalid,
            100.0 * random_invalid
        ),
    )
}

fn replayability() -> Outcome {
    let cases = [("mlp", FaultId::M3), ("cnn", FaultId::M2), ("mlp", FaultId::M5), ("cnn", FaultId::M6)];
    let (mut reports, mut failures) = (0, 0);
    for (seed, fault) in cases {
        let cfg = CampaignConfig::new(seed, BackendId::Mutant(fault), 1).with_rounds(20);
        let result = run_campaign(cfg.clone()).expect("valid config");
        for b in &result.bugs {
            reports += 1;
            let recorded = result.rounds().iter().find(|r| r.round == b.round).and_then(|r| r.digest.clone());
            let graph_ok = b.lineage.replay().is_ok_and(|(g, _)| Some(graph_digest(&g)) == recorded);
            let report_ok = replay_report(&cfg, b).is_ok_and(|again| again.iter().any(|r| r.canonical() == b.canonical()));
            failures += usize::from(!(graph_ok && report_ok));
        }
    }
    outcome(reports > 0 && failures == 0, format!("{reports} reports replayed, {failures} mismatches"))
}

fn main() -> ExitCode {
    type Check = (&'static str, fn() -> Outcome);
    let criteria: [Check; 7] = [
        ("1 relation soundness", mr_soundness),
        ("2 planted faults", planted_faults),
        ("3 gradient oracle", gradient_oracle),
        ("4 metric formulas", metric_formulas),
        ("5 guidance mechanics", guidance_mechanics),
        ("6 guided vs random diversity", directional_rq4),
        ("7 replayability", replayability),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = true;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        all &= o.pass;
        println!(
            "criterion {name}: {} ({}; {:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
