//! Self-validation: planted-fault campaigns plus reference soundness campaigns.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{run_campaign, CampaignConfig};
use crate::backend::{BackendId, FaultId};
use crate::feeds::FeedSpec;
use crate::graph::seeds::SEED_LABELS;
use crate::oracle::{BugKind, BugReport};
use crate::par::Parallelism;

/// Runtime above which the suite prints a warning.
pub const SOFT_TIME_BUDGET: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub rounds: usize,
    pub rng_seeds: Vec<u64>,
    /// How the campaigns themselves are spread over workers.
    pub parallelism: Parallelism,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { rounds: 100, rng_seeds: (1..=5).collect(), parallelism: Parallelism::default() }
    }
}

/// A planted fault, the seed model it is exercised on and the report kind it must produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultCase {
    pub fault: FaultId,
    pub seed_model: String,
    pub expected: BugKind,
    pub nan_inputs: bool,
}

pub fn fault_cases() -> Vec<FaultCase> {
    let case = |fault, seed: &str, expected, nan_inputs| FaultCase { fault, seed_model: seed.into(), expected, nan_inputs };
    vec![
        case(FaultId::M1, "mlp", BugKind::Accuracy, true),
        case(FaultId::M2, "cnn", BugKind::Accuracy, false),
        case(FaultId::M3, "mlp", BugKind::Crash, false),
        case(FaultId::M4, "mlp", BugKind::Efficiency, false),
        case(FaultId::M5, "mlp", BugKind::Resource, false),
        case(FaultId::M6, "cnn", BugKind::Accuracy, false),
        case(FaultId::M7, "slice_concat", BugKind::Crash, false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultResult {
    pub case: FaultCase,
    /// Per rng seed: the first round with a report of the expected kind.
    pub rounds_to_detect: Vec<Option<usize>>,
    /// Every report kind seen across the campaigns, deduplicated.
    pub kinds: Vec<BugKind>,
}

impl FaultResult {
    pub fn campaigns_detected(&self) -> usize {
        self.rounds_to_detect.iter().flatten().count()
    }

    /// Detected in every campaign.
    pub fn detected(&self) -> bool {
        self.rounds_to_detect.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessResult {
    pub seed_model: String,
    pub nan_inputs: bool,
    pub rng_seed: u64,
    pub rounds: usize,
    pub invalid: usize,
    pub reports: Vec<BugReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub faults: Vec<FaultResult>,
    pub soundness: Vec<SoundnessResult>,
    pub elapsed_secs: f64,
}

impl ValidationSummary {
    pub fn false_positives(&self) -> usize {
        self.soundness.iter().map(|s| s.reports.len()).sum()
    }

    pub fn faults_detected(&self) -> usize {
        self.faults.iter().filter(|f| f.detected()).count()
    }

    pub fn passed(&self) -> bool {
        self.faults_detected() == self.faults.len() && self.false_positives() == 0
    }

    /// Fraction of reference rounds judged invalid.
    pub fn invalid_fraction(&self) -> f64 {
        let rounds: usize = self.soundness.iter().map(|s| s.rounds).sum();
        let invalid: usize = self.soundness.iter().map(|s| s.invalid).sum();
        invalid as f64 / rounds.max(1) as f64
    }

    pub fn over_budget(&self) -> bool {
        self.elapsed_secs > SOFT_TIME_BUDGET.as_secs_f64()
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<6} {:<14} {:<11} {:<9} {:<24} kinds\n", "fault", "seed", "expected", "detected", "rounds");
        for f in &self.faults {
            let rounds: Vec<String> =
                f.rounds_to_detect.iter().map(|r| r.map_or("-".to_string(), |r| r.to_string())).collect();
            let kinds: Vec<String> = f.kinds.iter().map(|k| format!("{k:?}").to_lowercase()).collect();
            out += &format!(
                "{:<6} {:<14} {:<11} {:<9} {:<24} {}\n",
                format!("{:?}", f.case.fault),
                f.case.seed_model,
                format!("{:?}", f.case.expected).to_lowercase(),
                format!("{}/{}", f.campaigns_detected(), f.rounds_to_detect.len()),
                rounds.join(","),
                kinds.join(",")
            );
        }
        out += &format!(
            "reference: {} campaigns, {} false positives, {:.1}% invalid rounds\n",
            self.soundness.len(),
            self.false_positives(),
            100.0 * self.invalid_fraction()
        );
        out += &format!(
            "faults detected: {}/{}, elapsed {:.1}s, {}\n",
            self.faults_detected(),
            self.faults.len(),
            self.elapsed_secs,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        out
    }
}

enum Job {
    Fault(usize, u64),
    Sound { seed: &'static str, nan_inputs: bool, rng_seed: u64 },
}

/// Runs every fault campaign and the reference soundness campaigns.
pub fn run_validation_suite(opts: &ValidationOptions) -> ValidationSummary {
    let start = Instant::now();
    let cases = fault_cases();
    let mut jobs = Vec::new();
    for (i, _) in cases.iter().enumerate() {
        jobs.extend(opts.rng_seeds.iter().map(|&s| Job::Fault(i, s)));
    }
    for &s in &opts.rng_seeds {
        jobs.extend(SEED_LABELS.iter().map(|&seed| Job::Sound { seed, nan_inputs: false, rng_seed: s }));
        jobs.push(Job::Sound { seed: "mlp", nan_inputs: true, rng_seed: s });
    }

    let config = |seed: &str, backend, rng_seed, nan_inputs| {
        let mut c = CampaignConfig::new(seed, backend, rng_seed).with_rounds(opts.rounds);
        c.feeds = FeedSpec { nan_inputs, ..FeedSpec::default() };
        c.parallelism = Parallelism::Sequential;
        c
    };
    let results = opts.parallelism.map(&jobs, |job| match *job {
        Job::Fault(i, s) => {
            let case = &cases[i];
            let r = run_campaign(config(&case.seed_model, BackendId::Mutant(case.fault), s, case.nan_inputs))
                .expect("built-in campaign config");
            (r.bugs, 0)
        }
        Job::Sound { seed, nan_inputs, rng_seed } => {
            let mut c = config(seed, BackendId::Reference, rng_seed, nan_inputs);
            c.exact_mrs_only = true;
            let r = run_campaign(c).expect("built-in campaign config");
            let invalid = r.invalid();
            (r.bugs, invalid)
        }
    });

    let mut faults: Vec<FaultResult> = cases
        .iter()
        .map(|c| FaultResult { case: c.clone(), rounds_to_detect: Vec::new(), kinds: Vec::new() })
        .collect();
    let mut soundness = Vec::new();
    for (job, (bugs, invalid)) in jobs.iter().zip(results) {
        match *job {
            Job::Fault(i, _) => {
                let f = &mut faults[i];
                f.rounds_to_detect.push(bugs.iter().filter(|b| b.kind == f.case.expected).map(|b| b.round).min());
                for b in &bugs {
                    if !f.kinds.contains(&b.kind) {
                        f.kinds.push(b.kind);
                    }
                }
            }
            Job::Sound { seed, nan_inputs, rng_seed } => soundness.push(SoundnessResult {
                seed_model: seed.into(),
                nan_inputs,
                rng_seed,
                rounds: opts.rounds,
                invalid,
                reports: bugs,
            }),
        }
    }
    for f in &mut faults {
        f.kinds.sort();
    }
    let summary = ValidationSummary { faults, soundness, elapsed_secs: start.elapsed().as_secs_f64() };
    if summary.over_budget() {
        eprintln!("warning: validation suite took {:.0}s, over the {}s budget", summary.elapsed_secs, SOFT_TIME_BUDGET.as_secs());
    }
    summary
}
