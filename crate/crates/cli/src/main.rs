use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use graphmeta::backend::{trace_jsonl, Backend, BackendId};
use graphmeta::engine::{
    replay_report, run_validation_suite, Campaign, CampaignConfig, CampaignState, ModelRecord, ValidationOptions,
};
use graphmeta::feeds::{random_feeds, FeedSpec};
use graphmeta::graph::seeds::{seed_by_label, SEED_LABELS};
use graphmeta::graph::{serial, Graph};
use graphmeta::lineage::graph_digest;
use graphmeta::oracle::BugReport;
use graphmeta::par::Parallelism;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "campaign", version, about = "Metamorphic testing campaigns over graph backends")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a campaign and write bugs.jsonl, metrics.csv, checkpoint.json and lineage.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rebuild every generated model from a lineage file and check digests.
    Replay {
        #[arg(long)]
        lineage: PathBuf,
        /// Also regenerate these bug reports and compare them.
        #[arg(long)]
        bugs: Option<PathBuf>,
    },
    /// Planted-fault and reference soundness campaigns.
    Validate {
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        /// Number of rng seeds (1..=n).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Print a seed graph, or a generated model, as JSON.
    Dump {
        #[arg(long, required_unless_present = "lineage")]
        seed: Option<String>,
        /// A lineage.json written by `campaign run`; dumps the model of `--round`.
        #[arg(long, requires = "round")]
        lineage: Option<PathBuf>,
        #[arg(long)]
        round: Option<usize>,
        /// Print the reference execution trace as JSONL instead.
        #[arg(long)]
        trace: bool,
        /// Include tensor data in the trace.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Backend that produces the trace.
        #[arg(long, default_value = "reference")]
        backend: BackendId,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(config: &Path, out: &Path, resume: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config = CampaignConfig::from_json(&text)?;
    let campaign = match resume {
        Some(p) => Campaign::resume(config, read_json::<CampaignState>(p)?)?,
        None => Campaign::new(config)?,
    };
    let result = campaign.run();
    result.write_to_dir(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} rounds: {} retained, {} crash, {} invalid; {} bug reports in {}",
        result.rounds().len(),
        result.retained(),
        result.crashed(),
        result.invalid(),
        result.bugs.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn replay(lineage: &Path, bugs: Option<&Path>) -> Result<ExitCode> {
    let record: ModelRecord = read_json(lineage)?;
    let mut failures = 0;
    for r in &record.rounds {
        let Some(digest) = &r.digest else { continue };
        match r.lineage.replay() {
            Ok((g, _)) if graph_digest(&g) == *digest => {}
            Ok(_) => {
                failures += 1;
                println!("round {}: digest mismatch", r.round);
            }
            Err(e) => {
                failures += 1;
                println!("round {}: {e}", r.round);
            }
        }
    }
    println!("{} models replayed, {failures} mismatches", record.rounds.iter().filter(|r| r.digest.is_some()).count());
    if let Some(path) = bugs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut n = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let report: BugReport = serde_json::from_str(line)?;
            let regenerated = replay_report(&record.config, &report)?;
            let want = report.canonical();
            if !regenerated.iter().any(|r| r.canonical() == want) {
                failures += 1;
                println!("round {} {:?}: report not reproduced", report.round, report.kind);
            }
            n += 1;
        }
        println!("{n} bug reports replayed");
    }
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(rounds: usize, seeds: u64, json: Option<&Path>, sequential: bool) -> Result<ExitCode> {
    if seeds == 0 || rounds == 0 {
        bail!("--rounds and --seeds must be at least 1");
    }
    let opts = ValidationOptions {
        rounds,
        rng_seeds: (1..=seeds).collect(),
        parallelism: if sequential { Parallelism::Sequential } else { Parallelism::Rayon },
    };
    let summary = run_validation_suite(&opts);
    print!("{}", summary.table());
    if let Some(p) = json {
        fs::write(p, serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(if summary.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn load_graph(seed: Option<&str>, lineage: Option<&Path>, round: Option<usize>) -> Result<Graph> {
    if let (Some(path), Some(round)) = (lineage, round) {
        let record: ModelRecord = read_json(path)?;
        let Some(r) = record.rounds.iter().find(|r| r.round == round) else {
            bail!("no round {round} in {}", path.display());
        };
        return Ok(r.lineage.replay()?.0);
    }
    let seed = seed.unwrap_or_default();
    seed_by_label(seed).with_context(|| format!("unknown seed `{seed}` (known: {})", SEED_LABELS.join(", ")))
}

fn dump(g: Graph, trace: bool, full: bool, rng_seed: u64, backend: BackendId) -> Result<ExitCode> {
    if !trace {
        println!("{}", serial::to_json_pretty(&g));
        return Ok(ExitCode::SUCCESS);
    }
    let feeds = random_feeds(&g, &FeedSpec::default(), &mut ChaCha8Rng::seed_from_u64(rng_seed));
    let t = backend.instantiate().execute_forward(&g, &feeds)?;
    print!("{}", trace_jsonl(&g, &t, full));
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { config, out, resume } => run(&config, &out, resume.as_deref()),
        Cmd::Replay { lineage, bugs } => replay(&lineage, bugs.as_deref()),
        Cmd::Validate { rounds, seeds, json, sequential } => validate(rounds, seeds, json.as_deref(), sequential),
        Cmd::Graph { cmd: GraphCmd::Dump { seed, lineage, round, trace, full, rng_seed, backend } } => {
            dump(load_graph(seed.as_deref(), lineage.as_deref(), round)?, trace, full, rng_seed, backend)
        }
    }
}
