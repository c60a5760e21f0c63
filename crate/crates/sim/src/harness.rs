//! Runs a scenario end to end and writes its artifacts.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hybrid_core::codec::Encode;
use hybrid_core::election::{elect, CandidateSet};
use hybrid_core::fruitchain::dump_chain;
use hybrid_core::hash::Digest256;
use hybrid_core::sharding::{run_sharded, ShardedOutcome, ShardedScenario, TxState, WorkloadShape};
use hybrid_core::types::fast_block_digest;
use hybrid_core::NodeId;
use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::metrics::{AssertionResult, MetricsReport};
use crate::sim::{sub_seed, SimError, World};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("sharding: {0}")]
    Sharding(String),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Shard committees plus the sharded run they served.
pub struct ShardRun {
    pub primary: Vec<NodeId>,
    pub shards: Vec<Vec<NodeId>>,
    pub outcome: ShardedOutcome,
}

pub struct Finished {
    pub world: World,
    pub report: MetricsReport,
    pub sharding: Option<ShardRun>,
}

/// Runs `cfg` to its horizon without touching the filesystem.
pub fn simulate(cfg: ScenarioConfig, trace: bool) -> Result<Finished, HarnessError> {
    let mut world = World::new(cfg, trace)?;
    world.run()?;
    let mut report = world.report();
    let sharding = match world.cfg.sharding.clone() {
        Some(sc) => {
            let (primary, shards) = shard_committees(&world, sc.primary_size, sc.shards as usize, sc.shard_size);
            let shape = WorkloadShape {
                txs: sc.txs,
                sectors: sc.sectors,
                max_ops: sc.max_ops,
                spread: sc.spread,
                fault_percent: sc.fault_percent,
            };
            let mut scenario = ShardedScenario::random(sc.params(), &shape, sub_seed(world.cfg.seed, "sharding", 0));
            scenario.min_delay = sc.min_delay;
            scenario.max_delay = sc.max_delay;
            let outcome = run_sharded(&scenario).map_err(HarnessError::Sharding)?;
            let run = ShardRun { primary, shards, outcome };
            attach_sharding(&mut report, &run);
            Some(run)
        }
        None => None,
    };
    Ok(Finished { world, report, sharding })
}

/// Elects the primary committee and then each shard committee from the
/// latest term's candidates, skipping anyone already serving.
fn shard_committees(world: &World, primary: usize, shards: usize, size: usize) -> (Vec<NodeId>, Vec<Vec<NodeId>>) {
    let node = world.reference_node();
    let latest = node.committees.last();
    let opt_in: Vec<(NodeId, u64)> = world.cfg.opt_in().into_iter().map(|i| (NodeId(i), 0)).collect();
    let mut cands = latest.map(|e| e.transcript.candidates.clone()).unwrap_or_default();
    if cands.len() < primary + shards * size {
        cands = opt_in;
    }
    let cands = CandidateSet { candidates: cands };
    let mut seed = latest.map(|e| e.seed).unwrap_or(hybrid_core::election::ElectionSeed::GENESIS);
    let mut serving = BTreeSet::new();
    let mut pick = |n: usize, serving: &mut BTreeSet<NodeId>| {
        let chosen = elect(&cands, &seed, n, serving);
        serving.extend(chosen.iter().copied());
        seed = hybrid_core::election::derive_seed(&seed, &[]);
        chosen
    };
    let p = pick(primary, &mut serving);
    let s = (0..shards).map(|_| pick(size, &mut serving)).collect();
    (p, s)
}

fn attach_sharding(report: &mut MetricsReport, run: &ShardRun) {
    let o = &run.outcome;
    let committed = o.txs.iter().filter(|t| t.state == TxState::Committed).count();
    let aborted = o.txs.iter().filter(|t| t.state == TxState::Aborted).count();
    let unfinished = o.txs.len() - committed - aborted;
    report.sharding = Some(json!({
        "primary": run.primary,
        "shards": run.shards,
        "txs": o.txs.len(),
        "committed": committed,
        "aborted": aborted,
        "unfinished": unfinished,
        "batches": o.batches.len(),
        "day_log_entries": o.day_log.entries.len(),
        "missing_batches": o.day_log.missing,
        "failed_rounds": o.day_log.failed_rounds,
        "messages": o.messages,
    }));
    let mut seen = BTreeSet::new();
    let disjoint = run.primary.iter().chain(run.shards.iter().flatten()).all(|n| seen.insert(*n));
    report.assertions.push(AssertionResult {
        name: "sharding".into(),
        passed: unfinished == 0 && disjoint,
        detail: format!("{committed} committed, {aborted} aborted, {unfinished} unfinished, disjoint {disjoint}"),
    });
    report.passed = report.assertions.iter().all(|a| a.passed);
}

/// Runs `cfg` and writes every artifact under `out`.
pub fn run_scenario(cfg: ScenarioConfig, out: &Path, trace: bool) -> Result<MetricsReport, HarnessError> {
    let mut done = simulate(cfg, trace)?;
    write_artifacts(&mut done, out)?;
    Ok(done.report)
}

struct Out<'a>(&'a Path);

impl Out<'_> {
    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), HarnessError> {
        let path = self.0.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
        }
        let f = File::create(&path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        Ok((path, BufWriter::new(f)))
    }

    fn write(
        &self,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), HarnessError> {
        let (path, mut w) = self.create(name)?;
        fill(&mut w).and_then(|_| w.flush()).map_err(|source| HarnessError::Io { path, source })
    }

    fn jsonl<T: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
        self.write(name, |w| {
            for r in rows {
                serde_json::to_writer(&mut *w, &r)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }
}

#[derive(Serialize)]
struct SignedHash {
    term: u64,
    member: NodeId,
    hex: String,
}

#[derive(Serialize)]
struct DailyLogRecord {
    term: u64,
    first: Option<u64>,
    last: Option<u64>,
    blocks: Vec<Digest256>,
    log_hash: Digest256,
    signers: Vec<NodeId>,
}

pub fn write_artifacts(done: &mut Finished, dir: &Path) -> Result<(), HarnessError> {
    let out = Out(dir);
    let world = &mut done.world;
    out.write("metrics.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &done.report)?;
        w.write_all(b"\n")
    })?;
    out.write("timeseries.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for s in &world.samples {
            csv.serialize(s)?;
        }
        csv.flush()
    })?;
    let chain = world.reference_chain();
    out.write("chain.jsonl", |w| dump_chain(&chain, w).map_err(std::io::Error::other))?;

    // each term's final log as kept by its first honest member
    let mut finals = std::collections::BTreeMap::new();
    for n in world.honest_nodes() {
        for f in &n.finals {
            finals.entry(f.term).or_insert(f);
        }
    }
    out.jsonl(
        "daily_log.jsonl",
        finals.values().map(|f| DailyLogRecord {
            term: f.term,
            first: f.blocks.first().map(|b| b.number),
            last: f.blocks.last().map(|b| b.number),
            blocks: f.blocks.iter().map(fast_block_digest).collect(),
            log_hash: f.log_hash,
            signers: f.signatures.iter().map(|s| s.signer()).collect(),
        }),
    )?;
    let signed: BTreeSet<(u64, NodeId, Digest256)> = world.monitor.signed_hashes.iter().copied().collect();
    out.jsonl(
        "signed_hashes.jsonl",
        signed.into_iter().map(|(term, member, h)| SignedHash { term, member, hex: h.to_hex() }),
    )?;

    let elected = world.reference_node().committees.clone();
    for e in &elected {
        out.write(&format!("transcripts/term-{}.json", e.transcript.term), |w| {
            serde_json::to_writer_pretty(&mut *w, &e.transcript)?;
            w.write_all(b"\n")
        })?;
    }
    let mut grids = String::new();
    for (k, e) in elected.iter().enumerate() {
        if let Some(a) = world.matrix(k as u64, e) {
            grids.push_str(&format!("# term {k} csize {} gsize {} seed {}\n", a.csize, a.gsize, a.seed.to_hex()));
            grids.push_str(&a.to_grid());
            grids.push('\n');
        }
    }
    if !grids.is_empty() {
        out.write("matrix.txt", |w| w.write_all(grids.as_bytes()))?;
    }
    if world.trace.is_enabled() {
        out.write("trace.jsonl", |w| world.trace.write_jsonl(w))?;
    }
    if let Some(run) = &done.sharding {
        out.write("batches.wire", |w| {
            for b in &run.outcome.batches {
                writeln!(w, "{}", hex::encode(b.batch.encode()))?;
            }
            Ok(())
        })?;
        out.write("shard_daylog.jsonl", |w| run.outcome.day_log.write_jsonl(w))?;
    }
    Ok(())
}
