use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_core::channel::generate_matrix;
use hybrid_core::fruitchain::load_chain;
use hybrid_core::hash::{digest, Digest256};
use hybrid_core::types::fruits_root;
use hybrid_core::{NodeId, SnailBlock};
use hybrid_sim::batch::{replicas, run_batch, Mode};
use hybrid_sim::harness::{write_artifacts, Finished};
use hybrid_sim::ScenarioConfig;

#[derive(Parser)]
#[command(name = "hybridsim", version, about = "Hybrid consensus simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run K replicas on consecutive seeds concurrently, one output
        /// directory each.
        #[arg(long, value_name = "K", default_value_t = 1)]
        parallel: u64,
        /// Write trace.jsonl.
        #[arg(long)]
        trace: bool,
    },
    /// Check and summarize a chain.jsonl dump.
    Inspect { chain: PathBuf },
    /// Print the gossip matrix for a committee. The seed is 64 hex digits or
    /// any string, which is hashed.
    Matrix { csize: usize, gsize: usize, seed: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, seed, out, parallel, trace } => run(&scenario, seed, &out, parallel, trace),
        Cmd::Inspect { chain } => inspect(&chain),
        Cmd::Matrix { csize, gsize, seed } => matrix(csize, gsize, &seed),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type Res = Result<ExitCode, Box<dyn std::error::Error>>;

fn run(path: &Path, seed: Option<u64>, out: &Path, parallel: u64, trace: bool) -> Res {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let k = parallel.max(1);
    let mode = if k > 1 { Mode::Parallel } else { Mode::Sequential };
    let mut all_passed = true;
    for done in run_batch(replicas(&cfg, k), trace, mode) {
        let mut done: Finished = done?;
        let dir = if k > 1 { out.join(format!("seed-{}", done.report.seed)) } else { out.to_path_buf() };
        write_artifacts(&mut done, &dir)?;
        let r = &done.report;
        println!(
            "{} seed {}: {} (snail {}, fast {}, safety {}, consistency {}) -> {}",
            r.scenario,
            r.seed,
            if r.passed { "PASS" } else { "FAIL" },
            r.snail_height,
            r.fast_height,
            r.safety_ok,
            r.consistency_ok,
            dir.display()
        );
        for a in r.assertions.iter().filter(|a| !a.passed) {
            println!("  failed {}: {}", a.name, a.detail);
        }
        for w in &r.warnings {
            println!("  warning: {w}");
        }
        all_passed &= r.passed;
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn inspect(path: &Path) -> Res {
    let blocks = load_chain(BufReader::new(File::open(path)?))?;
    let mut problems = Vec::new();
    let mut prev = SnailBlock::genesis().hash;
    let mut miners: BTreeMap<NodeId, (u64, u64)> = BTreeMap::new();
    let mut fruits = 0;
    for (i, b) in blocks.iter().enumerate() {
        if b.parent_hash != prev {
            problems.push(format!("block {} (line {}): parent does not match previous block", b.number, i + 1));
        }
        if b.number != i as u64 + 1 {
            problems.push(format!("line {}: number {} out of sequence", i + 1, b.number));
        }
        if fruits_root(&b.fruits) != b.fruits_hash {
            problems.push(format!("block {}: fruit set does not match fruits_hash", b.number));
        }
        prev = b.hash;
        miners.entry(b.coinbase).or_default().0 += 1;
        for f in &b.fruits {
            miners.entry(f.miner).or_default().1 += 1;
        }
        fruits += b.fruits.len() as u64;
    }
    println!("blocks {} fruits {} tip {}", blocks.len(), fruits, prev.to_hex());
    println!("{:>6} {:>8} {:>8}", "miner", "blocks", "fruits");
    for (m, (nb, nf)) in &miners {
        println!("{:>6} {:>8} {:>8}", m.0, nb, nf);
    }
    for p in &problems {
        println!("problem: {p}");
    }
    Ok(if problems.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn matrix(csize: usize, gsize: usize, seed: &str) -> Res {
    let seed = match hex::decode(seed) {
        Ok(b) if b.len() == 32 => Digest256(b.try_into().expect("32 bytes")),
        _ => digest(seed.as_bytes()),
    };
    let a = generate_matrix(seed, csize, gsize)?;
    print!("{}", a.to_grid());
    Ok(ExitCode::SUCCESS)
}
