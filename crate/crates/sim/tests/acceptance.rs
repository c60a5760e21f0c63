//! Acceptance gate: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hybrid_core::bft::{max_faulty, quorum, tally, verify_timestamp, Decision, Phase, TimestampHistory, Vote};
use hybrid_core::channel::generate_matrix;
use hybrid_core::election::{collect_candidates, elect, CandidateSet, ElectionParams, ElectionSeed};
use hybrid_core::fruitchain::{fork_choice, select_contiguous, ChainLink, MiningParams, NoFastBlocks, Target};
use hybrid_core::hash::{digest, Digest256};
use hybrid_core::sharding::{
    host, lis_filter, run_sharded, Op, ShardTx, ShardedOutcome, ShardedScenario, ShardingParams, TxState,
    WorkloadShape, WriteValue,
};
use hybrid_core::truehash::{pad_header, rotate_element, truehash, vector_digest, TruehashParams};
use hybrid_core::types::fruits_root;
use hybrid_core::{Address, Fruit, NodeId, SnailBlock, Transaction};
use hybrid_sim::adversary::leaked_by;
use hybrid_sim::batch::{run_batch, Mode};
use hybrid_sim::config::{CorruptionSpec, DdosSpec, Expectation, Strategy};
use hybrid_sim::harness::{run_scenario, Finished};
use hybrid_sim::rewards::reward_split;
use hybrid_sim::{MetricsReport, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bundled(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenarios_dir().join(format!("{name}.toml"))).expect("bundled scenario loads")
}

// ---- suite runs shared by criteria 1, 2 and 11 ----

/// Scenario `k` of the safety suite: committee of 7 (f = 2), at most f
/// corrupt members, honest hash above 2/3.
fn suite_config(k: u64) -> ScenarioConfig {
    let mut c =
        ScenarioConfig::from_toml(&format!("name = \"suite-{k}\"\nseed = {}\nticks = 1500\n", 1000 + k)).unwrap();
    c.nodes.count = 13;
    c.committee.csize = 7;
    c.committee.gsize = 2;
    c.committee.window = 20;
    c.workload.accounts = 10;
    c.assertions.expect = Expectation::Consistent;
    c.assertions.liveness_bound = Some(400);
    let committee = |strategy, count| CorruptionSpec {
        strategy,
        nodes: Vec::new(),
        committee_term: Some(k % 2),
        committee_count: count,
        at: 0,
        tau: 1 + k % 7,
    };
    match k % 5 {
        0 => {}
        1 => c.adversary.corruptions.push(committee(Strategy::ByzantineVote, 2)),
        2 => c.adversary.corruptions.push(committee(Strategy::Silent, 2)),
        3 => {
            c.adversary.corruptions.push(CorruptionSpec {
                strategy: Strategy::WithholdBlocks,
                nodes: vec![(k % 13) as u32],
                committee_term: None,
                committee_count: 0,
                at: 100,
                tau: 5,
            });
        }
        _ => {
            c.adversary.corruptions.push(committee(Strategy::LeakAddresses, 1));
            c.adversary.ddos.push(DdosSpec { at: 300, duration: 100, targets: Vec::new(), all_leaked: true });
        }
    }
    c
}

struct SuiteRun {
    report: MetricsReport,
    elapsed: Duration,
}

fn run_suite() -> Vec<SuiteRun> {
    let cfgs: Vec<ScenarioConfig> = (0..50).map(suite_config).collect();
    hybrid_core::par::par_map(cfgs, |c| {
        let t = Instant::now();
        let done: Finished = run_batch(vec![c], false, Mode::Sequential).pop().unwrap().expect("suite scenario runs");
        SuiteRun { report: done.report, elapsed: t.elapsed() }
    })
}

fn c1_safety(suite: &[SuiteRun]) -> Verdict {
    let mut bad = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut deepest = 0;
    for s in suite {
        let r = &s.report;
        slowest = slowest.max(s.elapsed);
        deepest = deepest.max(r.common_prefix_depth);
        let premise = r.terms.iter().all(|t| !t.over_tolerance) && r.chain.q_snail > 2.0 / 3.0;
        let safe = r.fast_divergences == 0
            && r.conflicting_certificates == 0
            && r.common_prefix_depth <= 17
            && r.election_agreement;
        if !premise || !safe || s.elapsed >= Duration::from_secs(60) {
            bad.push(format!("{} (premise {premise}, safe {safe})", r.scenario));
        }
    }
    verdict(
        bad.is_empty(),
        format!(
            "{} scenarios, max snail prefix depth {deepest}, slowest {:.1}s; failing: {bad:?}",
            suite.len(),
            slowest.as_secs_f64()
        ),
    )
}

fn c2_liveness(suite: &[SuiteRun]) -> Verdict {
    let mut bad = Vec::new();
    let mut worst = 0;
    let mut txs = 0;
    for s in suite {
        let l = &s.report.liveness;
        txs += l.submitted;
        let tau = l.liveness_tau.unwrap_or(u64::MAX);
        worst = worst.max(tau);
        if l.submitted == 0 || l.committed != l.submitted || l.pending != 0 || tau > 400 {
            bad.push(format!(
                "{} {}/{} pending {} tau {:?}",
                s.report.scenario, l.committed, l.submitted, l.pending, l.liveness_tau
            ));
        }
    }
    verdict(bad.is_empty(), format!("{txs} txs, worst liveness_tau {worst} (bound 400); failing: {bad:?}"))
}

// ---- 3: quorum boundary ----

fn c3_quorum() -> Verdict {
    let members: Vec<NodeId> = (0..31).map(NodeId).collect();
    let block = digest(b"proposal");
    let votes = |yes: usize, no: usize| -> Vec<Vote> {
        members
            .iter()
            .enumerate()
            .take(yes + no)
            .map(|(i, m)| Vote::cast(*m, Phase::Precommit, 0, block, i < yes))
            .collect()
    };
    let f = max_faulty(31);
    let q = quorum(31);
    let blocked = tally(&votes(31 - (f + 1), f + 1), &members);
    let committed = tally(&votes(2 * f + 1, 0), &members);
    let short = tally(&votes(2 * f, 0), &members);
    let ok = f == 10
        && q == 21
        && blocked.decision == Decision::Failed
        && committed.decision == Decision::Committed
        && short.decision != Decision::Committed;
    verdict(
        ok,
        format!(
            "f={f} quorum={q}; 20 yes + 11 no -> {:?}; 21 yes -> {:?}; 20 yes -> {:?}",
            blocked.decision, committed.decision, short.decision
        ),
    )
}

// ---- 4: fairness ----

fn c4_fairness() -> Verdict {
    let runs = run_batch(vec![bundled("selfish_fruitchain"), bundled("selfish_nakamoto")], false, Mode::Parallel);
    let mut it = runs.into_iter().map(|r| r.expect("fairness scenario runs").report);
    let fruit = it.next().unwrap();
    let naka = it.next().unwrap();
    let worst = fruit.chain.miners.iter().map(|m| (m.fruit_share - m.hash_share).abs()).fold(0.0f64, f64::max);
    let ok = fruit.chain.fruits >= 10_000
        && worst <= 0.05
        && naka.chain.blocks >= 10_000
        && naka.chain.adversary_block_share > 0.33;
    verdict(
        ok,
        format!(
            "fruitchain: {} fruits, max |fruit-hash| share gap {worst:.4}; nakamoto: {} blocks, selfish share {:.4}",
            fruit.chain.fruits, naka.chain.blocks, naka.chain.adversary_block_share
        ),
    )
}

// ---- 5: fork choice and packaging ----

fn easy_params() -> MiningParams {
    let mut p = MiningParams::from_intervals(1, 1, 1);
    p.block_target = Target::MAX;
    p.fruit_target = Target::MAX;
    p
}

/// Valid child of `parent` carrying `fruits` fresh fruits.
fn child(parent: &Arc<ChainLink>, params: &MiningParams, fruits: u64, miner: NodeId, tag: u64) -> Arc<ChainLink> {
    let mut fs = Vec::new();
    for k in 0..fruits {
        let serial = parent.last_serial() + 1 + k;
        let mut f = Fruit {
            prev: parent.hash(),
            pointer_hash: parent.hash(),
            fruit_set_digest: Digest256::ZERO,
            digest: digest(&serial.to_be_bytes()),
            serial,
            miner,
            nonce: tag,
            fruit_difficulty: params.fruit_target.work(),
            hash: Digest256::ZERO,
        };
        f.hash = truehash(parent.child_params(), &f.header().to_bytes(), f.nonce);
        fs.push(f);
    }
    let pointer_number = parent.height().saturating_sub(params.pointer_window);
    let mut b = SnailBlock::genesis();
    b.parent_hash = parent.hash();
    b.coinbase = miner;
    b.pointer_number = pointer_number;
    b.pointer_hash = parent.at_height(pointer_number).unwrap().hash();
    b.fruits_hash = fruits_root(&fs);
    b.difficulty = params.block_target.work();
    b.fruit_difficulty = params.fruit_target.work();
    b.number = parent.height() + 1;
    b.to_elect = params.expects_elect_flag(b.number);
    b.nonce = tag;
    b.fruits = fs;
    b.hash = truehash(parent.child_params(), &b.header().to_bytes(), b.nonce);
    ChainLink::extend(parent, b, params, &NoFastBlocks).expect("constructed block is valid")
}

fn c5_fork_choice_and_packaging() -> Verdict {
    let params = easy_params();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fork_mismatch = 0;
    for trial in 0..200u64 {
        let mut links = vec![ChainLink::genesis(TruehashParams::new(8, 1000).unwrap())];
        let mut has_child = vec![false];
        for k in 0..rng.gen_range(2..14) {
            let p = rng.gen_range(0..links.len());
            has_child[p] = true;
            let l = child(&links[p], &params, rng.gen_range(0..4), NodeId(rng.gen_range(0..4)), trial * 100 + k);
            links.push(l);
            has_child.push(false);
        }
        let tips: Vec<Arc<ChainLink>> =
            links.iter().zip(&has_child).filter(|(_, c)| !**c).map(|(l, _)| l.clone()).collect();
        // oracle: recount each branch's fruit difficulty from its blocks
        let weight = |l: &Arc<ChainLink>| -> u128 {
            l.blocks().iter().flat_map(|b| &b.fruits).map(|f| f.fruit_difficulty as u128).sum()
        };
        let best = tips.iter().max_by(|a, b| weight(a).cmp(&weight(b)).then(b.hash().cmp(&a.hash()))).unwrap();
        if fork_choice(&tips).unwrap().hash() != best.hash() {
            fork_mismatch += 1;
        }
    }

    let mk = |serial: u64, tag: u64| Fruit {
        prev: Digest256::ZERO,
        pointer_hash: Digest256::ZERO,
        fruit_set_digest: Digest256::ZERO,
        digest: Digest256::ZERO,
        serial,
        miner: NodeId(0),
        nonce: tag,
        fruit_difficulty: 1,
        hash: digest(&[serial.to_be_bytes(), tag.to_be_bytes()].concat()),
    };
    let mut pack_mismatch = 0;
    let mut cases = 0;
    for mask in 0u32..1 << 10 {
        let serials: Vec<u64> = (1..=10).filter(|s| mask & (1 << (s - 1)) != 0).collect();
        for last in 0..=3u64 {
            cases += 1;
            let pending: Vec<Fruit> = serials.iter().map(|&s| mk(s, 0)).collect();
            // oracle: largest subset of the serials that is exactly last+1..=last+k
            let n = serials.len();
            let mut best: Vec<u64> = Vec::new();
            for sub in 0u32..1 << n {
                let pick: Vec<u64> = (0..n).filter(|i| sub & (1 << i) != 0).map(|i| serials[i]).collect();
                let contiguous = pick.iter().enumerate().all(|(i, &s)| s == last + 1 + i as u64);
                if contiguous && pick.len() > best.len() {
                    best = pick;
                }
            }
            let got: Vec<u64> = select_contiguous(&pending, last).iter().map(|f| f.serial).collect();
            if got != best {
                pack_mismatch += 1;
            }
        }
    }
    // duplicate serials keep the lowest hash
    let dup = [mk(1, 1), mk(1, 2), mk(2, 7)];
    let lowest = dup[..2].iter().map(|f| f.hash).min().unwrap();
    let dup_ok = select_contiguous(&dup, 0).first().map(|f| f.hash) == Some(lowest);
    verdict(
        fork_mismatch == 0 && pack_mismatch == 0 && dup_ok,
        format!("fork_choice 200 forks, {fork_mismatch} mismatches; select_contiguous {cases} cases, {pack_mismatch} mismatches"),
    )
}

// ---- 6: timestamp guard ----

/// Straight-line reference for the timestamp guard, kept deliberately naive.
fn reference_guard(tx_tp: u64, now: u64, window: u64, history: &mut BTreeMap<u64, Vec<u64>>, from: u64) -> bool {
    if (now as i64 - tx_tp as i64).unsigned_abs() > window {
        return false;
    }
    match history.get_mut(&from) {
        None => {
            history.insert(from, vec![tx_tp]);
            true
        }
        Some(list) => {
            if *list.last().unwrap() as i64 - tx_tp as i64 > 0 {
                false
            } else {
                list.push(tx_tp);
                true
            }
        }
    }
}

fn c6_timestamp_guard() -> Verdict {
    let mut cases = 0u64;
    let mut mismatch = 0u64;
    for window in [0u64, 1, 10, 25, 50] {
        for prior in std::iter::once(None).chain((0..=50).map(Some)) {
            for now in 0..=50u64 {
                for tp in 0..=50u64 {
                    cases += 1;
                    let mut hist = TimestampHistory::new(window);
                    let mut oracle: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
                    if let Some(p) = prior {
                        hist.record(&Transaction::transfer(Address(1), Address(2), 1, 0, p));
                        oracle.insert(1, vec![p]);
                    }
                    let tx = Transaction::transfer(Address(1), Address(2), 1, 1, tp);
                    let got = verify_timestamp(&tx, now, &mut hist);
                    let want = reference_guard(tp, now, window, &mut oracle, 1);
                    let tail_agrees = hist.last(Address(1)) == oracle.get(&1).and_then(|l| l.last().copied());
                    if got != want || !tail_agrees {
                        mismatch += 1;
                    }
                }
            }
        }
    }
    verdict(mismatch == 0, format!("{cases} (window, prior, now, T_p) cases, {mismatch} disagreements"))
}

// ---- 7: election ----

fn c7_election(suite: &[SuiteRun]) -> Verdict {
    // node 1 mines 99 fruits, node 2 mines 100
    let params = easy_params();
    let g = ChainLink::genesis(TruehashParams::new(8, 1000).unwrap());
    let a = child(&g, &params, 99, NodeId(1), 1);
    let b = child(&a, &params, 100, NodeId(2), 2);
    let ep =
        ElectionParams { window: 10, min_fruits: 100, csize: 4, opt_in: [NodeId(1), NodeId(2)].into_iter().collect() };
    let ids: Vec<NodeId> = collect_candidates(&b, &ep).map(|c| c.ids().collect()).unwrap_or_default();
    let threshold_ok = ids == vec![NodeId(2)];

    let cands = CandidateSet { candidates: (0..8).map(|i| (NodeId(i), 1)).collect() };
    let mut counts = [0u64; 8];
    for i in 0..10_000u64 {
        let seed = ElectionSeed { seed: digest(&i.to_be_bytes()) };
        let first = elect(&cands, &seed, 1, &BTreeSet::new())[0];
        counts[first.0 as usize] += 1;
    }
    let expected = 10_000.0 / 8.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(7.0).unwrap().cdf(chi2);

    let agree = suite.iter().all(|s| s.report.election_agreement);
    let rotations: usize = suite.iter().map(|s| s.report.terms.len()).sum();
    verdict(
        threshold_ok && p > 0.01 && agree,
        format!("nu=100 candidates {ids:?}; chi2={chi2:.2} p={p:.3}; {rotations} rotations agree across honest nodes: {agree}"),
    )
}

// ---- 8: gossip matrix ----

fn reaches_all(a: &[Vec<bool>], forward: bool) -> bool {
    let n = a.len();
    let mut seen = vec![false; n];
    let mut q = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = q.pop_front() {
        for j in 0..n {
            let edge = if forward { a[i][j] } else { a[j][i] };
            if edge && !seen[j] {
                seen[j] = true;
                q.push_back(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn c8_gossip_matrix() -> Verdict {
    let members: Vec<NodeId> = (500..531).map(NodeId).collect();
    let mut bad = 0;
    let mut max_leak = 0;
    for s in 0..100u64 {
        let a = generate_matrix(digest(&s.to_be_bytes()), 31, 4).expect("feasible");
        let rows = a.rows();
        let sums = (0..31)
            .all(|i| rows[i].iter().filter(|&&x| x).count() == 4 && (0..31).filter(|&k| rows[k][i]).count() == 4);
        let diag = (0..31).all(|i| !rows[i][i]);
        if !(sums && diag && reaches_all(rows, true) && reaches_all(rows, false)) {
            bad += 1;
        }
        for j in 0..31 {
            max_leak = max_leak.max(leaked_by(j, &members, &a).len());
        }
    }
    verdict(
        bad == 0 && max_leak <= 5,
        format!("100 seeds at 31/4, {bad} malformed; largest single-member leak {max_leak}"),
    )
}

// ---- 9: sharding ----

/// Reads seen by each transaction, and the final store.
type Replay = (BTreeMap<u64, Vec<(u64, i64)>>, BTreeMap<u64, i64>);

fn serial_replay(initial: &[(u64, i64)], committed: &[&ShardTx]) -> Replay {
    let mut values: BTreeMap<u64, i64> = initial.iter().copied().collect();
    let mut order: Vec<&&ShardTx> = committed.iter().collect();
    order.sort_by_key(|t| (t.cts, t.id));
    let mut reads = BTreeMap::new();
    for t in order {
        let mut local: BTreeMap<u64, i64> = BTreeMap::new();
        let mut seen = Vec::new();
        for op in &t.ops {
            match *op {
                Op::Read(a) => seen.push((a, local.get(&a).or(values.get(&a)).copied().unwrap_or(0))),
                Op::Write(a, w) => {
                    let last = seen.last().map_or(0, |r| r.1);
                    let v = match w {
                        WriteValue::Const(x) => x,
                        WriteValue::LastReadPlus(d) => last.wrapping_add(d),
                    };
                    local.insert(a, v);
                }
            }
        }
        values.extend(local);
        reads.insert(t.id, seen);
    }
    (reads, values)
}

fn replay_matches(sc: &ShardedScenario, out: &ShardedOutcome) -> bool {
    let committed: Vec<&ShardTx> = out.txs.iter().filter(|t| t.state == TxState::Committed).collect();
    let (reads, values) = serial_replay(&sc.initial, &committed);
    committed.iter().all(|t| t.reads == reads[&t.id])
        && values.iter().all(|(a, v)| out.value(*a).unwrap_or(0) == *v)
        && out.txs.iter().all(|t| t.is_done())
}

fn brute_lis(tps: &[u64]) -> Vec<usize> {
    let n = tps.len();
    let mut best: Vec<usize> = Vec::new();
    for mask in 0u32..1 << n {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.windows(2).all(|w| tps[w[0]] <= tps[w[1]])
            && (idx.len() > best.len() || (idx.len() == best.len() && idx < best))
        {
            best = idx;
        }
    }
    best
}

fn c9_sharding() -> Verdict {
    let results = hybrid_core::par::par_map((0..500u64).collect(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ShardingParams {
            shards: rng.gen_range(1..=3),
            shard_size: 4,
            timeout: 30,
            batch_interval: 15,
            batch_timeout: 20,
        };
        let shape = WorkloadShape {
            txs: rng.gen_range(1..=6),
            sectors: rng.gen_range(1..=8),
            max_ops: 4,
            spread: 40,
            fault_percent: 15,
        };
        let sc = ShardedScenario::random(params, &shape, seed);
        let out = run_sharded(&sc).expect("sharded run");
        let c = out.txs.iter().filter(|t| t.state == TxState::Committed).count();
        // remote shards in a committed footprint each returned a quorum
        let q = sc.params.reply_quorum();
        let quorums = out.txs.iter().filter(|t| t.state == TxState::Committed).all(|t| {
            let remote: BTreeSet<u32> =
                t.ops.iter().map(|o| host(o.addr(), sc.params.shards)).filter(|&s| s != t.home).collect();
            remote.into_iter().all(|s| {
                let touched = t.observed.iter().any(|r| host(r.0, sc.params.shards) == s)
                    || t.writes.iter().any(|w| host(w.0, sc.params.shards) == s);
                !touched || out.commit_quorums[&t.id].iter().any(|&(gs, n)| gs == s && n >= q)
            })
        });
        (replay_matches(&sc, &out) && quorums, c)
    });
    let failed = results.iter().filter(|(ok, _)| !ok).count();
    let committed: usize = results.iter().map(|(_, c)| c).sum();

    let mut lis_bad = 0;
    let mut lis_cases = 0;
    // every sequence over {0,1,2,3} up to length 8
    for len in 0..=8u32 {
        for code in 0..4u64.pow(len) {
            let seq: Vec<u64> = (0..len).map(|i| code / 4u64.pow(i) % 4).collect();
            lis_cases += 1;
            lis_bad += (lis_filter(&seq) != brute_lis(&seq)) as u32;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let len = rng.gen_range(9..=15);
        let seq: Vec<u64> = (0..len).map(|_| rng.gen_range(0..12)).collect();
        lis_cases += 1;
        lis_bad += (lis_filter(&seq) != brute_lis(&seq)) as u32;
    }
    verdict(
        failed == 0 && lis_bad == 0 && committed > 300,
        format!("500 scenarios, {committed} committed txs, {failed} replay mismatches; lis_filter {lis_cases} sequences, {lis_bad} mismatches"),
    )
}

// ---- 10: truehash ----

fn c10_truehash(worlds: &[Finished]) -> Verdict {
    // identity element gives the base digest
    let base = TruehashParams::new(16, 20).unwrap();
    let identity_ok = (0..100u64).all(|n| truehash(&base, b"hdr", n) == vector_digest(&pad_header(b"hdr", n, 16).0));

    // two nodes derive the same element at every epoch from the same history
    let mut a = base.clone();
    let mut b = TruehashParams::new(16, 20).unwrap();
    let mut chain: Vec<Digest256> = Vec::new();
    let mut epochs_agree = true;
    for h in 1..=2000u64 {
        chain.push(digest(&h.to_be_bytes()));
        if a.is_rotation_height(h) {
            let hist = &chain[chain.len() - 20..];
            a = rotate_element(h, hist, &a).unwrap();
            b = rotate_element(h, hist, &b).unwrap();
            epochs_agree &= a == b && truehash(&a, b"x", h) == truehash(&b, b"x", h);
        }
    }
    // and inside full runs every honest node holds the same element at each epoch
    let mut checked = 0;
    for w in worlds {
        let tips: Vec<_> = w.world.honest_nodes().map(|n| n.view.tip().clone()).collect();
        let common = tips.iter().map(|t| t.common_ancestor_height(&tips[0])).min().unwrap_or(0);
        let e = w.world.cfg.mining.epoch_length;
        for h in (e..=common).step_by(e as usize) {
            let first = tips[0].at_height(h).unwrap().child_params().clone();
            epochs_agree &= tips.iter().all(|t| *t.at_height(h).unwrap().child_params() == first);
            checked += 1;
        }
    }

    // block count over 10^5 draws (one per tick), rotating every epoch
    let p = MiningParams::from_intervals(20, 2, 1);
    let prob = p.block_target.probability();
    let mut params = base.clone();
    let mut hist: Vec<Digest256> = Vec::new();
    let mut found = 0u64;
    for t in 0..100_000u64 {
        let h = truehash(&params, &t.to_be_bytes(), t);
        if p.block_target.passes(h.prefix_u64()) {
            found += 1;
            hist.push(h);
            let height = hist.len() as u64;
            if params.is_rotation_height(height) {
                params = rotate_element(height, &hist[hist.len() - 20..], &params).unwrap();
            }
        }
    }
    let mean = 100_000.0 * prob;
    let sd = (mean * (1.0 - prob)).sqrt();
    let in_bounds = (found as f64 - mean).abs() <= 3.0 * sd;
    verdict(
        identity_ok && epochs_agree && in_bounds && checked > 0,
        format!("identity ok {identity_ok}; epochs agree {epochs_agree} ({checked} in-run checks); {found} blocks vs {mean:.0} ± {:.0}", 3.0 * sd),
    )
}

// ---- 11: rewards ----

fn c11_rewards(suite: &[SuiteRun], worlds: &[Finished]) -> Verdict {
    let half = reward_split(4, 4, 1000) == Ok((500, 500)) && reward_split(7, 7, 999_999) == Ok((499_999, 500_000));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let exhaustive = (0..10_000).all(|_| {
        let (n, alpha, total) = (rng.gen_range(0..50), rng.gen_range(2..50), rng.gen_range(0..1_000_000));
        let (b, p) = reward_split(n, alpha, total).unwrap();
        b + p == total
    });
    let reports = suite.iter().map(|s| &s.report).chain(worlds.iter().map(|w| &w.report));
    let (mut runs, mut conserved) = (0, 0);
    let mut settled = 0;
    for r in reports {
        runs += 1;
        conserved += r.rewards.conservation_ok as usize;
        settled += r.rewards.settlements.len();
    }
    verdict(
        half && exhaustive && conserved == runs && settled > 0,
        format!(
            "n=alpha splits 50-50: {half}; conservation held in {conserved}/{runs} runs, {settled} gas settlements"
        ),
    )
}

// ---- 12: determinism ----

fn c12_determinism() -> Verdict {
    let mut same = Vec::new();
    for name in ["honest_baseline", "byzantine_third", "sharded"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_scenario(bundled(name), a.path(), true).unwrap();
        run_scenario(bundled(name), b.path(), true).unwrap();
        let files = ["metrics.json", "chain.jsonl", "trace.jsonl", "timeseries.csv"];
        let eq =
            files.iter().all(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap());
        same.push((name, eq));
    }
    verdict(same.iter().all(|(_, e)| *e), format!("byte-identical reruns: {same:?}"))
}

fn main() {
    let start = Instant::now();
    let suite = run_suite();
    let worlds: Vec<Finished> =
        run_batch(vec![bundled("honest_baseline"), bundled("partition")], false, Mode::Parallel)
            .into_iter()
            .map(|r| r.expect("bundled run"))
            .collect();
    type Check<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let checks: Vec<Check> = vec![
        ("safety suite", Box::new(|| c1_safety(&suite))),
        ("liveness suite", Box::new(|| c2_liveness(&suite))),
        ("quorum boundary", Box::new(c3_quorum)),
        ("fruitchain fairness", Box::new(c4_fairness)),
        ("fork choice and packaging", Box::new(c5_fork_choice_and_packaging)),
        ("timestamp guard", Box::new(c6_timestamp_guard)),
        ("election", Box::new(|| c7_election(&suite))),
        ("gossip matrix", Box::new(c8_gossip_matrix)),
        ("sharding serializability", Box::new(c9_sharding)),
        ("truehash", Box::new(|| c10_truehash(&worlds))),
        ("reward arithmetic", Box::new(|| c11_rewards(&suite, &worlds))),
        ("determinism", Box::new(c12_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        failed += !v.ok as usize;
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if v.ok { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} passed in {:.1}s", checks.len() - failed, checks.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
