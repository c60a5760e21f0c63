use std::collections::BTreeMap;

use hybrid_core::sharding::{
    host, run_sharded, Op, ShardTx, ShardedOutcome, ShardedScenario, ShardingParams, TxState, WorkloadShape, WriteValue,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Re-executes committed transactions one at a time in cts order against
/// the initial values. Returns each transaction's reads and the final
/// values.
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
                Op::Read(a) => {
                    let v = local.get(&a).or(values.get(&a)).copied().unwrap_or(0);
                    seen.push((a, v));
                }
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

fn check(sc: &ShardedScenario, out: &ShardedOutcome) {
    let committed: Vec<&ShardTx> = out.txs.iter().filter(|t| t.state == TxState::Committed).collect();
    let (reads, values) = serial_replay(&sc.initial, &committed);
    for t in &committed {
        assert_eq!(&t.reads, &reads[&t.id], "tx {} reads, seed {}", t.id, sc.seed);
        let cts = t.cts.unwrap();
        assert!(t.lower <= cts && t.upper.is_some_and(|u| cts <= u));
    }
    for (a, v) in values {
        assert_eq!(out.value(a).unwrap_or(0), v, "sector {a}, seed {}", sc.seed);
    }
    for t in &out.txs {
        assert!(t.is_done(), "tx {} unfinished", t.id);
        for w in t.bound_trace.windows(2) {
            assert!(w[1].0 >= w[0].0, "lower bound fell");
            assert!(match (w[0].1, w[1].1) {
                (None, _) => true,
                (Some(a), Some(b)) => b <= a,
                (Some(_), None) => false,
            });
        }
    }
    // every remote shard in a committed tx's footprint returned a quorum
    let q = sc.params.reply_quorum();
    for t in &committed {
        let remote: std::collections::BTreeSet<u32> =
            t.ops.iter().map(|o| host(o.addr(), sc.params.shards)).filter(|&s| s != t.home).collect();
        let got = &out.commit_quorums[&t.id];
        for s in remote {
            if t.observed.iter().any(|r| host(r.0, sc.params.shards) == s)
                || t.writes.iter().any(|w| host(w.0, sc.params.shards) == s)
            {
                assert!(got.iter().any(|&(gs, n)| gs == s && n >= q), "tx {} shard {s}", t.id);
            }
        }
    }
}

#[test]
fn committed_histories_replay_serially() {
    let mut committed = 0;
    let mut aborted = 0;
    for seed in 0..500u64 {
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
        let out = run_sharded(&sc).unwrap();
        check(&sc, &out);
        committed += out.txs.iter().filter(|t| t.state == TxState::Committed).count();
        aborted += out.txs.iter().filter(|t| t.state == TxState::Aborted).count();
    }
    // the oracle must see both outcomes in volume
    assert!(committed > 300 && aborted > 100, "{committed} / {aborted}");
}

#[test]
fn host_partition_is_balanced() {
    // 10^4 uniform addresses over 4 shards: each count within 2500 ± 150,
    // about 3.5σ of the Binomial(10^4, 1/4) marginal
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0u32; 4];
    for _ in 0..10_000 {
        counts[host(rng.gen(), 4) as usize] += 1;
    }
    for c in counts {
        assert!((2350..=2650).contains(&c), "{counts:?}");
    }
}
