use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};

use super::{ShardId, Ts, TxId};

/// One committed transaction in a shard batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub id: TxId,
    pub home: ShardId,
    pub cts: Ts,
    pub physical_timestamp: u64,
    pub reads: Vec<u64>,
    pub writes: Vec<(u64, i64)>,
}

impl Encode for BatchEntry {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.id).u32(self.home).i64(self.cts).u64(self.physical_timestamp);
        w.u32(self.reads.len() as u32);
        for &a in &self.reads {
            w.u64(a);
        }
        w.u32(self.writes.len() as u32);
        for &(a, v) in &self.writes {
            w.u64(a).i64(v);
        }
    }
}

impl Decode for BatchEntry {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let (id, home, cts, physical_timestamp) = (r.u64()?, r.u32()?, r.i64()?, r.u64()?);
        let n = r.u32()?;
        let reads = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
        let n = r.u32()?;
        let writes = (0..n).map(|_| Ok((r.u64()?, r.i64()?))).collect::<Result<_, CodecError>>()?;
        Ok(BatchEntry { id, home, cts, physical_timestamp, reads, writes })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardBatch {
    pub shard: ShardId,
    pub counter: u64,
    pub entries: Vec<BatchEntry>,
}

impl Encode for ShardBatch {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.shard).u64(self.counter).seq(&self.entries);
    }
}

impl Decode for ShardBatch {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ShardBatch { shard: r.u32()?, counter: r.u64()?, entries: r.seq()? })
    }
}

impl ShardBatch {
    /// Lower median of the physical timestamps.
    fn median_tp(&self) -> Option<u64> {
        let mut v: Vec<u64> = self.entries.iter().map(|e| e.physical_timestamp).collect();
        v.sort_unstable();
        v.get(v.len().saturating_sub(1) / 2).copied()
    }

    fn tp_range(&self) -> Option<(u64, u64)> {
        let tps = self.entries.iter().map(|e| e.physical_timestamp);
        Some((tps.clone().min()?, tps.max()?))
    }
}

/// Orders a shard's newly committed transactions by commit timestamp,
/// breaking ties by physical timestamp, then id.
pub fn shard_output_log(shard: ShardId, counter: u64, mut committed: Vec<BatchEntry>) -> ShardBatch {
    committed.sort_by_key(|e| (e.cts, e.physical_timestamp, e.id));
    ShardBatch { shard, counter, entries: committed }
}

/// Indices of a longest non-decreasing subsequence; among those, the
/// lexicographically smallest index list.
pub fn lis_filter(tps: &[u64]) -> Vec<usize> {
    let n = tps.len();
    // longest run starting at each index
    let mut len = vec![1usize; n];
    for i in (0..n).rev() {
        for j in i + 1..n {
            if tps[j] >= tps[i] && len[j] + 1 > len[i] {
                len[i] = len[j] + 1;
            }
        }
    }
    let Some(&best) = len.iter().max() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(best);
    let mut need = best;
    let mut floor = 0u64;
    let mut from = 0;
    while need > 0 {
        let i = (from..n).find(|&i| len[i] == need && tps[i] >= floor).expect("dp guarantees a continuation");
        out.push(i);
        floor = tps[i];
        from = i + 1;
        need -= 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceivedBatch {
    pub batch: ShardBatch,
    pub arrival: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectParams {
    pub shards: u32,
    pub batch_timeout: u64,
    /// Widens every other batch's [min, max] range on both sides before the
    /// median test. Zero is the bare envelope.
    pub tp_slack: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayLog {
    pub entries: Vec<BatchEntry>,
    /// (round, shard) pairs with no on-time batch.
    pub missing: Vec<(u64, ShardId)>,
    pub failed_rounds: Vec<u64>,
    /// (round, shard) batches thrown out for inconsistent timestamps.
    pub invalid_batches: Vec<(u64, ShardId)>,
    /// Transactions dropped because they read a sector written by an
    /// invalidated transaction in the same round.
    pub dependent_aborts: Vec<TxId>,
    /// Transactions dropped by the non-decreasing timestamp filter.
    pub filtered: Vec<TxId>,
    /// Raised by any failed round; takes effect at the next term boundary.
    pub committee_switch: bool,
}

impl DayLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Merges the shards' batches into one ordered log.
///
/// Batches are grouped by counter. A round fails when some shard's batch is
/// absent or arrives more than `batch_timeout` after the round's first
/// arrival; the batches that did arrive are still merged. Within a round, a
/// non-empty batch is invalid when its median physical timestamp lies
/// outside the [min, max] range (widened by `tp_slack`) of a strict majority of the other shards'
/// batches (empty batches never count as violated). Invalid batches and
/// same-round readers of their writes are dropped, then the survivors,
/// ordered by (round, cts, physical timestamp, id), go through
/// [`lis_filter`].
pub fn primary_collect(batches: &[ReceivedBatch], params: &CollectParams) -> DayLog {
    let mut rounds: BTreeMap<u64, BTreeMap<ShardId, &ReceivedBatch>> = BTreeMap::new();
    for rb in batches {
        if rb.batch.shard < params.shards {
            rounds.entry(rb.batch.counter).or_default().entry(rb.batch.shard).or_insert(rb);
        }
    }
    let mut log = DayLog::default();
    let mut merged: Vec<(u64, BatchEntry)> = Vec::new();
    for (&round, got) in &rounds {
        let first = got.values().map(|rb| rb.arrival).min().expect("round has a batch");
        let on_time: BTreeMap<ShardId, &ShardBatch> = got
            .iter()
            .filter(|(_, rb)| rb.arrival <= first + params.batch_timeout)
            .map(|(&s, rb)| (s, &rb.batch))
            .collect();
        let missing: Vec<ShardId> = (0..params.shards).filter(|s| !on_time.contains_key(s)).collect();
        if !missing.is_empty() {
            log.failed_rounds.push(round);
            log.committee_switch = true;
            log.missing.extend(missing.iter().map(|&s| (round, s)));
        }

        let mut invalid = BTreeSet::new();
        for (&s, b) in &on_time {
            let Some(median) = b.median_tp() else { continue };
            let others: Vec<&&ShardBatch> = on_time.iter().filter(|(&o, _)| o != s).map(|(_, b)| b).collect();
            let violated = others
                .iter()
                .filter(|o| {
                    o.tp_range().is_some_and(|(lo, hi)| {
                        median < lo.saturating_sub(params.tp_slack) || median > hi.saturating_add(params.tp_slack)
                    })
                })
                .count();
            if violated * 2 > others.len() {
                invalid.insert(s);
                log.invalid_batches.push((round, s));
            }
        }

        let mut round_entries: Vec<BatchEntry> = Vec::new();
        let mut tainted: BTreeSet<u64> = BTreeSet::new();
        for (s, b) in &on_time {
            if invalid.contains(s) {
                tainted.extend(b.entries.iter().flat_map(|e| e.writes.iter().map(|w| w.0)));
            } else {
                round_entries.extend(b.entries.iter().cloned());
            }
        }
        round_entries.sort_by_key(|e| (e.cts, e.physical_timestamp, e.id));
        for e in round_entries {
            if e.reads.iter().any(|a| tainted.contains(a)) {
                tainted.extend(e.writes.iter().map(|w| w.0));
                log.dependent_aborts.push(e.id);
            } else {
                merged.push((round, e));
            }
        }
    }

    let tps: Vec<u64> = merged.iter().map(|(_, e)| e.physical_timestamp).collect();
    let keep: BTreeSet<usize> = lis_filter(&tps).into_iter().collect();
    for (i, (_, e)) in merged.into_iter().enumerate() {
        if keep.contains(&i) {
            log.entries.push(e);
        } else {
            log.filtered.push(e.id);
        }
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: TxId, cts: Ts, tp: u64) -> BatchEntry {
        BatchEntry { id, home: 0, cts, physical_timestamp: tp, reads: vec![], writes: vec![] }
    }

    fn received(shard: ShardId, counter: u64, arrival: u64, entries: Vec<BatchEntry>) -> ReceivedBatch {
        ReceivedBatch { batch: ShardBatch { shard, counter, entries }, arrival }
    }

    /// Exhaustive search over all subsets; ties go to the lexicographically
    /// smallest index list.
    fn brute_lis(tps: &[u64]) -> Vec<usize> {
        let n = tps.len();
        let mut best: Vec<usize> = Vec::new();
        for mask in 0u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if !idx.windows(2).all(|w| tps[w[0]] <= tps[w[1]]) {
                continue;
            }
            if idx.len() > best.len() || (idx.len() == best.len() && idx < best) {
                best = idx;
            }
        }
        best
    }

    #[test]
    fn lis_examples() {
        assert_eq!(lis_filter(&[3, 1, 4, 1, 5]), vec![0, 2, 4]);
        assert_eq!(lis_filter(&[1, 2, 2, 3]), vec![0, 1, 2, 3]);
        assert_eq!(lis_filter(&[5, 4, 3]), vec![0]);
        assert!(lis_filter(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn lis_matches_brute_force(tps in proptest::collection::vec(0u64..6, 0..=15)) {
            prop_assert_eq!(lis_filter(&tps), brute_lis(&tps));
        }
    }

    #[test]
    fn output_order() {
        let b = shard_output_log(1, 0, vec![entry(1, 5, 0), entry(2, 3, 0), entry(3, 9, 0)]);
        assert_eq!(b.entries.iter().map(|e| e.cts).collect::<Vec<_>>(), vec![3, 5, 9]);
        let b = shard_output_log(1, 0, vec![entry(1, 4, 20), entry(2, 4, 10)]);
        assert_eq!(b.entries[0].physical_timestamp, 10);
        assert!(shard_output_log(1, 7, vec![]).entries.is_empty());
    }

    #[test]
    fn batch_round_trip() {
        let mut e = entry(9, -1, 4);
        e.reads = vec![1, 2];
        e.writes = vec![(3, -7)];
        let b = ShardBatch { shard: 2, counter: 5, entries: vec![e, entry(10, 8, 8)] };
        assert_eq!(ShardBatch::decode(&b.encode()).unwrap(), b);
    }

    #[test]
    fn merged_when_all_arrive() {
        let p = CollectParams { shards: 2, batch_timeout: 10, tp_slack: 0 };
        let log = primary_collect(
            &[received(0, 0, 5, vec![entry(1, 2, 1), entry(2, 6, 5)]), received(1, 0, 7, vec![entry(3, 4, 4)])],
            &p,
        );
        // shard 0 median 1 lies outside shard 1 range [4, 4]
        assert_eq!(log.invalid_batches, vec![(0, 0)]);
        let p = CollectParams { tp_slack: 5, ..p };
        let log = primary_collect(
            &[received(0, 0, 5, vec![entry(1, 2, 1), entry(2, 6, 3)]), received(1, 0, 7, vec![entry(3, 4, 2)])],
            &p,
        );
        assert_eq!(log.entries.iter().map(|e| e.id).collect::<Vec<_>>(), vec![1, 3, 2]);
        assert!(!log.committee_switch);
    }

    #[test]
    fn silent_shard_triggers_switch() {
        let p = CollectParams { shards: 3, batch_timeout: 10, tp_slack: 0 };
        let log = primary_collect(
            &[received(0, 0, 5, vec![]), received(1, 0, 6, vec![]), received(2, 0, 16, vec![entry(1, 1, 1)])],
            &p,
        );
        assert!(log.committee_switch);
        assert_eq!(log.missing, vec![(0, 2)]);
        assert!(log.entries.is_empty());
        let log = primary_collect(&[received(0, 0, 5, vec![]), received(1, 0, 6, vec![])], &p);
        assert_eq!(log.failed_rounds, vec![0]);
    }

    #[test]
    fn outlier_batch_is_dropped_with_dependents() {
        let p = CollectParams { shards: 3, batch_timeout: 10, tp_slack: 0 };
        let mut w = entry(1, 1, 100);
        w.writes = vec![(42, 1)];
        let mut r = entry(2, 3, 12);
        r.reads = vec![42];
        let log = primary_collect(
            &[
                received(0, 0, 1, vec![entry(3, 2, 10), r]),
                received(1, 0, 1, vec![entry(4, 2, 10), entry(5, 5, 14)]),
                received(2, 0, 1, vec![w, entry(6, 9, 101)]),
            ],
            &p,
        );
        assert_eq!(log.invalid_batches, vec![(0, 2)]);
        assert_eq!(log.dependent_aborts, vec![2]);
        assert_eq!(log.entries.iter().map(|e| e.id).collect::<Vec<_>>(), vec![3, 4, 5]);
    }
}
