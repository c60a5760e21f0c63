use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{host, ShardId, Ts, TxId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSector {
    pub addr: u64,
    pub value: i64,
    pub rts: Ts,
    pub wts: Ts,
    pub readers: Vec<TxId>,
    pub writers: Vec<TxId>,
}

impl DataSector {
    pub fn new(addr: u64, value: i64) -> Self {
        DataSector { addr, value, rts: -1, wts: -1, readers: Vec::new(), writers: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HostRequest {
    Read {
        tx: TxId,
        addr: u64,
    },
    Write {
        tx: TxId,
        addr: u64,
    },
    /// `reads` pairs each address with the write timestamp observed.
    Precommit {
        tx: TxId,
        cts: Ts,
        lower: Ts,
        upper: Option<Ts>,
        reads: Vec<(u64, Ts)>,
        writes: Vec<u64>,
    },
    Finalize {
        tx: TxId,
        commit: bool,
        cts: Ts,
        writes: Vec<(u64, i64)>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HostReply {
    Read { tx: TxId, addr: u64, value: i64, wts: Ts, writers: Vec<TxId> },
    Write { tx: TxId, addr: u64, rts: Ts, readers: Vec<TxId> },
    Commit { tx: TxId, counter: u64 },
    Abort { tx: TxId },
}

impl HostReply {
    pub fn tx(&self) -> TxId {
        match *self {
            HostReply::Read { tx, .. }
            | HostReply::Write { tx, .. }
            | HostReply::Commit { tx, .. }
            | HostReply::Abort { tx } => tx,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Reservation {
    cts: Ts,
    writes: Vec<u64>,
}

/// The replicated state of one shard. Every honest replica holds the same
/// copy, so one instance stands in for all of them.
#[derive(Clone, Debug)]
pub struct ShardState {
    pub id: ShardId,
    shards: u32,
    sectors: BTreeMap<u64, DataSector>,
    pending: BTreeMap<TxId, Reservation>,
    finalized: BTreeSet<TxId>,
    /// Batches emitted so far; the next batch carries this number.
    pub counter: u64,
}

impl ShardState {
    /// Keeps only the sectors this shard hosts.
    pub fn new(id: ShardId, shards: u32, initial: impl IntoIterator<Item = (u64, i64)>) -> Self {
        let sectors = initial
            .into_iter()
            .filter(|&(a, _)| host(a, shards) == id)
            .map(|(a, v)| (a, DataSector::new(a, v)))
            .collect();
        ShardState { id, shards, sectors, pending: BTreeMap::new(), finalized: BTreeSet::new(), counter: 0 }
    }

    pub fn hosts(&self, addr: u64) -> bool {
        host(addr, self.shards) == self.id
    }

    pub fn sector(&self, addr: u64) -> Option<&DataSector> {
        self.sectors.get(&addr)
    }

    pub fn sectors(&self) -> impl Iterator<Item = &DataSector> {
        self.sectors.values()
    }

    fn sector_mut(&mut self, addr: u64) -> &mut DataSector {
        self.sectors.entry(addr).or_insert_with(|| DataSector::new(addr, 0))
    }

    pub fn is_reserved(&self, tx: TxId) -> bool {
        self.pending.contains_key(&tx)
    }

    /// Handles one delivered request. Requests for sectors hosted elsewhere
    /// are ignored, as are finalizations (they need no reply).
    pub fn handle(&mut self, req: &HostRequest) -> Option<HostReply> {
        match req {
            &HostRequest::Read { tx, addr } => {
                if !self.hosts(addr) {
                    return None;
                }
                let s = self.sector_mut(addr);
                if !s.readers.contains(&tx) {
                    s.readers.push(tx);
                }
                Some(HostReply::Read { tx, addr, value: s.value, wts: s.wts, writers: s.writers.clone() })
            }
            &HostRequest::Write { tx, addr } => {
                if !self.hosts(addr) {
                    return None;
                }
                let s = self.sector_mut(addr);
                if !s.writers.contains(&tx) {
                    s.writers.push(tx);
                }
                Some(HostReply::Write { tx, addr, rts: s.rts, readers: s.readers.clone() })
            }
            HostRequest::Precommit { tx, cts, lower, upper, reads, writes } => {
                let ok = self.admits(*tx, *cts, *lower, *upper, reads, writes);
                if !ok {
                    return Some(HostReply::Abort { tx: *tx });
                }
                let read: Vec<u64> = reads.iter().map(|r| r.0).filter(|&a| self.hosts(a)).collect();
                for a in read {
                    let s = self.sector_mut(a);
                    s.rts = s.rts.max(*cts);
                }
                let writes: Vec<u64> = writes.iter().copied().filter(|&a| self.hosts(a)).collect();
                self.pending.insert(*tx, Reservation { cts: *cts, writes });
                Some(HostReply::Commit { tx: *tx, counter: self.counter })
            }
            HostRequest::Finalize { tx, commit, cts, writes } => {
                let tx = *tx;
                self.pending.remove(&tx);
                self.finalized.insert(tx);
                if *commit {
                    let own: Vec<(u64, i64)> = writes.iter().copied().filter(|w| self.hosts(w.0)).collect();
                    for (a, v) in own {
                        let s = self.sector_mut(a);
                        s.value = v;
                        s.wts = s.wts.max(*cts);
                    }
                }
                for s in self.sectors.values_mut() {
                    s.readers.retain(|&t| t != tx);
                    s.writers.retain(|&t| t != tx);
                }
                None
            }
        }
    }

    fn admits(&self, tx: TxId, cts: Ts, lower: Ts, upper: Option<Ts>, reads: &[(u64, Ts)], writes: &[u64]) -> bool {
        if self.finalized.contains(&tx) || cts < lower || upper.is_some_and(|u| cts > u) {
            return false;
        }
        let other_writer = |a: u64| {
            self.pending.iter().filter(|(&t, _)| t != tx).find(|(_, r)| r.writes.contains(&a)).map(|(_, r)| r.cts)
        };
        for &(a, seen) in reads.iter().filter(|r| self.hosts(r.0)) {
            let wts = self.sector(a).map_or(-1, |s| s.wts);
            if wts != seen || cts <= wts || other_writer(a).is_some_and(|w| w <= cts) {
                return false;
            }
        }
        for &a in writes.iter().filter(|&&a| self.hosts(a)) {
            let (rts, wts) = self.sector(a).map_or((-1, -1), |s| (s.rts, s.wts));
            if cts <= rts || cts <= wts || other_writer(a).is_some() {
                return false;
            }
        }
        true
    }
}
