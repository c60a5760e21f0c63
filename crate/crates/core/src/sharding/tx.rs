use serde::{Deserialize, Serialize};

use super::{ShardId, Ts, TxId};

/// Value written by a transaction step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteValue {
    Const(i64),
    /// The value this transaction last read (0 if none) plus `delta`.
    LastReadPlus(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Read(u64),
    Write(u64, WriteValue),
}

impl Op {
    pub fn addr(&self) -> u64 {
        match *self {
            Op::Read(a) | Op::Write(a, _) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxState {
    Running,
    Precommit,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    #[error("no quorum of matching replies before the timeout")]
    Timeout,
    #[error("lower bound crossed upper bound")]
    BoundCross,
    #[error("a shard refused the precommit")]
    Refused,
}

/// A speculative transaction as seen by its home shard.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardTx {
    pub id: TxId,
    pub home: ShardId,
    pub ops: Vec<Op>,
    pub lower: Ts,
    /// `None` is +∞.
    pub upper: Option<Ts>,
    pub state: TxState,
    pub abort: Option<AbortReason>,
    pub before: Vec<TxId>,
    pub after: Vec<TxId>,
    pub cts: Option<Ts>,
    pub physical_timestamp: u64,
    /// (home shard, batch counter at commit).
    pub metadata: Option<(ShardId, u64)>,
    /// Read results in op order, buffered reads included.
    pub reads: Vec<(u64, i64)>,
    /// Sector versions seen by reads that reached a host: (addr, wts).
    pub observed: Vec<(u64, Ts)>,
    /// Buffered writes, last value per address wins at commit.
    pub writes: Vec<(u64, i64)>,
    /// Every (lower, upper) the transaction passed through.
    pub bound_trace: Vec<(Ts, Option<Ts>)>,
}

impl ShardTx {
    pub fn new(id: TxId, home: ShardId, ops: Vec<Op>, physical_timestamp: u64) -> Self {
        ShardTx {
            id,
            home,
            ops,
            lower: 0,
            upper: None,
            state: TxState::Running,
            abort: None,
            before: Vec::new(),
            after: Vec::new(),
            cts: None,
            physical_timestamp,
            metadata: None,
            reads: Vec::new(),
            observed: Vec::new(),
            writes: Vec::new(),
            bound_trace: vec![(0, None)],
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, TxState::Committed | TxState::Aborted)
    }

    pub fn raise_lower(&mut self, ts: Ts) {
        if ts > self.lower {
            self.lower = ts;
            self.bound_trace.push((self.lower, self.upper));
        }
    }

    pub fn lower_upper(&mut self, ts: Ts) {
        if self.upper.is_none_or(|u| ts < u) {
            self.upper = Some(ts);
            self.bound_trace.push((self.lower, self.upper));
        }
    }

    /// Buffered value for `addr`, if this transaction wrote it.
    pub fn buffered(&self, addr: u64) -> Option<i64> {
        self.writes.iter().rev().find(|w| w.0 == addr).map(|w| w.1)
    }

    pub fn last_read(&self) -> i64 {
        self.reads.last().map_or(0, |r| r.1)
    }

    pub fn resolve(&self, v: WriteValue) -> i64 {
        match v {
            WriteValue::Const(x) => x,
            WriteValue::LastReadPlus(d) => self.last_read().wrapping_add(d),
        }
    }

    /// Final value per written address.
    pub fn write_set(&self) -> Vec<(u64, i64)> {
        let mut out: Vec<(u64, i64)> = Vec::new();
        for &(a, v) in &self.writes {
            match out.iter_mut().find(|w| w.0 == a) {
                Some(w) => w.1 = v,
                None => out.push((a, v)),
            }
        }
        out
    }

    /// Narrows the window using the final bounds of the transactions this
    /// one must follow (`before`) and precede (`after`), then picks a
    /// commit timestamp. `bounds` yields `None` for aborted transactions,
    /// which are skipped.
    pub fn finish(&mut self, bounds: impl Fn(TxId) -> Option<(Ts, Option<Ts>)>) -> Result<Ts, AbortReason> {
        for id in self.before.clone() {
            if id == self.id {
                continue;
            }
            match bounds(id) {
                Some((_, Some(u))) => self.raise_lower(u),
                Some((_, None)) => return Err(self.abort(AbortReason::BoundCross)),
                None => {}
            }
        }
        for id in self.after.clone() {
            if id == self.id {
                continue;
            }
            if let Some((l, _)) = bounds(id) {
                self.lower_upper(l);
            }
        }
        let cts = match self.upper {
            Some(u) if self.lower > u => return Err(self.abort(AbortReason::BoundCross)),
            Some(u) => self.lower + (u - self.lower) / 2,
            None => self.lower + 1,
        };
        self.cts = Some(cts);
        self.state = TxState::Precommit;
        Ok(cts)
    }

    pub fn abort(&mut self, reason: AbortReason) -> AbortReason {
        self.state = TxState::Aborted;
        self.abort = Some(reason);
        reason
    }

    pub fn commit(&mut self, counter: u64) {
        let cts = self.cts.expect("precommitted");
        self.state = TxState::Committed;
        self.raise_lower(cts);
        self.lower_upper(cts);
        self.metadata = Some((self.home, counter));
    }
}
