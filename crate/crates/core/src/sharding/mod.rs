//! Sharded speculative transaction processing.
//!
//! Each transaction runs on its home shard and reads or writes data sectors
//! hosted by any shard. Every access returns timestamp metadata that narrows
//! the transaction's `[lower, upper]` window; at the end a commit timestamp
//! `cts` is picked inside the window and every touched shard is asked to
//! precommit it. Shards emit per-batch logs sorted by `cts`, which the
//! primary shard merges, screens and filters into the day log.
//!
//! Hosts additionally validate each precommit against the sector versions
//! the transaction observed and reserve the sectors until the outcome is
//! known. The bound rules alone do not order a reader after a concurrent
//! writer that commits in between; the host checks make every committed
//! history equal the serial execution in `cts` order.

mod host;
mod output;
mod runner;
mod tx;

pub use host::{DataSector, HostReply, HostRequest, ShardState};
pub use output::{
    lis_filter, primary_collect, shard_output_log, BatchEntry, CollectParams, DayLog, ReceivedBatch, ShardBatch,
};
pub use runner::{run_sharded, FaultMode, ShardFault, ShardedOutcome, ShardedScenario, TxSpec, WorkloadShape};
pub use tx::{AbortReason, Op, ShardTx, TxState, WriteValue};

use serde::{Deserialize, Serialize};

pub type ShardId = u32;
pub type TxId = u64;
/// Logical timestamp. Sector clocks start at −1.
pub type Ts = i64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardingParams {
    /// C: number of normal shards.
    pub shards: u32,
    /// Replicas per shard.
    pub shard_size: usize,
    /// T_o: how long to wait for a remote quorum, in ticks.
    pub timeout: u64,
    /// Ticks between batch submissions.
    pub batch_interval: u64,
    /// How long the primary waits for a round's missing batches.
    pub batch_timeout: u64,
}

impl ShardingParams {
    /// Faulty replicas tolerated per shard.
    pub fn f(&self) -> usize {
        self.shard_size.saturating_sub(1) / 3
    }

    /// Matching replies needed from a remote shard.
    pub fn reply_quorum(&self) -> usize {
        2 * self.f() + 1
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.shards == 0 {
            return Err("need at least one shard".into());
        }
        if self.shard_size < 3 * self.f() + 1 || self.shard_size == 0 {
            return Err(format!("shard size {} too small", self.shard_size));
        }
        if self.timeout == 0 || self.batch_interval == 0 {
            return Err("timeouts and batch interval must be > 0".into());
        }
        Ok(())
    }
}

impl Default for ShardingParams {
    fn default() -> Self {
        ShardingParams { shards: 3, shard_size: 4, timeout: 40, batch_interval: 20, batch_timeout: 30 }
    }
}

/// Host shard of `addr`: the address space split into `shards` equal
/// contiguous ranges.
pub fn host(addr: u64, shards: u32) -> ShardId {
    ((addr as u128 * shards as u128) >> 64) as ShardId
}

/// First address of a shard's range; handy for placing sectors.
pub fn range_start(shard: ShardId, shards: u32) -> u64 {
    (((shard as u128) << 64).div_ceil(shards as u128)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_partition() {
        assert_eq!(host(u64::MAX, 1), 0);
        assert_eq!(host(12345, 1), 0);
        let q = 1u64 << 62;
        assert_eq!(host(q, 4), 1);
        assert_eq!(host(q - 1, 4), 0);
        assert_eq!(host(u64::MAX, 4), 3);
        for s in 0..7 {
            assert_eq!(host(range_start(s, 7), 7), s);
            if s > 0 {
                assert_eq!(host(range_start(s, 7) - 1, 7), s - 1);
            }
        }
    }
}
