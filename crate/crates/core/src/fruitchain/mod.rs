//! The snailchain: fruit and block mining, recency, validation and chain
//! adoption.
//!
//! A chain is a persistent linked list of [`ChainLink`]s; forks share their
//! common prefix. Each link caches the cumulative fruit count, fruit
//! difficulty sum, highest included fruit serial, and the truehash element in
//! force for its children, so adoption and mining never rescan history.

mod choice;
mod io;
mod link;
mod mining;
mod view;

pub use choice::{fork_choice, select_contiguous, ForkChoiceError};
pub use io::{dump_chain, load_chain, ChainIoError};
pub use link::{is_recent, ChainLink};
pub use mining::{mine_step, MineOutcome, MiningTemplate};
pub use view::{ChainOutcome, ChainView, FastLookup, FruitOutcome, NoFastBlocks};

use serde::{Deserialize, Serialize};

pub const DEFAULT_RECENCY: u64 = 17;

/// Threshold on a 64-bit hash slice: a draw passes when the slice is
/// strictly below the target. `Target::MAX` (2^64) always passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Target(pub u128);

impl Target {
    pub const MAX: Target = Target(1u128 << 64);

    /// Target whose per-draw success probability is `p`.
    pub fn from_probability(p: f64) -> Target {
        let p = p.clamp(0.0, 1.0);
        let t = (p * 18_446_744_073_709_551_616.0).round() as u128;
        Target(t.clamp(1, 1u128 << 64))
    }

    pub fn probability(&self) -> f64 {
        self.0 as f64 / 18_446_744_073_709_551_616.0
    }

    pub fn passes(&self, slice: u64) -> bool {
        (slice as u128) < self.0
    }

    /// Expected draws per success, `⌈2^64 / target⌉`. Used as the
    /// difficulty weight recorded in blocks and fruits.
    pub fn work(&self) -> u64 {
        let w = (1u128 << 64).div_ceil(self.0);
        w.min(u64::MAX as u128) as u64
    }
}

/// How competing fruits for the same message are ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FruitTieBreak {
    /// Lower mining hash wins.
    #[default]
    LowerHash,
    /// Lower recency pointer wins.
    LowerPointer,
}

/// Which chain weight drives adoption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRule {
    /// Adopt strictly more fruits; blocks package fruits.
    #[default]
    Fruitchain,
    /// Adopt strictly longer chains; blocks carry no fruits.
    Nakamoto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub block_target: Target,
    pub fruit_target: Target,
    /// λ: a fruit is recent when it hangs from one of the last λ blocks.
    pub recency: u64,
    /// κ: depth of the `h'` pointer below the tip.
    pub pointer_window: u64,
    pub block_interval: u64,
    pub fruit_interval: u64,
    /// Blocks at heights that are multiples of this carry `to_elect`; 0 never.
    pub elect_interval: u64,
    pub tie_break: FruitTieBreak,
    pub rule: ChainRule,
}

impl MiningParams {
    /// Targets for the given expected intervals (in ticks) when the whole
    /// network performs `draws_per_tick` hash evaluations per tick.
    pub fn from_intervals(block_interval: u64, fruit_interval: u64, draws_per_tick: u64) -> Self {
        let draws = draws_per_tick.max(1) as f64;
        MiningParams {
            block_target: Target::from_probability(1.0 / (block_interval.max(1) as f64 * draws)),
            fruit_target: Target::from_probability(1.0 / (fruit_interval.max(1) as f64 * draws)),
            recency: DEFAULT_RECENCY,
            pointer_window: DEFAULT_RECENCY,
            block_interval,
            fruit_interval,
            elect_interval: 0,
            tie_break: FruitTieBreak::default(),
            rule: ChainRule::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.recency == 0 {
            return Err("recency must be ≥ 1".into());
        }
        if self.block_interval == 0 || self.fruit_interval == 0 {
            return Err("intervals must be > 0".into());
        }
        if self.rule == ChainRule::Fruitchain && self.block_target > self.fruit_target {
            return Err("block target must not be easier than fruit target".into());
        }
        Ok(())
    }

    pub fn expects_elect_flag(&self, height: u64) -> bool {
        self.elect_interval > 0 && height > 0 && height.is_multiple_of(self.elect_interval)
    }
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams::from_intervals(600, 1, 1)
    }
}

/// Why a block or fruit failed validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidReason {
    #[error("parent link mismatch")]
    ParentMismatch,
    #[error("height is not parent height + 1")]
    BadHeight,
    #[error("pointer hash or number mismatch")]
    BadPointer,
    #[error("difficulty fields disagree with parameters")]
    BadDifficulty,
    #[error("to_elect flag mismatch")]
    BadElectFlag,
    #[error("fruits_hash does not commit to the fruit list")]
    BadFruitsHash,
    #[error("mining hash does not verify")]
    BadHash,
    #[error("hash above target")]
    AboveTarget,
    #[error("fruit serials not contiguous (expected {expected}, found {found})")]
    NonContiguous { expected: u64, found: u64 },
    #[error("fruit with serial {serial} is not recent")]
    StaleFruit { serial: u64 },
    #[error("fruit digest does not match fast block {serial}")]
    DigestMismatch { serial: u64 },
    #[error("fruits present under the Nakamoto rule")]
    UnexpectedFruits,
    #[error("chain does not start at the shared genesis")]
    WrongGenesis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("invalid fruit: {0}")]
    InvalidFruit(InvalidReason),
    #[error("invalid chain at height {height}: {reason}")]
    InvalidChain { height: u64, reason: InvalidReason },
}
