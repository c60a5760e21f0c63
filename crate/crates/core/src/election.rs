//! Fruit-merit committee election.
//!
//! Candidates are opted-in nodes with at least ν fruits in the window of
//! snail blocks ending at the flagged block. Each candidate owns an
//! equal-width slice of the unit interval (in node-id order), and uniform
//! draws from a PRNG keyed on the chained seed pick members until the
//! committee is full.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fruitchain::ChainLink;
use crate::hash::{digest_parts, Digest256};
use crate::types::NodeId;

pub const DEFAULT_WINDOW: u64 = 144;
pub const DEFAULT_MIN_FRUITS: u64 = 100;
pub const DEFAULT_CSIZE: usize = 31;

/// Draw budget when every candidate must be picked; far above the coupon
/// collector bound for any realistic candidate count.
const EXHAUSTION_DRAWS: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionParams {
    pub window: u64,
    /// ν: minimum fruits in the window.
    pub min_fruits: u64,
    pub csize: usize,
    pub opt_in: BTreeSet<NodeId>,
}

impl ElectionParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("election window must be ≥ 1".into());
        }
        if self.min_fruits == 0 {
            return Err("ν must be ≥ 1".into());
        }
        if self.csize < 4 {
            return Err(format!("csize {} below 4", self.csize));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ElectionError {
    #[error("no node meets the candidacy threshold")]
    NoCandidates,
}

/// Candidates in node-id order with their fruit counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<(NodeId, u64)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.candidates.iter().map(|c| c.0)
    }

    /// `I(i)` as `[lo, hi)` bounds on the unit interval.
    pub fn intervals(&self) -> Vec<(NodeId, f64, f64)> {
        let k = self.len() as f64;
        self.candidates.iter().enumerate().map(|(i, c)| (c.0, i as f64 / k, (i + 1) as f64 / k)).collect()
    }

    /// The candidate whose interval contains `draw / 2^64`.
    pub fn owner_of(&self, draw: u64) -> NodeId {
        let idx = ((draw as u128 * self.len() as u128) >> 64) as usize;
        self.candidates[idx].0
    }
}

/// Fruit counts by miner over the `window` blocks ending at `tip`.
pub fn fruit_counts(tip: &Arc<ChainLink>, window: u64) -> BTreeMap<NodeId, u64> {
    let mut counts = BTreeMap::new();
    for link in tip.ancestors().take(window as usize).filter(|l| l.height() > 0) {
        for f in &link.block().fruits {
            *counts.entry(f.miner).or_insert(0) += 1;
        }
    }
    counts
}

pub fn collect_candidates(tip: &Arc<ChainLink>, params: &ElectionParams) -> Result<CandidateSet, ElectionError> {
    let candidates: Vec<(NodeId, u64)> = fruit_counts(tip, params.window)
        .into_iter()
        .filter(|(id, n)| *n >= params.min_fruits && params.opt_in.contains(id))
        .collect();
    if candidates.is_empty() {
        return Err(ElectionError::NoCandidates);
    }
    Ok(CandidateSet { candidates })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionSeed {
    pub seed: Digest256,
}

impl ElectionSeed {
    /// Seed of the first election.
    pub const GENESIS: ElectionSeed = ElectionSeed { seed: Digest256::ZERO };

    /// The Γ draws keyed on this seed, as 64-bit fixed-point fractions.
    pub fn draws(&self) -> impl Iterator<Item = u64> {
        let mut rng = ChaCha8Rng::from_seed(self.seed.0);
        std::iter::repeat_with(move || rng.next_u64())
    }
}

/// Chains the previous seed with recent snail-block hashes.
pub fn derive_seed(prev: &ElectionSeed, recent_blocks: &[Digest256]) -> ElectionSeed {
    let mut parts: Vec<&[u8]> = vec![b"election", &prev.seed.0];
    parts.extend(recent_blocks.iter().map(|h| &h.0[..]));
    ElectionSeed { seed: digest_parts(&parts) }
}

/// Draws members until `csize` distinct eligible candidates are chosen, or
/// every eligible candidate is. Repeat picks and picks in `exclude` (members
/// of concurrently serving committees) are skipped. Output is in selection
/// order.
pub fn elect(cands: &CandidateSet, seed: &ElectionSeed, csize: usize, exclude: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let eligible = cands.ids().filter(|id| !exclude.contains(id)).count();
    let target = csize.min(eligible);
    let mut chosen = Vec::with_capacity(target);
    let mut seen = BTreeSet::new();
    if target == 0 {
        return chosen;
    }
    for draw in seed.draws().take(EXHAUSTION_DRAWS) {
        let id = cands.owner_of(draw);
        if exclude.contains(&id) || !seen.insert(id) {
            continue;
        }
        chosen.push(id);
        if chosen.len() == target {
            return chosen;
        }
    }
    // unreachable in practice; finish deterministically
    chosen.extend(cands.ids().filter(|id| !exclude.contains(id) && !seen.contains(id)).take(target - chosen.len()));
    chosen
}

/// One election record for export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionTranscript {
    pub term: u64,
    pub snail_height: u64,
    pub seed: Digest256,
    pub candidates: Vec<(NodeId, u64)>,
    pub selected: Vec<NodeId>,
    /// True when no candidate qualified and the incumbents stayed on.
    pub fallback: bool,
}
