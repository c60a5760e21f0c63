//! Block rewards, the committee/miner split, and gas-pool settlement. All
//! arithmetic is integer; remainders are placed explicitly so totals are
//! exact.

use std::collections::{BTreeMap, BTreeSet};

use hybrid_core::{Address, NodeId, SnailBlock, Transaction};
use serde::{Deserialize, Serialize};

use crate::config::RewardConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("α must exceed 1, got {0}")]
    InvalidAlpha(u64),
}

/// `(committee share, miner share)` of `total` with `n` committees active:
/// `total·n/(α+n)` to committees, the rest (division remainder included) to
/// miners.
pub fn reward_split(n: u64, alpha: u64, total: u64) -> Result<(u64, u64), RewardError> {
    if alpha <= 1 {
        return Err(RewardError::InvalidAlpha(alpha));
    }
    let bft = (total as u128 * n as u128 / (alpha as u128 + n as u128)) as u64;
    Ok((bft, total - bft))
}

/// Splits a snail block's miner reward. The block miner takes
/// `base_permille` of the reward off the top, then `beta_permille` of the
/// remaining fruit pool; the rest of the pool goes to fruit miners, one
/// equal share per fruit. Every remainder goes to the block miner, as does
/// the whole reward when there are no fruits.
pub fn distribute_block_reward(
    block: &SnailBlock,
    reward: u64,
    beta_permille: u64,
    base_permille: u64,
) -> BTreeMap<NodeId, u64> {
    let mut out = BTreeMap::new();
    let base = (reward as u128 * base_permille as u128 / 1000) as u64;
    let pool = reward - base;
    let fruits = block.fruits.len() as u64;
    if fruits == 0 {
        out.insert(block.coinbase, reward);
        return out;
    }
    let cut = (pool as u128 * beta_permille as u128 / 1000) as u64;
    let shared = pool - cut;
    let each = shared / fruits;
    for f in &block.fruits {
        *out.entry(f.miner).or_insert(0) += each;
    }
    *out.entry(block.coinbase).or_insert(0) += base + cut + (shared - each * fruits);
    out.retain(|_, v| *v > 0);
    out
}

/// One committee's gas pool for a term: what each party paid in.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GasPool {
    pub committee: u64,
    pub contributions: BTreeMap<Address, u64>,
}

impl GasPool {
    pub fn total(&self) -> u64 {
        self.contributions.values().sum()
    }

    /// Mean contribution, rounded down.
    pub fn mu(&self) -> u64 {
        self.total().checked_div(self.contributions.len() as u64).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: Address,
    pub to: Address,
    pub amount: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub mu: u64,
    pub transfers: Vec<Transfer>,
    /// Equal shares of the pool paid to the committee.
    pub principal: BTreeMap<NodeId, u64>,
}

/// Brings every contributor to the mean. Targets are `⌊mean⌋`, plus one for
/// the `total mod n` largest contributors so targets sum to the total.
/// Debtors pay creditors, largest debt matched to largest credit first. The
/// pool itself is paid out in equal shares to `members`, remainder to the
/// first members in order.
pub fn settle_gas_pool(pool: &GasPool, members: &[NodeId]) -> Settlement {
    let n = pool.contributions.len() as u64;
    let mu = pool.mu();
    let mut transfers = Vec::new();
    if n > 0 {
        let extra = pool.total() - mu * n;
        let mut by_size: Vec<(Address, u64)> = pool.contributions.iter().map(|(a, c)| (*a, *c)).collect();
        by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut debtors = Vec::new();
        let mut creditors = Vec::new();
        for (i, (addr, c)) in by_size.into_iter().enumerate() {
            let target = mu + u64::from((i as u64) < extra);
            if c < target {
                debtors.push((addr, target - c));
            } else if c > target {
                creditors.push((addr, c - target));
            }
        }
        debtors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        creditors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let (mut i, mut j) = (0, 0);
        while i < debtors.len() && j < creditors.len() {
            let amount = debtors[i].1.min(creditors[j].1);
            transfers.push(Transfer { from: debtors[i].0, to: creditors[j].0, amount });
            debtors[i].1 -= amount;
            creditors[j].1 -= amount;
            if debtors[i].1 == 0 {
                i += 1;
            }
            if creditors[j].1 == 0 {
                j += 1;
            }
        }
    }
    let mut principal = BTreeMap::new();
    if !members.is_empty() {
        let m = members.len() as u64;
        let total = pool.total();
        for (k, id) in members.iter().enumerate() {
            *principal.entry(*id).or_insert(0) += total / m + u64::from((k as u64) < total % m);
        }
    }
    Settlement { mu, transfers, principal }
}

/// Committee count driven by a moving average of settled pool means.
#[derive(Clone, Debug, PartialEq)]
pub struct CommitteeScaler {
    pub active: u64,
    window: usize,
    history: Vec<u64>,
    spawn: Option<f64>,
    retire: Option<f64>,
}

impl CommitteeScaler {
    pub fn new(active: u64, window: usize, spawn: Option<f64>, retire: Option<f64>) -> Self {
        CommitteeScaler { active, window: window.max(1), history: Vec::new(), spawn, retire }
    }

    pub fn moving_average(&self) -> Option<f64> {
        let tail = &self.history[self.history.len().saturating_sub(self.window)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<u64>() as f64 / tail.len() as f64)
    }

    /// Records a settled μ; the returned count applies from the next term.
    pub fn observe(&mut self, mu: u64) -> u64 {
        self.history.push(mu);
        if self.history.len() >= self.window {
            let avg = self.moving_average().expect("non-empty");
            if self.spawn.is_some_and(|s| avg > s) {
                self.active += 1;
            } else if self.retire.is_some_and(|r| avg < r) && self.active > 1 {
                self.active -= 1;
            }
        }
        self.active
    }
}

/// What a finished run hands the reward ledger.
pub struct LedgerInput<'a> {
    /// Snail blocks after genesis, oldest first.
    pub blocks: &'a [SnailBlock],
    pub window: u64,
    /// Committee members by term; empty when there is no committee.
    pub committees: Vec<Vec<NodeId>>,
    /// Committed transactions grouped by the term that wrote them.
    pub term_txs: BTreeMap<u64, Vec<Transaction>>,
    pub ended_terms: BTreeSet<u64>,
    pub initial_supply: u128,
    /// Sum of account balances in the final state.
    pub final_supply: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermSettlement {
    pub term: u64,
    pub active_committees: u64,
    pub gas_collected: u64,
    pub mu: u64,
    pub transfers: usize,
    pub transfer_volume: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardSummary {
    pub minted: u64,
    pub miner_rewards: u64,
    pub committee_rewards: u64,
    pub gas_collected: u64,
    pub gas_settled: u64,
    pub gas_unsettled: u64,
    pub settlements: Vec<TermSettlement>,
    /// Block rewards plus settled gas principal, per node.
    pub payouts: BTreeMap<NodeId, u64>,
    pub conservation_ok: bool,
}

/// Pays every block and settles every finished term's gas pool, then checks
/// that balances, unsettled pools and payouts add up to the initial supply
/// plus everything minted.
pub fn run_ledger(input: &LedgerInput, cfg: &RewardConfig) -> RewardSummary {
    let has_committee = !input.committees.is_empty();
    let mut scaler =
        CommitteeScaler::new(u64::from(has_committee), cfg.price_window, cfg.spawn_threshold, cfg.retire_threshold);
    let mut active: BTreeMap<u64, u64> = BTreeMap::new();
    let mut payouts: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut adjust: BTreeMap<Address, i128> = BTreeMap::new();
    let mut settlements = Vec::new();
    let (mut gas_collected, mut gas_settled, mut gas_unsettled) = (0u64, 0u64, 0u64);

    let last_term = input.term_txs.keys().chain(input.ended_terms.iter()).max().copied().unwrap_or(0);
    for term in 0..=last_term {
        active.insert(term, scaler.active);
        let mut pool = GasPool { committee: term, contributions: BTreeMap::new() };
        for tx in input.term_txs.get(&term).into_iter().flatten() {
            *pool.contributions.entry(tx.sender).or_insert(0) += tx.gas_cost();
        }
        gas_collected += pool.total();
        if !input.ended_terms.contains(&term) {
            gas_unsettled += pool.total();
            continue;
        }
        let members = input.committees.get(term as usize).cloned().unwrap_or_default();
        let s = settle_gas_pool(&pool, &members);
        for t in &s.transfers {
            *adjust.entry(t.from).or_insert(0) -= t.amount as i128;
            *adjust.entry(t.to).or_insert(0) += t.amount as i128;
        }
        for (m, v) in &s.principal {
            *payouts.entry(*m).or_insert(0) += v;
        }
        if members.is_empty() {
            gas_unsettled += pool.total();
        } else {
            gas_settled += pool.total();
        }
        settlements.push(TermSettlement {
            term,
            active_committees: scaler.active,
            gas_collected: pool.total(),
            mu: s.mu,
            transfers: s.transfers.len(),
            transfer_volume: s.transfers.iter().map(|t| t.amount).sum(),
        });
        if !pool.contributions.is_empty() {
            scaler.observe(s.mu);
        }
    }

    let (mut miner_rewards, mut committee_rewards) = (0u64, 0u64);
    for b in input.blocks {
        let term = b.number / input.window.max(1);
        let members = input.committees.get(term as usize).or(input.committees.last());
        let n = match members {
            Some(_) => active.get(&term).copied().unwrap_or(scaler.active),
            None => 0,
        };
        let (bft, pow) = reward_split(n, cfg.alpha, cfg.block_reward).expect("α validated");
        for (id, v) in distribute_block_reward(b, pow, cfg.beta_permille, cfg.base_permille) {
            *payouts.entry(id).or_insert(0) += v;
        }
        miner_rewards += pow;
        if let Some(m) = members.filter(|m| !m.is_empty()) {
            let k = m.len() as u64;
            for (idx, id) in m.iter().enumerate() {
                *payouts.entry(*id).or_insert(0) += bft / k + u64::from((idx as u64) < bft % k);
            }
            committee_rewards += bft;
        } else {
            miner_rewards += bft;
            *payouts.entry(b.coinbase).or_insert(0) += bft;
        }
    }

    let minted = cfg.block_reward as u128 * input.blocks.len() as u128;
    let paid: u128 = payouts.values().map(|v| *v as u128).sum();
    let net_adjust: i128 = adjust.values().sum();
    let lhs = input.final_supply as i128 + net_adjust + gas_unsettled as i128 + paid as i128;
    let rhs = input.initial_supply as i128 + minted as i128;
    RewardSummary {
        minted: minted as u64,
        miner_rewards,
        committee_rewards,
        gas_collected,
        gas_settled,
        gas_unsettled,
        settlements,
        payouts,
        conservation_ok: lhs == rhs && net_adjust == 0,
    }
}
