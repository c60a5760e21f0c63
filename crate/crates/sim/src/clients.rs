//! Workload generator. Each client account keeps at most one transaction in
//! flight, so nonces stay in order; a transaction that is not committed
//! within the timestamp window is reissued with a fresh timestamp.

use hybrid_core::{Address, Transaction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::WorkloadConfig;

pub const CLIENT_BASE: u64 = 1_000_000;

#[derive(Clone, Debug)]
struct InFlight {
    tx: Transaction,
    first: u64,
    last: u64,
}

#[derive(Clone, Debug)]
struct Account {
    addr: Address,
    nonce: u64,
    inflight: Option<InFlight>,
}

pub struct Clients {
    accounts: Vec<Account>,
    rng: ChaCha8Rng,
    cfg: WorkloadConfig,
    time_window: u64,
    pub submitted: u64,
    pub committed: u64,
    pub reissued: u64,
    pub throttled: u64,
    /// Largest submission-to-commit delay seen.
    pub max_latency: u64,
    pub latency_sum: u64,
}

impl Clients {
    pub fn new(cfg: &WorkloadConfig, time_window: u64, seed: u64) -> Self {
        Clients {
            accounts: (0..cfg.accounts)
                .map(|i| Account { addr: Address(CLIENT_BASE + i), nonce: 0, inflight: None })
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg: cfg.clone(),
            time_window,
            submitted: 0,
            committed: 0,
            reissued: 0,
            throttled: 0,
            max_latency: 0,
            latency_sum: 0,
        }
    }

    pub fn genesis_balances(&self) -> Vec<(Address, u64)> {
        self.accounts.iter().map(|a| (a.addr, self.cfg.initial_balance)).collect()
    }

    pub fn pending(&self) -> usize {
        self.accounts.iter().filter(|a| a.inflight.is_some()).count()
    }

    /// Oldest submission still waiting, if any.
    pub fn oldest_pending(&self) -> Option<u64> {
        self.accounts.iter().filter_map(|a| a.inflight.as_ref().map(|f| f.first)).min()
    }

    /// Transactions to broadcast at `now`: reissues first, then new
    /// submissions while `now < end`.
    pub fn step(&mut self, now: u64, end: u64) -> Vec<Transaction> {
        let mut out = Vec::new();
        for a in &mut self.accounts {
            if let Some(f) = &mut a.inflight {
                if now >= f.last + self.time_window {
                    f.tx.physical_timestamp = now;
                    f.last = now;
                    self.reissued += 1;
                    out.push(f.tx.clone());
                }
            }
        }
        if now >= end || self.accounts.is_empty() {
            return out;
        }
        let rate = self.cfg.tx_rate;
        let mut count = rate.floor() as u64;
        if self.rng.gen_bool(rate.fract()) {
            count += 1;
        }
        for _ in 0..count {
            let idle: Vec<usize> = (0..self.accounts.len()).filter(|&i| self.accounts[i].inflight.is_none()).collect();
            if idle.is_empty() {
                self.throttled += 1;
                continue;
            }
            let i = idle[self.rng.gen_range(0..idle.len())];
            let n = self.accounts.len() as u64;
            let to = Address(CLIENT_BASE + (i as u64 + self.rng.gen_range(1..n.max(2))) % n);
            let amount = self.rng.gen_range(1..=self.cfg.max_amount.max(1));
            let a = &mut self.accounts[i];
            let mut tx = Transaction::transfer(a.addr, to, amount, a.nonce, now);
            tx.gas_price = self.cfg.gas_price;
            a.inflight = Some(InFlight { tx: tx.clone(), first: now, last: now });
            self.submitted += 1;
            out.push(tx);
        }
        out
    }

    /// Marks the in-flight transactions confirmed by a block committed at
    /// `now`. Matching is by sender and nonce, so a reissued copy counts.
    pub fn on_commit(&mut self, txs: &[Transaction], now: u64) {
        for tx in txs {
            let Some(i) = tx.sender.0.checked_sub(CLIENT_BASE) else { continue };
            let Some(a) = self.accounts.get_mut(i as usize) else { continue };
            let matches = a.inflight.as_ref().is_some_and(|f| f.tx.account_nonce == tx.account_nonce);
            if matches {
                let f = a.inflight.take().expect("checked");
                let delay = now - f.first;
                self.max_latency = self.max_latency.max(delay);
                self.latency_sum += delay;
                self.committed += 1;
                a.nonce += 1;
            }
        }
    }
}
