use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Address, Transaction};

pub const DEFAULT_TIME_WINDOW: u64 = 30;

/// Last accepted physical timestamp per sender. Keeping only the tail of
/// each sender's history gives the same accept/reject decisions as keeping
/// the whole list, because acceptance only ever compares with the tail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampHistory {
    pub window: u64,
    last: BTreeMap<Address, u64>,
}

impl TimestampHistory {
    pub fn new(window: u64) -> Self {
        TimestampHistory { window, last: BTreeMap::new() }
    }

    pub fn last(&self, sender: Address) -> Option<u64> {
        self.last.get(&sender).copied()
    }

    /// The guard without recording: skew within the window and not older
    /// than the sender's last accepted transaction.
    pub fn admits(&self, tx: &Transaction, now: u64) -> bool {
        if now.abs_diff(tx.physical_timestamp) > self.window {
            return false;
        }
        self.last(tx.sender).is_none_or(|t| t <= tx.physical_timestamp)
    }

    pub fn record(&mut self, tx: &Transaction) {
        let e = self.last.entry(tx.sender).or_insert(tx.physical_timestamp);
        *e = (*e).max(tx.physical_timestamp);
    }
}

impl Default for TimestampHistory {
    fn default() -> Self {
        TimestampHistory::new(DEFAULT_TIME_WINDOW)
    }
}

/// Checks `tx` against the skew window and the sender's history, recording
/// it on success.
pub fn verify_timestamp(tx: &Transaction, now: u64, hist: &mut TimestampHistory) -> bool {
    if !hist.admits(tx, now) {
        return false;
    }
    hist.record(tx);
    true
}
