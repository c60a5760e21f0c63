use std::collections::{BTreeMap, BTreeSet};

use crate::hash::Digest256;
use crate::types::{FastBlock, Transaction};

/// Pending transactions keyed by id, plus the ids already confirmed.
#[derive(Clone, Debug, Default)]
pub struct Mempool {
    pending: BTreeMap<Digest256, Transaction>,
    confirmed: BTreeSet<Digest256>,
}

pub enum MempoolEvent<'a> {
    Propose(Transaction),
    Confirm(&'a FastBlock),
    Query,
}

impl Mempool {
    pub fn pending(&self) -> impl Iterator<Item = &Transaction> {
        self.pending.values()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn confirmed(&self) -> &BTreeSet<Digest256> {
        &self.confirmed
    }

    pub fn is_confirmed(&self, id: &Digest256) -> bool {
        self.confirmed.contains(id)
    }

    /// Adds `tx` unless it is already pending or confirmed.
    pub fn propose(&mut self, tx: Transaction) -> bool {
        let id = tx.id();
        if self.confirmed.contains(&id) {
            return false;
        }
        self.pending.insert(id, tx).is_none()
    }

    pub fn confirm(&mut self, block: &FastBlock) {
        for tx in &block.transactions {
            let id = tx.id();
            self.pending.remove(&id);
            self.confirmed.insert(id);
        }
    }

    /// Drops pending transactions matching `stale`, e.g. ones that can no
    /// longer pass the timestamp guard.
    pub fn purge(&mut self, mut stale: impl FnMut(&Transaction) -> bool) -> usize {
        let before = self.pending.len();
        self.pending.retain(|_, tx| !stale(tx));
        before - self.pending.len()
    }
}

/// Applies one mempool event. `Query` returns the confirmed ids; the other
/// events return `None`.
pub fn mempool_update(pool: &mut Mempool, event: MempoolEvent<'_>) -> Option<BTreeSet<Digest256>> {
    match event {
        MempoolEvent::Propose(tx) => {
            pool.propose(tx);
            None
        }
        MempoolEvent::Confirm(block) => {
            pool.confirm(block);
            None
        }
        MempoolEvent::Query => Some(pool.confirmed.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Address;

    #[test]
    fn union_confirm_query() {
        let mut pool = Mempool::default();
        assert_eq!(mempool_update(&mut pool, MempoolEvent::Query), Some(BTreeSet::new()));
        let tx = Transaction::transfer(Address(1), Address(2), 3, 0, 0);
        mempool_update(&mut pool, MempoolEvent::Propose(tx.clone()));
        mempool_update(&mut pool, MempoolEvent::Propose(tx.clone()));
        assert_eq!(pool.pending_len(), 1);
        let mut block = FastBlock::genesis(Digest256::ZERO);
        block.transactions.push(tx.clone());
        mempool_update(&mut pool, MempoolEvent::Confirm(&block));
        assert_eq!(pool.pending_len(), 0);
        assert_eq!(mempool_update(&mut pool, MempoolEvent::Query), Some([tx.id()].into()));
        // a confirmed tx cannot re-enter pending
        assert!(!pool.propose(tx));
    }
}
