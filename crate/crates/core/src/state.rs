//! Account state and the world state mapping.
//!
//! A [`WorldState`] is an immutable value: applying a transaction returns a
//! new state and leaves the input untouched. [`StateArchive`] keeps every
//! retained root so historical states can be re-materialised.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::codec::{Encode, Writer};
use crate::hash::{merkle_root, Digest256};
use crate::types::{Address, Transaction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccountState {
    pub nonce: u64,
    pub balance: u64,
    pub code_hash: Digest256,
    pub storage_root: Digest256,
}

impl AccountState {
    pub fn with_balance(balance: u64) -> Self {
        AccountState { balance, ..Default::default() }
    }
}

impl Encode for AccountState {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.nonce).u64(self.balance).digest(&self.code_hash).digest(&self.storage_root);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("bad nonce for {sender:?}: transaction has {got}, account has {expected}")]
    BadNonce { sender: Address, expected: u64, got: u64 },
    #[error("insufficient balance for {sender:?}: needs {needed}, has {available}")]
    InsufficientBalance { sender: Address, needed: u64, available: u64 },
    #[error("unknown sender {0:?}")]
    UnknownSender(Address),
}

/// Mapping from address to account state, with a lazily computed root.
#[derive(Clone, Debug, Default)]
pub struct WorldState {
    accounts: Arc<BTreeMap<Address, AccountState>>,
    root: OnceLock<Digest256>,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.accounts == other.accounts
    }
}

impl Eq for WorldState {}

impl WorldState {
    pub fn new(accounts: BTreeMap<Address, AccountState>) -> Self {
        WorldState { accounts: Arc::new(accounts), root: OnceLock::new() }
    }

    pub fn from_balances<I: IntoIterator<Item = (Address, u64)>>(balances: I) -> Self {
        Self::new(balances.into_iter().map(|(a, b)| (a, AccountState::with_balance(b))).collect())
    }

    pub fn accounts(&self) -> &BTreeMap<Address, AccountState> {
        &self.accounts
    }

    pub fn get(&self, addr: Address) -> Option<&AccountState> {
        self.accounts.get(&addr)
    }

    pub fn balance(&self, addr: Address) -> u64 {
        self.get(addr).map_or(0, |a| a.balance)
    }

    pub fn nonce(&self, addr: Address) -> u64 {
        self.get(addr).map_or(0, |a| a.nonce)
    }

    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| a.balance as u128).sum()
    }

    /// Merkle root over `(address, account)` leaves in address order.
    pub fn root(&self) -> Digest256 {
        *self.root.get_or_init(|| {
            let leaves: Vec<Vec<u8>> = self
                .accounts
                .iter()
                .map(|(addr, acct)| {
                    let mut w = Writer::default();
                    w.u64(addr.0);
                    acct.encode_to(&mut w);
                    w.into_bytes()
                })
                .collect();
            merkle_root(&leaves)
        })
    }

    /// Applies `tx`, returning the successor state.
    pub fn apply(&self, tx: &Transaction) -> Result<WorldState, ApplyError> {
        let sender = self.get(tx.sender).ok_or(ApplyError::UnknownSender(tx.sender))?;
        if tx.account_nonce != sender.nonce {
            return Err(ApplyError::BadNonce { sender: tx.sender, expected: sender.nonce, got: tx.account_nonce });
        }
        let needed = tx.payload.saturating_add(tx.gas_cost());
        if needed > sender.balance {
            return Err(ApplyError::InsufficientBalance { sender: tx.sender, needed, available: sender.balance });
        }
        let mut accounts = (*self.accounts).clone();
        let s = accounts.get_mut(&tx.sender).expect("sender present");
        s.balance -= needed;
        s.nonce += 1;
        accounts.entry(tx.recipient).or_default().balance += tx.payload;
        Ok(WorldState::new(accounts))
    }
}

/// Free-function form of [`WorldState::apply`].
pub fn apply_transaction(state: &WorldState, tx: &Transaction) -> Result<WorldState, ApplyError> {
    state.apply(tx)
}

/// Retains snapshots by root so any prior state can be rebuilt.
#[derive(Default, Debug, Clone)]
pub struct StateArchive {
    snapshots: HashMap<Digest256, Arc<BTreeMap<Address, AccountState>>>,
}

impl StateArchive {
    pub fn retain(&mut self, state: &WorldState) -> Digest256 {
        let root = state.root();
        self.snapshots.entry(root).or_insert_with(|| state.accounts.clone());
        root
    }

    pub fn materialize(&self, root: &Digest256) -> Option<WorldState> {
        self.snapshots.get(root).map(|acc| WorldState { accounts: acc.clone(), root: OnceLock::from(*root) })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: Address = Address(1);
    const B: Address = Address(2);

    #[test]
    fn transfer_arithmetic() {
        let s = WorldState::from_balances([(A, 50)]);
        let tx = Transaction::transfer(A, B, 10, 0, 0);
        assert_eq!(tx.gas_cost(), 1);
        let s2 = apply_transaction(&s, &tx).unwrap();
        // 50 - 10 - 1·1 = 39
        assert_eq!(s2.get(A).unwrap(), &AccountState { nonce: 1, balance: 39, ..Default::default() });
        assert_eq!(s2.balance(B), 10);
        assert_ne!(s.root(), s2.root());
        // input untouched
        assert_eq!(s.balance(A), 50);
    }

    #[test]
    fn errors() {
        let s = WorldState::from_balances([(A, 50)]);
        let bad_nonce = Transaction::transfer(A, B, 1, 5, 0);
        assert!(matches!(s.apply(&bad_nonce), Err(ApplyError::BadNonce { expected: 0, got: 5, .. })));
        let too_much = Transaction::transfer(A, B, 100, 0, 0);
        assert!(matches!(s.apply(&too_much), Err(ApplyError::InsufficientBalance { .. })));
        let stranger = Transaction::transfer(Address(9), B, 1, 0, 0);
        assert_eq!(s.apply(&stranger), Err(ApplyError::UnknownSender(Address(9))));
    }

    #[test]
    fn root_is_order_independent_of_construction() {
        let s1 = WorldState::from_balances([(A, 1), (B, 2)]);
        let s2 = WorldState::from_balances([(B, 2), (A, 1)]);
        assert_eq!(s1.root(), s2.root());
    }

    proptest! {
        #[test]
        fn snapshots_rematerialize(ops in proptest::collection::vec((0u64..4, 0u64..4, 0u64..30), 0..40)) {
            let mut state = WorldState::from_balances((0..4).map(|i| (Address(i), 100)));
            let mut archive = StateArchive::default();
            let mut history = vec![(archive.retain(&state), state.accounts().clone())];
            for (from, to, amount) in ops {
                let tx = Transaction::transfer(Address(from), Address(to), amount, state.nonce(Address(from)), 0);
                if let Ok(next) = state.apply(&tx) {
                    // nonces never decrease
                    for (addr, acct) in state.accounts() {
                        prop_assert!(next.nonce(*addr) >= acct.nonce);
                    }
                    state = next;
                    history.push((archive.retain(&state), state.accounts().clone()));
                }
            }
            for (root, accounts) in history {
                let back = archive.materialize(&root).unwrap();
                prop_assert_eq!(back.accounts(), &accounts);
                prop_assert_eq!(back.root(), root);
            }
        }
    }
}
