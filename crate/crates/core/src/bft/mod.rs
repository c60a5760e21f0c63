//! The committee fastchain: proposals, the timestamp guard, voting and
//! tallies, fast-block emission, the mempool, and the daily stop rule.
//!
//! These are the per-step operations. The message-driven committee state
//! machine that strings them together lives in the simulator.

mod daily;
mod mempool;
mod timestamp;

pub use daily::{daily_stop, stop_payload, stop_threshold, CommitteeTerm, FinalDailyLog, LogEntry, StopError};
pub use mempool::{mempool_update, Mempool, MempoolEvent};
pub use timestamp::{verify_timestamp, TimestampHistory, DEFAULT_TIME_WINDOW};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::{Encode, Writer};
use crate::hash::{digest_parts, Digest256};
use crate::sig::{sign, Namespace, Signature};
use crate::state::{ApplyError, WorldState};
use crate::types::{transactions_root, Address, FastBlock, FastMessage, NodeId, Transaction};

/// Votes needed to commit: strictly more than two thirds, `⌊2n/3⌋ + 1`.
pub fn quorum(csize: usize) -> usize {
    2 * csize / 3 + 1
}

/// Faults tolerated by a committee of `csize`: `⌊(n−1)/3⌋`.
pub fn max_faulty(csize: usize) -> usize {
    csize.saturating_sub(1) / 3
}

/// Fast-block proposer address for a node.
pub fn node_address(node: NodeId) -> Address {
    Address(node.0 as u64)
}

/// Block ordering rule: physical timestamp, then sequence number.
pub fn order_key(tx: &Transaction) -> (u64, u64) {
    (tx.physical_timestamp, tx.sequence_number)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub term: u64,
    pub view: u64,
    pub serial: u64,
    /// Digest of the fast block this proposal extends.
    pub parent: Digest256,
    pub leader: NodeId,
    pub time: u64,
    pub txs: Vec<Transaction>,
    /// Outer-namespace stop signals being written into the log.
    pub stops: Vec<Signature>,
    pub signature: Signature,
}

impl Proposal {
    /// Builds and signs a proposal.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        term: u64,
        view: u64,
        serial: u64,
        parent: Digest256,
        leader: NodeId,
        time: u64,
        txs: Vec<Transaction>,
        stops: Vec<Signature>,
    ) -> Self {
        let mut p = Proposal {
            term,
            view,
            serial,
            parent,
            leader,
            time,
            txs,
            stops,
            signature: Signature::forge(leader, Namespace::Inner, Digest256::ZERO),
        };
        p.signature = sign(leader, Namespace::Inner, p.digest());
        p
    }

    /// Digest over everything but the leader signature.
    pub fn digest(&self) -> Digest256 {
        let mut w = Writer::default();
        w.u64(self.term).u64(self.view).u64(self.serial).digest(&self.parent).u32(self.leader.0).u64(self.time);
        w.digest(&transactions_root(&self.txs));
        w.u32(self.stops.len() as u32);
        for s in &self.stops {
            w.u32(s.signer().0).digest(&s.payload());
        }
        digest_parts(&[b"proposal", &w.into_bytes()])
    }

    pub fn leader_signed(&self) -> bool {
        self.signature.signer() == self.leader && self.signature.verify(Namespace::Inner, &self.digest())
    }

    /// The block content is what gets voted on. It leaves out the view, so
    /// a locked proposal re-sent in a later view keeps its digest.
    pub fn content_digest(&self) -> Digest256 {
        let mut w = Writer::default();
        w.u64(self.term).u64(self.serial).digest(&self.parent).u32(self.leader.0).u64(self.time);
        w.digest(&transactions_root(&self.txs));
        for s in &self.stops {
            w.u32(s.signer().0).digest(&s.payload());
        }
        digest_parts(&[b"content", &w.into_bytes()])
    }
}

/// Picks transactions for a proposal: pending transactions in
/// `(T_p, sequence)` order, keeping each one that passes the timestamp guard
/// and applies cleanly on top of those already chosen. At most `limit` are
/// taken.
pub fn select_transactions<'a>(
    pending: impl IntoIterator<Item = &'a Transaction>,
    state: &WorldState,
    now: u64,
    hist: &TimestampHistory,
    limit: usize,
) -> Vec<Transaction> {
    let mut candidates: Vec<&Transaction> = pending.into_iter().collect();
    candidates.sort_by_key(|tx| (order_key(tx), tx.id()));
    let mut hist = hist.clone();
    let mut state = state.clone();
    let mut out = Vec::new();
    for tx in candidates {
        if out.len() >= limit {
            break;
        }
        if !hist.admits(tx, now) {
            continue;
        }
        let Ok(next) = state.apply(tx) else { continue };
        hist.record(tx);
        state = next;
        out.push(tx.clone());
    }
    out
}

/// Leader step: a signed proposal over [`select_transactions`]. An empty
/// pool gives an empty (still valid) proposal.
#[allow(clippy::too_many_arguments)]
pub fn leader_propose(
    leader: NodeId,
    term: u64,
    view: u64,
    parent: &FastBlock,
    pool: &Mempool,
    state: &WorldState,
    now: u64,
    hist: &TimestampHistory,
    limit: usize,
) -> Proposal {
    let txs = select_transactions(pool.pending(), state, now, hist, limit);
    Proposal::new(term, view, parent.serial + 1, crate::types::fast_block_digest(parent), leader, now, txs, Vec::new())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub member: NodeId,
    pub phase: Phase,
    pub view: u64,
    /// Content digest of the voted block.
    pub block: Digest256,
    pub yes: bool,
    pub signature: Signature,
}

impl Vote {
    fn payload(phase: Phase, view: u64, block: &Digest256, yes: bool) -> Digest256 {
        let tag = match phase {
            Phase::Prevote => b"prevote",
            Phase::Precommit => b"precomm",
        };
        digest_parts(&[tag, &view.to_be_bytes(), &block.0, &[yes as u8]])
    }

    pub fn cast(member: NodeId, phase: Phase, view: u64, block: Digest256, yes: bool) -> Vote {
        let signature = sign(member, Namespace::Inner, Vote::payload(phase, view, &block, yes));
        Vote { member, phase, view, block, yes, signature }
    }

    pub fn is_authentic(&self) -> bool {
        self.signature.signer() == self.member
            && self.signature.verify(Namespace::Inner, &Vote::payload(self.phase, self.view, &self.block, self.yes))
    }
}

/// Why a member would vote no.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("leader signature does not verify")]
    BadSignature,
    #[error("transactions not in (T_p, sequence) order at index {0}")]
    Misordered(usize),
    #[error("timestamp guard rejects transaction {0}")]
    Timestamp(usize),
    #[error("transaction {index} does not apply: {error}")]
    Apply { index: usize, error: ApplyError },
}

/// Checks a proposal's transactions: leader signature, ordering, the
/// timestamp guard and state legality, in order.
pub fn check_proposal(prop: &Proposal, state: &WorldState, now: u64, hist: &TimestampHistory) -> Result<(), Rejection> {
    if !prop.leader_signed() {
        return Err(Rejection::BadSignature);
    }
    if let Some(i) = prop.txs.windows(2).position(|w| order_key(&w[0]) > order_key(&w[1])) {
        return Err(Rejection::Misordered(i + 1));
    }
    let mut hist = hist.clone();
    let mut state = state.clone();
    for (index, tx) in prop.txs.iter().enumerate() {
        if !verify_timestamp(tx, now, &mut hist) {
            return Err(Rejection::Timestamp(index));
        }
        state = state.apply(tx).map_err(|error| Rejection::Apply { index, error })?;
    }
    Ok(())
}

/// A member's first-phase vote on a proposal.
pub fn validate_and_vote(
    member: NodeId,
    prop: &Proposal,
    state: &WorldState,
    now: u64,
    hist: &TimestampHistory,
) -> Vote {
    let yes = check_proposal(prop, state, now, hist).is_ok();
    Vote::cast(member, Phase::Prevote, prop.view, prop.content_digest(), yes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Committed,
    Pending,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tally {
    pub decision: Decision,
    pub yes: usize,
    pub no: usize,
    /// Repeat votes from a member already counted (first one wins).
    pub duplicates: usize,
    /// Votes from non-members or with bad signatures.
    pub rejected: usize,
}

/// Counts votes from distinct members. Committed once yes-votes reach the
/// quorum; Failed once no-votes leave the quorum unreachable.
pub fn tally<'a>(votes: impl IntoIterator<Item = &'a Vote>, members: &[NodeId]) -> Tally {
    let members: BTreeSet<NodeId> = members.iter().copied().collect();
    let q = quorum(members.len());
    let mut seen = BTreeSet::new();
    let (mut yes, mut no, mut duplicates, mut rejected) = (0, 0, 0, 0);
    for v in votes {
        if !members.contains(&v.member) || !v.is_authentic() {
            rejected += 1;
            continue;
        }
        if !seen.insert(v.member) {
            duplicates += 1;
            continue;
        }
        if v.yes {
            yes += 1;
        } else {
            no += 1;
        }
    }
    let decision = if yes >= q {
        Decision::Committed
    } else if members.len() - no < q {
        Decision::Failed
    } else {
        Decision::Pending
    };
    Tally { decision, yes, no, duplicates, rejected }
}

/// Builds the committed fast block on `parent` and the message for miners.
pub fn emit_fast_block(
    txs: Vec<Transaction>,
    parent: &FastBlock,
    state: &WorldState,
    proposer: NodeId,
    time: u64,
) -> Result<(FastBlock, FastMessage, WorldState), ApplyError> {
    let mut next = state.clone();
    for tx in &txs {
        next = next.apply(tx)?;
    }
    let gas_used = txs.iter().map(|t| t.gas_used()).sum();
    let block = FastBlock {
        parent_hash: crate::types::fast_block_digest(parent),
        state_root: next.root(),
        transactions_root: transactions_root(&txs),
        receipt_hash: Digest256::ZERO,
        snail_hash: Digest256::ZERO,
        proposer: node_address(proposer),
        bloom: Vec::new(),
        snail_number: 0,
        number: parent.number + 1,
        gas_limit: parent.gas_limit,
        gas_used,
        time,
        extra: Vec::new(),
        transactions: txs,
        serial: parent.serial + 1,
    };
    let m = FastMessage::of(&block);
    Ok((block, m, next))
}

/// Canonical encoding of a vote record, for traces.
impl Encode for Vote {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.member.0).u8(self.phase as u8).u64(self.view).digest(&self.block).bool(self.yes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fast_block_digest;

    const A: Address = Address(10);
    const B: Address = Address(11);

    fn members(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    fn votes(yes: u32, no: u32) -> Vec<Vote> {
        let d = crate::hash::digest(b"block");
        (0..yes)
            .map(|i| Vote::cast(NodeId(i), Phase::Prevote, 0, d, true))
            .chain((yes..yes + no).map(|i| Vote::cast(NodeId(i), Phase::Prevote, 0, d, false)))
            .collect()
    }

    #[test]
    fn tally_examples() {
        let m = members(31);
        assert_eq!(tally(&votes(21, 0), &m).decision, Decision::Committed);
        assert_eq!(tally(&votes(20, 11), &m).decision, Decision::Failed);
        assert_eq!(tally(&votes(20, 0), &m).decision, Decision::Pending);
        let mut v = votes(20, 0);
        v.push(v[0]);
        v.push(Vote::cast(NodeId(99), Phase::Prevote, 0, v[0].block, true));
        let t = tally(&v, &m);
        assert_eq!((t.decision, t.duplicates, t.rejected), (Decision::Pending, 1, 1));
    }

    #[test]
    fn quorum_formulations() {
        for n in 4..=100usize {
            // smallest count strictly above two thirds, by search
            let above = (0..=n).find(|&y| 3 * y > 2 * n).unwrap();
            assert_eq!(quorum(n), above, "n={n}");
            let f = max_faulty(n);
            // 2f+1 coincides with it exactly when n = 3f+1
            assert_eq!(quorum(n) == 2 * f + 1, n == 3 * f + 1, "n={n}");
            assert!(quorum(n) > 2 * f);
        }
    }

    fn tx(sender: Address, ts: u64, nonce: u64) -> Transaction {
        Transaction::transfer(sender, Address(99), 1, nonce, ts)
    }

    #[test]
    fn proposal_is_sorted() {
        let state = WorldState::from_balances([(A, 100), (B, 100)]);
        let mut pool = Mempool::default();
        pool.propose(tx(A, 5, 0));
        pool.propose(tx(B, 3, 0));
        let genesis = FastBlock::genesis(state.root());
        let p = leader_propose(NodeId(0), 0, 0, &genesis, &pool, &state, 5, &TimestampHistory::default(), 100);
        assert_eq!(p.txs.iter().map(|t| t.sender).collect::<Vec<_>>(), vec![B, A]);
        assert!(p.leader_signed());
        let mut same = Mempool::default();
        let mut s2 = tx(A, 5, 0);
        s2.sequence_number = 2;
        let mut s1 = tx(B, 5, 0);
        s1.sequence_number = 1;
        same.propose(s2);
        same.propose(s1);
        let p = leader_propose(NodeId(0), 0, 0, &genesis, &same, &state, 5, &TimestampHistory::default(), 100);
        assert_eq!(p.txs.iter().map(|t| t.sequence_number).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn bad_nonce_excluded_and_empty_pool_ok() {
        let state = WorldState::from_balances([(A, 100)]);
        let mut pool = Mempool::default();
        pool.propose(tx(A, 0, 7));
        let genesis = FastBlock::genesis(state.root());
        let p = leader_propose(NodeId(0), 0, 0, &genesis, &pool, &state, 0, &TimestampHistory::default(), 100);
        assert!(p.txs.is_empty());
        assert!(validate_and_vote(NodeId(1), &p, &state, 0, &TimestampHistory::default()).yes);
    }

    #[test]
    fn votes_on_bad_proposals() {
        let state = WorldState::from_balances([(A, 5), (B, 100)]);
        let hist = TimestampHistory::default();
        let ok = Proposal::new(0, 0, 1, Digest256::ZERO, NodeId(0), 10, vec![tx(B, 9, 0), tx(B, 10, 1)], vec![]);
        assert!(validate_and_vote(NodeId(1), &ok, &state, 10, &hist).yes);
        let mut poor = tx(A, 10, 0);
        poor.payload = 50;
        let broke = Proposal::new(0, 0, 1, Digest256::ZERO, NodeId(0), 10, vec![poor], vec![]);
        assert!(!validate_and_vote(NodeId(1), &broke, &state, 10, &hist).yes);
        let misordered =
            Proposal::new(0, 0, 1, Digest256::ZERO, NodeId(0), 10, vec![tx(B, 10, 0), tx(B, 9, 1)], vec![]);
        assert_eq!(check_proposal(&misordered, &state, 10, &hist), Err(Rejection::Misordered(1)));
        let mut forged = ok.clone();
        forged.leader = NodeId(5);
        assert_eq!(check_proposal(&forged, &state, 10, &hist), Err(Rejection::BadSignature));
    }

    #[test]
    fn emit_links_and_digests() {
        let state = WorldState::from_balances([(A, 100)]);
        let mut parent = FastBlock::genesis(state.root());
        parent.number = 7;
        parent.serial = 7;
        let (b, m, s) = emit_fast_block(vec![], &parent, &state, NodeId(0), 1).unwrap();
        assert_eq!(b.serial, 8);
        assert_eq!(b.state_root, state.root());
        assert_eq!(s, state);
        assert_eq!(m.digest, fast_block_digest(&b));
        assert!(b.is_well_formed());
        let (b2, _, s2) = emit_fast_block(vec![tx(A, 0, 0)], &b, &state, NodeId(0), 2).unwrap();
        assert_ne!(b2.state_root, b.state_root);
        assert_eq!(s2.balance(A), 98);
    }
}
