//! Per-node replicated state: the fast-chain log and committee knowledge.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hybrid_core::bft::{emit_fast_block, stop_payload, stop_threshold, LogEntry, TimestampHistory};
use hybrid_core::election::{
    collect_candidates, derive_seed, elect, CandidateSet, ElectionParams, ElectionSeed, ElectionTranscript,
};
use hybrid_core::fruitchain::{ChainLink, FastLookup};
use hybrid_core::hash::Digest256;
use hybrid_core::sig::{Namespace, Signature};
use hybrid_core::state::{ApplyError, WorldState};
use hybrid_core::types::fast_block_digest;
use hybrid_core::{FastBlock, FastMessage, NodeId};

use crate::msg::Certified;

/// A node's copy of the fast chain plus everything derived from it.
#[derive(Clone, Debug)]
pub struct FastLog {
    /// Index is the serial; index 0 is genesis.
    pub blocks: Vec<FastBlock>,
    pub certs: Vec<Option<Arc<Certified>>>,
    /// Messages for fruit mining, by serial. Longer than `blocks` only when
    /// the fast chain is synthetic.
    pub messages: Vec<FastMessage>,
    pub state: WorldState,
    pub hist: TimestampHistory,
    /// Term currently writing to the log.
    pub term: u64,
    term_stops: BTreeSet<NodeId>,
    /// Last serial of each finished term.
    pub term_ends: BTreeMap<u64, u64>,
    pub commit_ticks: Vec<u64>,
}

impl FastLookup for FastLog {
    fn digest_of(&self, serial: u64) -> Option<Digest256> {
        if serial == 0 {
            return None;
        }
        self.messages.get(serial as usize).map(|m| m.digest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    Appended,
    /// The block completed the stop quorum of this term.
    TermEnded(u64),
}

impl FastLog {
    pub fn new(genesis_state: WorldState, time_window: u64) -> Self {
        let genesis = FastBlock::genesis(genesis_state.root());
        FastLog {
            messages: vec![FastMessage::of(&genesis)],
            blocks: vec![genesis],
            certs: vec![None],
            state: genesis_state,
            hist: TimestampHistory::new(time_window),
            term: 0,
            term_stops: BTreeSet::new(),
            term_ends: BTreeMap::new(),
            commit_ticks: vec![0],
        }
    }

    pub fn next_serial(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip(&self) -> &FastBlock {
        self.blocks.last().expect("genesis")
    }

    pub fn tip_digest(&self) -> Digest256 {
        self.messages[self.blocks.len() - 1].digest
    }

    pub fn stop_signers(&self) -> &BTreeSet<NodeId> {
        &self.term_stops
    }

    /// Appends a scheduled message without a block behind it.
    pub fn push_synthetic(&mut self, m: FastMessage) {
        self.messages.push(m);
    }

    /// Content digest of the proposal committed at `serial`.
    pub fn content_at(&self, serial: u64) -> Option<Digest256> {
        self.certs.get(serial as usize)?.as_ref().map(|c| c.proposal.content_digest())
    }

    /// Rebuilds the block from a certified proposal and appends it. The
    /// caller has checked the certificate, serial and parent.
    pub fn apply(&mut self, cert: Arc<Certified>, members: &[NodeId], now: u64) -> Result<ApplyOutcome, ApplyError> {
        let p = &cert.proposal;
        let (block, msg, state) = emit_fast_block(p.txs.clone(), self.tip(), &self.state, p.leader, p.time)?;
        for tx in &block.transactions {
            self.hist.record(tx);
        }
        self.state = state;
        self.blocks.push(block);
        self.messages.push(msg);
        let payload = stop_payload(self.term);
        for s in &p.stops {
            if members.contains(&s.signer()) && s.verify(Namespace::Outer, &payload) {
                self.term_stops.insert(s.signer());
            }
        }
        self.certs.push(Some(cert));
        self.commit_ticks.push(now);
        if self.term_stops.len() >= stop_threshold(members.len()) {
            let ended = self.term;
            self.term_ends.insert(ended, self.next_serial() - 1);
            self.term += 1;
            self.term_stops.clear();
            return Ok(ApplyOutcome::TermEnded(ended));
        }
        Ok(ApplyOutcome::Appended)
    }

    /// Serials `[first, last]` written by `term`, if it has any blocks.
    pub fn term_range(&self, term: u64) -> Option<(u64, u64)> {
        let first =
            (1..self.blocks.len()).find(|&s| self.certs[s].as_ref().is_some_and(|c| c.proposal.term == term))?;
        let last = (first..self.blocks.len())
            .take_while(|&s| self.certs[s].as_ref().is_some_and(|c| c.proposal.term == term))
            .last()?;
        Some((first as u64, last as u64))
    }

    /// The term's log entries: each block followed by the stop signals it
    /// carried.
    pub fn daily_entries(&self, term: u64) -> Vec<LogEntry> {
        let mut out = Vec::new();
        if let Some((a, b)) = self.term_range(term) {
            for s in a..=b {
                out.push(LogEntry::Block(self.blocks[s as usize].clone()));
                let cert = self.certs[s as usize].as_ref().expect("non-genesis");
                out.extend(cert.proposal.stops.iter().map(|sig| LogEntry::Stop(*sig)));
            }
        }
        out
    }

    pub fn term_stop_sigs(&self, term: u64) -> Vec<Signature> {
        self.daily_entries(term)
            .into_iter()
            .filter_map(|e| match e {
                LogEntry::Stop(s) => Some(s),
                LogEntry::Block(_) => None,
            })
            .collect()
    }

    pub fn digest_at(&self, serial: u64) -> Option<Digest256> {
        self.blocks.get(serial as usize).map(fast_block_digest)
    }
}

/// One term's committee as computed by a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Elected {
    pub members: Vec<NodeId>,
    pub seed: ElectionSeed,
    pub transcript: ElectionTranscript,
    /// Hash of the flagged block the election read, zero for genesis.
    pub anchor: Digest256,
}

#[derive(Clone, Debug)]
pub struct ElectionRules {
    pub window: u64,
    pub recency: u64,
    pub params: ElectionParams,
}

impl ElectionRules {
    pub fn flagged_height(&self, term: u64) -> u64 {
        term * self.window
    }

    /// Snail height a node must reach before it trusts the flagged block of
    /// `term`.
    pub fn settled_height(&self, term: u64) -> u64 {
        if term == 0 {
            0
        } else {
            self.flagged_height(term) + self.recency
        }
    }

    pub fn genesis(&self) -> Elected {
        let cands = CandidateSet { candidates: self.params.opt_in.iter().map(|id| (*id, 0)).collect() };
        let seed = ElectionSeed::GENESIS;
        let members = elect(&cands, &seed, self.params.csize, &BTreeSet::new());
        Elected {
            transcript: ElectionTranscript {
                term: 0,
                snail_height: 0,
                seed: seed.seed,
                candidates: cands.candidates,
                selected: members.clone(),
                fallback: false,
            },
            members,
            seed,
            anchor: Digest256::ZERO,
        }
    }

    /// Elects `term` from the flagged block on `tip`'s chain. `None` until
    /// the chain is deep enough. No qualifying candidate keeps the previous
    /// committee.
    pub fn next(&self, term: u64, prev: &Elected, tip: &Arc<ChainLink>) -> Option<Elected> {
        if tip.height() < self.settled_height(term) {
            return None;
        }
        let h = self.flagged_height(term);
        let anchor = tip.at_height(h)?;
        let seed = derive_seed(&prev.seed, &anchor.recent_hashes(self.recency));
        let (members, candidates, fallback) = match collect_candidates(&anchor, &self.params) {
            Ok(cands) => (elect(&cands, &seed, self.params.csize, &BTreeSet::new()), cands.candidates, false),
            Err(_) => (prev.members.clone(), Vec::new(), true),
        };
        Some(Elected {
            transcript: ElectionTranscript {
                term,
                snail_height: h,
                seed: seed.seed,
                candidates,
                selected: members.clone(),
                fallback,
            },
            members,
            seed,
            anchor: anchor.hash(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hybrid_core::bft::{Phase, Proposal, Vote};
    use hybrid_core::sig::sign;
    use hybrid_core::{Address, Transaction};

    fn cert(log: &FastLog, term: u64, leader: u32, txs: Vec<Transaction>, stops: Vec<Signature>) -> Arc<Certified> {
        let p = Proposal::new(term, 0, log.next_serial(), log.tip_digest(), NodeId(leader), 5, txs, stops);
        let votes = (0..4).map(|i| Vote::cast(NodeId(i), Phase::Precommit, 0, p.content_digest(), true)).collect();
        Arc::new(Certified { proposal: Arc::new(p), votes })
    }

    #[test]
    fn apply_and_term_end() {
        let members: Vec<NodeId> = (0..4).map(NodeId).collect();
        let state = WorldState::from_balances([(Address(100), 1000)]);
        let mut log = FastLog::new(state, 30);
        let tx = Transaction::transfer(Address(100), Address(101), 10, 0, 3);
        let c = cert(&log, 0, 1, vec![tx], Vec::new());
        assert_eq!(log.apply(c, &members, 6), Ok(ApplyOutcome::Appended));
        assert_eq!(log.state.balance(Address(101)), 10);
        assert_eq!(log.digest_of(1), Some(log.digest_at(1).unwrap()));
        assert_eq!(log.hist.last(Address(100)), Some(3));

        // ⌈4/3⌉ = 2 distinct stops end the term; a non-member's is ignored
        let s = |i| sign(NodeId(i), Namespace::Outer, stop_payload(0));
        let c = cert(&log, 0, 2, Vec::new(), vec![s(0), s(9)]);
        assert_eq!(log.apply(c, &members, 7), Ok(ApplyOutcome::Appended));
        let c = cert(&log, 0, 3, Vec::new(), vec![s(0), s(1)]);
        assert_eq!(log.apply(c, &members, 8), Ok(ApplyOutcome::TermEnded(0)));
        assert_eq!(log.term, 1);
        assert_eq!(log.term_range(0), Some((1, 3)));
        assert_eq!(log.term_stop_sigs(0).len(), 4);
        assert_eq!(log.daily_entries(0).len(), 7);
    }

    #[test]
    fn genesis_election_is_deterministic() {
        let rules = ElectionRules {
            window: 10,
            recency: 3,
            params: ElectionParams { window: 10, min_fruits: 1, csize: 4, opt_in: (0..9).map(NodeId).collect() },
        };
        let a = rules.genesis();
        assert_eq!(a, rules.genesis());
        assert_eq!(a.members.len(), 4);
        assert_eq!(a.members.iter().collect::<BTreeSet<_>>().len(), 4);
    }
}
