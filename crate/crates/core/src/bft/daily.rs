use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::hash::{digest_parts, merkle_root_digests, Digest256};
use crate::sig::{sign, Namespace, Signature};
use crate::types::{fast_block_digest, FastBlock, NodeId};

/// Distinct stop signals that end a term: `⌈csize/3⌉`.
pub fn stop_threshold(csize: usize) -> usize {
    csize.div_ceil(3)
}

/// What a member signs (outer namespace) to ask for the term to stop.
pub fn stop_payload(term: u64) -> Digest256 {
    digest_parts(&[b"stop", &term.to_be_bytes()])
}

/// One entry of a term's daily log.
// nearly every entry is a block, so boxing would only add indirection
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogEntry {
    Block(FastBlock),
    Stop(Signature),
}

/// One committee term.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeTerm {
    pub term: u64,
    pub members: Vec<NodeId>,
    pub leader_index: usize,
    /// Snail height whose election produced this committee.
    pub term_start: u64,
    /// Snail height of the flagged block that ended it, once known.
    pub term_end: Option<u64>,
    pub daily_log: Vec<LogEntry>,
    pub signed_log_hashes: Vec<(NodeId, Digest256)>,
}

impl CommitteeTerm {
    pub fn new(term: u64, members: Vec<NodeId>, term_start: u64) -> Self {
        CommitteeTerm {
            term,
            members,
            leader_index: 0,
            term_start,
            term_end: None,
            daily_log: Vec::new(),
            signed_log_hashes: Vec::new(),
        }
    }

    pub fn csize(&self) -> usize {
        self.members.len()
    }

    pub fn leader(&self) -> NodeId {
        self.members[self.leader_index % self.members.len()]
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.members.contains(&node)
    }

    /// Round-robin view change.
    pub fn advance_leader(&mut self) {
        self.leader_index = (self.leader_index + 1) % self.members.len();
    }

    /// Distinct valid stop signers recorded in the log so far.
    pub fn stop_signers(&self) -> BTreeSet<NodeId> {
        let payload = stop_payload(self.term);
        self.daily_log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Stop(s) if self.is_member(s.signer()) && s.verify(Namespace::Outer, &payload) => {
                    Some(s.signer())
                }
                _ => None,
            })
            .collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &FastBlock> {
        self.daily_log.iter().filter_map(|e| match e {
            LogEntry::Block(b) => Some(b),
            LogEntry::Stop(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StopError {
    #[error("{have} distinct stop signatures, {need} needed")]
    InsufficientStopSignatures { have: usize, need: usize },
}

/// A terminated term's log with stop entries removed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalDailyLog {
    pub term: u64,
    pub blocks: Vec<FastBlock>,
    pub log_hash: Digest256,
    pub signatures: Vec<Signature>,
}

impl FinalDailyLog {
    pub fn hash_blocks(term: u64, blocks: &[FastBlock]) -> Digest256 {
        let digests: Vec<Digest256> = blocks.iter().map(fast_block_digest).collect();
        digest_parts(&[b"daily", &term.to_be_bytes(), &merkle_root_digests(&digests).0])
    }

    /// Adds `member`'s outer-namespace signature on the log hash.
    pub fn sign_by(&mut self, member: NodeId) {
        if self.signatures.iter().all(|s| s.signer() != member) {
            self.signatures.push(sign(member, Namespace::Outer, self.log_hash));
        }
    }

    /// `(term, member, hash)` records of valid signatures.
    pub fn signed_hashes(&self) -> Vec<(u64, NodeId, Digest256)> {
        self.signatures
            .iter()
            .filter(|s| s.verify(Namespace::Outer, &self.log_hash))
            .map(|s| (self.term, s.signer(), self.log_hash))
            .collect()
    }
}

/// Ends the term once `⌈csize/3⌉` distinct members of its initial list have
/// signed the stop payload in the outer namespace. Signatures from
/// non-members, in the wrong namespace, or over the wrong payload are not
/// counted.
pub fn daily_stop(term: &CommitteeTerm, stop_signatures: &[Signature]) -> Result<FinalDailyLog, StopError> {
    let payload = stop_payload(term.term);
    let signers: BTreeSet<NodeId> = stop_signatures
        .iter()
        .filter(|s| term.is_member(s.signer()) && s.verify(Namespace::Outer, &payload))
        .map(|s| s.signer())
        .collect();
    let need = stop_threshold(term.csize());
    if signers.len() < need {
        return Err(StopError::InsufficientStopSignatures { have: signers.len(), need });
    }
    let blocks: Vec<FastBlock> = term.blocks().cloned().collect();
    Ok(FinalDailyLog {
        term: term.term,
        log_hash: FinalDailyLog::hash_blocks(term.term, &blocks),
        blocks,
        signatures: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term31() -> CommitteeTerm {
        let mut t = CommitteeTerm::new(3, (0..31).map(NodeId).collect(), 0);
        t.daily_log.push(LogEntry::Block(FastBlock::genesis(Digest256::ZERO)));
        t
    }

    fn stops(ids: impl IntoIterator<Item = u32>, term: u64) -> Vec<Signature> {
        ids.into_iter().map(|i| sign(NodeId(i), Namespace::Outer, stop_payload(term))).collect()
    }

    #[test]
    fn threshold_is_a_third_rounded_up() {
        let t = term31();
        assert_eq!(stop_threshold(31), 11);
        assert!(daily_stop(&t, &stops(0..11, 3)).is_ok());
        assert_eq!(daily_stop(&t, &stops(0..10, 3)), Err(StopError::InsufficientStopSignatures { have: 10, need: 11 }));
        // non-member, duplicate, wrong term and inner-namespace signatures do not count
        let mut s = stops(0..10, 3);
        s.extend(stops([100, 0], 3));
        s.extend(stops([20], 4));
        s.push(sign(NodeId(21), Namespace::Inner, stop_payload(3)));
        assert!(daily_stop(&t, &s).is_err());
    }

    #[test]
    fn stop_entries_are_stripped() {
        let mut t = term31();
        for s in stops(0..11, 3) {
            t.daily_log.push(LogEntry::Stop(s));
        }
        let mut b = FastBlock::genesis(Digest256::ZERO);
        b.number = 1;
        b.serial = 1;
        t.daily_log.push(LogEntry::Block(b));
        assert_eq!(t.stop_signers().len(), 11);
        let mut log = daily_stop(&t, &stops(0..11, 3)).unwrap();
        assert_eq!(log.blocks.len(), 2);
        log.sign_by(NodeId(4));
        log.sign_by(NodeId(4));
        assert_eq!(log.signed_hashes(), vec![(3, NodeId(4), log.log_hash)]);
    }
}
