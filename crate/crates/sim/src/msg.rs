use std::sync::Arc;

use hybrid_core::bft::{Proposal, Vote};
use hybrid_core::codec::{Encode, Writer};
use hybrid_core::fruitchain::ChainLink;
use hybrid_core::hash::{digest_parts, Digest256};
use hybrid_core::sig::Signature;
use hybrid_core::{Fruit, Transaction};

/// A committed proposal plus the precommit quorum that certifies it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certified {
    pub proposal: Arc<Proposal>,
    pub votes: Vec<Vote>,
}

#[derive(Clone, Debug)]
pub enum Msg {
    Tx(Arc<Transaction>),
    Fruit(Arc<Fruit>),
    /// A snail tip; the receiver pulls whatever ancestors it lacks.
    Block(Arc<ChainLink>),
    Propose {
        view: u64,
        proposal: Arc<Proposal>,
    },
    Vote {
        term: u64,
        serial: u64,
        vote: Vote,
    },
    Commit(Arc<Certified>),
    Stop {
        term: u64,
        sig: Signature,
    },
    SyncRequest {
        from_serial: u64,
    },
    SyncReply(Vec<Arc<Certified>>),
}

impl Msg {
    pub fn kind(&self) -> &'static str {
        match self {
            Msg::Tx(_) => "tx",
            Msg::Fruit(_) => "fruit",
            Msg::Block(_) => "block",
            Msg::Propose { .. } => "propose",
            Msg::Vote { .. } => "vote",
            Msg::Commit(_) => "commit",
            Msg::Stop { .. } => "stop",
            Msg::SyncRequest { .. } => "sync_request",
            Msg::SyncReply(_) => "sync_reply",
        }
    }

    /// Digest identifying the payload in traces.
    pub fn payload_digest(&self) -> Digest256 {
        match self {
            Msg::Tx(tx) => tx.id(),
            Msg::Fruit(f) => f.hash,
            Msg::Block(l) => l.hash(),
            Msg::Propose { view, proposal } => digest_parts(&[&view.to_be_bytes(), &proposal.digest().0]),
            Msg::Vote { term, serial, vote } => {
                let mut w = Writer::default();
                w.u64(*term).u64(*serial);
                vote.encode_to(&mut w);
                digest_parts(&[b"vote", &w.into_bytes()])
            }
            Msg::Commit(c) => c.proposal.content_digest(),
            Msg::Stop { term, sig } => {
                digest_parts(&[b"stop", &term.to_be_bytes(), &sig.signer().0.to_be_bytes(), &sig.payload().0])
            }
            Msg::SyncRequest { from_serial } => digest_parts(&[b"sync", &from_serial.to_be_bytes()]),
            Msg::SyncReply(cs) => {
                let parts: Vec<[u8; 32]> = cs.iter().map(|c| c.proposal.content_digest().0).collect();
                let refs: Vec<&[u8]> = parts.iter().map(|p| &p[..]).collect();
                digest_parts(&refs)
            }
        }
    }
}
