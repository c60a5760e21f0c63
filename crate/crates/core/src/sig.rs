//! Simulated signatures. A signature is a tag binding a signer, a namespace
//! and a payload digest. Only [`sign`] (and the explicitly named
//! [`Signature::forge`] used by adversary controllers) can produce one, so
//! honest code cannot accidentally accept a forgery.

use serde::{Deserialize, Serialize};

use crate::hash::{digest_parts, Digest256};
use crate::types::NodeId;

/// Message namespace. Inner BFT traffic is tagged `'0'`, the outer
/// daily-log protocol `'1'`, so a vote can never be replayed as a stop
/// signal or log signature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Namespace {
    Inner,
    Outer,
}

impl Namespace {
    pub fn prefix(self) -> u8 {
        match self {
            Namespace::Inner => b'0',
            Namespace::Outer => b'1',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    signer: NodeId,
    namespace: Namespace,
    payload: Digest256,
    tag: Digest256,
}

fn tag(signer: NodeId, namespace: Namespace, payload: &Digest256) -> Digest256 {
    digest_parts(&[&[namespace.prefix()], b"sig", &signer.0.to_be_bytes(), &payload.0])
}

pub fn sign(signer: NodeId, namespace: Namespace, payload: Digest256) -> Signature {
    Signature { signer, namespace, payload, tag: tag(signer, namespace, &payload) }
}

impl Signature {
    pub fn signer(&self) -> NodeId {
        self.signer
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn payload(&self) -> Digest256 {
        self.payload
    }

    /// Checks the tag and that it covers `payload` in `namespace`.
    pub fn verify(&self, namespace: Namespace, payload: &Digest256) -> bool {
        self.namespace == namespace && self.payload == *payload && self.tag == tag(self.signer, namespace, payload)
    }

    /// A signature in someone else's name. Only adversary controllers that
    /// are explicitly authorised to forge call this; the tag is wrong, so
    /// [`verify`](Self::verify) rejects it.
    pub fn forge(claimed: NodeId, namespace: Namespace, payload: Digest256) -> Signature {
        Signature { signer: claimed, namespace, payload, tag: Digest256::ZERO }
    }
}
