//! 256-bit digests and the binary Merkle root used for every commitment in
//! the data model.
//!
//! All hashing goes through [`digest_parts`], which is SHA3-256 over the
//! concatenation of its inputs. Callers that need domain separation add a
//! one-byte tag as the first part.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Sha3_256};

/// Leaf domain tag for [`merkle_root`].
const LEAF_PREFIX: u8 = 0x00;
/// Interior-node domain tag for [`merkle_root`].
const NODE_PREFIX: u8 = 0x01;
/// Tag for a node paired with its own duplicate. Distinct from
/// `NODE_PREFIX` so `[a, b, c]` and `[a, b, c, c]` have different roots.
const DUP_PREFIX: u8 = 0x02;

/// Opaque 32-byte digest. Equality is bytewise.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight bytes as a big-endian integer.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }

    /// Last eight bytes as a big-endian integer.
    pub fn suffix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[24..].try_into().expect("8 bytes"))
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid digest hex: {0}")]
pub struct ParseDigestError(String);

impl FromStr for Digest256 {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).map_err(|e| ParseDigestError(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| ParseDigestError(format!("expected 32 bytes in {s:?}")))?;
        Ok(Digest256(arr))
    }
}

impl Serialize for Digest256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA3-256 over the concatenation of `parts`.
pub fn digest_parts(parts: &[&[u8]]) -> Digest256 {
    let mut h = Sha3_256::new();
    for p in parts {
        h.update(p);
    }
    Digest256(h.finalize().into())
}

pub fn digest(bytes: &[u8]) -> Digest256 {
    digest_parts(&[bytes])
}

/// Digest of a single Merkle leaf: `hash(0x00 || leaf)`.
pub fn leaf_hash(leaf: &[u8]) -> Digest256 {
    digest_parts(&[&[LEAF_PREFIX], leaf])
}

fn node_hash(left: &Digest256, right: &Digest256) -> Digest256 {
    digest_parts(&[&[NODE_PREFIX], &left.0, &right.0])
}

/// Binary Merkle root over leaf digests. An odd node at any level is paired
/// with itself. The empty sequence has the all-zero root.
pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Digest256 {
    if leaves.is_empty() {
        return Digest256::ZERO;
    }
    let level: Vec<Digest256> = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
    fold_levels(level)
}

/// Merkle root where the leaves are already digests (hashed once more under
/// the leaf tag so the two entry points agree on `[d.0]`).
pub fn merkle_root_digests(leaves: &[Digest256]) -> Digest256 {
    if leaves.is_empty() {
        return Digest256::ZERO;
    }
    let level: Vec<Digest256> = leaves.iter().map(|d| leaf_hash(&d.0)).collect();
    fold_levels(level)
}

fn dup_hash(node: &Digest256) -> Digest256 {
    digest_parts(&[&[DUP_PREFIX], &node.0, &node.0])
}

fn fold_levels(mut level: Vec<Digest256>) -> Digest256 {
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [l] => dup_hash(l),
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}
