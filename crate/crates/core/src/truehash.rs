//! Rotating mining hash.
//!
//! The header and nonce are expanded into a vector of `n` 64-bit field
//! elements, the coordinates are permuted by the current group element
//! `g ∈ S_n`, and the permuted vector is hashed. Every `epoch_length` snail
//! blocks a fresh `g` is drawn by a Fisher–Yates shuffle seeded with the
//! digest of the epoch's block hashes, so every node can recompute it.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake256;

use crate::hash::{digest_parts, Digest256};

pub const DEFAULT_GROUP_DEGREE: usize = 16;
pub const DEFAULT_EPOCH_LENGTH: u64 = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TruehashError {
    #[error("rotation requested at height {height}, which is not a multiple of epoch length {epoch}")]
    WrongEpochBoundary { height: u64, epoch: u64 },
    #[error("rotation needs the last {expected} block hashes, got {got}")]
    HistoryLength { expected: u64, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A permutation of `{0..n-1}`, stored as the image of each index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Arc<Vec<u16>>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation(Arc::new((0..n as u16).collect()))
    }

    pub fn from_images(images: Vec<u16>) -> Result<Self, TruehashError> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &i in &images {
            let i = i as usize;
            if i >= n || seen[i] {
                return Err(TruehashError::InvalidParams(format!("{images:?} is not a bijection")));
            }
            seen[i] = true;
        }
        Ok(Permutation(Arc::new(images)))
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn image(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn images(&self) -> &[u16] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &g)| i == g as usize)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Permutation) -> Permutation {
        Permutation(Arc::new(first.0.iter().map(|&i| self.0[i as usize]).collect()))
    }

    /// Coordinate action: `(g·v)[g(i)] = v[i]`.
    pub fn act(&self, v: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; v.len()];
        for (i, &x) in v.iter().enumerate() {
            out[self.image(i)] = x;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruehashParams {
    pub group_degree: usize,
    pub epoch_length: u64,
    pub element: Permutation,
}

impl TruehashParams {
    pub fn new(group_degree: usize, epoch_length: u64) -> Result<Self, TruehashError> {
        if group_degree == 0 || group_degree > u16::MAX as usize {
            return Err(TruehashError::InvalidParams(format!("group degree {group_degree}")));
        }
        if epoch_length == 0 {
            return Err(TruehashError::InvalidParams("epoch length must be ≥ 1".into()));
        }
        Ok(TruehashParams { group_degree, epoch_length, element: Permutation::identity(group_degree) })
    }

    pub fn is_rotation_height(&self, height: u64) -> bool {
        height > 0 && height.is_multiple_of(self.epoch_length)
    }
}

impl Default for TruehashParams {
    fn default() -> Self {
        TruehashParams::new(DEFAULT_GROUP_DEGREE, DEFAULT_EPOCH_LENGTH).expect("valid defaults")
    }
}

/// Header and nonce padded to `n` field elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderVector(pub Vec<u64>);

/// Expands `(header, nonce)` to `n` elements with SHAKE256; element `i` is
/// bytes `8i..8i+8` of the keyed output stream.
pub fn pad_header(header: &[u8], nonce: u64, n: usize) -> HeaderVector {
    let mut xof = Shake256::default();
    xof.update(b"truehash-pad");
    xof.update(&(header.len() as u32).to_be_bytes());
    xof.update(header);
    xof.update(&nonce.to_be_bytes());
    let mut reader = xof.finalize_xof();
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        reader.read(&mut buf);
        out.push(u64::from_be_bytes(buf));
    }
    HeaderVector(out)
}

/// Digest of a field-element vector.
pub fn vector_digest(v: &[u64]) -> Digest256 {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_be_bytes()).collect();
    digest_parts(&[b"truehash", &bytes])
}

pub fn truehash(params: &TruehashParams, header: &[u8], nonce: u64) -> Digest256 {
    let v = pad_header(header, nonce, params.group_degree);
    vector_digest(&params.element.act(&v.0))
}

/// Seed for the epoch ending at `height`: digest of the epoch's block hashes.
pub fn epoch_seed(history: &[Digest256]) -> Digest256 {
    let parts: Vec<&[u8]> = std::iter::once(&b"truehash-epoch"[..]).chain(history.iter().map(|h| &h.0[..])).collect();
    digest_parts(&parts)
}

/// Uniform permutation drawn from `seed` by Fisher–Yates.
pub fn seeded_permutation(seed: &Digest256, n: usize) -> Permutation {
    let mut rng = ChaCha8Rng::from_seed(seed.0);
    let mut images: Vec<u16> = (0..n as u16).collect();
    images.shuffle(&mut rng);
    Permutation(Arc::new(images))
}

/// Draws the next group element at an epoch boundary. `history` holds the
/// hashes of the last `epoch_length` blocks, oldest first, ending at
/// `height`.
pub fn rotate_element(
    height: u64,
    history: &[Digest256],
    params: &TruehashParams,
) -> Result<TruehashParams, TruehashError> {
    if !params.is_rotation_height(height) {
        return Err(TruehashError::WrongEpochBoundary { height, epoch: params.epoch_length });
    }
    if history.len() as u64 != params.epoch_length {
        return Err(TruehashError::HistoryLength { expected: params.epoch_length, got: history.len() });
    }
    let seed = epoch_seed(history);
    Ok(TruehashParams { element: seeded_permutation(&seed, params.group_degree), ..params.clone() })
}
