//! Private gossip channel for committee members.
//!
//! A seed-derived 0/1 matrix `A` with every row and column summing to
//! `gsize` decides who learns whose network address: member `i` encrypts
//! its address to each `j` with `A[i][j] = 1`, so `j` ends up knowing
//! exactly its in-neighbours. `j` can then send to those members, and
//! compromising `j` leaks at most `gsize + 1` addresses.
//!
//! The matrix is a sum of `gsize` seeded random derangement permutation
//! matrices. A drawn permutation that fixes a point or overlaps an earlier
//! one is rejected; a finished matrix that is not strongly connected is
//! rejected as a whole.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::Digest256;

pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("gsize {gsize} infeasible for csize {csize}")]
    InfeasibleParams { csize: usize, gsize: usize },
    #[error("no valid matrix after {0} rejections")]
    GenerationTimeout(usize),
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipMatrix {
    pub csize: usize,
    pub gsize: usize,
    pub seed: Digest256,
    rows: Vec<Vec<bool>>,
}

impl GossipMatrix {
    /// Wraps an explicit matrix (used by audits and tests). No invariants are
    /// checked.
    pub fn from_rows(rows: Vec<Vec<bool>>, gsize: usize) -> Self {
        GossipMatrix { csize: rows.len(), gsize, seed: Digest256::ZERO, rows }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.rows[i].iter().filter(|&&b| b).count()
    }

    pub fn col_sum(&self, j: usize) -> usize {
        self.rows.iter().filter(|r| r[j]).count()
    }

    /// Labels `i` with `A[i][j] = 1`: whose addresses `j` learns.
    pub fn in_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.csize).filter(move |&i| self.rows[i][j])
    }

    /// Every structural invariant: square, row and column sums equal
    /// `gsize`, zero diagonal, strongly connected.
    pub fn is_valid(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.csize)
            && (0..self.csize)
                .all(|i| !self.rows[i][i] && self.row_sum(i) == self.gsize && self.col_sum(i) == self.gsize)
            && is_strongly_connected(&self.rows)
    }

    /// The matrix as `csize` lines of space-separated 0/1.
    pub fn to_grid(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let line: Vec<&str> = r.iter().map(|&b| if b { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for GossipMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GossipMatrix({}x{}, g={})\n{}", self.csize, self.csize, self.gsize, self.to_grid())
    }
}

/// True iff every label reaches every other along directed edges `i → j`
/// where `A[i][j] = 1`.
pub fn is_strongly_connected(a: &[Vec<bool>]) -> bool {
    let n = a.len();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let edge = if forward { a[u][v] } else { a[v][u] };
                if edge && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Warns when `gsize` leaves the suggested balance (`gsize < csize/6`).
pub fn guideline_warning(csize: usize, gsize: usize) -> Option<String> {
    (6 * gsize >= csize).then(|| format!("gsize {gsize} is at least csize/6 for csize {csize}; leak bound is loose"))
}

pub fn generate_matrix(seed: Digest256, csize: usize, gsize: usize) -> Result<GossipMatrix, ChannelError> {
    if gsize == 0 || gsize >= csize {
        return Err(ChannelError::InfeasibleParams { csize, gsize });
    }
    let mut rng = ChaCha8Rng::from_seed(seed.0);
    let mut rejections = 0usize;
    // restart a matrix when one permutation keeps failing to fit
    let per_stage = 400usize;
    'matrix: loop {
        let mut rows = vec![vec![false; csize]; csize];
        for _ in 0..gsize {
            let mut tries = 0;
            let perm = loop {
                let mut p: Vec<usize> = (0..csize).collect();
                p.shuffle(&mut rng);
                if p.iter().enumerate().all(|(i, &j)| i != j && !rows[i][j]) {
                    break p;
                }
                rejections += 1;
                tries += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(ChannelError::GenerationTimeout(rejections));
                }
                if tries >= per_stage {
                    continue 'matrix;
                }
            };
            for (i, j) in perm.into_iter().enumerate() {
                rows[i][j] = true;
            }
        }
        if is_strongly_connected(&rows) {
            return Ok(GossipMatrix { csize, gsize, seed, rows });
        }
        rejections += 1;
        if rejections >= MAX_REJECTIONS {
            return Err(ChannelError::GenerationTimeout(rejections));
        }
    }
}

/// A member's network address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetAddr(pub u64);

/// Simulated public-key ciphertext: opens only for `recipient`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sealed {
    pub from: usize,
    recipient: usize,
    body: NetAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("announcement is not addressed to this key")]
pub struct DecryptFailure;

impl Sealed {
    pub fn open(&self, key_owner: usize) -> Result<NetAddr, DecryptFailure> {
        if key_owner == self.recipient {
            Ok(self.body)
        } else {
            Err(DecryptFailure)
        }
    }
}

/// Member `i`'s announcements: its address sealed to every `j` with
/// `A[i][j] = 1`.
pub fn announce(i: usize, a: &GossipMatrix, addr: NetAddr) -> Vec<Sealed> {
    (0..a.csize).filter(|&j| a.get(i, j)).map(|j| Sealed { from: i, recipient: j, body: addr }).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AddressTable {
    pub owner: usize,
    pub known: BTreeMap<usize, NetAddr>,
}

impl AddressTable {
    /// Everything a compromised owner reveals: its table plus itself.
    pub fn leak(&self, own: NetAddr) -> BTreeMap<usize, NetAddr> {
        let mut out = self.known.clone();
        out.insert(self.owner, own);
        out
    }
}

/// Member `j`'s table from whatever announcements reached it. Ciphertexts
/// it cannot open are ignored.
pub fn build_table<'a>(j: usize, announcements: impl IntoIterator<Item = &'a Sealed>) -> AddressTable {
    let known = announcements.into_iter().filter_map(|s| s.open(j).ok().map(|a| (s.from, a))).collect();
    AddressTable { owner: j, known }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::digest;

    #[test]
    fn basic_checks() {
        let n = 5;
        let complete: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect();
        assert!(is_strongly_connected(&complete));
        let mut split = vec![vec![false; 4]; 4];
        split[0][1] = true;
        split[1][0] = true;
        split[2][3] = true;
        split[3][2] = true;
        assert!(!is_strongly_connected(&split));
    }

    #[test]
    fn infeasible_and_deterministic() {
        assert_eq!(generate_matrix(Digest256::ZERO, 4, 4), Err(ChannelError::InfeasibleParams { csize: 4, gsize: 4 }));
        let a = generate_matrix(digest(b"x"), 31, 4).unwrap();
        assert_eq!(a, generate_matrix(digest(b"x"), 31, 4).unwrap());
        assert!(a.is_valid());
    }

    #[test]
    fn three_by_three_matches_enumeration() {
        // every 3x3 0/1 matrix with zero diagonal and all row/col sums 2
        let mut family = Vec::new();
        for bits in 0u32..512 {
            let rows: Vec<Vec<bool>> = (0..3).map(|i| (0..3).map(|j| bits >> (3 * i + j) & 1 == 1).collect()).collect();
            let m = GossipMatrix::from_rows(rows, 2);
            if (0..3).all(|i| !m.get(i, i) && m.row_sum(i) == 2 && m.col_sum(i) == 2) {
                family.push(m.rows().to_vec());
            }
        }
        assert_eq!(family.len(), 1);
        assert!(is_strongly_connected(&family[0]));
        for s in 0..20u8 {
            let a = generate_matrix(digest(&[s]), 3, 2).unwrap();
            assert_eq!(a.rows(), &family[0][..]);
        }
    }

    #[test]
    fn announcements_and_tables() {
        let a = generate_matrix(digest(b"t"), 31, 4).unwrap();
        let addrs: Vec<NetAddr> = (0..31).map(|i| NetAddr(1000 + i)).collect();
        let all: Vec<Sealed> = (0..31).flat_map(|i| announce(i, &a, addrs[i])).collect();
        let row0 = announce(0, &a, addrs[0]);
        assert_eq!(row0.len(), 4);
        let neighbor = (0..31).find(|&j| a.get(0, j)).unwrap();
        let stranger = (1..31).find(|&j| !a.get(0, j)).unwrap();
        assert!(row0.iter().any(|s| s.open(neighbor) == Ok(addrs[0])));
        assert!(row0.iter().all(|s| s.open(stranger) == Err(DecryptFailure)));
        for (j, &own) in addrs.iter().enumerate() {
            let t = build_table(j, &all);
            assert_eq!(t.known.len(), 4);
            assert!(t.known.keys().all(|&i| a.get(i, j)));
            assert!(t.leak(own).len() <= 5);
        }
        // a dropped announcement leaves a hole until redelivered
        let dropped: Vec<&Sealed> = all.iter().filter(|s| !(s.from == 0 && s.open(neighbor).is_ok())).collect();
        assert!(!build_table(neighbor, dropped).known.contains_key(&0));
    }

    #[test]
    fn guideline() {
        assert!(guideline_warning(31, 4).is_none());
        assert!(guideline_warning(31, 6).is_some());
    }
}
