use std::sync::Arc;

use crate::fruitchain::{ChainRule, InvalidReason, MiningParams};
use crate::hash::Digest256;
use crate::truehash::{rotate_element, truehash, TruehashParams};
use crate::types::{fruits_root, Fruit, SnailBlock};

use super::view::FastLookup;

/// One validated block plus cumulative metadata, linked to its parent.
#[derive(Debug)]
pub struct ChainLink {
    block: SnailBlock,
    parent: Option<Arc<ChainLink>>,
    fruit_count: u64,
    difficulty_sum: u128,
    last_serial: u64,
    child_params: TruehashParams,
}

impl Drop for ChainLink {
    // Unlink iteratively; long chains would otherwise recurse once per block.
    fn drop(&mut self) {
        let mut next = self.parent.take();
        while let Some(link) = next {
            match Arc::try_unwrap(link) {
                Ok(mut inner) => next = inner.parent.take(),
                Err(_) => break,
            }
        }
    }
}

impl ChainLink {
    pub fn genesis(params: TruehashParams) -> Arc<ChainLink> {
        Arc::new(ChainLink {
            block: SnailBlock::genesis(),
            parent: None,
            fruit_count: 0,
            difficulty_sum: 0,
            last_serial: 0,
            child_params: params,
        })
    }

    pub fn block(&self) -> &SnailBlock {
        &self.block
    }

    pub fn hash(&self) -> Digest256 {
        self.block.hash
    }

    pub fn height(&self) -> u64 {
        self.block.number
    }

    pub fn parent(&self) -> Option<&Arc<ChainLink>> {
        self.parent.as_ref()
    }

    /// Total fruits from genesis through this block.
    pub fn fruit_count(&self) -> u64 {
        self.fruit_count
    }

    pub fn difficulty_sum(&self) -> u128 {
        self.difficulty_sum
    }

    /// Highest fruit serial included so far (0 when none).
    pub fn last_serial(&self) -> u64 {
        self.last_serial
    }

    /// Truehash parameters for mining on top of this block.
    pub fn child_params(&self) -> &TruehashParams {
        &self.child_params
    }

    /// Iterates from this link back to genesis.
    pub fn ancestors(self: &Arc<Self>) -> Ancestors {
        Ancestors { next: Some(self.clone()) }
    }

    /// The ancestor (or self) at `height`.
    pub fn at_height(self: &Arc<Self>, height: u64) -> Option<Arc<ChainLink>> {
        if height > self.height() {
            return None;
        }
        self.ancestors().nth((self.height() - height) as usize)
    }

    /// Blocks from genesis to this link, oldest first.
    pub fn blocks(self: &Arc<Self>) -> Vec<SnailBlock> {
        let mut v: Vec<SnailBlock> = self.ancestors().map(|l| l.block.clone()).collect();
        v.reverse();
        v
    }

    /// Hashes of the last `n` blocks ending here, newest first.
    pub fn recent_hashes(self: &Arc<Self>, n: u64) -> Vec<Digest256> {
        self.ancestors().take(n as usize).map(|l| l.hash()).collect()
    }

    /// Links of the last `n` blocks, newest first.
    pub fn recent_links(self: &Arc<Self>, n: u64) -> Vec<Arc<ChainLink>> {
        self.ancestors().take(n as usize).collect()
    }

    /// Height of the deepest common ancestor with `other`.
    pub fn common_ancestor_height(self: &Arc<Self>, other: &Arc<ChainLink>) -> u64 {
        let mut a = self.clone();
        let mut b = other.clone();
        while a.height() > b.height() {
            a = a.parent.clone().expect("height > 0 has parent");
        }
        while b.height() > a.height() {
            b = b.parent.clone().expect("height > 0 has parent");
        }
        while a.hash() != b.hash() {
            a = a.parent.clone().expect("shared genesis");
            b = b.parent.clone().expect("shared genesis");
        }
        a.height()
    }

    /// Validates `block` as a child of `parent` and returns the new link.
    pub fn extend(
        parent: &Arc<ChainLink>,
        block: SnailBlock,
        params: &MiningParams,
        fast: &dyn FastLookup,
    ) -> Result<Arc<ChainLink>, InvalidReason> {
        if block.parent_hash != parent.hash() {
            return Err(InvalidReason::ParentMismatch);
        }
        if block.number != parent.height() + 1 {
            return Err(InvalidReason::BadHeight);
        }
        let pointer_number = parent.height().saturating_sub(params.pointer_window);
        let pointer = parent.at_height(pointer_number).expect("pointer below parent");
        if block.pointer_number != pointer_number || block.pointer_hash != pointer.hash() {
            return Err(InvalidReason::BadPointer);
        }
        if block.difficulty != params.block_target.work() || block.fruit_difficulty != params.fruit_target.work() {
            return Err(InvalidReason::BadDifficulty);
        }
        if block.to_elect != params.expects_elect_flag(block.number) {
            return Err(InvalidReason::BadElectFlag);
        }
        if block.fruits_hash != fruits_root(&block.fruits) {
            return Err(InvalidReason::BadFruitsHash);
        }
        let h = truehash(parent.child_params(), &block.header().to_bytes(), block.nonce);
        if h != block.hash {
            return Err(InvalidReason::BadHash);
        }
        if !params.block_target.passes(h.prefix_u64()) {
            return Err(InvalidReason::AboveTarget);
        }

        let mut last_serial = parent.last_serial;
        let mut diff = 0u128;
        if params.rule == ChainRule::Nakamoto && !block.fruits.is_empty() {
            return Err(InvalidReason::UnexpectedFruits);
        }
        if !block.fruits.is_empty() {
            let recent = parent.recent_links(params.recency);
            for f in &block.fruits {
                if f.serial != last_serial + 1 {
                    return Err(InvalidReason::NonContiguous { expected: last_serial + 1, found: f.serial });
                }
                let anchor =
                    recent.iter().find(|l| l.hash() == f.prev).ok_or(InvalidReason::StaleFruit { serial: f.serial })?;
                verify_fruit_work(f, anchor, params)?;
                if let Some(d) = fast.digest_of(f.serial) {
                    if d != f.digest {
                        return Err(InvalidReason::DigestMismatch { serial: f.serial });
                    }
                }
                last_serial = f.serial;
                diff += f.fruit_difficulty as u128;
            }
        }

        let child_params = if parent.child_params.is_rotation_height(block.number) {
            let e = parent.child_params.epoch_length;
            let mut history: Vec<Digest256> = parent.recent_hashes(e - 1);
            history.reverse();
            history.push(block.hash);
            rotate_element(block.number, &history, &parent.child_params).expect("boundary and history length checked")
        } else {
            parent.child_params.clone()
        };

        Ok(Arc::new(ChainLink {
            fruit_count: parent.fruit_count + block.fruits.len() as u64,
            difficulty_sum: parent.difficulty_sum + diff,
            last_serial,
            block,
            parent: Some(parent.clone()),
            child_params,
        }))
    }
}

/// Checks a fruit's mining hash against the link it hangs from.
pub(crate) fn verify_fruit_work(f: &Fruit, anchor: &ChainLink, params: &MiningParams) -> Result<(), InvalidReason> {
    if f.fruit_difficulty != params.fruit_target.work() {
        return Err(InvalidReason::BadDifficulty);
    }
    let h = truehash(anchor.child_params(), &f.header().to_bytes(), f.nonce);
    if h != f.hash {
        return Err(InvalidReason::BadHash);
    }
    if !params.fruit_target.passes(h.suffix_u64()) {
        return Err(InvalidReason::AboveTarget);
    }
    Ok(())
}

pub struct Ancestors {
    next: Option<Arc<ChainLink>>,
}

impl Iterator for Ancestors {
    type Item = Arc<ChainLink>;

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.next.take()?;
        self.next = cur.parent.clone();
        Some(cur)
    }
}

/// True iff `f` hangs from one of the last `recency` blocks ending at `tip`
/// (the tip included).
pub fn is_recent(f: &Fruit, tip: &Arc<ChainLink>, recency: u64) -> bool {
    tip.ancestors().take(recency as usize).any(|l| l.hash() == f.prev)
}
