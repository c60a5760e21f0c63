use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::fruitchain::link::verify_fruit_work;
use crate::fruitchain::{is_recent, ChainError, ChainLink, ChainRule, FruitTieBreak, InvalidReason, MiningParams};
use crate::hash::Digest256;
use crate::truehash::TruehashParams;
use crate::types::{Fruit, NodeId, SnailBlock};

/// Source of fast-block digests by serial, for fruit digest checks.
pub trait FastLookup {
    fn digest_of(&self, serial: u64) -> Option<Digest256>;
}

/// Lookup that knows no fast blocks; digest checks are skipped.
pub struct NoFastBlocks;

impl FastLookup for NoFastBlocks {
    fn digest_of(&self, _serial: u64) -> Option<Digest256> {
        None
    }
}

impl FastLookup for BTreeMap<u64, Digest256> {
    fn digest_of(&self, serial: u64) -> Option<Digest256> {
        self.get(&serial).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FruitOutcome {
    /// First fruit for its message.
    Added,
    /// Beat the existing fruit for its message.
    Replaced,
    /// Lost the tie-break; view unchanged.
    Kept,
    /// Its serial is already packaged in the chain.
    AlreadyIncluded,
    /// Pointer block or fast block unknown; held until they arrive.
    Orphaned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainOutcome {
    Adopted,
    Kept,
}

/// A node's view of the snailchain plus its pending fruit set.
#[derive(Debug, Clone)]
pub struct ChainView {
    owner: NodeId,
    params: MiningParams,
    tip: Arc<ChainLink>,
    /// Winning fruit per message `(serial, digest)`, not yet in the chain.
    pending: BTreeMap<(u64, Digest256), Fruit>,
    orphans: Vec<Fruit>,
    known: HashMap<Digest256, Arc<ChainLink>>,
    invalid_fruits: u64,
    invalid_chains: u64,
}

impl ChainView {
    pub fn new(owner: NodeId, params: MiningParams, truehash: TruehashParams) -> Self {
        Self::from_genesis(owner, params, ChainLink::genesis(truehash))
    }

    /// Starts from a shared genesis link so all views agree on its hash.
    pub fn from_genesis(owner: NodeId, params: MiningParams, genesis: Arc<ChainLink>) -> Self {
        let mut known = HashMap::new();
        known.insert(genesis.hash(), genesis.clone());
        ChainView {
            owner,
            params,
            tip: genesis,
            pending: BTreeMap::new(),
            orphans: Vec::new(),
            known,
            invalid_fruits: 0,
            invalid_chains: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn params(&self) -> &MiningParams {
        &self.params
    }

    pub fn tip(&self) -> &Arc<ChainLink> {
        &self.tip
    }

    pub fn height(&self) -> u64 {
        self.tip.height()
    }

    pub fn blocks(&self) -> Vec<SnailBlock> {
        self.tip.blocks()
    }

    pub fn pending(&self) -> impl Iterator<Item = &Fruit> {
        self.pending.values()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn orphan_len(&self) -> usize {
        self.orphans.len()
    }

    pub fn invalid_fruits(&self) -> u64 {
        self.invalid_fruits
    }

    pub fn invalid_chains(&self) -> u64 {
        self.invalid_chains
    }

    pub fn known_link(&self, hash: &Digest256) -> Option<&Arc<ChainLink>> {
        self.known.get(hash)
    }

    pub fn is_recent(&self, f: &Fruit) -> bool {
        is_recent(f, &self.tip, self.params.recency)
    }

    /// True when a recent pending fruit exists for `serial`.
    pub fn has_recent_fruit(&self, serial: u64) -> bool {
        self.pending.range((serial, Digest256::ZERO)..=(serial, Digest256([0xff; 32]))).any(|(_, f)| self.is_recent(f))
    }

    /// Recent pending fruits, ordered by serial.
    pub fn recent_pending(&self) -> Vec<Fruit> {
        self.pending.values().filter(|f| self.is_recent(f)).cloned().collect()
    }

    /// The fruits a block mined now would carry: recent pending fruits with
    /// serials following the chain's last serial, up to the first gap.
    pub fn packable(&self) -> Vec<Fruit> {
        let mut out = Vec::new();
        let mut next = self.tip.last_serial() + 1;
        loop {
            let best = self
                .pending
                .range((next, Digest256::ZERO)..=(next, Digest256([0xff; 32])))
                .map(|(_, f)| f)
                .filter(|f| self.is_recent(f))
                .min_by_key(|f| f.hash);
            match best {
                Some(f) => out.push(f.clone()),
                None => return out,
            }
            next += 1;
        }
    }

    fn wins(&self, new: &Fruit, old: &Fruit) -> bool {
        let (new_recent, old_recent) = (self.is_recent(new), self.is_recent(old));
        if new_recent != old_recent {
            return new_recent;
        }
        match self.params.tie_break {
            FruitTieBreak::LowerHash => new.hash < old.hash,
            FruitTieBreak::LowerPointer => new.prev < old.prev,
        }
    }

    /// Handles a fruit heard from the network (or mined locally).
    pub fn on_hear_fruit(&mut self, f: Fruit, fast: &dyn FastLookup) -> Result<FruitOutcome, ChainError> {
        if self.params.rule == ChainRule::Nakamoto {
            return Ok(FruitOutcome::Kept);
        }
        let Some(anchor) = self.known.get(&f.prev).cloned() else {
            self.orphans.push(f);
            return Ok(FruitOutcome::Orphaned);
        };
        if let Err(reason) = verify_fruit_work(&f, &anchor, &self.params) {
            self.invalid_fruits += 1;
            return Err(ChainError::InvalidFruit(reason));
        }
        match fast.digest_of(f.serial) {
            Some(d) if d != f.digest => {
                self.invalid_fruits += 1;
                return Err(ChainError::InvalidFruit(InvalidReason::DigestMismatch { serial: f.serial }));
            }
            None => {
                self.orphans.push(f);
                return Ok(FruitOutcome::Orphaned);
            }
            Some(_) => {}
        }
        if f.serial <= self.tip.last_serial() {
            return Ok(FruitOutcome::AlreadyIncluded);
        }
        let key = (f.serial, f.digest);
        match self.pending.get(&key) {
            None => {
                self.pending.insert(key, f);
                Ok(FruitOutcome::Added)
            }
            Some(old) if self.wins(&f, old) => {
                self.pending.insert(key, f);
                Ok(FruitOutcome::Replaced)
            }
            Some(_) => Ok(FruitOutcome::Kept),
        }
    }

    /// Re-examines held fruits; call after new blocks or fast blocks arrive.
    pub fn retry_orphans(&mut self, fast: &dyn FastLookup) {
        if self.orphans.is_empty() {
            return;
        }
        let orphans = std::mem::take(&mut self.orphans);
        let mut still = Vec::new();
        for f in orphans {
            let ready = self.known.contains_key(&f.prev) && fast.digest_of(f.serial).is_some();
            if ready {
                let _ = self.on_hear_fruit(f, fast);
            } else if f.serial > self.tip.last_serial() {
                still.push(f);
            }
        }
        // orphans whose pointer never shows up eventually go stale anyway
        let horizon = 4 * self.params.recency as usize + 64;
        if still.len() > horizon {
            still.drain(..still.len() - horizon);
        }
        self.orphans.extend(still);
    }

    fn better(&self, candidate: &ChainLink) -> bool {
        match self.params.rule {
            ChainRule::Fruitchain => candidate.fruit_count() > self.tip.fruit_count(),
            ChainRule::Nakamoto => candidate.height() > self.tip.height(),
        }
    }

    /// Validates and links `blocks` onto the known block at `base`. Returns
    /// the new tip link (or the base when `blocks` is empty).
    fn link_suffix(
        &mut self,
        base: Arc<ChainLink>,
        blocks: impl IntoIterator<Item = SnailBlock>,
        fast: &dyn FastLookup,
    ) -> Result<Arc<ChainLink>, ChainError> {
        let mut cur = base;
        for b in blocks {
            if let Some(k) = self.known.get(&b.hash) {
                cur = k.clone();
                continue;
            }
            let height = b.number;
            cur = ChainLink::extend(&cur, b, &self.params, fast).map_err(|reason| {
                self.invalid_chains += 1;
                ChainError::InvalidChain { height, reason }
            })?;
            self.known.insert(cur.hash(), cur.clone());
        }
        Ok(cur)
    }

    /// Handles a full chain (genesis first) heard from the network.
    pub fn on_hear_chain(&mut self, chain: &[SnailBlock], fast: &dyn FastLookup) -> Result<ChainOutcome, ChainError> {
        let Some(first) = chain.first() else {
            return Ok(ChainOutcome::Kept);
        };
        let genesis = self.tip.ancestors().last().expect("genesis");
        if first.hash != genesis.hash() {
            self.invalid_chains += 1;
            return Err(ChainError::InvalidChain { height: 0, reason: InvalidReason::WrongGenesis });
        }
        // skip the prefix we already hold
        let mut start = 1;
        let mut base = genesis;
        while start < chain.len() {
            match self.known.get(&chain[start].hash) {
                Some(l) if l.block() == &chain[start] => {
                    base = l.clone();
                    start += 1;
                }
                _ => break,
            }
        }
        let tip = self.link_suffix(base, chain[start..].iter().cloned(), fast)?;
        Ok(self.consider(tip, fast))
    }

    /// Same as [`on_hear_chain`](Self::on_hear_chain) for a chain shared as
    /// a link handle: only blocks this view has not validated are checked.
    pub fn on_hear_tip(&mut self, tip: &Arc<ChainLink>, fast: &dyn FastLookup) -> Result<ChainOutcome, ChainError> {
        if self.known.contains_key(&tip.hash()) {
            let link = self.known[&tip.hash()].clone();
            return Ok(self.consider(link, fast));
        }
        let mut suffix = Vec::new();
        let mut base = None;
        for l in tip.ancestors() {
            if let Some(k) = self.known.get(&l.hash()) {
                base = Some(k.clone());
                break;
            }
            suffix.push(l.block().clone());
        }
        let Some(base) = base else {
            self.invalid_chains += 1;
            return Err(ChainError::InvalidChain { height: 0, reason: InvalidReason::WrongGenesis });
        };
        suffix.reverse();
        let new_tip = self.link_suffix(base, suffix, fast)?;
        Ok(self.consider(new_tip, fast))
    }

    fn consider(&mut self, candidate: Arc<ChainLink>, fast: &dyn FastLookup) -> ChainOutcome {
        if !self.better(&candidate) {
            self.retry_orphans(fast);
            return ChainOutcome::Kept;
        }
        self.switch_to(candidate, fast);
        ChainOutcome::Adopted
    }

    /// Moves the tip to an already-validated link, returning fruits from
    /// abandoned blocks to the pending set.
    pub fn switch_to(&mut self, new_tip: Arc<ChainLink>, fast: &dyn FastLookup) {
        let fork = new_tip.common_ancestor_height(&self.tip);
        let abandoned: Vec<Fruit> =
            self.tip.ancestors().take_while(|l| l.height() > fork).flat_map(|l| l.block().fruits.clone()).collect();
        self.tip = new_tip;
        let last = self.tip.last_serial();
        self.pending.retain(|(serial, _), _| *serial > last);
        for f in abandoned {
            if f.serial > last {
                self.pending.entry((f.serial, f.digest)).or_insert(f);
            }
        }
        self.retry_orphans(fast);
    }

    /// Validates a locally mined block on top of the current tip and always
    /// moves the tip to it: a miner extends its own chain with its own block
    /// even when the block carries no fruits.
    pub fn extend_tip(&mut self, block: SnailBlock, fast: &dyn FastLookup) -> Result<Arc<ChainLink>, ChainError> {
        let tip = self.tip.clone();
        let link = self.link_suffix(tip, [block], fast)?;
        self.switch_to(link.clone(), fast);
        Ok(link)
    }

    /// Validates `block` on top of `parent` (any known link) without moving
    /// the tip unless the result is heavier. Returns the new link.
    pub fn extend_from(
        &mut self,
        parent: &Arc<ChainLink>,
        block: SnailBlock,
        fast: &dyn FastLookup,
    ) -> Result<Arc<ChainLink>, ChainError> {
        let link = self.link_suffix(parent.clone(), [block], fast)?;
        if self.better(&link) {
            self.switch_to(link.clone(), fast);
        }
        Ok(link)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fruitchain::{mine_step, MiningTemplate, Target};
    use crate::hash::digest;
    use crate::types::FastMessage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn easy() -> MiningParams {
        let mut p = MiningParams::from_intervals(1, 1, 1);
        p.block_target = Target::MAX;
        p.fruit_target = Target::MAX;
        p
    }

    fn messages(n: u64) -> (Vec<FastMessage>, BTreeMap<u64, Digest256>) {
        let m: Vec<FastMessage> =
            (1..=n).map(|s| FastMessage { digest: digest(&s.to_be_bytes()), serial: s }).collect();
        let lookup = m.iter().map(|m| (m.serial, m.digest)).collect();
        (m, lookup)
    }

    /// Mines `blocks` empty blocks on `view`.
    fn grow(view: &mut ChainView, blocks: u64, rng: &mut ChaCha8Rng) {
        for t in 0..blocks {
            let b = mine_step(view, &[], NodeId(1), t, rng).block.unwrap();
            view.extend_tip(b, &NoFastBlocks).unwrap();
        }
    }

    fn fruit_on(view: &ChainView, msg: FastMessage, nonce: u64) -> Fruit {
        MiningTemplate::new(view, &[msg], NodeId(2), 0).try_nonce(view, nonce).fruit.unwrap()
    }

    #[test]
    fn first_fruit_is_added_and_lower_hash_replaces() {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, lookup) = messages(1);
        let a = fruit_on(&view, m[0], 1);
        let b = fruit_on(&view, m[0], 2);
        let (lo, hi) = if a.hash < b.hash { (a, b) } else { (b, a) };
        assert_eq!(view.on_hear_fruit(hi.clone(), &lookup), Ok(FruitOutcome::Added));
        assert_eq!(view.on_hear_fruit(lo.clone(), &lookup), Ok(FruitOutcome::Replaced));
        assert_eq!(view.on_hear_fruit(hi, &lookup), Ok(FruitOutcome::Kept));
        assert_eq!(view.pending().next().unwrap().hash, lo.hash);
    }

    #[test]
    fn pointer_tie_break_flag() {
        let mut params = easy();
        params.tie_break = FruitTieBreak::LowerPointer;
        let mut view = ChainView::new(NodeId(0), params, TruehashParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, lookup) = messages(1);
        let old = fruit_on(&view, m[0], 1);
        grow(&mut view, 1, &mut rng);
        let new = fruit_on(&view, m[0], 1);
        assert!(view.is_recent(&old) && view.is_recent(&new));
        let (lo, hi) = if old.prev < new.prev { (old, new) } else { (new, old) };
        view.on_hear_fruit(hi, &lookup).unwrap();
        assert_eq!(view.on_hear_fruit(lo, &lookup), Ok(FruitOutcome::Replaced));
    }

    #[test]
    fn digest_mismatch_is_invalid() {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, _) = messages(1);
        let f = fruit_on(&view, m[0], 0);
        let wrong: BTreeMap<u64, Digest256> = [(1, digest(b"other"))].into();
        assert_eq!(
            view.on_hear_fruit(f, &wrong),
            Err(ChainError::InvalidFruit(InvalidReason::DigestMismatch { serial: 1 }))
        );
        assert_eq!(view.invalid_fruits(), 1);
    }

    #[test]
    fn tampered_fruit_hash_is_invalid() {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, lookup) = messages(1);
        let mut f = fruit_on(&view, m[0], 0);
        f.nonce += 1;
        assert_eq!(view.on_hear_fruit(f, &lookup), Err(ChainError::InvalidFruit(InvalidReason::BadHash)));
    }

    #[test]
    fn recency_boundary() {
        let lambda = DEFAULT_RECENCY_FOR_TEST;
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        grow(&mut view, 40, &mut rng);
        let tip = view.tip().clone();
        let hang = |back: u64| Fruit {
            prev: tip.at_height(tip.height() + 1 - back).unwrap().hash(),
            ..fruit_on(&view, messages(1).0[0], 0)
        };
        // the tip counts as 1 back
        assert!(is_recent(&hang(1), &tip, lambda));
        assert!(is_recent(&hang(lambda), &tip, lambda));
        assert!(!is_recent(&hang(lambda + 1), &tip, lambda));
    }

    const DEFAULT_RECENCY_FOR_TEST: u64 = crate::fruitchain::DEFAULT_RECENCY;

    fn chain_with_fruits(n_fruits: u64, seed: u64) -> (Vec<SnailBlock>, BTreeMap<u64, Digest256>) {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, lookup) = messages(n_fruits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for msg in &m {
            let f = fruit_on(&view, *msg, rng.next_u64());
            view.on_hear_fruit(f, &lookup).unwrap();
        }
        let b = mine_step(&view, &[], NodeId(3), 0, &mut rng).block.unwrap();
        view.extend_tip(b, &lookup).unwrap();
        assert_eq!(view.tip().fruit_count(), n_fruits);
        (view.blocks(), lookup)
    }

    use rand::RngCore;

    #[test]
    fn adoption_needs_strictly_more_fruits() {
        let (ten, lookup) = chain_with_fruits(10, 1);
        let (eleven, _) = chain_with_fruits(11, 2);
        let (ten_b, _) = chain_with_fruits(10, 3);
        let mut view = ChainView::new(NodeId(9), easy(), TruehashParams::default());
        assert_eq!(view.on_hear_chain(&ten, &lookup), Ok(ChainOutcome::Adopted));
        assert_eq!(view.on_hear_chain(&ten_b, &lookup), Ok(ChainOutcome::Kept));
        assert_eq!(view.on_hear_chain(&eleven, &lookup), Ok(ChainOutcome::Adopted));
        assert_eq!(view.tip().fruit_count(), 11);
    }

    #[test]
    fn reorg_returns_abandoned_fruits_to_pending() {
        let (ten, lookup) = chain_with_fruits(10, 1);
        let mut view = ChainView::new(NodeId(9), easy(), TruehashParams::default());
        view.on_hear_chain(&ten, &lookup).unwrap();
        assert_eq!(view.pending_len(), 0);
        let (eleven, _) = chain_with_fruits(11, 2);
        view.on_hear_chain(&eleven, &lookup).unwrap();
        // fruits of serial 1..=10 are now in the chain again, so nothing pending
        assert_eq!(view.pending_len(), 0);
        assert_eq!(view.tip().last_serial(), 11);
    }

    #[test]
    fn non_recent_fruit_rejects_chain() {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, lookup) = messages(1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stale = fruit_on(&view, m[0], 0);
        grow(&mut view, DEFAULT_RECENCY_FOR_TEST, &mut rng);
        // hand-build a block that packages the stale fruit
        let mut t = MiningTemplate::new(&view, &[], NodeId(1), 0).try_nonce(&view, 0).block.unwrap();
        t.fruits = vec![stale];
        t.fruits_hash = crate::types::fruits_root(&t.fruits);
        let h = crate::truehash::truehash(view.tip().child_params(), &t.header().to_bytes(), t.nonce);
        t.hash = h;
        let mut chain = view.blocks();
        chain.push(t);
        let mut fresh = ChainView::new(NodeId(5), easy(), TruehashParams::default());
        assert_eq!(
            fresh.on_hear_chain(&chain, &lookup),
            Err(ChainError::InvalidChain {
                height: DEFAULT_RECENCY_FOR_TEST + 1,
                reason: InvalidReason::StaleFruit { serial: 1 }
            })
        );
        assert_eq!(fresh.invalid_chains(), 1);
    }

    #[test]
    fn orphan_fruit_waits_for_fast_block() {
        let mut view = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let (m, lookup) = messages(1);
        let f = fruit_on(&view, m[0], 0);
        assert_eq!(view.on_hear_fruit(f, &NoFastBlocks), Ok(FruitOutcome::Orphaned));
        assert_eq!(view.pending_len(), 0);
        view.retry_orphans(&lookup);
        assert_eq!(view.pending_len(), 1);
        assert_eq!(view.orphan_len(), 0);
    }

    #[test]
    fn rotation_params_agree_across_views() {
        let mut a = ChainView::new(NodeId(0), easy(), TruehashParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        grow(&mut a, 45, &mut rng);
        let mut b = ChainView::new(NodeId(1), easy(), TruehashParams::default());
        // equal (zero) fruit counts: b keeps its own tip but validates the blocks
        assert_eq!(b.on_hear_chain(&a.blocks(), &NoFastBlocks), Ok(ChainOutcome::Kept));
        for h in 0..=45 {
            let la = a.tip().at_height(h).unwrap();
            let lb = b.known_link(&la.hash()).unwrap();
            assert_eq!(la.child_params(), lb.child_params());
            let identity = la.child_params().element.is_identity();
            assert_eq!(identity, h < 20, "height {h}");
        }
        assert_ne!(a.tip().at_height(20).unwrap().child_params(), a.tip().at_height(40).unwrap().child_params());
    }
}
