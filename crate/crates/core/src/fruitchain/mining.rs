use rand::RngCore;

use crate::fruitchain::{ChainRule, ChainView};
use crate::hash::Digest256;
use crate::truehash::truehash;
use crate::types::{fruits_root, FastMessage, Fruit, MiningHeader, NodeId, SnailBlock};

/// Everything a miner hashes over, fixed for one tip and pending set. Only
/// the nonce varies between draws.
#[derive(Clone, Debug)]
pub struct MiningTemplate {
    header: MiningHeader,
    pointer_number: u64,
    height: u64,
    fruits: Vec<Fruit>,
    to_elect: bool,
    fruit_idle: bool,
    time: u64,
}

/// Result of one draw. A single draw may yield both a fruit and a block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MineOutcome {
    pub fruit: Option<Fruit>,
    pub block: Option<SnailBlock>,
    /// No unmined message was available, so fruit mining idled.
    pub fruit_idle: bool,
}

impl MineOutcome {
    pub fn is_empty(&self) -> bool {
        self.fruit.is_none() && self.block.is_none()
    }
}

impl MiningTemplate {
    /// `messages` are the fast-block messages the miner knows, in serial
    /// order; the oldest one above the chain's last serial that has no
    /// recent fruit yet is mined.
    pub fn new(view: &ChainView, messages: &[FastMessage], miner: NodeId, time: u64) -> Self {
        let params = view.params();
        let tip = view.tip();
        let pointer_number = tip.height().saturating_sub(params.pointer_window);
        let pointer = tip.at_height(pointer_number).expect("pointer below tip").hash();
        let fruiting = params.rule == ChainRule::Fruitchain;
        let message = if fruiting {
            let last = tip.last_serial();
            messages.iter().find(|m| m.serial > last && !view.has_recent_fruit(m.serial)).copied()
        } else {
            None
        };
        let fruits = if fruiting { view.packable() } else { Vec::new() };
        let height = tip.height() + 1;
        MiningTemplate {
            header: MiningHeader {
                prev: tip.hash(),
                pointer,
                fruit_set: fruits_root(&fruits),
                message: message.unwrap_or(FastMessage::NONE),
                miner,
            },
            pointer_number,
            height,
            fruits,
            to_elect: params.expects_elect_flag(height),
            fruit_idle: message.is_none(),
            time,
        }
    }

    pub fn header(&self) -> &MiningHeader {
        &self.header
    }

    pub fn fruits(&self) -> &[Fruit] {
        &self.fruits
    }

    pub fn fruit_idle(&self) -> bool {
        self.fruit_idle
    }

    /// Evaluates one nonce against both targets.
    pub fn try_nonce(&self, view: &ChainView, nonce: u64) -> MineOutcome {
        let params = view.params();
        let bytes = self.header.to_bytes();
        let h = truehash(view.tip().child_params(), &bytes, nonce);
        let mut out = MineOutcome { fruit_idle: self.fruit_idle, ..Default::default() };
        if !self.fruit_idle && params.fruit_target.passes(h.suffix_u64()) {
            out.fruit = Some(self.fruit(nonce, h, params.fruit_target.work()));
        }
        if params.block_target.passes(h.prefix_u64()) {
            out.block = Some(self.block(nonce, h, params.block_target.work(), params.fruit_target.work()));
        }
        out
    }

    fn fruit(&self, nonce: u64, hash: Digest256, fruit_difficulty: u64) -> Fruit {
        Fruit {
            prev: self.header.prev,
            pointer_hash: self.header.pointer,
            fruit_set_digest: self.header.fruit_set,
            digest: self.header.message.digest,
            serial: self.header.message.serial,
            miner: self.header.miner,
            nonce,
            fruit_difficulty,
            hash,
        }
    }

    fn block(&self, nonce: u64, hash: Digest256, difficulty: u64, fruit_difficulty: u64) -> SnailBlock {
        SnailBlock {
            parent_hash: self.header.prev,
            uncle_hash: Digest256::ZERO,
            coinbase: self.header.miner,
            pointer_hash: self.header.pointer,
            pointer_number: self.pointer_number,
            fruits_hash: self.header.fruit_set,
            fast_hash: self.header.message.digest,
            fast_number: self.header.message.serial,
            sign_hash: Digest256::ZERO,
            bloom: Vec::new(),
            difficulty,
            fruit_difficulty,
            number: self.height,
            public_key: Vec::new(),
            to_elect: self.to_elect,
            time: self.time,
            extra: Vec::new(),
            mix_digest: Digest256::ZERO,
            nonce,
            hash,
            fruits: self.fruits.clone(),
        }
    }
}

/// One mining draw with a fresh nonce from `rng`.
pub fn mine_step(
    view: &ChainView,
    messages: &[FastMessage],
    miner: NodeId,
    time: u64,
    rng: &mut impl RngCore,
) -> MineOutcome {
    MiningTemplate::new(view, messages, miner, time).try_nonce(view, rng.next_u64())
}
