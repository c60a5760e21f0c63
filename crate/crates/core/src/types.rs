//! Blocks, fruits and transactions.
//!
//! Three block roles exist: the [`FastBlock`] committed by the BFT committee,
//! the [`Fruit`] that digests one fast block under low-difficulty proof of
//! work, and the [`SnailBlock`] that packages fruits into the snailchain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::hash::{digest, digest_parts, merkle_root, Digest256};

/// Identity of a simulated node (miner and potential committee member).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Account address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Address(pub u64);

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:016x}", self.0)
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Gas charged for a plain transfer.
pub const INTRINSIC_GAS: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub account_nonce: u64,
    pub gas_price: u64,
    pub gas_limit: u64,
    pub recipient: Address,
    /// Token amount moved to `recipient`.
    pub payload: u64,
    #[serde(with = "hex_bytes")]
    pub code: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    /// Client-side physical timestamp, in ticks.
    pub physical_timestamp: u64,
    /// Recovered signer. Stands in for the V, R, S signature values.
    pub sender: Address,
    pub sequence_number: u64,
}

impl Transaction {
    pub fn transfer(sender: Address, recipient: Address, payload: u64, nonce: u64, ts: u64) -> Self {
        Transaction {
            account_nonce: nonce,
            gas_price: 1,
            gas_limit: 21,
            recipient,
            payload,
            code: Vec::new(),
            data: Vec::new(),
            physical_timestamp: ts,
            sender,
            sequence_number: nonce,
        }
    }

    pub fn id(&self) -> Digest256 {
        digest(&self.encode())
    }

    pub fn gas_used(&self) -> u64 {
        INTRINSIC_GAS.min(self.gas_limit)
    }

    pub fn gas_cost(&self) -> u64 {
        self.gas_used().saturating_mul(self.gas_price)
    }
}

impl Encode for Transaction {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.account_nonce)
            .u64(self.gas_price)
            .u64(self.gas_limit)
            .u64(self.recipient.0)
            .u64(self.payload)
            .bytes(&self.code)
            .bytes(&self.data)
            .u64(self.physical_timestamp)
            .u64(self.sender.0)
            .u64(self.sequence_number);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Transaction {
            account_nonce: r.u64()?,
            gas_price: r.u64()?,
            gas_limit: r.u64()?,
            recipient: Address(r.u64()?),
            payload: r.u64()?,
            code: r.bytes()?,
            data: r.bytes()?,
            physical_timestamp: r.u64()?,
            sender: Address(r.u64()?),
            sequence_number: r.u64()?,
        })
    }
}

pub fn transactions_root(txs: &[Transaction]) -> Digest256 {
    let leaves: Vec<Vec<u8>> = txs.iter().map(Encode::encode).collect();
    merkle_root(&leaves)
}

/// A block committed by the BFT committee.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastBlock {
    pub parent_hash: Digest256,
    pub state_root: Digest256,
    pub transactions_root: Digest256,
    /// Carried, not processed.
    pub receipt_hash: Digest256,
    pub snail_hash: Digest256,
    pub proposer: Address,
    /// Carried, not processed.
    #[serde(with = "hex_bytes")]
    pub bloom: Vec<u8>,
    pub snail_number: u64,
    pub number: u64,
    pub gas_limit: u64,
    pub gas_used: u64,
    pub time: u64,
    #[serde(with = "hex_bytes")]
    pub extra: Vec<u8>,
    pub transactions: Vec<Transaction>,
    /// Fastchain height; fruits digesting this block carry it as their serial.
    pub serial: u64,
}

impl FastBlock {
    /// The fastchain genesis block (serial 0).
    pub fn genesis(state_root: Digest256) -> Self {
        FastBlock {
            parent_hash: Digest256::ZERO,
            state_root,
            transactions_root: Digest256::ZERO,
            receipt_hash: Digest256::ZERO,
            snail_hash: Digest256::ZERO,
            proposer: Address(0),
            bloom: Vec::new(),
            snail_number: 0,
            number: 0,
            gas_limit: 0,
            gas_used: 0,
            time: 0,
            extra: Vec::new(),
            transactions: Vec::new(),
            serial: 0,
        }
    }

    fn encode_header(&self, w: &mut Writer) {
        w.digest(&self.parent_hash)
            .digest(&self.state_root)
            .digest(&self.transactions_root)
            .digest(&self.receipt_hash)
            .digest(&self.snail_hash)
            .u64(self.proposer.0)
            .bytes(&self.bloom)
            .u64(self.snail_number)
            .u64(self.number)
            .u64(self.gas_limit)
            .u64(self.gas_used)
            .u64(self.time)
            .bytes(&self.extra);
    }

    /// True when the stored transactions root commits to the transaction list
    /// and the serial equals the height.
    pub fn is_well_formed(&self) -> bool {
        self.transactions_root == transactions_root(&self.transactions) && self.serial == self.number
    }
}

impl Encode for FastBlock {
    fn encode_to(&self, w: &mut Writer) {
        self.encode_header(w);
        w.seq(&self.transactions).u64(self.serial);
    }
}

impl Decode for FastBlock {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(FastBlock {
            parent_hash: r.digest()?,
            state_root: r.digest()?,
            transactions_root: r.digest()?,
            receipt_hash: r.digest()?,
            snail_hash: r.digest()?,
            proposer: Address(r.u64()?),
            bloom: r.bytes()?,
            snail_number: r.u64()?,
            number: r.u64()?,
            gas_limit: r.u64()?,
            gas_used: r.u64()?,
            time: r.u64()?,
            extra: r.bytes()?,
            transactions: r.seq()?,
            serial: r.u64()?,
        })
    }
}

/// Digest of a fast block: the header (including the stored transactions
/// root), the root recomputed from the transaction list, and the serial.
pub fn fast_block_digest(block: &FastBlock) -> Digest256 {
    let mut w = Writer::default();
    block.encode_header(&mut w);
    w.digest(&transactions_root(&block.transactions)).u64(block.serial);
    digest_parts(&[b"fast", &w.into_bytes()])
}

/// The record a committed fast block sends to proof-of-work miners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FastMessage {
    pub digest: Digest256,
    pub serial: u64,
}

impl FastMessage {
    pub fn of(block: &FastBlock) -> Self {
        FastMessage { digest: fast_block_digest(block), serial: block.serial }
    }

    /// Placeholder mined into snail blocks when no fast block is pending.
    pub const NONE: FastMessage = FastMessage { digest: Digest256::ZERO, serial: 0 };
}

/// The header fields that enter the mining hash. A fruit and a block found
/// on the same draw share this header and therefore the same hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiningHeader {
    /// Pointer to the most recent block (recency anchor).
    pub prev: Digest256,
    /// Pointer `κ` blocks back.
    pub pointer: Digest256,
    /// Digest of the fruit set the draw would package.
    pub fruit_set: Digest256,
    pub message: FastMessage,
    pub miner: NodeId,
}

impl MiningHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.digest(&self.prev)
            .digest(&self.pointer)
            .digest(&self.fruit_set)
            .digest(&self.message.digest)
            .u64(self.message.serial)
            .u32(self.miner.0);
        w.into_bytes()
    }
}

/// A mined fruit digesting one fast block.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fruit {
    /// Hash of the snail block this fruit hangs from.
    pub prev: Digest256,
    /// `h'`, part of the mining header.
    pub pointer_hash: Digest256,
    /// `d(F')` of the draw that produced the fruit.
    pub fruit_set_digest: Digest256,
    /// Digest of the fast block this fruit carries.
    pub digest: Digest256,
    pub serial: u64,
    pub miner: NodeId,
    pub nonce: u64,
    /// Work weight of the fruit target this fruit was mined under.
    pub fruit_difficulty: u64,
    /// Mining hash over all fields above.
    pub hash: Digest256,
}

impl Fruit {
    pub fn header(&self) -> MiningHeader {
        MiningHeader {
            prev: self.prev,
            pointer: self.pointer_hash,
            fruit_set: self.fruit_set_digest,
            message: self.message(),
            miner: self.miner,
        }
    }

    pub fn message(&self) -> FastMessage {
        FastMessage { digest: self.digest, serial: self.serial }
    }
}

impl Encode for Fruit {
    fn encode_to(&self, w: &mut Writer) {
        w.digest(&self.prev)
            .digest(&self.pointer_hash)
            .digest(&self.fruit_set_digest)
            .digest(&self.digest)
            .u64(self.serial)
            .u32(self.miner.0)
            .u64(self.nonce)
            .u64(self.fruit_difficulty)
            .digest(&self.hash);
    }
}

impl Decode for Fruit {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Fruit {
            prev: r.digest()?,
            pointer_hash: r.digest()?,
            fruit_set_digest: r.digest()?,
            digest: r.digest()?,
            serial: r.u64()?,
            miner: NodeId(r.u32()?),
            nonce: r.u64()?,
            fruit_difficulty: r.u64()?,
            hash: r.digest()?,
        })
    }
}

pub fn fruits_root(fruits: &[Fruit]) -> Digest256 {
    let leaves: Vec<[u8; 32]> = fruits.iter().map(|f| f.hash.0).collect();
    merkle_root(&leaves)
}

/// A snailchain block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnailBlock {
    pub parent_hash: Digest256,
    /// Carried, not processed.
    pub uncle_hash: Digest256,
    pub coinbase: NodeId,
    pub pointer_hash: Digest256,
    pub pointer_number: u64,
    pub fruits_hash: Digest256,
    pub fast_hash: Digest256,
    pub fast_number: u64,
    pub sign_hash: Digest256,
    #[serde(with = "hex_bytes")]
    pub bloom: Vec<u8>,
    pub difficulty: u64,
    pub fruit_difficulty: u64,
    pub number: u64,
    /// Carried, not processed.
    #[serde(with = "hex_bytes")]
    pub public_key: Vec<u8>,
    pub to_elect: bool,
    pub time: u64,
    #[serde(with = "hex_bytes")]
    pub extra: Vec<u8>,
    pub mix_digest: Digest256,
    pub nonce: u64,
    /// Mining hash; children link to it.
    pub hash: Digest256,
    pub fruits: Vec<Fruit>,
}

impl SnailBlock {
    pub fn genesis() -> Self {
        let header = MiningHeader {
            prev: Digest256::ZERO,
            pointer: Digest256::ZERO,
            fruit_set: Digest256::ZERO,
            message: FastMessage::NONE,
            miner: NodeId(0),
        };
        SnailBlock {
            parent_hash: Digest256::ZERO,
            uncle_hash: Digest256::ZERO,
            coinbase: NodeId(0),
            pointer_hash: Digest256::ZERO,
            pointer_number: 0,
            fruits_hash: Digest256::ZERO,
            fast_hash: Digest256::ZERO,
            fast_number: 0,
            sign_hash: Digest256::ZERO,
            bloom: Vec::new(),
            difficulty: 0,
            fruit_difficulty: 0,
            number: 0,
            public_key: Vec::new(),
            to_elect: false,
            time: 0,
            extra: Vec::new(),
            mix_digest: Digest256::ZERO,
            nonce: 0,
            hash: digest(&header.to_bytes()),
            fruits: Vec::new(),
        }
    }

    pub fn header(&self) -> MiningHeader {
        MiningHeader {
            prev: self.parent_hash,
            pointer: self.pointer_hash,
            fruit_set: self.fruits_hash,
            message: FastMessage { digest: self.fast_hash, serial: self.fast_number },
            miner: self.coinbase,
        }
    }

    pub fn fruit_difficulty_sum(&self) -> u128 {
        self.fruits.iter().map(|f| f.fruit_difficulty as u128).sum()
    }
}

impl Encode for SnailBlock {
    fn encode_to(&self, w: &mut Writer) {
        w.digest(&self.parent_hash)
            .digest(&self.uncle_hash)
            .u32(self.coinbase.0)
            .digest(&self.pointer_hash)
            .u64(self.pointer_number)
            .digest(&self.fruits_hash)
            .digest(&self.fast_hash)
            .u64(self.fast_number)
            .digest(&self.sign_hash)
            .bytes(&self.bloom)
            .u64(self.difficulty)
            .u64(self.fruit_difficulty)
            .u64(self.number)
            .bytes(&self.public_key)
            .bool(self.to_elect)
            .u64(self.time)
            .bytes(&self.extra)
            .digest(&self.mix_digest)
            .u64(self.nonce)
            .digest(&self.hash)
            .seq(&self.fruits);
    }
}

impl Decode for SnailBlock {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SnailBlock {
            parent_hash: r.digest()?,
            uncle_hash: r.digest()?,
            coinbase: NodeId(r.u32()?),
            pointer_hash: r.digest()?,
            pointer_number: r.u64()?,
            fruits_hash: r.digest()?,
            fast_hash: r.digest()?,
            fast_number: r.u64()?,
            sign_hash: r.digest()?,
            bloom: r.bytes()?,
            difficulty: r.u64()?,
            fruit_difficulty: r.u64()?,
            number: r.u64()?,
            public_key: r.bytes()?,
            to_elect: r.bool()?,
            time: r.u64()?,
            extra: r.bytes()?,
            mix_digest: r.digest()?,
            nonce: r.u64()?,
            hash: r.digest()?,
            fruits: r.seq()?,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn arb_digest() -> impl Strategy<Value = Digest256> {
        any::<[u8; 32]>().prop_map(Digest256)
    }

    pub fn arb_tx() -> impl Strategy<Value = Transaction> {
        (
            (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()),
            proptest::collection::vec(any::<u8>(), 0..8),
            proptest::collection::vec(any::<u8>(), 0..8),
            (any::<u64>(), any::<u64>(), any::<u64>()),
        )
            .prop_map(|((nonce, price, limit, to, pay), code, data, (ts, from, seq))| Transaction {
                account_nonce: nonce,
                gas_price: price,
                gas_limit: limit,
                recipient: Address(to),
                payload: pay,
                code,
                data,
                physical_timestamp: ts,
                sender: Address(from),
                sequence_number: seq,
            })
    }

    pub fn arb_fruit() -> impl Strategy<Value = Fruit> {
        (arb_digest(), arb_digest(), arb_digest(), arb_digest(), any::<(u64, u32, u64, u64)>(), arb_digest()).prop_map(
            |(prev, ph, fs, d, (serial, miner, nonce, fd), h)| Fruit {
                prev,
                pointer_hash: ph,
                fruit_set_digest: fs,
                digest: d,
                serial,
                miner: NodeId(miner),
                nonce,
                fruit_difficulty: fd,
                hash: h,
            },
        )
    }

    fn arb_fast_block() -> impl Strategy<Value = FastBlock> {
        (
            (arb_digest(), arb_digest(), any::<u64>(), any::<u64>(), any::<u64>()),
            proptest::collection::vec(arb_tx(), 0..4),
            proptest::collection::vec(any::<u8>(), 0..6),
        )
            .prop_map(|((parent, snail, num, time, gas), txs, extra)| FastBlock {
                parent_hash: parent,
                state_root: Digest256::ZERO,
                transactions_root: transactions_root(&txs),
                receipt_hash: Digest256::ZERO,
                snail_hash: snail,
                proposer: Address(num ^ 7),
                bloom: vec![],
                snail_number: num / 2,
                number: num,
                gas_limit: gas,
                gas_used: gas / 3,
                time,
                extra,
                transactions: txs,
                serial: num,
            })
    }

    fn arb_snail_block() -> impl Strategy<Value = SnailBlock> {
        (
            (arb_digest(), arb_digest(), any::<u64>(), any::<bool>(), any::<u32>()),
            proptest::collection::vec(arb_fruit(), 0..4),
        )
            .prop_map(|((parent, hash, number, elect, coinbase), fruits)| SnailBlock {
                parent_hash: parent,
                coinbase: NodeId(coinbase),
                fruits_hash: fruits_root(&fruits),
                number,
                to_elect: elect,
                hash,
                fruits,
                ..SnailBlock::genesis()
            })
    }

    proptest! {
        #[test]
        fn transaction_round_trips(tx in arb_tx()) {
            prop_assert_eq!(Transaction::decode(&tx.encode()).unwrap(), tx.clone());
            let json = serde_json::to_string(&tx).unwrap();
            prop_assert_eq!(serde_json::from_str::<Transaction>(&json).unwrap(), tx);
        }

        #[test]
        fn fast_block_round_trips(b in arb_fast_block()) {
            prop_assert_eq!(FastBlock::decode(&b.encode()).unwrap(), b.clone());
            let json = serde_json::to_string(&b).unwrap();
            prop_assert_eq!(serde_json::from_str::<FastBlock>(&json).unwrap(), b);
        }

        #[test]
        fn snail_block_and_fruit_round_trip(b in arb_snail_block()) {
            prop_assert_eq!(SnailBlock::decode(&b.encode()).unwrap(), b.clone());
            for f in &b.fruits {
                prop_assert_eq!(&Fruit::decode(&f.encode()).unwrap(), f);
            }
            let json = serde_json::to_string(&b).unwrap();
            prop_assert_eq!(serde_json::from_str::<SnailBlock>(&json).unwrap(), b);
        }
    }

    #[test]
    fn fast_digest_is_deterministic_and_sensitive() {
        let a = Address(1);
        let b = Address(2);
        let mut blk = FastBlock::genesis(Digest256::ZERO);
        blk.number = 1;
        blk.serial = 1;
        blk.transactions = vec![Transaction::transfer(a, b, 10, 0, 5)];
        blk.transactions_root = transactions_root(&blk.transactions);
        assert_eq!(fast_block_digest(&blk), fast_block_digest(&blk.clone()));

        let mut other = blk.clone();
        other.transactions[0].payload = 11;
        other.transactions_root = transactions_root(&other.transactions);
        assert_ne!(fast_block_digest(&blk), fast_block_digest(&other));

        // a stale transactions_root is still caught by the recomputed root
        let mut stale = blk.clone();
        stale.transactions[0].payload = 11;
        assert_ne!(fast_block_digest(&blk), fast_block_digest(&stale));
        assert!(!stale.is_well_formed());
    }

    #[test]
    fn empty_block_commits_to_empty_root() {
        let blk = FastBlock::genesis(Digest256::ZERO);
        assert_eq!(blk.transactions_root, transactions_root(&[]));
        assert_eq!(transactions_root(&[]), Digest256::ZERO);
        assert!(blk.is_well_formed());
    }
}
