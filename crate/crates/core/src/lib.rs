//! Protocol library for a hybrid consensus design: a BFT fastchain run by a
//! rotating committee, elected by fruit merit on a proof-of-work snailchain.

pub mod bft;
pub mod channel;
pub mod codec;
pub mod election;
pub mod events;
pub mod fruitchain;
pub mod hash;
pub mod par;
pub mod sharding;
pub mod sig;
pub mod state;
pub mod truehash;
pub mod types;

pub use hash::Digest256;
pub use types::{Address, FastBlock, FastMessage, Fruit, NodeId, SnailBlock, Transaction};
