//! Simulated network: seeded uniform delays, per-link overrides, offline
//! windows for DDoS'd nodes, and the rushing shortcut for corrupt nodes.

use std::collections::{BTreeMap, BTreeSet};

use hybrid_core::events::EventQueue;
use hybrid_core::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::msg::Msg;

#[derive(Clone, Debug)]
pub struct Envelope {
    /// `None` for client submissions.
    pub from: Option<NodeId>,
    pub to: NodeId,
    pub sent: u64,
    pub msg: Msg,
}

pub struct Network {
    queue: EventQueue<Envelope>,
    rng: ChaCha8Rng,
    min_delay: u64,
    max_delay: u64,
    links: BTreeMap<(u32, u32), (u64, u64)>,
    offline: BTreeMap<NodeId, Vec<(u64, u64)>>,
    rushing: BTreeSet<NodeId>,
    pub sent: u64,
    pub dropped: u64,
}

impl Network {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Self {
        Network {
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            min_delay: cfg.min_delay,
            max_delay: cfg.max_delay,
            links: cfg.links.iter().map(|l| ((l.from, l.to), (l.min_delay, l.max_delay))).collect(),
            offline: BTreeMap::new(),
            rushing: BTreeSet::new(),
            sent: 0,
            dropped: 0,
        }
    }

    pub fn min_delay(&self) -> u64 {
        self.min_delay
    }

    pub fn max_delay(&self) -> u64 {
        self.max_delay
    }

    /// Messages to or from `node` travel at the minimum delay.
    pub fn set_rushing(&mut self, node: NodeId) {
        self.rushing.insert(node);
    }

    pub fn is_rushing(&self, node: NodeId) -> bool {
        self.rushing.contains(&node)
    }

    /// `node` neither sends nor receives during `[start, end)`.
    pub fn set_offline(&mut self, node: NodeId, start: u64, end: u64) {
        self.offline.entry(node).or_default().push((start, end));
    }

    pub fn is_offline(&self, node: NodeId, tick: u64) -> bool {
        self.offline.get(&node).is_some_and(|w| w.iter().any(|&(s, e)| s <= tick && tick < e))
    }

    /// Draws a delay. The draw happens even on rushing links so the random
    /// stream does not depend on who is corrupt.
    pub fn delay(&mut self, from: Option<NodeId>, to: NodeId) -> u64 {
        let (lo, hi) =
            from.and_then(|f| self.links.get(&(f.0, to.0)).copied()).unwrap_or((self.min_delay, self.max_delay));
        let d = self.rng.gen_range(lo..=hi);
        let rushed = from.is_some_and(|f| self.rushing.contains(&f)) || self.rushing.contains(&to);
        if rushed {
            lo
        } else {
            d
        }
    }

    pub fn send(&mut self, now: u64, from: Option<NodeId>, to: NodeId, msg: Msg) {
        if from.is_some_and(|f| self.is_offline(f, now)) {
            self.dropped += 1;
            return;
        }
        let d = self.delay(from, to);
        self.sent += 1;
        self.queue.push(now + d, Envelope { from, to, sent: now, msg });
    }

    /// Next envelope due at or before `tick`. Envelopes whose recipient is
    /// offline at delivery are dropped.
    pub fn pop_due(&mut self, tick: u64) -> Option<Envelope> {
        while let Some((at, _, env)) = self.queue.pop_due(tick) {
            if self.is_offline(env.to, at) {
                self.dropped += 1;
                continue;
            }
            return Some(env);
        }
        None
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
