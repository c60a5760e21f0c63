//! Corruption scheduling, budgets, and what the adversary has learned.

use std::collections::{BTreeMap, BTreeSet};

use hybrid_core::channel::{announce, build_table, GossipMatrix, NetAddr};
use hybrid_core::NodeId;

use crate::config::{AdversaryConfig, DdosSpec, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdversaryError {
    #[error("corruption budget exceeded: {requested} requested, {allowed} allowed ({what})")]
    BudgetExceeded { what: String, requested: usize, allowed: usize },
    #[error("ddos target {node} at tick {tick} was never leaked to the adversary")]
    UnknownAddress { node: u32, tick: u64 },
}

/// Committee members the adversary may hold: `⌈budget·csize⌉`.
pub fn committee_allowance(budget: f64, csize: usize) -> usize {
    (budget * csize as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Corruption {
    pub strategy: Strategy,
    pub effect_at: u64,
}

#[derive(Clone, Debug)]
struct CommitteeTarget {
    term: u64,
    count: usize,
    strategy: Strategy,
    tau: u64,
}

pub struct Adversary {
    plan: AdversaryConfig,
    hash: Vec<u32>,
    total_hash: u64,
    scheduled: Vec<(u64, NodeId, Strategy)>,
    targets: Vec<CommitteeTarget>,
    /// Terms whose start has been processed.
    seen_terms: BTreeSet<u64>,
    pub corrupted: BTreeMap<NodeId, Corruption>,
    pub leaked: BTreeSet<NodeId>,
    pub warnings: Vec<String>,
}

impl Adversary {
    /// Checks static budgets and schedules the explicit corruptions.
    pub fn new(plan: &AdversaryConfig, hash: Vec<u32>, csize: usize) -> Result<Self, AdversaryError> {
        let total_hash: u64 = hash.iter().map(|&h| h as u64).sum();
        let mut adv = Adversary {
            plan: plan.clone(),
            hash,
            total_hash,
            scheduled: Vec::new(),
            targets: Vec::new(),
            seen_terms: BTreeSet::new(),
            corrupted: BTreeMap::new(),
            leaked: BTreeSet::new(),
            warnings: Vec::new(),
        };
        let allowed = committee_allowance(plan.committee_budget, csize);
        let mut explicit = BTreeSet::new();
        for (i, c) in plan.corruptions.iter().enumerate() {
            let tau = adv.clamp_tau(c.tau, i);
            if let Some(term) = c.committee_term {
                if c.committee_count > allowed {
                    return Err(AdversaryError::BudgetExceeded {
                        what: format!("committee of {csize}"),
                        requested: c.committee_count,
                        allowed,
                    });
                }
                adv.targets.push(CommitteeTarget { term, count: c.committee_count, strategy: c.strategy, tau });
            }
            for &n in &c.nodes {
                explicit.insert(n);
                adv.scheduled.push((c.at + tau, NodeId(n), c.strategy));
            }
        }
        let explicit_hash: u64 = explicit.iter().map(|&n| adv.hash_of(NodeId(n))).sum();
        if !adv.within_hash_budget(explicit_hash) {
            return Err(AdversaryError::BudgetExceeded {
                what: format!("hash power of {}", adv.total_hash),
                requested: explicit_hash as usize,
                allowed: (plan.hash_budget * adv.total_hash as f64 + 1e-9).floor() as usize,
            });
        }
        Ok(adv)
    }

    fn clamp_tau(&mut self, tau: u64, idx: usize) -> u64 {
        if tau == 0 {
            self.warnings.push(format!("adversary.corruptions[{idx}]: tau 0 raised to 1"));
            1
        } else {
            tau
        }
    }

    fn hash_of(&self, n: NodeId) -> u64 {
        self.hash.get(n.0 as usize).copied().unwrap_or(0) as u64
    }

    fn within_hash_budget(&self, hash: u64) -> bool {
        self.total_hash == 0 || hash as f64 <= self.plan.hash_budget * self.total_hash as f64 + 1e-9
    }

    fn committed_hash(&self) -> u64 {
        let mut nodes: BTreeSet<NodeId> = self.corrupted.keys().copied().collect();
        nodes.extend(self.scheduled.iter().map(|(_, n, _)| *n));
        nodes.iter().map(|n| self.hash_of(*n)).sum()
    }

    pub fn rushing(&self) -> bool {
        self.plan.rushing
    }

    pub fn is_corrupt(&self, n: NodeId) -> bool {
        self.corrupted.contains_key(&n)
    }

    pub fn strategy(&self, n: NodeId) -> Option<Strategy> {
        self.corrupted.get(&n).map(|c| c.strategy)
    }

    pub fn has_pending_terms(&self) -> bool {
        self.targets.iter().any(|t| !self.seen_terms.contains(&t.term))
    }

    /// Schedules the committee-targeted corruptions for `term`, which took
    /// office at `start`. Members beyond the committee or hash budget are
    /// skipped with a warning.
    pub fn on_term_start(&mut self, term: u64, start: u64, members: &[NodeId]) {
        if !self.seen_terms.insert(term) {
            return;
        }
        let allowed = committee_allowance(self.plan.committee_budget, members.len());
        let targets: Vec<CommitteeTarget> = self.targets.iter().filter(|t| t.term == term).cloned().collect();
        for t in targets {
            let mut held = members
                .iter()
                .filter(|m| self.corrupted.contains_key(m) || self.scheduled.iter().any(|(_, n, _)| n == *m))
                .count();
            for &m in members.iter().take(t.count) {
                if self.corrupted.contains_key(&m) || self.scheduled.iter().any(|(_, n, _)| *n == m) {
                    continue;
                }
                if held + 1 > allowed {
                    self.warnings.push(format!("term {term}: committee budget reached, node {} spared", m.0));
                    continue;
                }
                if !self.within_hash_budget(self.committed_hash() + self.hash_of(m)) {
                    self.warnings.push(format!("term {term}: hash budget reached, node {} spared", m.0));
                    continue;
                }
                held += 1;
                self.scheduled.push((start + t.tau, m, t.strategy));
            }
        }
    }

    /// Corruptions taking effect at `tick`.
    pub fn due(&mut self, tick: u64) -> Vec<(NodeId, Strategy)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.scheduled.len() {
            if self.scheduled[i].0 <= tick {
                let (at, n, s) = self.scheduled.remove(i);
                if let std::collections::btree_map::Entry::Vacant(e) = self.corrupted.entry(n) {
                    e.insert(Corruption { strategy: s, effect_at: at });
                    out.push((n, s));
                }
            } else {
                i += 1;
            }
        }
        out
    }

    /// Records what corrupt `node` knows: its own address, plus its table
    /// when it sits on a committee with gossip matrix `matrix`.
    pub fn absorb_leak(&mut self, node: NodeId, committee: Option<(&[NodeId], &GossipMatrix)>) {
        self.leaked.insert(node);
        if let Some((members, a)) = committee {
            if let Some(j) = members.iter().position(|m| *m == node) {
                self.leaked.extend(leaked_by(j, members, a));
            }
        }
    }

    /// Nodes knocked offline by `spec` at `tick`.
    pub fn ddos_targets(&self, spec: &DdosSpec, tick: u64) -> Result<Vec<NodeId>, AdversaryError> {
        if spec.all_leaked {
            return Ok(self.leaked.iter().copied().collect());
        }
        spec.targets
            .iter()
            .map(|&t| {
                if self.leaked.contains(&NodeId(t)) {
                    Ok(NodeId(t))
                } else {
                    Err(AdversaryError::UnknownAddress { node: t, tick })
                }
            })
            .collect()
    }
}

/// Members whose addresses member `j` learns: every announcement reaching
/// it, plus itself.
pub fn leaked_by(j: usize, members: &[NodeId], a: &GossipMatrix) -> BTreeSet<NodeId> {
    let sealed: Vec<_> = (0..members.len()).flat_map(|i| announce(i, a, NetAddr(members[i].0 as u64))).collect();
    build_table(j, &sealed).leak(NetAddr(members[j].0 as u64)).into_values().map(|addr| NodeId(addr.0 as u32)).collect()
}
