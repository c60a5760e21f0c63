//! End-of-run measurements.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hybrid_core::fruitchain::{ChainLink, ChainRule};
use hybrid_core::hash::Digest256;
use hybrid_core::{NodeId, SnailBlock};
use serde::Serialize;

use crate::config::{Expectation, Strategy};
use crate::rewards::{run_ledger, LedgerInput, RewardSummary};
use crate::sim::{NodeState, World};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermReport {
    pub term: u64,
    pub start_tick: Option<u64>,
    pub members: Vec<NodeId>,
    pub honest_members: usize,
    pub q_fast: f64,
    pub fallback: bool,
    /// Last serial written by the term, once it has ended.
    pub last_serial: Option<u64>,
    pub signed_log_hashes: usize,
    /// More corrupt members than the committee tolerates, for instance
    /// because nodes corrupted earlier were re-elected into a smaller one.
    pub over_tolerance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinerShare {
    pub node: NodeId,
    pub honest: bool,
    pub hash_share: f64,
    pub block_share: f64,
    pub fruit_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainQuality {
    pub blocks: u64,
    pub fruits: u64,
    /// Honest-mined share of the last λ blocks.
    pub q_snail: f64,
    pub adversary_block_share: f64,
    pub adversary_fruit_share: f64,
    pub miners: Vec<MinerShare>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Liveness {
    pub submitted: u64,
    pub committed: u64,
    pub pending: usize,
    pub reissued: u64,
    pub throttled: u64,
    /// Largest submission-to-commit delay; absent when nothing committed.
    pub liveness_tau: Option<u64>,
    pub mean_latency: Option<f64>,
    /// Committed transactions per tick.
    pub throughput: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorruptionRecord {
    pub tick: u64,
    pub node: NodeId,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub nodes: usize,
    pub honest_nodes: usize,
    pub snail_height: u64,
    pub fast_height: u64,
    pub chain: ChainQuality,
    pub q_fast: Vec<f64>,
    pub consistency_ok: bool,
    /// Deepest fork between honest snail tips.
    pub common_prefix_depth: u64,
    /// Serials at which honest fast logs disagree.
    pub fast_divergences: u64,
    pub conflicting_certificates: u64,
    pub safety_ok: bool,
    pub liveness: Liveness,
    pub terms: Vec<TermReport>,
    pub election_agreement: bool,
    pub invalid_fruits: u64,
    pub invalid_chains: u64,
    pub invalid_certificates: u64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub corruptions: Vec<CorruptionRecord>,
    pub ddos: Vec<(u64, Vec<NodeId>)>,
    pub leaked: Vec<NodeId>,
    pub rewards: RewardSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharding: Option<serde_json::Value>,
    pub warnings: Vec<String>,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

fn weight(rule: ChainRule, l: &ChainLink) -> (u64, u64) {
    match rule {
        ChainRule::Fruitchain => (l.fruit_count(), l.height()),
        ChainRule::Nakamoto => (l.height(), 0),
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl World {
    /// Heaviest snail tip among honest nodes (lowest id on ties).
    pub fn reference_tip(&self) -> Arc<ChainLink> {
        let rule = self.params.rule;
        let mut best: Option<&Arc<ChainLink>> = None;
        for n in self.honest_nodes() {
            let t = n.view.tip();
            if best.is_none_or(|b| weight(rule, t) > weight(rule, b)) {
                best = Some(t);
            }
        }
        best.or_else(|| self.nodes.first().map(|n| n.view.tip())).expect("at least one node").clone()
    }

    /// Honest node with the longest fast log (lowest id on ties).
    pub fn reference_node(&self) -> &NodeState {
        let mut best: Option<&NodeState> = None;
        for n in self.honest_nodes() {
            if best.is_none_or(|b| n.log.next_serial() > b.log.next_serial()) {
                best = Some(n);
            }
        }
        best.unwrap_or(&self.nodes[0])
    }

    /// Reference snail chain after genesis.
    pub fn reference_chain(&self) -> Vec<SnailBlock> {
        let mut blocks = self.reference_tip().blocks();
        blocks.remove(0);
        blocks
    }

    fn fast_divergences(&self) -> u64 {
        let honest: Vec<&NodeState> = self.honest_nodes().collect();
        let longest = honest.iter().map(|n| n.log.next_serial()).max().unwrap_or(1);
        let mut count = 0;
        for s in 1..longest {
            let ds: BTreeSet<Digest256> = honest.iter().filter_map(|n| n.log.digest_at(s)).collect();
            if ds.len() > 1 {
                count += 1;
            }
        }
        count
    }

    fn common_prefix_depth(&self) -> u64 {
        let tips: Vec<&Arc<ChainLink>> = self.honest_nodes().map(|n| n.view.tip()).collect();
        let mut depth = 0;
        for (k, a) in tips.iter().enumerate() {
            for b in &tips[k + 1..] {
                let c = a.common_ancestor_height(b);
                depth = depth.max(a.height() - c).max(b.height() - c);
            }
        }
        depth
    }

    fn chain_quality(&self, chain: &[SnailBlock]) -> ChainQuality {
        let lambda = self.cfg.mining.recency as usize;
        let recent = &chain[chain.len().saturating_sub(lambda)..];
        let honest_recent = recent.iter().filter(|b| self.is_honest(b.coinbase)).count() as u64;
        let mut blocks: BTreeMap<NodeId, u64> = BTreeMap::new();
        let mut fruits: BTreeMap<NodeId, u64> = BTreeMap::new();
        for b in chain {
            *blocks.entry(b.coinbase).or_insert(0) += 1;
            for f in &b.fruits {
                *fruits.entry(f.miner).or_insert(0) += 1;
            }
        }
        let nb = chain.len() as u64;
        let nf: u64 = fruits.values().sum();
        let total_hash = self.cfg.total_hash();
        let adv_blocks: u64 = blocks.iter().filter(|(n, _)| !self.is_honest(**n)).map(|(_, c)| c).sum();
        let adv_fruits: u64 = fruits.iter().filter(|(n, _)| !self.is_honest(**n)).map(|(_, c)| c).sum();
        ChainQuality {
            blocks: nb,
            fruits: nf,
            q_snail: if recent.is_empty() { 1.0 } else { ratio(honest_recent, recent.len() as u64) },
            adversary_block_share: ratio(adv_blocks, nb),
            adversary_fruit_share: ratio(adv_fruits, nf),
            miners: self
                .nodes
                .iter()
                .map(|n| MinerShare {
                    node: n.id,
                    honest: self.is_honest(n.id),
                    hash_share: ratio(self.cfg.hash_power(n.id.0) as u64, total_hash),
                    block_share: ratio(blocks.get(&n.id).copied().unwrap_or(0), nb),
                    fruit_share: ratio(fruits.get(&n.id).copied().unwrap_or(0), nf),
                })
                .collect(),
        }
    }

    fn terms(&self) -> (Vec<TermReport>, bool) {
        let honest: Vec<&NodeState> = self.honest_nodes().collect();
        let most = honest.iter().map(|n| n.committees.len()).max().unwrap_or(0);
        let reference = self.reference_node();
        let mut agree = true;
        let mut out = Vec::new();
        for k in 0..most {
            let views: BTreeSet<&Vec<NodeId>> =
                honest.iter().filter_map(|n| n.committees.get(k).map(|e| &e.members)).collect();
            agree &= views.len() <= 1;
            let e = honest.iter().find_map(|n| n.committees.get(k)).expect("some node elected it");
            let hm = e.members.iter().filter(|m| self.is_honest(**m)).count();
            out.push(TermReport {
                term: k as u64,
                start_tick: self.monitor.term_starts.get(&(k as u64)).copied(),
                members: e.members.clone(),
                honest_members: hm,
                q_fast: ratio(hm as u64, e.members.len() as u64),
                fallback: e.transcript.fallback,
                last_serial: reference.log.term_ends.get(&(k as u64)).copied(),
                signed_log_hashes: self.monitor.signed_hashes.iter().filter(|(t, _, _)| *t == k as u64).count(),
                over_tolerance: e.members.len() - hm > hybrid_core::bft::max_faulty(e.members.len()),
            });
        }
        (out, agree)
    }

    fn rewards(&self, chain: &[SnailBlock]) -> RewardSummary {
        let r = self.reference_node();
        let mut term_txs: BTreeMap<u64, Vec<hybrid_core::Transaction>> = BTreeMap::new();
        for s in 1..r.log.next_serial() as usize {
            if let Some(c) = &r.log.certs[s] {
                term_txs.entry(c.proposal.term).or_default().extend(r.log.blocks[s].transactions.iter().cloned());
            }
        }
        let input = LedgerInput {
            blocks: chain,
            window: self.cfg.committee.window,
            committees: r.committees.iter().map(|e| e.members.clone()).collect(),
            term_txs,
            ended_terms: r.log.term_ends.keys().copied().collect(),
            initial_supply: self.initial_supply,
            final_supply: r.log.state.total_balance(),
        };
        run_ledger(&input, &self.cfg.rewards)
    }

    pub fn report(&self) -> MetricsReport {
        let chain = self.reference_chain();
        let quality = self.chain_quality(&chain);
        let depth = self.common_prefix_depth();
        let divergences = self.fast_divergences();
        let safety_ok = divergences == 0 && self.monitor.conflicting_certs == 0;
        let consistency_ok = safety_ok && depth <= self.cfg.mining.recency;
        let (terms, election_agreement) = self.terms();
        let c = &self.clients;
        let liveness = Liveness {
            submitted: c.submitted,
            committed: c.committed,
            pending: c.pending(),
            reissued: c.reissued,
            throttled: c.throttled,
            liveness_tau: (c.committed > 0).then_some(c.max_latency),
            mean_latency: (c.committed > 0).then(|| c.latency_sum as f64 / c.committed as f64),
            throughput: ratio(c.committed, self.cfg.ticks),
        };
        let mut warnings = self.adversary.warnings.clone();
        for t in terms.iter().filter(|t| t.over_tolerance) {
            let bad = t.members.len() - t.honest_members;
            warnings.push(format!("term {}: {bad} of {} members corrupt, above tolerance", t.term, t.members.len()));
        }
        let honest: Vec<&NodeState> = self.honest_nodes().collect();
        let mut report = MetricsReport {
            scenario: self.cfg.name.clone(),
            seed: self.cfg.seed,
            ticks: self.cfg.ticks,
            nodes: self.nodes.len(),
            honest_nodes: honest.len(),
            snail_height: self.reference_tip().height(),
            fast_height: self.reference_node().log.next_serial() - 1,
            q_fast: terms.iter().map(|t| t.q_fast).collect(),
            chain: quality,
            consistency_ok,
            common_prefix_depth: depth,
            fast_divergences: divergences,
            conflicting_certificates: self.monitor.conflicting_certs,
            safety_ok,
            liveness,
            terms,
            election_agreement,
            invalid_fruits: honest.iter().map(|n| n.view.invalid_fruits()).sum(),
            invalid_chains: honest.iter().map(|n| n.view.invalid_chains()).sum(),
            invalid_certificates: self.monitor.invalid_certs,
            messages_sent: self.net.sent,
            messages_dropped: self.net.dropped,
            corruptions: self
                .monitor
                .corruptions
                .iter()
                .map(|(tick, node, strategy)| CorruptionRecord { tick: *tick, node: *node, strategy: *strategy })
                .collect(),
            ddos: self.monitor.ddos.clone(),
            leaked: self.adversary.leaked.iter().copied().collect(),
            rewards: self.rewards(&chain),
            sharding: None,
            warnings,
            assertions: Vec::new(),
            passed: false,
        };
        report.assertions = evaluate(&report, self);
        report.passed = report.assertions.iter().all(|a| a.passed);
        report
    }
}

fn check(name: &str, passed: bool, detail: String) -> AssertionResult {
    AssertionResult { name: name.into(), passed, detail }
}

fn evaluate(r: &MetricsReport, w: &World) -> Vec<AssertionResult> {
    let a = &w.cfg.assertions;
    let mut out = vec![check(
        "token_conservation",
        r.rewards.conservation_ok,
        format!("minted {} gas {}", r.rewards.minted, r.rewards.gas_collected),
    )];
    let live_detail =
        format!("tau {:?}, pending {}, bound {:?}", r.liveness.liveness_tau, r.liveness.pending, a.liveness_bound);
    let live_ok =
        a.liveness_bound.is_none_or(|b| r.liveness.pending == 0 && r.liveness.liveness_tau.is_none_or(|t| t <= b));
    match a.expect {
        Expectation::None => {}
        Expectation::Consistent => {
            out.push(check(
                "consistency",
                r.consistency_ok,
                format!(
                    "depth {} divergences {} conflicting certificates {}",
                    r.common_prefix_depth, r.fast_divergences, r.conflicting_certificates
                ),
            ));
            out.push(check("election_agreement", r.election_agreement, String::new()));
        }
        Expectation::Violation => {
            let detected = !r.safety_ok || !live_ok;
            out.push(check(
                "violation_detected",
                detected,
                format!("safety_ok {} liveness_ok {}", r.safety_ok, live_ok),
            ));
        }
    }
    if a.liveness_bound.is_some() && a.expect != Expectation::Violation {
        out.push(check("liveness", live_ok, live_detail));
    }
    if let Some(min) = a.min_fast_blocks {
        out.push(check("min_fast_blocks", r.fast_height >= min, format!("{} fast blocks", r.fast_height)));
    }
    out
}
