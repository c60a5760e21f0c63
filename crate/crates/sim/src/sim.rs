//! The simulated world: nodes, clients, adversary and monitor, advanced one
//! tick at a time. Within a tick: adversary effects, deliveries in send
//! order, client submissions, then every node's timers and mining in id
//! order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use hybrid_core::bft::{daily_stop, stop_payload, CommitteeTerm, FinalDailyLog, Mempool};
use hybrid_core::channel::{generate_matrix, GossipMatrix};
use hybrid_core::election::ElectionParams;
use hybrid_core::fruitchain::{ChainLink, ChainOutcome, ChainRule, ChainView, MiningParams, MiningTemplate};
use hybrid_core::hash::{digest_parts, Digest256};
use hybrid_core::sig::{sign, Namespace, Signature};
use hybrid_core::state::WorldState;
use hybrid_core::{FastMessage, Fruit, NodeId, SnailBlock};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{Adversary, AdversaryError};
use crate::clients::Clients;
use crate::committee::{verify_certificate, Behavior, Ctx, Member, MemberParams, Out};
use crate::config::{ConfigError, ScenarioConfig, Strategy};
use crate::msg::{Certified, Msg};
use crate::net::{Envelope, Network};
use crate::node::{ApplyOutcome, Elected, ElectionRules, FastLog};
use crate::trace::Trace;

/// Consensus messages a node holds for terms it has not reached.
const EARLY_CAP: usize = 20_000;
const SYNC_BATCH: u64 = 32;
const SYNC_PEERS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

/// Independent stream for `label`/`i` under the scenario seed.
pub fn sub_seed(seed: u64, label: &str, i: u64) -> u64 {
    digest_parts(&[label.as_bytes(), &seed.to_be_bytes(), &i.to_be_bytes()]).prefix_u64()
}

pub struct NodeState {
    pub id: NodeId,
    /// Public snailchain view.
    pub view: ChainView,
    pub log: FastLog,
    pub pool: Mempool,
    /// Committees this node has computed, by term.
    pub committees: Vec<Elected>,
    member: Option<Member>,
    early: Vec<(NodeId, Msg)>,
    buffer: BTreeMap<u64, Arc<Certified>>,
    gap_since: Option<u64>,
    last_sync: Option<u64>,
    stop_pool: BTreeMap<u64, BTreeMap<NodeId, Signature>>,
    stop_sent: BTreeSet<u64>,
    pub finals: Vec<FinalDailyLog>,
    rng: ChaCha8Rng,
    pub behavior: Behavior,
    pub silent: bool,
    pub selfish: bool,
}

fn msg_term(m: &Msg) -> u64 {
    match m {
        Msg::Propose { proposal, .. } => proposal.term,
        Msg::Vote { term, .. } => *term,
        _ => 0,
    }
}

impl NodeState {
    pub fn member_term(&self) -> Option<u64> {
        self.member.as_ref().map(|m| m.term)
    }

    /// Elects committees up to `term` as far as the local chain allows.
    fn ensure_committee(&mut self, term: u64, rules: &ElectionRules) -> bool {
        while self.committees.len() as u64 <= term {
            let k = self.committees.len() as u64;
            let prev = self.committees.last().expect("genesis committee");
            match rules.next(k, prev, self.view.tip()) {
                Some(e) => self.committees.push(e),
                None => return false,
            }
        }
        true
    }

    fn pending_stops(&self) -> Vec<Signature> {
        let signed = self.log.stop_signers();
        self.stop_pool
            .get(&self.log.term)
            .map(|p| p.values().filter(|s| !signed.contains(&s.signer())).copied().collect())
            .unwrap_or_default()
    }

    fn run_member(&mut self, now: u64, f: impl FnOnce(&mut Member, &Ctx) -> Vec<Out>) -> Vec<Out> {
        let stops = self.pending_stops();
        let Some(m) = self.member.as_mut() else { return Vec::new() };
        let ctx = Ctx {
            now,
            parent_digest: self.log.tip_digest(),
            state: &self.log.state,
            hist: &self.log.hist,
            pool: &self.pool,
            stops: &stops,
        };
        f(m, &ctx)
    }
}

/// Shared private chain of the withholding miners.
struct SelfishPool {
    view: ChainView,
    /// Heaviest chain the public has seen.
    public: Arc<ChainLink>,
    racing: bool,
}

impl SelfishPool {
    fn heavier(rule: ChainRule, a: &ChainLink, b: &ChainLink) -> bool {
        match rule {
            ChainRule::Fruitchain => a.fruit_count() > b.fruit_count(),
            ChainRule::Nakamoto => a.height() > b.height(),
        }
    }

    fn note_public(&mut self, link: &Arc<ChainLink>) {
        if Self::heavier(self.view.params().rule, link, &self.public) {
            self.public = link.clone();
        }
    }

    /// A private block was found; returns it when it settles a race.
    fn on_private(&mut self, link: Arc<ChainLink>) -> Option<Arc<ChainLink>> {
        if !self.racing {
            return None;
        }
        self.racing = false;
        self.note_public(&link);
        Some(link)
    }

    /// Reacts to a public block by lead: adopt when behind, match at lead
    /// 0, override at lead 1, otherwise reveal up to the public height.
    fn on_public(&mut self, link: &Arc<ChainLink>, log: &FastLog) -> Option<Arc<ChainLink>> {
        self.note_public(link);
        match self.view.on_hear_tip(link, log) {
            Ok(ChainOutcome::Adopted) => {
                self.racing = false;
                return None;
            }
            Ok(ChainOutcome::Kept) => {}
            Err(_) => return None,
        }
        let private = self.view.tip().clone();
        if private.common_ancestor_height(link) == link.height() {
            // already on the private chain
            return None;
        }
        let public_h = self.public.height();
        let out = match private.height().cmp(&public_h) {
            std::cmp::Ordering::Less | std::cmp::Ordering::Equal => {
                self.racing = true;
                private
            }
            std::cmp::Ordering::Greater if private.height() == public_h + 1 => {
                self.racing = false;
                private
            }
            std::cmp::Ordering::Greater => {
                self.racing = false;
                private.at_height(public_h)?
            }
        };
        self.note_public(&out);
        Some(out)
    }
}

/// Run-wide observations for the metrics.
#[derive(Clone, Debug, Default)]
pub struct Monitor {
    /// First digest an uncorrupted node committed at each serial.
    pub first_commit: BTreeMap<u64, (Digest256, u64)>,
    pub divergences: u64,
    /// Valid certificates contradicting a node's own log.
    pub conflicting_certs: u64,
    pub invalid_certs: u64,
    pub term_starts: BTreeMap<u64, u64>,
    pub signed_hashes: Vec<(u64, NodeId, Digest256)>,
    pub ddos: Vec<(u64, Vec<NodeId>)>,
    pub corruptions: Vec<(u64, NodeId, Strategy)>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Sample {
    pub tick: u64,
    pub snail_height: u64,
    pub fast_height: u64,
    pub pending: usize,
    pub committed: u64,
    pub sent: u64,
    pub in_flight: usize,
    pub offline: usize,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub params: MiningParams,
    pub rules: Option<ElectionRules>,
    pub net: Network,
    pub nodes: Vec<NodeState>,
    pub adversary: Adversary,
    pub clients: Clients,
    pub monitor: Monitor,
    pub trace: Trace,
    pub samples: Vec<Sample>,
    pub initial_supply: u128,
    pub genesis_state: WorldState,
    selfish: Option<SelfishPool>,
    matrices: BTreeMap<u64, Option<GossipMatrix>>,
    member_params: MemberParams,
    synthetic_serial: u64,
}

impl World {
    pub fn new(cfg: ScenarioConfig, trace: bool) -> Result<World, SimError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let params = cfg.mining_params();
        let genesis = ChainLink::genesis(cfg.truehash_params());
        let c = &cfg.committee;
        let clients = Clients::new(&cfg.workload, c.time_window, sub_seed(seed, "clients", 0));
        let genesis_state = WorldState::from_balances(clients.genesis_balances());
        let rules = c.enabled.then(|| ElectionRules {
            window: c.window,
            recency: cfg.mining.recency,
            params: ElectionParams {
                window: c.window,
                min_fruits: c.min_fruits,
                csize: c.csize,
                opt_in: cfg.opt_in().into_iter().map(NodeId).collect(),
            },
        });
        let first = rules.as_ref().map(|r| r.genesis());
        let nodes = (0..cfg.nodes.count as u32)
            .map(|i| NodeState {
                id: NodeId(i),
                view: ChainView::from_genesis(NodeId(i), params.clone(), genesis.clone()),
                log: FastLog::new(genesis_state.clone(), c.time_window),
                pool: Mempool::default(),
                committees: first.iter().cloned().collect(),
                member: None,
                early: Vec::new(),
                buffer: BTreeMap::new(),
                gap_since: None,
                last_sync: None,
                stop_pool: BTreeMap::new(),
                stop_sent: BTreeSet::new(),
                finals: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, "miner", i as u64)),
                behavior: Behavior::Honest,
                silent: false,
                selfish: false,
            })
            .collect();
        let hashes = (0..cfg.nodes.count as u32).map(|i| cfg.hash_power(i)).collect();
        let adversary = Adversary::new(&cfg.adversary, hashes, c.csize)?;
        let mut monitor = Monitor::default();
        if c.enabled {
            monitor.term_starts.insert(0, 0);
        }
        Ok(World {
            params,
            net: Network::new(&cfg.network, sub_seed(seed, "net", 0)),
            member_params: MemberParams {
                view_timeout: c.view_timeout,
                fast_interval: c.fast_interval,
                block_limit: c.block_limit,
            },
            initial_supply: genesis_state.total_balance(),
            genesis_state,
            rules,
            nodes,
            adversary,
            clients,
            monitor,
            trace: Trace::new(trace),
            samples: Vec::new(),
            selfish: None,
            matrices: BTreeMap::new(),
            synthetic_serial: 0,
            cfg,
        })
    }

    pub fn run(&mut self) -> Result<(), SimError> {
        for t in 0..self.cfg.ticks {
            self.step(t)?;
        }
        self.sample(self.cfg.ticks);
        Ok(())
    }

    pub fn step(&mut self, t: u64) -> Result<(), SimError> {
        self.adversary_step(t)?;
        while let Some(env) = self.net.pop_due(t) {
            self.deliver(t, env);
        }
        let end = self.cfg.submissions_end();
        for tx in self.clients.step(t, end) {
            let tx = Arc::new(tx);
            for n in 0..self.nodes.len() as u32 {
                self.net.send(t, None, NodeId(n), Msg::Tx(tx.clone()));
            }
        }
        if self.rules.is_none() && t.is_multiple_of(self.cfg.committee.synthetic_interval) {
            self.synthetic_serial += 1;
            let s = self.synthetic_serial;
            let m = FastMessage {
                digest: digest_parts(&[b"synthetic", &self.cfg.seed.to_be_bytes(), &s.to_be_bytes()]),
                serial: s,
            };
            for n in &mut self.nodes {
                n.log.push_synthetic(m);
            }
        }
        for i in 0..self.nodes.len() {
            self.node_tick(i, t);
        }
        if t.is_multiple_of(self.cfg.metrics.sample_every) {
            self.sample(t);
        }
        Ok(())
    }

    pub fn is_honest(&self, n: NodeId) -> bool {
        !self.adversary.is_corrupt(n)
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().filter(|n| self.is_honest(n.id))
    }

    fn sample(&mut self, tick: u64) {
        let honest: Vec<&NodeState> = self.honest_nodes().collect();
        self.samples.push(Sample {
            tick,
            snail_height: honest.iter().map(|n| n.view.height()).max().unwrap_or(0),
            fast_height: honest.iter().map(|n| n.log.next_serial() - 1).max().unwrap_or(0),
            pending: self.clients.pending(),
            committed: self.clients.committed,
            sent: self.net.sent,
            in_flight: self.net.in_flight(),
            offline: self.nodes.iter().filter(|n| self.net.is_offline(n.id, tick)).count(),
        });
    }

    // ---- adversary ----

    fn adversary_step(&mut self, t: u64) -> Result<(), SimError> {
        if self.adversary.has_pending_terms() {
            let starts: Vec<(u64, u64)> = self.monitor.term_starts.iter().map(|(k, s)| (*k, *s)).collect();
            for (term, start) in starts {
                let members = self
                    .nodes
                    .iter()
                    .filter(|n| !self.adversary.is_corrupt(n.id))
                    .find_map(|n| n.committees.get(term as usize).map(|e| e.members.clone()));
                if let Some(members) = members {
                    self.adversary.on_term_start(term, start, &members);
                }
            }
        }
        for (n, s) in self.adversary.due(t) {
            self.corrupt(n, s, t);
        }
        for spec in self.cfg.adversary.ddos.clone() {
            if spec.at == t {
                let targets = self.adversary.ddos_targets(&spec, t)?;
                for n in &targets {
                    self.net.set_offline(*n, t, t + spec.duration);
                }
                self.monitor.ddos.push((t, targets));
            }
        }
        Ok(())
    }

    /// Gossip matrix of `term`, keyed on its election seed.
    pub fn matrix(&mut self, term: u64, e: &Elected) -> Option<GossipMatrix> {
        let gsize = self.cfg.committee.gsize;
        self.matrices.entry(term).or_insert_with(|| generate_matrix(e.seed.seed, e.members.len(), gsize).ok()).clone()
    }

    fn corrupt(&mut self, n: NodeId, s: Strategy, t: u64) {
        self.monitor.corruptions.push((t, n, s));
        let i = n.0 as usize;
        let term = self.nodes[i].log.term;
        let elected = self.nodes[i].committees.get(term as usize).cloned();
        match elected {
            Some(e) if e.members.contains(&n) => {
                let a = self.matrix(term, &e);
                self.adversary.absorb_leak(n, a.as_ref().map(|a| (&e.members[..], a)));
            }
            _ => self.adversary.absorb_leak(n, None),
        }
        match s {
            Strategy::ByzantineVote => {
                self.nodes[i].behavior = Behavior::Equivocate;
                let byz: BTreeSet<NodeId> =
                    self.nodes.iter().filter(|x| x.behavior == Behavior::Equivocate).map(|x| x.id).collect();
                for x in &mut self.nodes {
                    if let Some(m) = &mut x.member {
                        if x.behavior == Behavior::Equivocate {
                            m.behavior = Behavior::Equivocate;
                            m.accomplices = byz.clone();
                        }
                    }
                }
            }
            Strategy::WithholdBlocks => {
                let node = &mut self.nodes[i];
                node.selfish = true;
                if self.selfish.is_none() {
                    self.selfish =
                        Some(SelfishPool { view: node.view.clone(), public: node.view.tip().clone(), racing: false });
                }
            }
            Strategy::Silent => self.nodes[i].silent = true,
            Strategy::LeakAddresses => {}
        }
        if self.adversary.rushing() && matches!(s, Strategy::ByzantineVote | Strategy::WithholdBlocks) {
            self.net.set_rushing(n);
        }
    }

    // ---- messaging ----

    fn send(&mut self, t: u64, from: usize, to: NodeId, msg: Msg) {
        if self.nodes[from].silent {
            return;
        }
        self.net.send(t, Some(NodeId(from as u32)), to, msg);
    }

    fn broadcast(&mut self, t: u64, from: usize, msg: Msg) {
        for j in 0..self.nodes.len() {
            if j != from {
                self.send(t, from, NodeId(j as u32), msg.clone());
            }
        }
    }

    fn deliver(&mut self, t: u64, env: Envelope) {
        let i = env.to.0 as usize;
        if self.trace.is_enabled() {
            self.trace.record(t, env.to.0, env.msg.kind(), env.msg.payload_digest());
        }
        if self.nodes[i].silent {
            return;
        }
        match env.msg {
            Msg::Tx(tx) => {
                let n = &mut self.nodes[i];
                if n.log.state.nonce(tx.sender) <= tx.account_nonce {
                    n.pool.propose((*tx).clone());
                }
            }
            Msg::Fruit(f) => self.hear_fruit(i, &f),
            Msg::Block(link) => {
                let n = &mut self.nodes[i];
                let _ = n.view.on_hear_tip(&link, &n.log);
                if n.selfish {
                    let publish = self.selfish.as_mut().and_then(|p| p.on_public(&link, &self.nodes[i].log));
                    if let Some(l) = publish {
                        self.publish(t, i, l);
                    }
                }
            }
            Msg::Propose { .. } | Msg::Vote { .. } => {
                if let Some(from) = env.from {
                    self.consensus(i, t, from, env.msg);
                }
            }
            Msg::Commit(cert) => {
                let outs = self.commit(i, t, cert);
                self.dispatch(i, t, outs);
            }
            Msg::Stop { term, sig } => {
                if sig.verify(Namespace::Outer, &stop_payload(term)) {
                    self.nodes[i].stop_pool.entry(term).or_default().insert(sig.signer(), sig);
                }
            }
            Msg::SyncRequest { from_serial } => {
                let Some(to) = env.from else { return };
                let log = &self.nodes[i].log;
                let end = (from_serial + SYNC_BATCH).min(log.next_serial());
                let certs: Vec<Arc<Certified>> =
                    (from_serial.max(1)..end).filter_map(|s| log.certs[s as usize].clone()).collect();
                if !certs.is_empty() {
                    self.send(t, i, to, Msg::SyncReply(certs));
                }
            }
            Msg::SyncReply(certs) => {
                for c in certs {
                    let outs = self.commit(i, t, c);
                    self.dispatch(i, t, outs);
                }
            }
        }
    }

    fn hear_fruit(&mut self, i: usize, f: &Fruit) {
        let n = &mut self.nodes[i];
        let _ = n.view.on_hear_fruit(f.clone(), &n.log);
        if n.selfish {
            if let Some(p) = &mut self.selfish {
                let _ = p.view.on_hear_fruit(f.clone(), &self.nodes[i].log);
            }
        }
    }

    fn publish(&mut self, t: u64, i: usize, link: Arc<ChainLink>) {
        self.trace.record(t, i as u32, "publish", link.hash());
        let n = &mut self.nodes[i];
        let _ = n.view.on_hear_tip(&link, &n.log);
        self.broadcast(t, i, Msg::Block(link));
    }

    fn consensus(&mut self, i: usize, t: u64, from: NodeId, msg: Msg) {
        let term = msg_term(&msg);
        let n = &mut self.nodes[i];
        let serial = match &msg {
            Msg::Propose { proposal, .. } => proposal.serial,
            Msg::Vote { serial, .. } => *serial,
            _ => 0,
        };
        // peers already working on a later serial: we missed a commit
        if term == n.log.term && serial > n.log.next_serial() {
            n.gap_since.get_or_insert(t);
        }
        match n.member_term() {
            Some(mt) if mt == term => {
                let outs = n.run_member(t, |m, ctx| m.on_msg(from, msg, ctx));
                self.dispatch(i, t, outs);
            }
            _ if term >= n.log.term && n.early.len() < EARLY_CAP => n.early.push((from, msg)),
            _ => {}
        }
    }

    fn dispatch(&mut self, i: usize, t: u64, outs: Vec<Out>) {
        let mut work: VecDeque<Out> = outs.into();
        while let Some(o) = work.pop_front() {
            match o {
                Out::Send { to, msg } => {
                    for d in to {
                        self.send(t, i, d, msg.clone());
                    }
                }
                Out::Decide(cert) => {
                    self.broadcast(t, i, Msg::Commit(cert.clone()));
                    work.extend(self.commit(i, t, cert));
                }
            }
        }
    }

    // ---- fast chain ----

    /// Applies `cert` (and anything it unblocks) to node `i`'s log.
    fn commit(&mut self, i: usize, t: u64, cert: Arc<Certified>) -> Vec<Out> {
        let Some(rules) = self.rules.clone() else { return Vec::new() };
        let honest = self.is_honest(NodeId(i as u32));
        let mut outs = Vec::new();
        let mut next = Some(cert);
        while let Some(cert) = next.take() {
            let n = &mut self.nodes[i];
            let serial = cert.proposal.serial;
            let expected = n.log.next_serial();
            if serial < expected {
                let c = cert.proposal.content_digest();
                if serial > 0 && n.log.content_at(serial) != Some(c) {
                    let members = n.committees.get(cert.proposal.term as usize).map(|e| e.members.clone());
                    if members.is_some_and(|m| verify_certificate(&cert, &m)) && honest {
                        self.monitor.conflicting_certs += 1;
                    }
                }
                break;
            }
            if serial > expected {
                n.buffer.entry(serial).or_insert(cert);
                n.gap_since.get_or_insert(t);
                break;
            }
            let term = n.log.term;
            if cert.proposal.term != term {
                self.monitor.invalid_certs += 1;
                break;
            }
            if !n.ensure_committee(term, &rules) {
                n.buffer.entry(serial).or_insert(cert);
                n.gap_since.get_or_insert(t);
                break;
            }
            let members = n.committees[term as usize].members.clone();
            if !verify_certificate(&cert, &members) || cert.proposal.parent != n.log.tip_digest() {
                self.monitor.invalid_certs += 1;
                break;
            }
            let outcome = match n.log.apply(cert, &members, t) {
                Ok(o) => o,
                Err(_) => {
                    self.monitor.invalid_certs += 1;
                    break;
                }
            };
            let block = n.log.tip().clone();
            let d = n.log.tip_digest();
            n.pool.confirm(&block);
            n.gap_since = if n.buffer.is_empty() { None } else { Some(t) };
            self.trace.record(t, i as u32, "commit", d);
            if honest {
                self.clients.on_commit(&block.transactions, t);
                match self.monitor.first_commit.get(&serial) {
                    None => {
                        self.monitor.first_commit.insert(serial, (d, t));
                    }
                    Some((first, _)) if *first != d => self.monitor.divergences += 1,
                    Some(_) => {}
                }
            }
            let n = &mut self.nodes[i];
            if let ApplyOutcome::TermEnded(k) = outcome {
                if let Some(e) = n.committees.get(k as usize).filter(|e| e.members.contains(&n.id)) {
                    let mut ct = CommitteeTerm::new(k, e.members.clone(), rules.flagged_height(k));
                    ct.daily_log = n.log.daily_entries(k);
                    if let Ok(mut fin) = daily_stop(&ct, &n.log.term_stop_sigs(k)) {
                        fin.sign_by(n.id);
                        self.monitor.signed_hashes.extend(fin.signed_hashes());
                        n.finals.push(fin);
                    }
                }
                if honest {
                    self.monitor.term_starts.entry(k + 1).or_insert(t);
                }
            }
            let next_serial = n.log.next_serial();
            if n.member_term() == Some(n.log.term) {
                outs.extend(n.run_member(t, |m, ctx| m.advance(next_serial, ctx)));
            } else {
                n.member = None;
            }
            n.view.retry_orphans(&n.log);
            next = n.buffer.remove(&next_serial);
            // drop buffered certs that can no longer apply
            n.buffer = n.buffer.split_off(&next_serial);
        }
        outs
    }

    fn start_member(&mut self, i: usize, t: u64) -> Vec<Out> {
        let Some(rules) = &self.rules else { return Vec::new() };
        let n = &mut self.nodes[i];
        let term = n.log.term;
        if n.member_term() == Some(term) || !n.ensure_committee(term, rules) {
            return Vec::new();
        }
        n.member = None;
        let members = n.committees[term as usize].members.clone();
        n.early.retain(|(_, m)| msg_term(m) >= term);
        if !members.contains(&n.id) {
            return Vec::new();
        }
        let mut m = Member::new(n.id, term, members, n.log.next_serial(), t, self.member_params);
        if n.behavior == Behavior::Equivocate {
            m.behavior = Behavior::Equivocate;
            m.accomplices = self
                .adversary
                .corrupted
                .iter()
                .filter(|(_, c)| c.strategy == Strategy::ByzantineVote)
                .map(|(id, _)| *id)
                .collect();
        }
        n.member = Some(m);
        let (now, later): (Vec<_>, Vec<_>) =
            std::mem::take(&mut n.early).into_iter().partition(|(_, m)| msg_term(m) == term);
        n.early = later;
        let mut outs = Vec::new();
        for (from, msg) in now {
            outs.extend(n.run_member(t, |m, ctx| m.on_msg(from, msg, ctx)));
        }
        outs
    }

    fn maybe_send_stop(&mut self, i: usize, t: u64) {
        let Some(rules) = &self.rules else { return };
        let n = &mut self.nodes[i];
        let Some(m) = &n.member else { return };
        let k = m.term;
        if n.stop_sent.contains(&k) || n.view.height() < rules.settled_height(k + 1) {
            return;
        }
        n.stop_sent.insert(k);
        let sig = sign(n.id, Namespace::Outer, stop_payload(k));
        n.stop_pool.entry(k).or_default().insert(n.id, sig);
        let others: Vec<NodeId> = m.members.iter().copied().filter(|x| *x != n.id).collect();
        for d in others {
            self.send(t, i, d, Msg::Stop { term: k, sig });
        }
    }

    fn maybe_sync(&mut self, i: usize, t: u64) {
        let wait = 2 * self.net.max_delay();
        let count = self.nodes.len();
        let n = &mut self.nodes[i];
        let due = n.gap_since.is_some_and(|g| t >= g + wait) && n.last_sync.is_none_or(|s| t >= s + wait);
        if !due || count < 2 {
            return;
        }
        n.last_sync = Some(t);
        let from_serial = n.log.next_serial();
        let peers: Vec<NodeId> = (0..SYNC_PEERS)
            .map(|_| {
                let j = (i + n.rng.gen_range(1..count)) % count;
                NodeId(j as u32)
            })
            .collect();
        for p in peers {
            self.send(t, i, p, Msg::SyncRequest { from_serial });
        }
    }

    fn node_tick(&mut self, i: usize, t: u64) {
        let id = NodeId(i as u32);
        if self.net.is_offline(id, t) || self.nodes[i].silent {
            return;
        }
        if self.rules.is_some() {
            let n = &mut self.nodes[i];
            if let Some(c) = n.buffer.remove(&n.log.next_serial()) {
                let outs = self.commit(i, t, c);
                self.dispatch(i, t, outs);
            }
            let outs = self.start_member(i, t);
            self.dispatch(i, t, outs);
            self.maybe_send_stop(i, t);
            let outs = self.nodes[i].run_member(t, |m, ctx| m.tick(ctx));
            self.dispatch(i, t, outs);
            self.maybe_sync(i, t);
            if t.is_multiple_of(8) {
                let n = &mut self.nodes[i];
                let (state, window) = (&n.log.state, n.log.hist.window);
                n.pool.purge(|tx| tx.account_nonce < state.nonce(tx.sender) || t > tx.physical_timestamp + window);
            }
        }
        self.mine(i, t);
    }

    // ---- snail chain ----

    fn mine(&mut self, i: usize, t: u64) {
        let mut draws = self.cfg.hash_power(i as u32);
        while draws > 0 {
            let n = &mut self.nodes[i];
            let view = match (&self.selfish, n.selfish) {
                (Some(p), true) => &p.view,
                _ => &n.view,
            };
            let template = MiningTemplate::new(view, &n.log.messages, n.id, t);
            let mut found = None;
            while draws > 0 {
                draws -= 1;
                let out = template.try_nonce(view, n.rng.next_u64());
                if !out.is_empty() {
                    found = Some(out);
                    break;
                }
            }
            let Some(out) = found else { break };
            if let Some(f) = out.fruit {
                self.trace.record(t, i as u32, "mine_fruit", f.hash);
                self.hear_fruit(i, &f);
                self.broadcast(t, i, Msg::Fruit(Arc::new(f)));
            }
            if let Some(b) = out.block {
                self.on_mined_block(i, t, b);
            }
        }
    }

    fn on_mined_block(&mut self, i: usize, t: u64, b: SnailBlock) {
        self.trace.record(t, i as u32, "mine_block", b.hash);
        let n = &mut self.nodes[i];
        if n.selfish {
            let Some(p) = &mut self.selfish else { return };
            let Ok(link) = p.view.extend_tip(b, &n.log) else { return };
            if let Some(l) = p.on_private(link) {
                self.publish(t, i, l);
            }
        } else if let Ok(link) = n.view.extend_tip(b, &n.log) {
            self.broadcast(t, i, Msg::Block(link));
        }
    }
}
