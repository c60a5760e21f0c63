//! One committee member's view of the BFT protocol for a single serial.
//!
//! Two voting phases with locks. A member prevotes on the first valid
//! proposal it sees in its current view; 2f+1 yes prevotes on one content
//! digest (a polka) make it lock and precommit; 2f+1 precommits decide.
//! A lock only moves to a polka from a later view. Views advance on
//! timeout, on a valid proposal for a higher view, or when f+1 members are
//! already voting in a higher view.
//!
//! The member never touches the network; each call returns the messages to
//! send and any decision.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hybrid_core::bft::{
    check_proposal, max_faulty, quorum, select_transactions, stop_payload, Mempool, Phase, Proposal, TimestampHistory,
    Vote,
};
use hybrid_core::hash::Digest256;
use hybrid_core::sig::{Namespace, Signature};
use hybrid_core::state::WorldState;
use hybrid_core::NodeId;

use crate::msg::{Certified, Msg};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Votes yes on everything; as leader, sends two conflicting proposals
    /// to two halves of the honest members.
    Equivocate,
    /// Follows the protocol but prevotes no on every proposal.
    Dissent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemberParams {
    pub view_timeout: u64,
    /// Ticks the view-0 leader waits after the previous commit.
    pub fast_interval: u64,
    pub block_limit: usize,
}

/// Local inputs a member needs to propose and validate.
pub struct Ctx<'a> {
    pub now: u64,
    pub parent_digest: Digest256,
    pub state: &'a WorldState,
    pub hist: &'a TimestampHistory,
    pub pool: &'a Mempool,
    /// Stop signatures not yet in the log.
    pub stops: &'a [Signature],
}

#[derive(Clone, Debug)]
pub enum Out {
    Send { to: Vec<NodeId>, msg: Msg },
    Decide(Arc<Certified>),
}

pub fn leader_of(members: &[NodeId], serial: u64, view: u64) -> NodeId {
    members[((serial + view) % members.len() as u64) as usize]
}

type VoteBook = BTreeMap<(u64, Digest256), BTreeMap<NodeId, Vote>>;

pub struct Member {
    pub me: NodeId,
    pub term: u64,
    pub members: Vec<NodeId>,
    pub serial: u64,
    pub view: u64,
    pub behavior: Behavior,
    /// Corrupt members an equivocating leader coordinates with.
    pub accomplices: BTreeSet<NodeId>,
    params: MemberParams,
    view_started: u64,
    ready_at: u64,
    locked: Option<(u64, Arc<Proposal>)>,
    proposals: BTreeMap<Digest256, Arc<Proposal>>,
    /// Highest view with a polka, per content.
    polkas: BTreeMap<Digest256, u64>,
    prevotes: VoteBook,
    precommits: VoteBook,
    prevoted: BTreeSet<u64>,
    precommitted: BTreeSet<u64>,
    /// Equivocators vote once per (phase, content) instead of once per view.
    blanket: BTreeSet<(Phase, u64, Digest256)>,
    proposed: BTreeSet<u64>,
    latest_view: BTreeMap<NodeId, u64>,
    decided: bool,
    /// Messages for later serials, replayed after `advance`.
    future: Vec<(NodeId, Msg)>,
}

impl Member {
    pub fn new(me: NodeId, term: u64, members: Vec<NodeId>, serial: u64, now: u64, params: MemberParams) -> Self {
        Member {
            me,
            term,
            members,
            serial,
            view: 0,
            behavior: Behavior::Honest,
            accomplices: BTreeSet::new(),
            params,
            view_started: now,
            ready_at: now + params.fast_interval,
            locked: None,
            proposals: BTreeMap::new(),
            polkas: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            prevoted: BTreeSet::new(),
            precommitted: BTreeSet::new(),
            blanket: BTreeSet::new(),
            proposed: BTreeSet::new(),
            latest_view: BTreeMap::new(),
            decided: false,
            future: Vec::new(),
        }
    }

    pub fn is_decided(&self) -> bool {
        self.decided
    }

    pub fn locked_content(&self) -> Option<Digest256> {
        self.locked.as_ref().map(|(_, p)| p.content_digest())
    }

    fn q(&self) -> usize {
        quorum(self.members.len())
    }

    fn others(&self) -> Vec<NodeId> {
        self.members.iter().copied().filter(|m| *m != self.me).collect()
    }

    fn timeout(&self) -> u64 {
        self.params.view_timeout * (1 + self.view.min(4))
    }

    fn enter_view(&mut self, view: u64, now: u64) {
        if view > self.view {
            self.view = view;
            self.view_started = now;
        }
    }

    /// Moves to the next serial after a commit at `now`, then replays any
    /// buffered messages for it.
    pub fn advance(&mut self, serial: u64, ctx: &Ctx) -> Vec<Out> {
        let future = std::mem::take(&mut self.future);
        let mut fresh =
            Member::new(self.me, self.term, std::mem::take(&mut self.members), serial, ctx.now, self.params);
        fresh.behavior = self.behavior;
        fresh.accomplices = std::mem::take(&mut self.accomplices);
        *self = fresh;
        let mut outs = Vec::new();
        for (from, msg) in future {
            outs.extend(self.on_msg(from, msg, ctx));
        }
        outs
    }

    /// Handles a proposal or vote addressed to this member.
    pub fn on_msg(&mut self, from: NodeId, msg: Msg, ctx: &Ctx) -> Vec<Out> {
        let mut outs = Vec::new();
        self.handle(from, msg, ctx, &mut outs);
        outs
    }

    fn handle(&mut self, from: NodeId, msg: Msg, ctx: &Ctx, outs: &mut Vec<Out>) {
        match msg {
            Msg::Propose { view, proposal } => {
                if proposal.term != self.term || proposal.serial < self.serial {
                    return;
                }
                if proposal.serial > self.serial {
                    self.future.push((from, Msg::Propose { view, proposal }));
                    return;
                }
                self.on_propose(from, view, proposal, ctx, outs);
            }
            Msg::Vote { term, serial, vote } => {
                if term != self.term || serial < self.serial {
                    return;
                }
                if serial > self.serial {
                    self.future.push((from, Msg::Vote { term, serial, vote }));
                    return;
                }
                self.on_vote(vote, ctx, outs);
            }
            _ => {}
        }
    }

    fn emit(&mut self, to: Vec<NodeId>, msg: Msg, ctx: &Ctx, outs: &mut Vec<Out>) {
        let to_self = to.contains(&self.me);
        let remote: Vec<NodeId> = to.into_iter().filter(|m| *m != self.me).collect();
        if !remote.is_empty() {
            outs.push(Out::Send { to: remote, msg: msg.clone() });
        }
        if to_self {
            let me = self.me;
            self.handle(me, msg, ctx, outs);
        }
    }

    fn vote(&mut self, phase: Phase, view: u64, block: Digest256, yes: bool, ctx: &Ctx, outs: &mut Vec<Out>) {
        let vote = Vote::cast(self.me, phase, view, block, yes);
        let msg = Msg::Vote { term: self.term, serial: self.serial, vote };
        self.emit(self.members.clone(), msg, ctx, outs);
    }

    fn stops_valid(&self, p: &Proposal) -> bool {
        let payload = stop_payload(self.term);
        p.stops.iter().all(|s| self.members.contains(&s.signer()) && s.verify(Namespace::Outer, &payload))
    }

    fn on_propose(&mut self, from: NodeId, view: u64, p: Arc<Proposal>, ctx: &Ctx, outs: &mut Vec<Out>) {
        let well_formed = from == leader_of(&self.members, self.serial, view)
            && p.view <= view
            && p.leader == leader_of(&self.members, self.serial, p.view)
            && p.leader_signed()
            && p.parent == ctx.parent_digest;
        if !well_formed {
            return;
        }
        let c = p.content_digest();
        self.proposals.entry(c).or_insert_with(|| p.clone());

        if self.behavior == Behavior::Equivocate {
            for phase in [Phase::Prevote, Phase::Precommit] {
                if self.blanket.insert((phase, view, c)) {
                    self.vote(phase, view, c, true, ctx, outs);
                }
            }
            return;
        }

        self.enter_view(view, ctx.now);
        if view == self.view && !self.prevoted.contains(&view) {
            self.prevoted.insert(view);
            let yes = self.behavior != Behavior::Dissent
                && self.stops_valid(&p)
                && match &self.locked {
                    Some((lv, lp)) => lp.content_digest() == c || self.polkas.get(&c).is_some_and(|pv| pv > lv),
                    None => self.polkas.contains_key(&c) || check_proposal(&p, ctx.state, ctx.now, ctx.hist).is_ok(),
                };
            self.vote(Phase::Prevote, view, c, yes, ctx, outs);
        }
        // votes may have arrived before the proposal
        let views: Vec<u64> = self.prevotes.keys().filter(|(_, b)| *b == c).map(|(v, _)| *v).collect();
        for v in views {
            self.check_polka(v, c, ctx, outs);
        }
        let views: Vec<u64> = self.precommits.keys().filter(|(_, b)| *b == c).map(|(v, _)| *v).collect();
        for v in views {
            self.check_commit(v, c, outs);
        }
    }

    fn on_vote(&mut self, vote: Vote, ctx: &Ctx, outs: &mut Vec<Out>) {
        if !self.members.contains(&vote.member) || !vote.is_authentic() {
            return;
        }
        let book = match vote.phase {
            Phase::Prevote => &mut self.prevotes,
            Phase::Precommit => &mut self.precommits,
        };
        let slot = book.entry((vote.view, vote.block)).or_default();
        if slot.contains_key(&vote.member) {
            return;
        }
        slot.insert(vote.member, vote);
        let lv = self.latest_view.entry(vote.member).or_insert(0);
        *lv = (*lv).max(vote.view);

        match vote.phase {
            Phase::Prevote => {
                self.check_polka(vote.view, vote.block, ctx, outs);
                self.check_stalled(ctx);
            }
            Phase::Precommit => self.check_commit(vote.view, vote.block, outs),
        }
        self.check_view_jump(ctx);
    }

    fn yes_count(book: &VoteBook, view: u64, block: Digest256) -> usize {
        book.get(&(view, block)).map_or(0, |s| s.values().filter(|v| v.yes).count())
    }

    fn check_polka(&mut self, view: u64, c: Digest256, ctx: &Ctx, outs: &mut Vec<Out>) {
        if Self::yes_count(&self.prevotes, view, c) < self.q() {
            return;
        }
        let pv = self.polkas.entry(c).or_insert(view);
        *pv = (*pv).max(view);
        if self.behavior == Behavior::Equivocate {
            return;
        }
        let Some(p) = self.proposals.get(&c).cloned() else { return };
        if view == self.view && !self.precommitted.contains(&view) {
            self.precommitted.insert(view);
            self.locked = Some((view, p));
            self.vote(Phase::Precommit, view, c, true, ctx, outs);
        } else if self.locked.as_ref().is_some_and(|(lv, _)| view > *lv) {
            self.locked = Some((view, p));
        }
    }

    fn check_commit(&mut self, view: u64, c: Digest256, outs: &mut Vec<Out>) {
        if self.decided || Self::yes_count(&self.precommits, view, c) < self.q() {
            return;
        }
        let Some(p) = self.proposals.get(&c).cloned() else { return };
        let votes: Vec<Vote> = self.precommits[&(view, c)].values().filter(|v| v.yes).copied().collect();
        self.decided = true;
        outs.push(Out::Decide(Arc::new(Certified { proposal: p, votes })));
    }

    /// Leaves the view early once enough members voted no on its proposal
    /// that no quorum is possible.
    fn check_stalled(&mut self, ctx: &Ctx) {
        let view = self.view;
        let n = self.members.len();
        let no: BTreeSet<NodeId> = self
            .prevotes
            .range((view, Digest256::ZERO)..=(view, Digest256([0xff; 32])))
            .flat_map(|(_, s)| s.values().filter(|v| !v.yes).map(|v| v.member))
            .collect();
        if n - no.len() < self.q() {
            self.enter_view(view + 1, ctx.now);
        }
    }

    fn check_view_jump(&mut self, ctx: &Ctx) {
        let need = max_faulty(self.members.len()) + 1;
        let mut views: Vec<u64> = self.latest_view.values().copied().collect();
        views.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(&w) = views.get(need - 1) {
            self.enter_view(w, ctx.now);
        }
    }

    /// Timer step: view timeouts, and proposing when this member leads.
    pub fn tick(&mut self, ctx: &Ctx) -> Vec<Out> {
        let mut outs = Vec::new();
        if self.decided {
            return outs;
        }
        if ctx.now >= self.view_started + self.timeout() {
            self.enter_view(self.view + 1, ctx.now);
        }
        let leads = leader_of(&self.members, self.serial, self.view) == self.me;
        let ready = self.view > 0 || ctx.now >= self.ready_at;
        if leads && ready && !self.proposed.contains(&self.view) {
            self.proposed.insert(self.view);
            self.propose(ctx, &mut outs);
        }
        outs
    }

    fn fresh_proposal(&self, ctx: &Ctx, time: u64) -> Proposal {
        let txs = select_transactions(ctx.pool.pending(), ctx.state, ctx.now, ctx.hist, self.params.block_limit);
        Proposal::new(self.term, self.view, self.serial, ctx.parent_digest, self.me, time, txs, ctx.stops.to_vec())
    }

    fn propose(&mut self, ctx: &Ctx, outs: &mut Vec<Out>) {
        let view = self.view;
        if self.behavior == Behavior::Equivocate {
            let x = Arc::new(self.fresh_proposal(ctx, ctx.now));
            let y = Arc::new(self.fresh_proposal(ctx, ctx.now + 1));
            let honest: Vec<NodeId> = self.others().into_iter().filter(|m| !self.accomplices.contains(m)).collect();
            let (a, b) = honest.split_at(honest.len().div_ceil(2));
            let mut to_x: Vec<NodeId> = a.to_vec();
            let mut to_y: Vec<NodeId> = b.to_vec();
            for m in self.accomplices.iter().copied().filter(|m| *m != self.me) {
                to_x.push(m);
                to_y.push(m);
            }
            to_x.push(self.me);
            to_y.push(self.me);
            self.emit(to_x, Msg::Propose { view, proposal: x }, ctx, outs);
            self.emit(to_y, Msg::Propose { view, proposal: y }, ctx, outs);
            return;
        }
        let carried = self.locked.as_ref().map(|(_, p)| p.clone()).or_else(|| {
            self.polkas
                .iter()
                .filter_map(|(c, v)| self.proposals.get(c).map(|p| (*v, p.clone())))
                .max_by_key(|(v, _)| *v)
                .map(|(_, p)| p)
        });
        if let Some(p) = &carried {
            // forward the polka so members that missed it can unlock
            let c = p.content_digest();
            if let Some(pv) = self.polkas.get(&c).copied() {
                let polka: Vec<Vote> = self.prevotes[&(pv, c)].values().filter(|v| v.yes).copied().collect();
                for vote in polka {
                    let msg = Msg::Vote { term: self.term, serial: self.serial, vote };
                    self.emit(self.others(), msg, ctx, outs);
                }
            }
        }
        let proposal = carried.unwrap_or_else(|| Arc::new(self.fresh_proposal(ctx, ctx.now)));
        self.emit(self.members.clone(), Msg::Propose { view, proposal }, ctx, outs);
    }
}

/// True when `cert` carries a precommit quorum of `members` for its
/// proposal, all in one view.
pub fn verify_certificate(cert: &Certified, members: &[NodeId]) -> bool {
    if !cert.proposal.leader_signed() {
        return false;
    }
    let c = cert.proposal.content_digest();
    let Some(view) = cert.votes.first().map(|v| v.view) else { return false };
    let votes: Vec<&Vote> =
        cert.votes.iter().filter(|v| v.phase == Phase::Precommit && v.view == view && v.block == c).collect();
    hybrid_core::bft::tally(votes, members).decision == hybrid_core::bft::Decision::Committed
}
