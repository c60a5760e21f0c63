use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bft::{tally, Decision, Phase, Vote};
use crate::codec::Encode;
use crate::events::EventQueue;
use crate::hash::digest;
use crate::types::NodeId;

use super::host::{HostReply, HostRequest, ShardState};
use super::output::{primary_collect, shard_output_log, BatchEntry, CollectParams, DayLog, ReceivedBatch};
use super::tx::{AbortReason, Op, ShardTx, TxState};
use super::{host, ShardId, ShardingParams, Ts, TxId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSpec {
    pub id: TxId,
    pub home: ShardId,
    pub start: u64,
    pub ops: Vec<Op>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Faulty replicas never reply or vote.
    Silent,
    /// Faulty replicas reply with corrupted content and vote no.
    Garbage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardFault {
    pub shard: ShardId,
    pub faulty: usize,
    pub mode: FaultMode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardedScenario {
    pub params: ShardingParams,
    /// Initial sector values.
    pub initial: Vec<(u64, i64)>,
    pub txs: Vec<TxSpec>,
    #[serde(default)]
    pub faults: Vec<ShardFault>,
    pub min_delay: u64,
    pub max_delay: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ShardedOutcome {
    pub txs: Vec<ShardTx>,
    pub shards: Vec<ShardState>,
    pub batches: Vec<ReceivedBatch>,
    pub day_log: DayLog,
    /// Requests and replies carried by the network (batches excluded).
    pub messages: u64,
    /// For each committed transaction, the matching Commit replies counted
    /// from every remote shard it precommitted at.
    pub commit_quorums: BTreeMap<TxId, Vec<(ShardId, usize)>>,
}

impl ShardedOutcome {
    pub fn tx(&self, id: TxId) -> Option<&ShardTx> {
        self.txs.iter().find(|t| t.id == id)
    }

    /// Current value of a sector on its host.
    pub fn value(&self, addr: u64) -> Option<i64> {
        let s = host(addr, self.shards.len() as u32) as usize;
        self.shards[s].sector(addr).map(|d| d.value)
    }
}

/// Shape of a random workload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadShape {
    pub txs: usize,
    pub sectors: usize,
    pub max_ops: usize,
    /// Start ticks are drawn from `0..spread`.
    pub spread: u64,
    /// Chance in percent that a shard gets faulty replicas.
    pub fault_percent: u32,
}

impl ShardedScenario {
    /// Seeded random workload: sectors spread over the shards, ops mixing
    /// reads and writes, optional replica faults.
    pub fn random(params: ShardingParams, shape: &WorkloadShape, seed: u64) -> ShardedScenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shards = params.shards;
        let addrs: Vec<u64> = (0..shape.sectors.max(1))
            .map(|k| {
                let s = rng.gen_range(0..shards);
                super::range_start(s, shards) + k as u64
            })
            .collect();
        let initial = addrs.iter().map(|&a| (a, rng.gen_range(-50..50))).collect();
        let txs = (0..shape.txs)
            .map(|k| {
                let n = rng.gen_range(1..=shape.max_ops.max(1));
                let ops = (0..n)
                    .map(|_| {
                        let a = addrs[rng.gen_range(0..addrs.len())];
                        match rng.gen_range(0..3) {
                            0 => Op::Read(a),
                            1 => Op::Write(a, super::WriteValue::Const(rng.gen_range(-100..100))),
                            _ => Op::Write(a, super::WriteValue::LastReadPlus(rng.gen_range(1..10))),
                        }
                    })
                    .collect();
                TxSpec {
                    id: k as u64 + 1,
                    home: rng.gen_range(0..shards),
                    start: rng.gen_range(0..shape.spread.max(1)),
                    ops,
                }
            })
            .collect();
        let mut faults = Vec::new();
        for shard in 0..shards {
            if rng.gen_range(0..100) < shape.fault_percent {
                let faulty = rng.gen_range(1..=params.shard_size);
                let mode = if rng.gen() { FaultMode::Silent } else { FaultMode::Garbage };
                faults.push(ShardFault { shard, faulty, mode });
            }
        }
        let max_delay = rng.gen_range(1..=params.timeout / 2).max(1);
        ShardedScenario { params, initial, txs, faults, min_delay: 1, max_delay, seed: rng.gen() }
    }
}

enum Event {
    Start(usize),
    Deliver { shard: ShardId, req: HostRequest },
    Reply { tx: usize, step: u64, shard: ShardId, replica: usize, reply: HostReply },
    Timeout { tx: usize, step: u64 },
    BatchTick,
}

enum Wait {
    Idle,
    Op { shard: ShardId },
    Precommit { remaining: BTreeSet<ShardId> },
}

struct Coord {
    step: u64,
    next_op: usize,
    wait: Wait,
    /// Distinct replicas per (shard, reply).
    replies: HashMap<(ShardId, HostReply), BTreeSet<usize>>,
    quorums: Vec<(ShardId, usize)>,
    accessed: BTreeSet<ShardId>,
}

struct Sim<'a> {
    sc: &'a ShardedScenario,
    rng: ChaCha8Rng,
    queue: EventQueue<Event>,
    shards: Vec<ShardState>,
    txs: Vec<ShardTx>,
    coords: Vec<Coord>,
    unbatched: Vec<Vec<BatchEntry>>,
    batches: Vec<ReceivedBatch>,
    messages: u64,
}

/// Runs a sharded workload to completion: every transaction commits or
/// aborts, every in-flight message is delivered, and the primary merges
/// the batches emitted along the way.
pub fn run_sharded(sc: &ShardedScenario) -> Result<ShardedOutcome, String> {
    sc.params.validate()?;
    if sc.min_delay > sc.max_delay {
        return Err("min_delay exceeds max_delay".into());
    }
    for t in &sc.txs {
        if t.home >= sc.params.shards {
            return Err(format!("tx {} has unknown home shard {}", t.id, t.home));
        }
    }
    let ids: BTreeSet<TxId> = sc.txs.iter().map(|t| t.id).collect();
    if ids.len() != sc.txs.len() {
        return Err("duplicate transaction ids".into());
    }
    for f in &sc.faults {
        if f.shard >= sc.params.shards || f.faulty > sc.params.shard_size {
            return Err(format!("bad fault entry {f:?}"));
        }
    }

    let mut sim = Sim {
        sc,
        rng: ChaCha8Rng::seed_from_u64(sc.seed),
        queue: EventQueue::new(),
        shards: (0..sc.params.shards)
            .map(|s| ShardState::new(s, sc.params.shards, sc.initial.iter().copied()))
            .collect(),
        txs: sc.txs.iter().map(|t| ShardTx::new(t.id, t.home, t.ops.clone(), t.start)).collect(),
        coords: sc
            .txs
            .iter()
            .map(|_| Coord {
                step: 0,
                next_op: 0,
                wait: Wait::Idle,
                replies: HashMap::new(),
                quorums: Vec::new(),
                accessed: BTreeSet::new(),
            })
            .collect(),
        unbatched: vec![Vec::new(); sc.params.shards as usize],
        batches: Vec::new(),
        messages: 0,
    };
    for (i, t) in sc.txs.iter().enumerate() {
        sim.queue.push(t.start, Event::Start(i));
    }
    let max_ops = sc.txs.iter().map(|t| t.ops.len() as u64).max().unwrap_or(0);
    // every wait is bounded by the timeout, so this is past the last commit
    let horizon = sc.txs.iter().map(|t| t.start + (t.ops.len() as u64 + 1) * sc.params.timeout).max().unwrap_or(0) + 1;
    let rounds = horizon.div_ceil(sc.params.batch_interval).max(1);
    for k in 1..=rounds {
        sim.queue.push(k * sc.params.batch_interval, Event::BatchTick);
    }

    while let Some((now, _, ev)) = sim.queue.pop() {
        match ev {
            Event::Start(i) => sim.advance(i, now),
            Event::Deliver { shard, req } => sim.deliver(shard, req, now),
            Event::Reply { tx, step, shard, replica, reply } => sim.on_reply(tx, step, shard, replica, reply, now),
            Event::Timeout { tx, step } => {
                if sim.coords[tx].step == step && !sim.txs[tx].is_done() {
                    sim.abort(tx, AbortReason::Timeout, now);
                }
            }
            Event::BatchTick => sim.batch_tick(now),
        }
    }

    let day_log = primary_collect(
        &sim.batches,
        &CollectParams {
            shards: sc.params.shards,
            batch_timeout: sc.params.batch_timeout,
            tp_slack: sc.params.batch_interval + (max_ops + 1) * sc.params.timeout,
        },
    );
    let commit_quorums = sim
        .txs
        .iter()
        .zip(&sim.coords)
        .filter(|(t, _)| t.state == TxState::Committed)
        .map(|(t, c)| (t.id, c.quorums.clone()))
        .collect();
    Ok(ShardedOutcome {
        txs: sim.txs,
        shards: sim.shards,
        batches: sim.batches,
        day_log,
        messages: sim.messages,
        commit_quorums,
    })
}

impl Sim<'_> {
    fn delay(&mut self) -> u64 {
        self.rng.gen_range(self.sc.min_delay..=self.sc.max_delay)
    }

    fn fault(&self, shard: ShardId) -> Option<ShardFault> {
        self.sc.faults.iter().find(|f| f.shard == shard).copied()
    }

    fn send(&mut self, shard: ShardId, req: HostRequest, now: u64) {
        self.messages += 1;
        let d = self.delay();
        self.queue.push(now + d, Event::Deliver { shard, req });
    }

    /// Opens a new wait; replies and timeouts from older waits go stale.
    fn wait(&mut self, i: usize, wait: Wait, now: u64) {
        let c = &mut self.coords[i];
        c.step += 1;
        c.wait = wait;
        c.replies.clear();
        let step = c.step;
        self.queue.push(now + self.sc.params.timeout, Event::Timeout { tx: i, step });
    }

    /// Runs ops until one needs a remote reply, then finishes.
    fn advance(&mut self, i: usize, now: u64) {
        let home = self.txs[i].home;
        while self.coords[i].next_op < self.txs[i].ops.len() {
            let op = self.txs[i].ops[self.coords[i].next_op];
            if let Op::Read(a) = op {
                if let Some(v) = self.txs[i].buffered(a) {
                    self.txs[i].reads.push((a, v));
                    self.coords[i].next_op += 1;
                    continue;
                }
            }
            let addr = op.addr();
            let id = self.txs[i].id;
            let req = match op {
                Op::Read(_) => HostRequest::Read { tx: id, addr },
                Op::Write(..) => HostRequest::Write { tx: id, addr },
            };
            let target = host(addr, self.sc.params.shards);
            self.coords[i].accessed.insert(target);
            if target == home {
                let reply = self.shards[home as usize].handle(&req).expect("home hosts addr");
                self.absorb(i, reply);
            } else {
                self.wait(i, Wait::Op { shard: target }, now);
                self.send(target, req, now);
                return;
            }
        }
        self.finish(i, now);
    }

    /// Applies an access reply to the transaction and moves past its op.
    fn absorb(&mut self, i: usize, reply: HostReply) {
        let op = self.txs[i].ops[self.coords[i].next_op];
        let t = &mut self.txs[i];
        match (op, reply) {
            (Op::Read(_), HostReply::Read { addr, value, wts, writers, .. }) => {
                t.before.extend(writers.into_iter().filter(|w| *w != t.id));
                t.raise_lower(wts);
                t.reads.push((addr, value));
                t.observed.push((addr, wts));
            }
            (Op::Write(_, v), HostReply::Write { addr, rts, readers, .. }) => {
                t.after.extend(readers.into_iter().filter(|r| *r != t.id));
                t.raise_lower(rts);
                let value = t.resolve(v);
                t.writes.push((addr, value));
            }
            (op, reply) => unreachable!("reply {reply:?} for {op:?}"),
        }
        self.coords[i].next_op += 1;
    }

    fn finish(&mut self, i: usize, now: u64) {
        let bounds: HashMap<TxId, (Ts, Option<Ts>)> =
            self.txs.iter().filter(|t| t.state != TxState::Aborted).map(|t| (t.id, (t.lower, t.upper))).collect();
        let cts = match self.txs[i].finish(|id| bounds.get(&id).copied()) {
            Ok(c) => c,
            Err(_) => return self.release(i, false, now),
        };
        let t = &self.txs[i];
        let req = HostRequest::Precommit {
            tx: t.id,
            cts,
            lower: t.lower,
            upper: t.upper,
            reads: t.observed.clone(),
            writes: t.write_set().into_iter().map(|w| w.0).collect(),
        };
        let home = t.home;
        if let Some(HostReply::Abort { .. }) = self.shards[home as usize].handle(&req) {
            return self.abort(i, AbortReason::Refused, now);
        }
        let remaining: BTreeSet<ShardId> = self.coords[i].accessed.iter().copied().filter(|&s| s != home).collect();
        if remaining.is_empty() {
            return self.commit(i, now);
        }
        self.wait(i, Wait::Precommit { remaining: remaining.clone() }, now);
        for s in remaining {
            self.send(s, req.clone(), now);
        }
    }

    fn commit(&mut self, i: usize, now: u64) {
        let home = self.txs[i].home;
        self.txs[i].commit(self.shards[home as usize].counter);
        self.coords[i].wait = Wait::Idle;
        let t = &self.txs[i];
        self.unbatched[home as usize].push(BatchEntry {
            id: t.id,
            home,
            cts: t.cts.expect("committed"),
            physical_timestamp: t.physical_timestamp,
            reads: t.observed.iter().map(|r| r.0).collect(),
            writes: t.write_set(),
        });
        self.release(i, true, now);
    }

    fn abort(&mut self, i: usize, reason: AbortReason, now: u64) {
        self.txs[i].abort(reason);
        self.release(i, false, now);
    }

    /// Tells every accessed shard the outcome; home is updated in place.
    fn release(&mut self, i: usize, commit: bool, now: u64) {
        self.coords[i].wait = Wait::Idle;
        self.coords[i].step += 1;
        let t = &self.txs[i];
        let req = HostRequest::Finalize { tx: t.id, commit, cts: t.cts.unwrap_or(0), writes: t.write_set() };
        let home = t.home;
        self.shards[home as usize].handle(&req);
        let remote: Vec<ShardId> = self.coords[i].accessed.iter().copied().filter(|&s| s != home).collect();
        for s in remote {
            self.send(s, req.clone(), now);
        }
    }

    /// A request reaches a shard; honest replicas reply identically,
    /// faulty ones stay silent or send garbage.
    fn deliver(&mut self, shard: ShardId, req: HostRequest, now: u64) {
        let Some(reply) = self.shards[shard as usize].handle(&req) else { return };
        let tx = self.txs.iter().position(|t| t.id == reply.tx()).expect("known tx");
        let step = self.coords[tx].step;
        let (faulty, mode) = self.fault(shard).map_or((0, FaultMode::Silent), |f| (f.faulty, f.mode));
        for replica in 0..self.sc.params.shard_size {
            let reply = if replica < faulty {
                match mode {
                    FaultMode::Silent => continue,
                    FaultMode::Garbage => garble(&reply, replica),
                }
            } else {
                reply.clone()
            };
            self.messages += 1;
            let d = self.delay();
            self.queue.push(now + d, Event::Reply { tx, step, shard, replica, reply });
        }
    }

    fn on_reply(&mut self, i: usize, step: u64, shard: ShardId, replica: usize, reply: HostReply, now: u64) {
        let c = &mut self.coords[i];
        if c.step != step || self.txs[i].is_done() {
            return;
        }
        let votes = c.replies.entry((shard, reply.clone())).or_default();
        votes.insert(replica);
        if votes.len() != self.sc.params.reply_quorum() {
            return;
        }
        match (&mut c.wait, reply) {
            (Wait::Op { shard: s }, reply @ (HostReply::Read { .. } | HostReply::Write { .. })) if *s == shard => {
                c.step += 1;
                c.wait = Wait::Idle;
                self.absorb(i, reply);
                self.advance(i, now);
            }
            (Wait::Precommit { remaining }, HostReply::Commit { .. }) => {
                remaining.remove(&shard);
                c.quorums.push((shard, self.sc.params.reply_quorum()));
                if remaining.is_empty() {
                    self.commit(i, now);
                }
            }
            (Wait::Precommit { .. }, HostReply::Abort { .. }) => self.abort(i, AbortReason::Refused, now),
            _ => {}
        }
    }

    /// Each shard agrees on and ships its batch if its honest replicas
    /// form a quorum; the counter advances either way.
    fn batch_tick(&mut self, now: u64) {
        let n = self.sc.params.shard_size;
        for s in 0..self.sc.params.shards {
            let members: Vec<NodeId> = (0..n).map(|r| NodeId((s as usize * n + r) as u32)).collect();
            let counter = self.shards[s as usize].counter;
            let (faulty, mode) = self.fault(s).map_or((0, FaultMode::Silent), |f| (f.faulty, f.mode));
            let entries = std::mem::take(&mut self.unbatched[s as usize]);
            let batch = shard_output_log(s, counter, entries);
            let content = digest(&batch.encode());
            let votes: Vec<Vote> = members
                .iter()
                .enumerate()
                .filter(|&(r, _)| r >= faulty || mode == FaultMode::Garbage)
                .map(|(r, &m)| Vote::cast(m, Phase::Precommit, counter, content, r >= faulty))
                .collect();
            if tally(&votes, &members).decision == Decision::Committed {
                let d = self.delay();
                self.batches.push(ReceivedBatch { batch, arrival: now + d });
            } else {
                self.unbatched[s as usize] = batch.entries;
            }
            self.shards[s as usize].counter += 1;
        }
    }
}

fn garble(reply: &HostReply, replica: usize) -> HostReply {
    let salt = replica as i64 + 1;
    match reply.clone() {
        HostReply::Read { tx, addr, value, wts, writers } => {
            HostReply::Read { tx, addr, value: value.wrapping_add(salt), wts, writers }
        }
        HostReply::Write { tx, addr, rts, readers } => HostReply::Write { tx, addr, rts: rts - salt, readers },
        HostReply::Commit { tx, counter } => HostReply::Commit { tx, counter: counter.wrapping_add(salt as u64) },
        HostReply::Abort { tx } => HostReply::Commit { tx, counter: u64::MAX - salt as u64 },
    }
}
