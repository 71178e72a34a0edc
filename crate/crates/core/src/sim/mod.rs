//! The deterministic protocol simulation. One event loop drives every node;
//! handlers never block, and waiting is a scheduled event.

mod chain;
mod msg;
mod report;
mod tournament;
mod trace;
mod workload;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use crate::barrier::{BarrierCertificate, Oracle, ResyncTrigger};
use crate::bucketing::{TxFeed, TxPool};
use crate::colosseum::{assign_behaviors, keepers_for, Behavior, GameProposal, KeeperRecord, PoWin, Status};
use crate::config::SimConfig;
use crate::digest::{BlockHash, CBlockHash, Digest, NodeId};
use crate::error::ConfigError;
use crate::ledger::{Block, BlockRules, CBlock, LedgerStore, PendingBuffer, SpendRegistry};
use crate::net::{gossip_targets, serialization_time, Egress, EventQueue, Latency, Ring};
use crate::time::SimTime;

use msg::Msg;
pub use report::RunReport;
pub use trace::{from_ndjson, to_ndjson, TraceRecord};

/// Probes in flight at once while looking for an opponent.
const PROBE_WAVE: u32 = 4;
/// Messages from a later tournament that make a node resynchronize.
const RESYNC_THRESHOLD: u32 = 3;
/// Parked items are dropped after this many slots.
const PENDING_TTL_SLOTS: u64 = 4;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep a trace record per notable event.
    pub trace: bool,
}

pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TraceRecord>,
    /// Ledger of the honest node whose view defines the main chain.
    pub ledger: LedgerStore,
}

/// Simulates one configuration end to end.
pub fn run(cfg: &SimConfig, opts: &RunOptions) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg.clone(), opts);
    sim.run_loop();
    Ok(sim.finish())
}

enum Ev {
    Deliver {
        from: NodeId,
        msg: Msg,
    },
    /// Sends `msg` once the event fires; used for deliberate delays.
    Send {
        to: NodeId,
        msg: Msg,
    },
    LinkFree,
    SlotStart {
        t: u64,
    },
    ProbeWave {
        epoch: u64,
    },
    PairDeadline {
        epoch: u64,
    },
    ValidatorTimeout {
        t: u64,
        match_id: Digest,
    },
    KeeperRecheck {
        subject: NodeId,
        t: u64,
        powin: Digest,
    },
    BodyTimeout {
        id: Digest,
        attempt: u32,
    },
    Housekeeping,
}

struct Match {
    id: Digest,
    opponent: NodeId,
    result: Option<Arc<PoWin>>,
}

/// A match whose validator went quiet, kept while the node re-pairs.
struct Repair {
    first: Digest,
    first_result: Option<Arc<PoWin>>,
}

#[derive(Default)]
struct Seek {
    order: Vec<NodeId>,
    next: usize,
    retry: Vec<NodeId>,
    outstanding: u32,
    sent: u32,
}

struct Want {
    offerers: Vec<NodeId>,
    attempt: u32,
    idle: bool,
}

enum Parked {
    Block(Arc<Block>, NodeId),
    CBlock(Arc<CBlock>, NodeId),
}

#[derive(Default)]
struct Tally {
    voters: Vec<(NodeId, Digest)>,
}

struct Node {
    id: NodeId,
    behavior: Behavior,
    offset_us: i64,
    routing: Vec<NodeId>,
    egress: Egress<(NodeId, Msg)>,

    // tournament
    cert: Option<BarrierCertificate>,
    next_cert: Option<BarrierCertificate>,
    t: u64,
    status: Status,
    prev_win: Option<Arc<PoWin>>,
    final_win: Option<Arc<PoWin>>,
    round_started: SimTime,
    epoch: u64,
    seek: Seek,
    matches: SmallVec<[Match; 2]>,
    repair: Option<Repair>,
    /// Peers this node must not pair with again in the current round.
    shunned: Vec<NodeId>,
    /// Earlier-round match whose late result could still stop the node.
    watch: Option<Digest>,
    resync: ResyncTrigger,
    reported: FxHashSet<Digest>,

    // keeper and validator roles
    records: FxHashMap<(NodeId, u64), KeeperRecord>,
    tallies: FxHashMap<Digest, Tally>,
    fouls_seen: FxHashSet<Digest>,
    inbox: FxHashMap<Digest, GameProposal>,

    // ledger
    store: LedgerStore,
    pool: TxPool,
    announced: BTreeMap<u64, BTreeSet<u32>>,
    headers_seen: FxHashSet<Digest>,
    wanted: FxHashMap<Digest, Want>,
    pending: PendingBuffer<Digest, Parked>,
    tip: CBlockHash,
    confirmed: Vec<CBlockHash>,
}

struct Emitted {
    t: u64,
    at: SimTime,
    txs: usize,
}

#[derive(Default)]
struct ConfirmStat {
    sum_us: u128,
    count: u32,
}

struct Sim {
    cfg: SimConfig,
    tau: SimTime,
    delta: u64,
    rules: BlockRules,
    ring: Ring,
    oracle: Oracle,
    latency: Latency,
    q: EventQueue<Ev>,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    keeper_cache: FxHashMap<(NodeId, u64), Arc<[NodeId]>>,
    registry: SpendRegistry,
    valid_blocks: FxHashMap<BlockHash, bool>,
    verified_cblocks: FxHashSet<CBlockHash>,
    emitted: BTreeMap<BlockHash, Emitted>,
    confirm: FxHashMap<BlockHash, ConfirmStat>,
    qualifiers: BTreeMap<u64, u32>,
    round_time: (f64, u64),
    fouls_declared: u64,
    fouls_counted: FxHashSet<Digest>,
    confirmed_reorgs: u64,
    double_spends: u64,
    trace: Option<Vec<TraceRecord>>,
    end: SimTime,
    body_timeout: SimTime,
}

impl Sim {
    fn new(cfg: SimConfig, opts: &RunOptions) -> Sim {
        let tau = cfg.tau();
        let delta = cfg.delta();
        let buckets = cfg.bucket_count();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ring = Ring::new(cfg.n, rng.gen());
        let genesis_time = SimTime::from_millis(1_000 + cfg.skew_ms);
        let oracle = Oracle::new(genesis_time, tau, rng.gen());
        let latency = Latency::new(
            SimTime::from_millis(cfg.latency_min_ms),
            SimTime::from_millis(cfg.latency_max_ms),
            rng.gen(),
        );
        let end = oracle.slot_start(cfg.slots as u64 + cfg.drain_slots() as u64 + 1);
        let mut feed_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let (feed, double_spends) = workload::generate_feed(
            buckets,
            cfg.effective_tx_rate(),
            cfg.double_spend_rate,
            cfg.tx_bytes,
            end,
            SimTime::from_millis(cfg.tx_delay_ms),
            &mut feed_rng,
        );
        let feed: Arc<TxFeed> = Arc::new(feed);
        let behaviors = assign_behaviors(cfg.n, &cfg.malicious, &mut rng);
        let skew_us = cfg.skew_ms as i64 * 1_000;
        let nodes = (0..cfg.n)
            .map(|i| {
                let id = NodeId(i);
                let store = LedgerStore::without_spend_index(cfg.alpha);
                let tip = store.genesis();
                Node {
                    id,
                    behavior: behaviors[i as usize],
                    offset_us: if skew_us > 0 {
                        rng.gen_range(-skew_us..=skew_us)
                    } else {
                        0
                    },
                    routing: ring.routing_table(id, &mut rng),
                    egress: Egress::new(cfg.bandwidth_bps),
                    cert: None,
                    next_cert: None,
                    t: 0,
                    status: Status::Idle,
                    prev_win: None,
                    final_win: None,
                    round_started: SimTime::ZERO,
                    epoch: 0,
                    seek: Seek::default(),
                    matches: SmallVec::new(),
                    repair: None,
                    shunned: Vec::new(),
                    watch: None,
                    resync: ResyncTrigger::new(RESYNC_THRESHOLD),
                    reported: FxHashSet::default(),
                    records: FxHashMap::default(),
                    tallies: FxHashMap::default(),
                    fouls_seen: FxHashSet::default(),
                    inbox: FxHashMap::default(),
                    store,
                    pool: TxPool::from_feed(feed.clone()),
                    announced: BTreeMap::new(),
                    headers_seen: FxHashSet::default(),
                    wanted: FxHashMap::default(),
                    pending: PendingBuffer::new(),
                    tip,
                    confirmed: Vec::new(),
                }
            })
            .collect();
        let body_timeout =
            SimTime::from_secs_f64(2.0).max(serialization_time(cfg.block_bytes, cfg.bandwidth_bps).scale(4.0));
        let mut sim = Sim {
            rules: BlockRules {
                alpha: cfg.alpha,
                buckets,
                max_bytes: cfg.block_bytes,
            },
            cfg,
            tau,
            delta,
            ring,
            oracle,
            latency,
            q: EventQueue::new(),
            nodes,
            rng,
            keeper_cache: FxHashMap::default(),
            registry: SpendRegistry::new(),
            valid_blocks: FxHashMap::default(),
            verified_cblocks: FxHashSet::default(),
            emitted: BTreeMap::new(),
            confirm: FxHashMap::default(),
            qualifiers: BTreeMap::new(),
            round_time: (0.0, 0),
            fouls_declared: 0,
            fouls_counted: FxHashSet::default(),
            confirmed_reorgs: 0,
            double_spends,
            trace: opts.trace.then(Vec::new),
            end,
            body_timeout,
        };
        sim.bootstrap();
        sim
    }

    fn bootstrap(&mut self) {
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            // A node ignoring the barrier behaves as if two slots ahead.
            let ahead = if n.behavior.barrier_bypass { 2 } else { 0 };
            let mut cert = self.oracle.bootstrap(n.id, 1 + ahead, n.offset_us);
            cert.issued_at = SimTime(self.oracle.slot_start(1).0.saturating_add_signed(n.offset_us));
            let at = cert.issued_at;
            let t = cert.tournament_no;
            n.next_cert = Some(cert);
            self.q.schedule(at, n.id, Ev::SlotStart { t });
            self.q.schedule(at + self.tau, n.id, Ev::Housekeeping);
        }
    }

    fn run_loop(&mut self) {
        while let Some(e) = self.q.pop() {
            if e.fire_time > self.end {
                break;
            }
            let me = e.target;
            match e.payload {
                Ev::Deliver { from, msg } => self.deliver(me, from, msg),
                Ev::Send { to, msg } => self.send(me, to, msg),
                Ev::LinkFree => {
                    if let Some((to, msg)) = self.nodes[me.index()].egress.finish() {
                        let at = self.q.now() + self.latency.between(me, to);
                        self.q.schedule(at, to, Ev::Deliver { from: me, msg });
                    }
                    self.pump(me);
                }
                Ev::SlotStart { t } => self.slot_start(me, t),
                Ev::ProbeWave { epoch } => {
                    if self.nodes[me.index()].epoch == epoch {
                        let n = &mut self.nodes[me.index()];
                        let retry = std::mem::take(&mut n.seek.retry);
                        n.seek.order.extend(retry);
                        self.send_wave(me);
                    }
                }
                Ev::PairDeadline { epoch } => self.pair_deadline(me, epoch),
                Ev::ValidatorTimeout { t, match_id } => self.validator_timeout(me, t, match_id),
                Ev::KeeperRecheck { subject, t, powin } => self.keeper_recheck(me, subject, t, powin),
                Ev::BodyTimeout { id, attempt } => self.body_timeout(me, id, attempt),
                Ev::Housekeeping => self.housekeeping(me),
            }
        }
    }

    /// Queues `msg` on the sender's uplink.
    fn send(&mut self, from: NodeId, to: NodeId, msg: Msg) {
        if from == to {
            let now = self.q.now();
            self.q.schedule(now, to, Ev::Deliver { from, msg });
            return;
        }
        let bytes = msg.byte_size();
        let bulk = msg.kind().is_bulk();
        let e = &mut self.nodes[from.index()].egress;
        if bulk {
            e.push_bulk(bytes, (to, msg));
        } else {
            e.push_control(bytes, (to, msg));
        }
        self.pump(from);
    }

    fn send_later(&mut self, from: NodeId, to: NodeId, msg: Msg, delay: SimTime) {
        if delay == SimTime::ZERO {
            self.send(from, to, msg);
        } else {
            let at = self.q.now() + delay;
            self.q.schedule(at, from, Ev::Send { to, msg });
        }
    }

    fn pump(&mut self, node: NodeId) {
        if let Some(d) = self.nodes[node.index()].egress.start_next() {
            let at = self.q.now() + d;
            self.q.schedule(at, node, Ev::LinkFree);
        }
    }

    fn gossip(&mut self, from: NodeId, msg: Msg) {
        let n = &self.nodes[from.index()];
        let targets = gossip_targets(from, &n.routing, &self.ring, &mut self.rng);
        for t in targets {
            self.send(from, t, msg.clone());
        }
    }

    fn keepers(&mut self, subject: NodeId, t: u64) -> Arc<[NodeId]> {
        let (k, ring) = (self.cfg.k, &self.ring);
        self.keeper_cache
            .entry((subject, t))
            .or_insert_with(|| keepers_for(subject, t, k, ring).into())
            .clone()
    }

    /// `ceil(K / 4)` random keepers of `subject`, excluding `not`.
    fn some_keepers(&mut self, subject: NodeId, t: u64, not: NodeId) -> Vec<NodeId> {
        let ks = self.keepers(subject, t);
        let want = (self.cfg.k as usize).div_ceil(4);
        let pool: Vec<NodeId> = ks.iter().copied().filter(|&k| k != not).collect();
        pool.choose_multiple(&mut self.rng, want).copied().collect()
    }

    fn record(&mut self, node: NodeId, event: &'static str, digest: Digest, t: u64) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(TraceRecord {
                time_us: self.q.now().0,
                node: node.0,
                event: event.to_string(),
                tournament: t,
                digest,
            });
        }
    }

    fn deliver(&mut self, me: NodeId, from: NodeId, msg: Msg) {
        if let Some(mt) = msg.tournament() {
            let my_t = self.nodes[me.index()].t;
            if mt.abs_diff(my_t) > 1 {
                if let Msg::Probe { t, round, .. } = msg {
                    let reply = crate::colosseum::ProbeReply::Stale;
                    self.send(me, from, Msg::ProbeReply { t, round, reply });
                }
                self.observe_ahead(me, mt);
                return;
            }
            self.observe_ahead(me, mt);
        }
        match msg {
            Msg::Probe {
                t,
                round,
                prev,
                cert_hash,
            } => self.on_probe(me, from, t, round, prev, cert_hash),
            Msg::ProbeReply { t, round, reply } => self.on_probe_reply(me, from, t, round, reply),
            Msg::Cancel { t, round } => self.on_cancel(me, from, t, round),
            Msg::Proposal(p) => self.on_proposal(me, p),
            Msg::PoWin(p) => self.on_powin(me, p),
            Msg::Vote {
                subject,
                t,
                match_id,
                tag,
                evidence,
            } => self.on_vote(me, from, subject, t, match_id, tag, evidence),
            Msg::Foul(n) => self.on_foul(me, n),
            Msg::Query { subject, t, match_id } => self.on_query(me, from, subject, t, match_id),
            Msg::QueryReply { match_id, powin } => {
                if let Some(p) = powin.filter(|p| p.match_id == match_id) {
                    self.player_result(me, p);
                }
            }
            Msg::Header { t, bucket, proposer } => self.on_header(me, t, bucket, proposer),
            Msg::Offer { id } => self.on_offer(me, from, id),
            Msg::Request { id } => self.on_request(me, from, id),
            Msg::Body { block, cblock } => {
                if let Some(c) = cblock {
                    self.receive_cblock(me, c, from);
                }
                if let Some(b) = block {
                    self.receive_block(me, b, from);
                }
            }
        }
    }

    fn housekeeping(&mut self, me: NodeId) {
        let now = self.q.now();
        let ttl = SimTime(self.tau.0 * PENDING_TTL_SLOTS);
        let n = &mut self.nodes[me.index()];
        n.pending.evict(now, ttl);
        let keep_from = n.t.saturating_sub(3);
        n.records.retain(|&(_, t), _| t >= keep_from);
        n.announced = n.announced.split_off(&keep_from);
        if n.tallies.len() > 4_096 {
            n.tallies.clear();
        }
        n.inbox.retain(|_, p| p.tournament_no >= keep_from);
        n.reported.clear();
        let at = now + self.tau;
        self.q.schedule(at, me, Ev::Housekeeping);
    }

    fn finish(self) -> RunOutput {
        report::build(self)
    }
}
