//! Synchronous round executor: both stages of every round over the active
//! edges, end-of-round refill, re-shuffle and drain, transmission
//! boundaries, metrics, invariant checks and traces.

pub mod report;
pub mod scenario;
pub mod trace;

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::adversary::{corrupted_by, edge, Behavior, Edge, ScheduleRunner};
use crate::auth_proto::board::{Board, Effect};
use crate::auth_proto::ledger::{stamp, verify_reply, verify_transfer, CheckCtx, EdgeLedger, PacketId, Proof, Reply, Transfer};
use crate::auth_proto::parcel::{report_indices, Bp, EdgeValues, Parcel, Reason, Side, StatusBody, StatusIndex};
use crate::auth_proto::sender::{Control, SenderControl};
use crate::codec::{decode_packets, sign_codeword, Message, PacketRef, ReedSolomon};
use crate::crypto::{keygen, CryptoError, Directory, NodeId, Signed, SigningKey};
use crate::slide_core::{Buffers, InReport, RecvOutcome};

use report::{Delivery, Elimination, Memory, Removal, RunReport, TxRecord, ViolationRecord};
use scenario::{Mode, Resolved, Scenario, SetupError};
use trace::{check_state, dup_bound, snapshot, NodeState, Potential, Record};

/// A packet handed over an edge: the packet, its flag round and the signed transfer.
type Delivered = (PacketRef, i64, Option<Arc<Signed<Transfer>>>);

const KEY_LABEL: u64 = 0x6b65_795f_7365_6564;
const MESSAGE_LABEL: u64 = 0x6d73_675f_7365_6564;

/// Payload of message `index` for a run seeded with `seed`.
pub fn message_payload(seed: u64, index: u64, bytes: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ MESSAGE_LABEL);
    rng.set_stream(index);
    let mut v = vec![0u8; bytes];
    rng.fill_bytes(&mut v);
    v
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error("key generation failed: {0}")]
    Crypto(#[from] CryptoError),
    #[error("trace write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("codec failure: {0}")]
    Codec(#[from] crate::codec::CodecError),
}

struct Node {
    id: NodeId,
    bufs: Buffers,
    outs_l: BTreeMap<NodeId, EdgeLedger>,
    ins_l: BTreeMap<NodeId, EdgeLedger>,
    /// Transmission in which the ledgers were last cleared.
    ledger_tx: u64,
    /// Earliest transfer proof per incoming edge since the last clear.
    first_in: BTreeMap<NodeId, Proof>,
    sig_self: i64,
    board: Option<Board>,
    behavior: Option<Behavior>,
    /// A ghost that has seen itself blacklisted.
    silent: bool,
    first_sent: Option<PacketRef>,
    /// Packet actually in flight per out-edge when it differs from the flagged one.
    substitute: BTreeMap<NodeId, PacketRef>,
}

impl Node {
    fn clear_ledgers(&mut self, tx: u64) {
        self.outs_l.clear();
        self.ins_l.clear();
        self.first_in.clear();
        self.sig_self = 0;
        self.ledger_tx = tx;
    }

    fn absorbs(&self) -> bool {
        matches!(self.behavior, Some(Behavior::Deleter | Behavior::ReportForger)) || (self.behavior == Some(Behavior::Ghost) && !self.silent)
    }
}

struct SenderState {
    reservoir: VecDeque<PacketRef>,
    control: Option<SenderControl>,
    message: u64,
    inserted: u64,
    /// Current-codeword insertions confirmed by a neighbour.
    confirmed: u64,
}

#[derive(Default)]
struct ReceiverState {
    store: BTreeMap<u32, PacketRef>,
    kappa: u64,
    dup: Option<u32>,
    last_decoded: u64,
    decoded_now: bool,
    old_seen: bool,
    outputs: Vec<Message>,
    eot_g: Option<u64>,
}

/// Per-transmission counters.
#[derive(Default)]
struct TxCounters {
    wasted: u64,
    blocked: u64,
    blocked_nw: u64,
    drop: i64,
    eot_latency: Option<u64>,
}

/// A reply in flight: plain heights plus the signed form in authenticated mode.
type ReplyMsg = (InReport, Option<Arc<Signed<Reply>>>);

pub struct Engine<'a> {
    res: Resolved,
    n: usize,
    auth: bool,
    cap: usize,
    rs: ReedSolomon,
    dir: Directory,
    keys: Vec<SigningKey>,
    nodes: Vec<Node>,
    snd: SenderState,
    rcv: ReceiverState,
    runner: ScheduleRunner,
    pedges: Vec<(NodeId, NodeId)>,
    tx: u64,
    g: u64,
    honest_run: bool,
    counters: TxCounters,
    trace: Option<&'a mut dyn Write>,
    report: RunReport,
}

/// Resolve and run a scenario.
pub fn run_scenario(s: &Scenario, trace: Option<&mut dyn Write>) -> Result<RunReport, EngineError> {
    let res = s.resolve()?;
    run(&res, trace)
}

/// Run a resolved scenario to completion.
pub fn run(res: &Resolved, trace: Option<&mut dyn Write>) -> Result<RunReport, EngineError> {
    let mut e = Engine::new(res, trace)?;
    e.execute()?;
    Ok(e.finish())
}

fn pair(nodes: &mut [Node], a: usize, b: usize) -> (&mut Node, &mut Node) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = nodes.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = nodes.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

fn side(l: Option<&EdgeLedger>, reason: &Reason) -> Side {
    let zero = EdgeLedger::default();
    let l = l.unwrap_or(&zero);
    match reason {
        Reason::F2 => Side { values: EdgeValues::Potential { s2: l.s2, s3: l.s3 }, proof: l.proof.clone() },
        Reason::F3 => Side { values: EdgeValues::Flow { s1: l.s1 }, proof: l.proof.clone() },
        Reason::F4(p) => Side { values: EdgeValues::Dup { sp: l.sp_of(*p) }, proof: l.sp_proof.get(p).cloned() },
    }
}

/// Ledger for `peer`, or the empty one when the ledgers predate the failed
/// transmission.
fn pick<'m>(m: &'m BTreeMap<NodeId, EdgeLedger>, peer: NodeId, fresh: bool, empty: &'m EdgeLedger) -> Option<&'m EdgeLedger> {
    if fresh {
        m.get(&peer)
    } else {
        Some(empty)
    }
}

/// In-side values backed by the earliest transfer proof instead of the latest.
fn stale_side(first: &Proof, l: Option<&EdgeLedger>, reason: &Reason) -> Side {
    let values = match reason {
        Reason::F2 => EdgeValues::Potential { s2: first.s2(), s3: l.map_or(0, |l| l.s3) },
        Reason::F3 => EdgeValues::Flow { s1: first.s1() },
        Reason::F4(p) => EdgeValues::Dup { sp: first.sp().filter(|(f, _)| f == p).map_or(0, |(_, v)| v) },
    };
    Side { values, proof: Some(first.clone()) }
}

impl<'a> Engine<'a> {
    fn new(res: &Resolved, trace: Option<&'a mut dyn Write>) -> Result<Self, EngineError> {
        let s = &res.scenario;
        let n = s.n;
        let cap = 2 * n;
        let auth = s.mode == Mode::Auth;
        let ids: Vec<NodeId> = (0..n).collect();
        let universe = res.schedule.universe();
        let (pairs, dir) = keygen(&ids, s.backend, s.seed ^ KEY_LABEL)?;
        let keys: Vec<SigningKey> = ids.iter().map(|i| pairs[i].signing.clone()).collect();
        let nodes = ids
            .iter()
            .map(|&id| Node {
                id,
                bufs: Buffers::with_peers(id, n, cap, |p| universe.contains(&edge(id, p))),
                outs_l: BTreeMap::new(),
                ins_l: BTreeMap::new(),
                ledger_tx: 0,
                first_in: BTreeMap::new(),
                sig_self: 0,
                board: (auth && id != 0).then(|| Board::new(id, n, keys[id].clone())),
                behavior: None,
                silent: false,
                first_sent: None,
                substitute: BTreeMap::new(),
            })
            .collect();
        let pedges = (0..n - 1)
            .flat_map(|a| (1..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .filter(|&(a, b)| universe.contains(&edge(a, b)))
            .collect();
        let report = RunReport {
            name: s.name.clone(),
            digest: res.digest.clone(),
            mode: if auth { "auth".into() } else { "slide".into() },
            n,
            d: res.params.d,
            threshold: res.params.threshold,
            length: res.length,
            rounds: 0,
            delivered: 0,
            output_prefix_ok: true,
            deliveries: Vec::new(),
            transmissions: Vec::new(),
            eliminations: Vec::new(),
            removals: Vec::new(),
            no_verdict: Vec::new(),
            memory: Memory::default(),
            violations: Vec::new(),
        };
        Ok(Engine {
            res: res.clone(),
            n,
            auth,
            cap,
            rs: ReedSolomon::new(&res.params),
            dir,
            snd: SenderState {
                reservoir: VecDeque::new(),
                control: auth.then(|| SenderControl::new(n, keys[0].clone())),
                message: 1,
                inserted: 0,
                confirmed: 0,
            },
            keys,
            nodes,
            rcv: ReceiverState::default(),
            runner: res.schedule.runner(),
            pedges,
            tx: 1,
            g: 0,
            honest_run: res.plan.is_empty(),
            counters: TxCounters::default(),
            trace,
            report,
        })
    }

    fn receiver(&self) -> NodeId {
        self.n - 1
    }

    fn emit(&mut self, rec: &Record) -> std::io::Result<()> {
        if let Some(w) = self.trace.as_mut() {
            serde_json::to_writer(&mut **w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn event(&mut self, kind: &str, node: Option<NodeId>, detail: Option<String>) -> std::io::Result<()> {
        let rec = Record::Ev { g: self.g, tx: self.tx, kind: kind.into(), node, detail };
        self.emit(&rec)
    }

    fn violation(&mut self, node: Option<NodeId>, what: String) {
        self.report.violations.push(ViolationRecord { g: self.g, node, what });
    }

    fn execute(&mut self) -> Result<(), EngineError> {
        let s = self.res.scenario.clone();
        let hdr = Record::Hdr {
            name: s.name.clone(),
            digest: self.res.digest.clone(),
            n: self.n,
            mode: self.report.mode.clone(),
            d: self.res.params.d,
            length: self.res.length,
            transmissions: s.transmissions,
            honest: self.honest_run,
            cap: self.cap,
        };
        self.emit(&hdr)?;
        let total = self.res.scenario.transmissions;
        if total == 0 {
            return Ok(());
        }
        self.distribute()?;
        while self.tx <= total {
            for t in 1..=self.res.length {
                self.round(t)?;
            }
            self.end_transmission()?;
            if self.tx <= total {
                self.distribute()?;
            }
        }
        Ok(())
    }

    /// Is the packet part of the codeword being delivered right now?
    fn current(&self, p: &PacketRef) -> bool {
        if self.auth {
            p.transmission == self.tx
        } else {
            p.codeword == self.tx
        }
    }

    fn halted(&self) -> bool {
        self.snd.control.as_ref().is_some_and(|c| c.halted)
    }

    fn en_of(&self, x: NodeId) -> Option<&BTreeSet<NodeId>> {
        if x == 0 {
            self.snd.control.as_ref().map(|c| &c.en)
        } else {
            self.nodes[x].board.as_ref().map(|b| &b.en)
        }
    }

    fn active(&self, set: &BTreeSet<Edge>, a: NodeId, b: NodeId) -> bool {
        set.contains(&edge(a, b)) && !self.nodes[a].silent && !self.nodes[b].silent
    }

    /// Broadcast link: active and neither side treats the other as eliminated.
    fn link(&self, set: &BTreeSet<Edge>, x: NodeId, y: NodeId) -> bool {
        self.active(set, x, y)
            && !self.en_of(x).is_some_and(|e| e.contains(&y))
            && !self.en_of(y).is_some_and(|e| e.contains(&x))
    }

    fn okay(&self, a: NodeId, b: NodeId) -> bool {
        if !self.auth {
            return true;
        }
        if a == 0 {
            self.snd.control.as_ref().expect("authenticated sender").okay(b, self.tx)
        } else {
            self.nodes[a].board.as_ref().expect("authenticated node").okay(b, self.tx)
        }
    }

    /// Potential of the internal nodes straight from their buffers.
    fn potential(&self) -> Potential {
        let mut p = Potential::default();
        let r = self.receiver();
        for node in &self.nodes[1..r] {
            for b in &node.bufs.outs {
                p.total += (1..b.slots.len()).filter(|&i| b.slots[i].is_some()).sum::<usize>() as i64;
                if let (Some(h), Some(fr)) = (b.hfp, b.fr) {
                    if self.peer_holds(node.id, b.peer, fr) {
                        p.dup += h as i64;
                    }
                }
            }
            for b in &node.bufs.ins {
                p.total += (1..b.slots.len()).filter(|&i| b.slots[i].is_some()).sum::<usize>() as i64;
            }
        }
        p
    }

    /// Whether `peer` has already received the packet `a` flagged at round `fr`.
    fn peer_holds(&self, a: NodeId, peer: NodeId, fr: i64) -> bool {
        let nb = &self.nodes[peer];
        nb.bufs.in_from(a).is_some_and(|i| nb.bufs.ins[i].rr >= fr)
    }

    fn snapshots(&self, rs: &[bool]) -> Vec<NodeState> {
        self.nodes
            .iter()
            .map(|nd| snapshot(nd.id, nd.behavior.is_none(), rs[nd.id], &nd.bufs, |peer, fr| self.peer_holds(nd.id, peer, fr)))
            .collect()
    }

    fn check_nd(&mut self, before: i64, after: i64, allowed: i64, phase: &str) {
        if self.honest_run && after - before > allowed {
            self.violation(None, format!("non-duplicated potential rose by {} in {phase} (insertions {allowed})", after - before));
        }
    }

    fn round(&mut self, t: u64) -> Result<(), EngineError> {
        self.g += 1;
        let g = self.g;
        for (&x, c) in &self.res.plan {
            if c.round == g {
                self.nodes[x].behavior = Some(c.behavior);
            }
        }
        let active = self.runner.next_round();
        let ti = t as i64;
        let nd0 = self.potential().nondup();
        let halted = self.halted();
        let sender_full = !halted
            && !self.snd.reservoir.is_empty()
            && self.nodes[0].bufs.outs.iter().filter(|b| !self.nodes[0].bufs.disabled.contains(&b.peer)).all(|b| b.occupancy() == b.cap());

        self.stage1(ti, &active);
        let nd1 = self.potential().nondup();
        self.check_nd(nd0, nd1, 0, "stage 1");

        let (ins, wasted) = self.stage2(ti, &active, halted)?;
        let nd2 = self.potential().nondup();
        self.check_nd(nd1, nd2, ins, "stage 2");

        let (inserted, rs) = self.end_of_round(t)?;
        let p = self.potential();
        self.check_nd(nd2, p.nondup(), 0, "end of round");
        if self.honest_run && (p.dup < 0 || p.dup > dup_bound(self.n)) {
            self.violation(None, format!("duplication potential {} outside [0, {}]", p.dup, dup_bound(self.n)));
        }

        let blocked = sender_full && !inserted;
        if wasted {
            self.counters.wasted += 1;
        }
        if blocked {
            self.counters.blocked += 1;
            if !wasted {
                self.counters.blocked_nw += 1;
            }
        }
        self.counters.drop += ins - (p.nondup() - nd0);

        let states = self.snapshots(&rs);
        for s in states.iter().filter(|s| s.hon) {
            if let Err(what) = check_state(s, self.n, self.cap) {
                self.violation(Some(s.id), what);
            }
        }
        self.note_memory();
        if self.trace.is_some() {
            let rec = Record::St { g, tx: self.tx, t, ins, blk: blocked, wst: wasted, nodes: states };
            self.emit(&rec)?;
        }
        self.report.rounds = g;
        Ok(())
    }

    fn note_memory(&mut self) {
        let r = self.receiver();
        let mut ledger = 0;
        for nd in &self.nodes {
            if nd.id != 0 && nd.id != r {
                self.report.memory.note_packets(nd.id, nd.bufs.packets());
            }
            if let Some(b) = &nd.board {
                self.report.memory.note_broadcast(nd.id, b.held());
            }
            for l in nd.outs_l.values().chain(nd.ins_l.values()) {
                ledger = ledger.max(l.entries());
            }
        }
        self.report.memory.ledger_entries = self.report.memory.ledger_entries.max(ledger);
        if let Some(c) = &self.snd.control {
            self.report.memory.note_broadcast(0, c.bb.len());
            self.report.memory.sender_db = self.report.memory.sender_db.max(c.db_size());
        }
    }

    fn stage1(&mut self, t: i64, active: &BTreeSet<Edge>) {
        let tx = self.tx;
        let r = self.receiver();
        // Every message is computed from pre-stage state before any is applied.
        let mut msgs = Vec::with_capacity(self.pedges.len());
        for &(a, b) in &self.pedges {
            if !self.active(active, a, b) {
                msgs.push((a, b, None, None));
                continue;
            }
            let na = &self.nodes[a];
            let nb = &self.nodes[b];
            let ob = &na.bufs.outs[na.bufs.out_to(b).expect("out-buffer")];
            let ib = &nb.bufs.ins[nb.bufs.in_from(a).expect("in-buffer")];
            let mut rep = ib.report();
            if nb.behavior == Some(Behavior::Liar) {
                rep.h = 0;
            }
            let signed = self.auth.then(|| {
                let zero = EdgeLedger::default();
                let l = nb.ins_l.get(&a).unwrap_or(&zero);
                let sp = ib.last.as_ref().filter(|p| p.transmission == tx).map(|p| (p.fragment, l.sp_of(p.fragment)));
                Arc::new(self.keys[b].sign(Reply { tx, stamp: stamp(t, 1), h: rep.h, rr: rep.rr, s1: l.s1, s3: l.s3, sp }))
            });
            msgs.push((a, b, Some(ob.report()), Some((rep, signed))));
        }
        let ctx = CheckCtx { dir: &self.dir, sender: 0, tx, t };
        for (a, b, msg, reply) in msgs {
            let (na, nb) = pair(&mut self.nodes, a, b);
            let oi = na.bufs.out_to(b).expect("out-buffer");
            let reply: Option<ReplyMsg> = reply;
            let valid = match &reply {
                None => None,
                Some((rep, None)) => Some(*rep),
                Some((rep, Some(signed))) => {
                    let ob = &na.bufs.outs[oi];
                    let sent = na.substitute.get(&b).or(ob.ptilde.as_ref());
                    let flag = match (sent, ob.fr, ob.hfp) {
                        (Some(p), Some(fr), Some(h)) => Some((p, fr, h)),
                        _ => None,
                    };
                    let zero = EdgeLedger::default();
                    let l = na.outs_l.get(&b).unwrap_or(&zero);
                    verify_reply(&ctx, b, b == r, signed, l, flag).then_some(*rep)
                }
            };
            let outcome = na.bufs.outs[oi].reset(valid);
            if let Some((p, hfp, slid)) = outcome.confirmed {
                if let Some((_, Some(signed))) = &reply {
                    let l = na.outs_l.entry(b).or_default();
                    l.adopt_if_changed(Proof::Reply(signed.clone()));
                    l.s3 += hfp as i64;
                }
                na.sig_self += slid as i64;
                na.substitute.remove(&b);
                if a == 0 && (if self.auth { p.transmission == tx } else { p.codeword == tx }) {
                    self.snd.confirmed += 1;
                }
                if na.behavior == Some(Behavior::Duplicator) {
                    na.bufs.outs[oi].push(p);
                }
            }
            let ii = nb.bufs.in_from(a).expect("in-buffer");
            nb.bufs.ins[ii].absorb(msg);
        }
        if self.auth {
            self.exchange_control(active);
        }
    }

    /// Stage-1 broadcast control: confirm last stage's parcels and send requests.
    fn exchange_control(&mut self, active: &BTreeSet<Edge>) {
        let n = self.n;
        let mut acks = Vec::new();
        let mut reqs = Vec::new();
        for x in 0..n {
            for y in (0..n).filter(|&y| y != x) {
                if !self.link(active, x, y) {
                    continue;
                }
                let (ack, req) = if x == 0 {
                    let c = self.snd.control.as_ref().expect("sender control");
                    (c.pending_ack.get(&y).copied(), c.request(y))
                } else {
                    let b = self.nodes[x].board.as_ref().expect("board");
                    (b.pending_ack.get(&y).copied(), b.request(y, self.tx))
                };
                if let Some(id) = ack {
                    acks.push((y, id, x));
                }
                reqs.push((y, x, req));
            }
        }
        if let Some(c) = self.snd.control.as_mut() {
            c.pending_ack.clear();
        }
        for nd in &mut self.nodes {
            if let Some(b) = nd.board.as_mut() {
                b.pending_ack.clear();
            }
        }
        for (y, id, x) in acks {
            if y == 0 {
                self.snd.control.as_mut().expect("sender control").bb.mark(id, x);
            } else {
                self.nodes[y].board.as_mut().expect("board").bb.mark(id, x);
            }
        }
        for (y, x, req) in reqs {
            let map = if y == 0 {
                &mut self.snd.control.as_mut().expect("sender control").requests
            } else {
                &mut self.nodes[y].board.as_mut().expect("board").requests
            };
            match req {
                Some(r) => map.insert(x, r),
                None => map.remove(&x),
            };
        }
    }

    /// Returns the insertion heights at internal nodes and whether the round is wasted.
    fn stage2(&mut self, t: i64, active: &BTreeSet<Edge>, halted: bool) -> Result<(i64, bool), EngineError> {
        let tx = self.tx;
        let r = self.receiver();
        let n = self.n;
        let gates: Vec<(bool, bool)> = self.pedges.iter().map(|&(a, b)| (self.okay(a, b), self.okay(b, a))).collect();
        let gate_of: BTreeMap<(NodeId, NodeId), (bool, bool)> = self.pedges.iter().copied().zip(gates.iter().copied()).collect();
        let wasted = self.auth && !halted && {
            let bad = corrupted_by(&self.res.plan, self.g);
            match self.runner.designated(n, active, &bad) {
                Some(path) => path.windows(2).any(|w| {
                    let (s, rcv) = gate_of[&(w[0], w[1])];
                    !(s && rcv)
                }),
                None => false,
            }
        };
        let mut choices = Vec::new();
        if self.auth {
            for x in 0..n {
                for y in (0..n).filter(|&y| y != x) {
                    if !self.link(active, x, y) {
                        continue;
                    }
                    let bp = if x == 0 {
                        self.snd.control.as_ref().expect("sender control").choose(y)
                    } else {
                        self.nodes[x].board.as_ref().expect("board").choose(y)
                    };
                    if let Some(bp) = bp {
                        choices.push((x, y, bp));
                    }
                }
            }
        }

        let mut ins = 0i64;
        let mut accepted = Vec::new();
        let ctx = CheckCtx { dir: &self.dir, sender: 0, tx, t };
        for (k, &(a, b)) in self.pedges.iter().enumerate() {
            let (ok_send, ok_recv) = gates[k];
            let act = self.active(active, a, b);
            let (na, nb) = pair(&mut self.nodes, a, b);
            let oi = na.bufs.out_to(b).expect("out-buffer");
            let mut delivered: Option<Delivered> = None;
            if ok_send && na.bufs.outs[oi].prepare_send(t) {
                let (p, fr) = na.bufs.outs[oi].send().expect("a flagged packet is in flight");
                let hfp = na.bufs.outs[oi].hfp.expect("flagged height");
                let actual = if na.behavior == Some(Behavior::Replacer) {
                    if fr == t {
                        na.substitute.remove(&b);
                        match &na.first_sent {
                            Some(first) if first.digest() != p.digest() => {
                                na.substitute.insert(b, first.clone());
                                first.clone()
                            }
                            Some(_) => p,
                            None => {
                                na.first_sent = Some(p.clone());
                                p
                            }
                        }
                    } else {
                        na.substitute.get(&b).cloned().unwrap_or(p)
                    }
                } else {
                    p
                };
                let signed = self.auth.then(|| {
                    let zero = EdgeLedger::default();
                    let l = na.outs_l.get(&b).unwrap_or(&zero);
                    let cur = actual.transmission == tx;
                    Arc::new(self.keys[a].sign(Transfer {
                        tx,
                        stamp: stamp(t, 2),
                        packet: PacketId::of(&actual),
                        fr,
                        s1: l.s1 + cur as i64,
                        s3: l.s3 + hfp as i64,
                        sp: cur.then(|| (actual.fragment, l.sp_of(actual.fragment) + 1)),
                    }))
                });
                if act {
                    delivered = Some((actual, fr, signed));
                }
            }
            let ii = nb.bufs.in_from(a).expect("in-buffer");
            let delivered = match delivered {
                Some((p, fr, Some(s))) => {
                    let ib = &nb.bufs.ins[ii];
                    let zero = EdgeLedger::default();
                    let l = nb.ins_l.get(&a).unwrap_or(&zero);
                    verify_transfer(&ctx, a, &s, &p, l, ib.is_new(fr), ib.landing_slot()).then_some((p, fr, Some(s)))
                }
                other => other,
            };
            let msg = delivered.as_ref().map(|(p, fr, _)| (p.clone(), *fr));
            match nb.bufs.ins[ii].receive(ok_recv, msg, t) {
                RecvOutcome::Accepted { slot } => {
                    let (p, _, signed) = delivered.expect("accepted packets were delivered");
                    if let Some(s) = signed {
                        let proof = Proof::Transfer(s);
                        let l = nb.ins_l.entry(a).or_default();
                        l.adopt_if_changed(proof.clone());
                        if b != r {
                            l.s3 += slot as i64;
                        }
                        nb.first_in.entry(a).or_insert(proof);
                    }
                    if a == 0 && b != r {
                        ins += slot as i64;
                    }
                    accepted.push((a, b, p, slot));
                }
                RecvOutcome::Duplicate { slid } | RecvOutcome::Idle { slid } => nb.sig_self += slid as i64,
                RecvOutcome::Missing => {}
            }
        }
        if self.trace.is_some() {
            for (a, b, p, slot) in accepted {
                let rec = Record::Pk { g: self.g, from: a, to: b, cw: p.codeword, frag: p.fragment, slot, digest: format!("{:016x}", p.digest()) };
                self.emit(&rec)?;
            }
        }
        for (x, y, bp) in choices {
            self.deliver_parcel(x, y, bp)?;
        }
        Ok((ins, wasted))
    }

    fn deliver_parcel(&mut self, x: NodeId, y: NodeId, bp: Bp) -> Result<(), EngineError> {
        let tx = self.tx;
        let id = bp.id;
        if y == 0 {
            let c = self.snd.control.as_mut().expect("sender control");
            let had_theta = c.theta.is_some();
            let (ok, controls) = c.receive(bp, &self.dir, tx);
            if ok {
                c.pending_ack.insert(x, id);
            }
            let got_theta = !had_theta && c.theta.is_some();
            if got_theta && self.counters.eot_latency.is_none() {
                self.counters.eot_latency = self.rcv.eot_g.map(|e| self.g - e);
            }
            for ctl in controls {
                self.apply_control(ctl)?;
            }
            return Ok(());
        }
        let board = self.nodes[y].board.as_mut().expect("board");
        let (ok, effects) = board.receive(x, bp, &self.dir, tx);
        if ok {
            board.pending_ack.insert(x, id);
        }
        for eff in effects {
            self.apply_effect(y, eff);
        }
        let nd = &mut self.nodes[y];
        let board = nd.board.as_ref().expect("board");
        nd.bufs.disabled = board.en.iter().copied().collect();
        if nd.behavior == Some(Behavior::Ghost) && board.bl.contains_key(&y) && !nd.silent {
            nd.silent = true;
            self.event("ghost_silent", Some(y), None)?;
        }
        Ok(())
    }

    fn apply_control(&mut self, ctl: Control) -> Result<(), EngineError> {
        match ctl {
            Control::Eliminated { verdict } => {
                let node = verdict.node;
                let s = &mut self.nodes[0];
                s.outs_l.clear();
                s.bufs.disabled = self.snd.control.as_ref().expect("sender control").en.iter().copied().collect();
                self.snd.confirmed = 0;
                self.event("elimination", Some(node), Some(verdict.inequality.clone()))?;
                self.report.eliminations.push(Elimination { node, g: self.g, tx: self.tx, verdict });
            }
            Control::Removed { node, failed_tx } => {
                self.event("removal", Some(node), Some(format!("failed transmission {failed_tx}")))?;
                self.report.removals.push(Removal { node, failed_tx, g: self.g });
            }
            Control::NoVerdict { failed_tx } => {
                self.event("no_verdict", None, Some(format!("failed transmission {failed_tx}")))?;
                self.report.no_verdict.push(failed_tx);
            }
        }
        Ok(())
    }

    fn apply_effect(&mut self, y: NodeId, eff: Effect) {
        let tx = self.tx;
        let n = self.n;
        let r = self.receiver();
        let nd = &mut self.nodes[y];
        match eff {
            Effect::ClearLedgers => nd.clear_ledgers(tx),
            Effect::Wipe => {
                nd.clear_ledgers(tx);
                for b in &mut nd.bufs.outs {
                    b.clear();
                }
                for b in &mut nd.bufs.ins {
                    b.clear();
                }
                nd.substitute.clear();
            }
            Effect::Report { failed_tx, reason } => {
                if nd.behavior == Some(Behavior::Ghost) {
                    return;
                }
                let forge = nd.behavior == Some(Behavior::ReportForger);
                // Ledgers not cleared during the failed transmission mean the
                // node never held its header set there and moved nothing.
                let fresh = nd.ledger_tx == failed_tx;
                let empty = EdgeLedger::default();
                let en = nd.board.as_ref().expect("board").en.clone();
                let parcels: Vec<Parcel> = report_indices(y, n, &en, &reason)
                    .into_iter()
                    .map(|index| {
                        let body = match index {
                            StatusIndex::Own => StatusBody::Own { sig_self: if fresh { nd.sig_self } else { 0 } },
                            StatusIndex::Peer(b) => {
                                let out = (y != r && b != 0).then(|| side(pick(&nd.outs_l, b, fresh, &empty), &reason));
                                let inn = (y != 0 && b != r).then(|| match (forge && fresh, nd.first_in.get(&b)) {
                                    (true, Some(first)) => stale_side(first, nd.ins_l.get(&b), &reason),
                                    _ => side(pick(&nd.ins_l, b, fresh, &empty), &reason),
                                });
                                StatusBody::Edge { out, inn }
                            }
                        };
                        Parcel::Status { node: y, failed_tx, index, body }
                    })
                    .collect();
                nd.board.as_mut().expect("board").add_own(parcels);
            }
        }
    }

    /// Refill, re-shuffle, drain and corrupt overrides. Returns whether the
    /// sender inserted and which nodes re-shuffled.
    fn end_of_round(&mut self, t: u64) -> Result<(bool, Vec<bool>), EngineError> {
        let n = self.n;
        let r = self.receiver();
        let tx = self.tx;
        let before = self.snd.inserted;
        if !self.halted() {
            self.refill();
        }
        let inserted = self.snd.inserted > before;
        let mut rs = vec![false; n];
        for (x, nd) in self.nodes.iter_mut().enumerate().take(r).skip(1) {
            let ready = nd.board.as_ref().is_none_or(|b| b.has_full_sot(tx));
            if ready {
                let moves = nd.bufs.reshuffle();
                nd.sig_self += moves.iter().map(|m| m.drop()).sum::<i64>();
                rs[x] = true;
            }
        }
        self.drain()?;
        for nd in &mut self.nodes[1..r] {
            if nd.absorbs() {
                for b in &mut nd.bufs.ins {
                    b.slots.iter_mut().for_each(|s| *s = None);
                    b.h = 0;
                    b.h_gp = None;
                }
            }
        }
        if self.auth && t == self.res.length - n as u64 {
            let eot = Parcel::Eot { decoded: self.rcv.decoded_now || self.rcv.old_seen, dup: self.rcv.dup, tx };
            self.nodes[r].board.as_mut().expect("board").add_own(vec![eot]);
            self.rcv.eot_g = Some(self.g);
            self.event("eot", Some(r), Some(format!("decoded={} dup={:?}", self.rcv.decoded_now || self.rcv.old_seen, self.rcv.dup)))?;
        }
        Ok((inserted, rs))
    }

    fn refill(&mut self) {
        let s = &mut self.nodes[0];
        for b in &mut s.bufs.outs {
            if s.bufs.disabled.contains(&b.peer) {
                continue;
            }
            while b.occupancy() < b.cap() {
                let Some(p) = self.snd.reservoir.pop_front() else { return };
                b.push(p);
                self.snd.inserted += 1;
            }
        }
    }

    fn drain(&mut self) -> Result<(), EngineError> {
        let r = self.receiver();
        let mut got = Vec::new();
        for b in &mut self.nodes[r].bufs.ins {
            if b.h == 0 {
                continue;
            }
            if let Some(p) = b.slots[1].clone() {
                got.push(p);
            }
            b.slots.iter_mut().for_each(|s| *s = None);
            b.h = 0;
            b.h_gp = None;
        }
        for p in got {
            let cur = if self.auth {
                if p.transmission == self.tx && p.codeword <= self.rcv.last_decoded {
                    self.rcv.old_seen = true;
                }
                p.transmission == self.tx && p.codeword == self.rcv.last_decoded + 1
            } else {
                self.current(&p)
            };
            if !cur {
                continue;
            }
            match self.rcv.store.entry(p.fragment) {
                Entry::Occupied(_) => {
                    self.rcv.dup.get_or_insert(p.fragment);
                }
                Entry::Vacant(v) => {
                    v.insert(p);
                    self.rcv.kappa += 1;
                }
            }
        }
        if !self.rcv.decoded_now && self.rcv.kappa as usize >= self.res.params.threshold {
            let packets: Vec<PacketRef> = self.rcv.store.values().cloned().collect();
            if let Ok(m) = decode_packets(&self.rs, &packets, &self.dir, 0) {
                self.rcv.decoded_now = true;
                self.rcv.last_decoded = m.index;
                let round = self.g - (self.tx - 1) * self.res.length;
                self.report.deliveries.push(Delivery { message: m.index, tx: self.tx, round });
                self.event("decode", Some(r), Some(format!("message {}", m.index)))?;
                self.rcv.outputs.push(m);
            }
        }
        Ok(())
    }

    fn distribute(&mut self) -> Result<(), EngineError> {
        let m = self.snd.message;
        let payload = message_payload(self.res.scenario.seed, m, self.res.params.message_bytes);
        let cw = self.rs.encode(&Message { index: m, payload })?;
        let s = &mut self.nodes[0];
        for b in &mut s.bufs.outs {
            b.clear();
        }
        s.outs_l.clear();
        s.ledger_tx = self.tx;
        if let Some(c) = &self.snd.control {
            s.bufs.disabled = c.en.iter().copied().collect();
        }
        self.snd.reservoir = sign_codeword(&self.keys[0], self.tx, &cw).into();
        self.snd.confirmed = 0;
        self.snd.inserted = 0;
        self.refill();
        if self.trace.is_some() {
            let states = self.snapshots(&vec![false; self.n]);
            let rec = Record::St { g: self.g, tx: self.tx, t: 0, ins: 0, blk: false, wst: false, nodes: states };
            self.emit(&rec)?;
        }
        Ok(())
    }

    fn end_transmission(&mut self) -> Result<(), EngineError> {
        let tx = self.tx;
        for nd in &mut self.nodes {
            for b in &mut nd.bufs.outs {
                b.end_of_transmission(true);
            }
            for b in &mut nd.bufs.ins {
                b.end_of_transmission();
            }
            nd.substitute.clear();
            nd.first_sent = None;
            if let Some(b) = nd.board.as_mut() {
                b.end_of_transmission();
            }
        }
        let message = self.snd.message;
        let inserted = self.snd.inserted;
        let confirmed = self.snd.confirmed;
        let (outcome, reason, blacklisted) = if self.auth {
            let d = self.res.params.d as u64;
            let ledgers = self.nodes[0].outs_l.clone();
            let c = self.snd.control.as_mut().expect("sender control");
            match c.end_transmission(tx, self.snd.confirmed, d, &ledgers) {
                None => ("halted", None, Vec::new()),
                Some(o) if o.reason.is_none() => {
                    self.snd.message += 1;
                    ("decoded", None, Vec::new())
                }
                Some(o) => ("failed", o.reason, o.blacklisted),
            }
        } else {
            self.snd.message += 1;
            (if self.rcv.decoded_now { "decoded" } else { "undecoded" }, None, Vec::new())
        };
        if outcome == "failed" {
            self.event("failure", None, Some(format!("{:?}", reason.expect("failure reason"))))?;
            for &x in &blacklisted {
                self.event("blacklist", Some(x), None)?;
            }
        } else if outcome == "halted" {
            self.event("halted", None, None)?;
        }
        let latency = if self.auth && outcome != "halted" { self.counters.eot_latency } else { None };
        let c = std::mem::take(&mut self.counters);
        if self.honest_run && c.drop < self.n as i64 * c.blocked_nw as i64 {
            self.violation(None, format!("potential drop {} below {} x {} blocked rounds", c.drop, self.n, c.blocked_nw));
        }
        self.report.transmissions.push(TxRecord {
            tx,
            message,
            outcome: outcome.into(),
            reason,
            inserted,
            confirmed,
            wasted: c.wasted,
            blocked: c.blocked,
            blocked_nonwasted: c.blocked_nw,
            drop: c.drop,
            eot_latency: latency,
            blacklisted,
        });
        let rec = Record::Tx { tx, drop: c.drop, blocked_nw: c.blocked_nw, wasted: c.wasted };
        self.emit(&rec)?;
        let last = self.rcv.last_decoded;
        let outputs = std::mem::take(&mut self.rcv.outputs);
        self.rcv = ReceiverState { last_decoded: last, outputs, ..ReceiverState::default() };
        self.tx += 1;
        Ok(())
    }

    fn finish(mut self) -> RunReport {
        let seed = self.res.scenario.seed;
        let bytes = self.res.params.message_bytes;
        let outputs = std::mem::take(&mut self.rcv.outputs);
        self.report.delivered = outputs.len();
        self.report.output_prefix_ok = outputs
            .iter()
            .enumerate()
            .all(|(i, m)| m.index == i as u64 + 1 && m.payload == message_payload(seed, m.index, bytes));
        if let Some(w) = self.trace.as_mut() {
            let _ = w.flush();
        }
        self.report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra: &str, mode: &str, tx: u64) -> Scenario {
        Scenario::from_toml(&format!(
            "name = \"t\"\nn = 4\nmode = \"{mode}\"\nlambda = \"3/8\"\nsigma = \"1/2\"\ntransmissions = {tx}\nseed = 7\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn payloads_are_seeded() {
        assert_eq!(message_payload(1, 2, 16), message_payload(1, 2, 16));
        assert_ne!(message_payload(1, 2, 16), message_payload(1, 3, 16));
        assert_ne!(message_payload(1, 2, 16), message_payload(2, 2, 16));
    }

    #[test]
    fn zero_transmissions_do_nothing() {
        let r = run_scenario(&scenario("[schedule]\nkind = \"static\"\n", "slide", 0), None).unwrap();
        assert_eq!(r.rounds, 0);
        assert_eq!(r.delivered, 0);
        assert!(r.output_prefix_ok);
    }

    #[test]
    fn honest_slide_delivers_within_length() {
        let r = run_scenario(&scenario("[schedule]\nkind = \"static\"\n", "slide", 1), None).unwrap();
        assert_eq!(r.violations, vec![]);
        assert_eq!(r.delivered, 1);
        assert!(r.output_prefix_ok);
        assert!(r.deliveries[0].round <= 3 * 1024);
    }

    #[test]
    fn honest_auth_delivers() {
        let r = run_scenario(&scenario("[schedule]\nkind = \"static\"\n", "auth", 2), None).unwrap();
        assert_eq!(r.violations, vec![]);
        assert_eq!(r.delivered, 2, "{:?}", r.transmissions);
        assert!(r.output_prefix_ok);
        assert!(r.transmissions.iter().all(|t| t.eot_latency.is_some_and(|l| l <= 4)));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(6))]
        #[test]
        fn honest_churn_keeps_invariants(seed in 0u64..10_000, p in 0.0f64..0.6) {
            let r = run_scenario(&Scenario::churn(4, Mode::Slide, p, 1, seed, None), None).unwrap();
            proptest::prop_assert_eq!(r.violations, vec![]);
            proptest::prop_assert_eq!(r.delivered, 1);
            proptest::prop_assert!(r.deliveries[0].round <= 3 * 1024);
        }
    }
}
