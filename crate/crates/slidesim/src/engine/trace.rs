//! Newline-delimited trace records, per-round buffer snapshots, and the
//! offline audit that replays layout, balance and potential checks.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::NodeId;
use crate::slide_core::{Buffers, InBuf, OutBuf};

/// Outgoing buffer snapshot: peer, height, flagged height, occupied-slot
/// bitmask (bit i is slot i), and whether the flagged copy is a duplicate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutState(pub NodeId, pub usize, pub Option<usize>, pub u64, pub bool);

/// Incoming buffer snapshot: peer, height, ghost height, bitmask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InState(pub NodeId, pub usize, pub Option<usize>, pub u64);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub hon: bool,
    /// Re-shuffled this round.
    pub rs: bool,
    pub out: Vec<OutState>,
    #[serde(rename = "in")]
    pub inn: Vec<InState>,
    /// Peers whose buffers are disabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub off: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "r", rename_all = "snake_case")]
pub enum Record {
    Hdr { name: String, digest: String, n: usize, mode: String, d: usize, length: u64, transmissions: u64, honest: bool, cap: usize },
    /// End-of-round state. `t = 0` is the state right after distribution.
    St { g: u64, tx: u64, t: u64, ins: i64, blk: bool, wst: bool, nodes: Vec<NodeState> },
    /// A packet accepted over an edge.
    Pk { g: u64, from: NodeId, to: NodeId, cw: u64, frag: u32, slot: usize, digest: String },
    Ev {
        g: u64,
        tx: u64,
        kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<NodeId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    /// Per-transmission potential accounting.
    Tx { tx: u64, drop: i64, blocked_nw: u64, wasted: u64 },
}

pub fn mask(slots: &[Option<crate::codec::PacketRef>]) -> u64 {
    slots.iter().enumerate().filter(|(_, s)| s.is_some()).fold(0, |m, (i, _)| m | (1u64 << i))
}

fn out_state(b: &OutBuf, dup: bool) -> OutState {
    OutState(b.peer, b.h, b.hfp, mask(&b.slots), dup)
}

fn in_state(b: &InBuf) -> InState {
    InState(b.peer, b.h, b.h_gp, mask(&b.slots))
}

/// Snapshot a node. `dup(peer, fr)` tells whether the peer already holds
/// the packet flagged with round `fr` on the edge to it.
pub fn snapshot(id: NodeId, hon: bool, rs: bool, bufs: &Buffers, dup: impl Fn(NodeId, i64) -> bool) -> NodeState {
    NodeState {
        id,
        hon,
        rs,
        out: bufs.outs.iter().map(|b| out_state(b, b.hfp.is_some() && b.fr.is_some_and(|fr| dup(b.peer, fr)))).collect(),
        inn: bufs.ins.iter().map(in_state).collect(),
        off: bufs.disabled.clone(),
    }
}

fn slots_of(m: u64) -> Vec<usize> {
    (1..64).filter(|i| m & (1u64 << i) != 0).collect()
}

/// Network potential of the internal nodes: total and duplication part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Potential {
    pub total: i64,
    pub dup: i64,
}

impl Potential {
    pub fn nondup(&self) -> i64 {
        self.total - self.dup
    }
}

/// Each occupied slot contributes its index, so a contiguous buffer of
/// height h contributes h(h+1)/2.
pub fn potential(nodes: &[NodeState], n: usize) -> Potential {
    let mut p = Potential::default();
    for s in nodes.iter().filter(|s| s.id != 0 && s.id != n - 1) {
        for o in &s.out {
            p.total += slots_of(o.3).iter().sum::<usize>() as i64;
            if o.4 {
                p.dup += o.2.unwrap_or(0) as i64;
            }
        }
        for i in &s.inn {
            p.total += slots_of(i.3).iter().sum::<usize>() as i64;
        }
    }
    p
}

/// Upper bound on duplication potential.
pub fn dup_bound(n: usize) -> i64 {
    let n = n as i64;
    2 * n * n * n - 8 * n * n + 8 * n
}

/// Packets an internal node can hold: 2(n-2) buffers of `cap` slots.
pub fn capacity(n: usize, cap: usize) -> usize {
    2 * (n - 2) * cap
}

/// Layout, balance (when re-shuffled) and capacity checks on a snapshot.
pub fn check_state(s: &NodeState, n: usize, cap: usize) -> Result<(), String> {
    for o in &s.out {
        let expect: Vec<usize> = match o.2 {
            Some(f) if f > o.1 => (1..o.1).chain(std::iter::once(f)).collect(),
            _ => (1..=o.1).collect(),
        };
        if slots_of(o.3) != expect {
            return Err(format!("node {} out-buffer to {}: occupied {:?}, expected {:?}", s.id, o.0, slots_of(o.3), expect));
        }
    }
    for i in &s.inn {
        let expect: Vec<usize> = match i.2 {
            Some(g) if g <= i.1 => (1..=i.1 + 1).filter(|&x| x != g).collect(),
            _ => (1..=i.1).collect(),
        };
        if slots_of(i.3) != expect {
            return Err(format!("node {} in-buffer from {}: occupied {:?}, expected {:?}", s.id, i.0, slots_of(i.3), expect));
        }
    }
    if s.id != 0 && s.id != n - 1 {
        let held: u32 = s.out.iter().map(|o| o.3.count_ones()).chain(s.inn.iter().map(|i| i.3.count_ones())).sum();
        if held as usize > capacity(n, cap) {
            return Err(format!("node {} holds {held} packets, capacity {}", s.id, capacity(n, cap)));
        }
        if s.rs {
            let outs: Vec<usize> = s.out.iter().filter(|o| !s.off.contains(&o.0)).map(|o| o.1).collect();
            let ins: Vec<usize> = s.inn.iter().filter(|i| !s.off.contains(&i.0)).map(|i| i.1).collect();
            let all: Vec<usize> = outs.iter().chain(ins.iter()).copied().collect();
            if let (Some(mx), Some(mn)) = (all.iter().max(), all.iter().min()) {
                if mx > &(mn + 1) {
                    return Err(format!("node {} unbalanced: max {mx}, min {mn}", s.id));
                }
            }
            if let (Some(i), Some(o)) = (ins.iter().max(), outs.iter().min()) {
                if i > o {
                    return Err(format!("node {} in-buffer at {i} above out-buffer at {o}", s.id));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("trace read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One failed audit check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub g: u64,
    pub what: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditSummary {
    pub rounds: u64,
    pub transmissions: u64,
    pub findings: Vec<Finding>,
}

/// Replay a trace: per-round layout, balance and capacity of honest nodes;
/// in honest runs also the potential checks and the per-transmission drop
/// inequality, with the recorded drop recomputed from the snapshots.
pub fn audit(reader: impl BufRead) -> Result<AuditSummary, AuditError> {
    let mut sum = AuditSummary::default();
    let mut hdr: Option<(usize, usize, bool)> = None;
    let mut last_nd: Option<i64> = None;
    let mut drops: BTreeMap<u64, i64> = BTreeMap::new();
    let mut last_g = 0;
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| AuditError::Parse { line: no + 1, msg: e.to_string() })?;
        match rec {
            Record::Hdr { n, cap, honest, .. } => hdr = Some((n, cap, honest)),
            Record::St { g, tx, t, ins, nodes, .. } => {
                let Some((n, cap, honest)) = hdr else {
                    return Err(AuditError::Parse { line: no + 1, msg: "state before header".into() });
                };
                last_g = g;
                if t > 0 {
                    sum.rounds += 1;
                }
                for s in nodes.iter().filter(|s| s.hon) {
                    if let Err(what) = check_state(s, n, cap) {
                        sum.findings.push(Finding { g, what });
                    }
                }
                let p = potential(&nodes, n);
                if honest {
                    if p.dup < 0 || p.dup > dup_bound(n) {
                        sum.findings.push(Finding { g, what: format!("duplication potential {} outside [0, {}]", p.dup, dup_bound(n)) });
                    }
                    if let (Some(prev), true) = (last_nd, t > 0) {
                        let delta = p.nondup() - prev;
                        if delta > ins {
                            sum.findings.push(Finding { g, what: format!("non-duplicated potential rose by {delta} with insertions {ins}") });
                        }
                    }
                }
                if let (Some(prev), true) = (last_nd, t > 0) {
                    *drops.entry(tx).or_default() += ins - (p.nondup() - prev);
                }
                last_nd = Some(p.nondup());
            }
            Record::Tx { tx, drop, blocked_nw, .. } => {
                let Some((n, _, honest)) = hdr else {
                    return Err(AuditError::Parse { line: no + 1, msg: "transmission before header".into() });
                };
                sum.transmissions += 1;
                let got = drops.get(&tx).copied().unwrap_or(0);
                if got != drop {
                    sum.findings.push(Finding { g: last_g, what: format!("transmission {tx}: recorded drop {drop}, recomputed {got}") });
                }
                if honest && got < n as i64 * blocked_nw as i64 {
                    sum.findings.push(Finding {
                        g: last_g,
                        what: format!("transmission {tx}: drop {got} below {n} x {blocked_nw} blocked rounds"),
                    });
                }
            }
            Record::Pk { .. } | Record::Ev { .. } => {}
        }
    }
    if hdr.is_none() {
        return Err(AuditError::Parse { line: 0, msg: "no header record".into() });
    }
    Ok(sum)
}
