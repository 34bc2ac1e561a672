//! Run report: delivery, failures, eliminations, per-transmission round
//! accounting, memory high-water marks and invariant violations.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::auth_proto::parcel::Reason;
use crate::crypto::NodeId;
use crate::localize::Verdict;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Delivery {
    pub message: u64,
    pub tx: u64,
    /// Round within the transmission.
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TxRecord {
    pub tx: u64,
    pub message: u64,
    /// `decoded`, `failed`, `halted` or `undecoded` (edge-scheduling mode).
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<Reason>,
    pub inserted: u64,
    /// Current-codeword insertions confirmed by a neighbour.
    pub confirmed: u64,
    pub wasted: u64,
    pub blocked: u64,
    pub blocked_nonwasted: u64,
    /// Non-duplicated potential released beyond insertions.
    pub drop: i64,
    /// Rounds from end-of-transmission parcel creation to its arrival at the sender.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eot_latency: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub blacklisted: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Elimination {
    pub node: NodeId,
    pub g: u64,
    pub tx: u64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Removal {
    pub node: NodeId,
    pub failed_tx: u64,
    pub g: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Memory {
    /// Packets held per internal node.
    pub packets: BTreeMap<NodeId, usize>,
    /// Broadcast-buffer parcels per node, sender included.
    pub broadcast: BTreeMap<NodeId, usize>,
    pub sender_db: usize,
    /// Largest single edge ledger, in entries.
    pub ledger_entries: usize,
}

impl Memory {
    pub fn note_packets(&mut self, node: NodeId, v: usize) {
        let e = self.packets.entry(node).or_default();
        *e = (*e).max(v);
    }

    pub fn note_broadcast(&mut self, node: NodeId, v: usize) {
        let e = self.broadcast.entry(node).or_default();
        *e = (*e).max(v);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ViolationRecord {
    pub g: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub digest: String,
    pub mode: String,
    pub n: usize,
    pub d: usize,
    pub threshold: usize,
    pub length: u64,
    pub rounds: u64,
    pub delivered: usize,
    pub output_prefix_ok: bool,
    pub deliveries: Vec<Delivery>,
    pub transmissions: Vec<TxRecord>,
    pub eliminations: Vec<Elimination>,
    pub removals: Vec<Removal>,
    /// Failed transmissions whose complete reports produced no verdict.
    pub no_verdict: Vec<u64>,
    pub memory: Memory,
    pub violations: Vec<ViolationRecord>,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = &TxRecord> {
        self.transmissions.iter().filter(|t| t.outcome == "failed")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
