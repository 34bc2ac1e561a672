//! Sender control: collects end-of-transmission and status parcels,
//! blacklists after failures, removes nodes whose reports are complete,
//! runs localization and eliminates.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::board::{bb_allows, BroadcastBuffer};
use super::ledger::EdgeLedger;
use super::parcel::{report_indices, Bp, Parcel, Reason, StatusIndex};
use crate::crypto::{Directory, NodeId, SigningKey};
use crate::localize::{check_parcel, localize, Evidence, FailureRecord, Report, Verdict};

/// Something the sender did that the simulation must act on or record.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Control {
    /// Clear the sender's ledgers and confirmation count and halt until the
    /// transmission ends.
    Eliminated { verdict: Verdict },
    Removed { node: NodeId, failed_tx: u64 },
    /// Every report arrived but no inequality singled out a node.
    NoVerdict { failed_tx: u64 },
}

/// End-of-transmission decision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub tx: u64,
    pub reason: Option<Reason>,
    /// Nodes blacklisted by this failure.
    pub blacklisted: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct SenderControl {
    pub n: usize,
    pub key: SigningKey,
    pub bb: BroadcastBuffer,
    pub bl: BTreeMap<NodeId, u64>,
    pub en: BTreeSet<NodeId>,
    pub records: BTreeMap<u64, FailureRecord>,
    pub reports: BTreeMap<u64, BTreeMap<NodeId, Report>>,
    pub claims: BTreeSet<(NodeId, NodeId, u64)>,
    /// End-of-transmission parcel from the receiver: (decoded, duplicate).
    pub theta: Option<(bool, Option<u32>)>,
    pub halted: bool,
    /// Participants of the current transmission, sender included.
    pub participants: BTreeSet<NodeId>,
    pub pending_ack: BTreeMap<NodeId, u64>,
    pub requests: BTreeMap<NodeId, (NodeId, StatusIndex)>,
}

impl SenderControl {
    /// Control state at the start of transmission 1, with its header queued.
    pub fn new(n: usize, key: SigningKey) -> Self {
        let mut s = SenderControl {
            n,
            key,
            bb: BroadcastBuffer::default(),
            bl: BTreeMap::new(),
            en: BTreeSet::new(),
            records: BTreeMap::new(),
            reports: BTreeMap::new(),
            claims: BTreeSet::new(),
            theta: None,
            halted: false,
            participants: (0..n).collect(),
            pending_ack: BTreeMap::new(),
            requests: BTreeMap::new(),
        };
        s.queue_header(1, None);
        s
    }

    fn sign_add(&mut self, p: Parcel) {
        self.bb.add(Bp::new(self.key.sign(p)), None);
    }

    /// Queue the start-of-transmission parcels for `tx` from current state.
    fn queue_header(&mut self, tx: u64, reason: Option<Reason>) {
        self.bb.clear();
        self.sign_add(Parcel::Omega {
            eliminated: self.en.len(),
            blacklisted: self.bl.len(),
            failed: self.records.len(),
            reason,
            tx,
        });
        for node in self.en.clone() {
            self.sign_add(Parcel::Eliminated { node, tx });
        }
        for (f, r) in self.records.clone() {
            self.sign_add(Parcel::Failure { failed_tx: f, reason: r.reason, tx });
        }
        for (node, since) in self.bl.clone() {
            self.sign_add(Parcel::Blacklisted { node, since, tx });
        }
        self.participants = (0..self.n).filter(|x| !self.en.contains(x) && !self.bl.contains_key(x)).collect();
    }

    /// Packet-transfer gate towards `peer`.
    pub fn okay(&self, peer: NodeId, tx: u64) -> bool {
        !self.halted && !self.bl.contains_key(&peer) && !self.en.contains(&peer) && bb_allows(&self.bb, tx, peer)
    }

    pub fn choose(&self, peer: NodeId) -> Option<Bp> {
        if self.halted {
            return None;
        }
        self.bb.choose(peer, self.requests.get(&peer).copied())
    }

    fn missing(&self, node: NodeId, failed_tx: u64) -> Option<StatusIndex> {
        let record = self.records.get(&failed_tx)?;
        let have = self.reports.get(&failed_tx).and_then(|r| r.get(&node));
        report_indices(node, self.n, &record.eliminated, &record.reason)
            .into_iter()
            .find(|i| have.is_none_or(|h| !h.contains_key(i)))
    }

    pub fn request(&self, peer: NodeId) -> Option<(NodeId, StatusIndex)> {
        if let Some(&since) = self.bl.get(&peer) {
            if let Some(i) = self.missing(peer, since) {
                return Some((peer, i));
            }
        }
        for &(holder, target, f) in &self.claims {
            if holder == peer && self.bl.get(&target) == Some(&f) {
                if let Some(i) = self.missing(target, f) {
                    return Some((target, i));
                }
            }
        }
        None
    }

    /// Stage-2 receipt of a parcel. Returns whether it is confirmed back and
    /// any control actions taken.
    pub fn receive(&mut self, bp: Bp, dir: &Directory, tx: u64) -> (bool, Vec<Control>) {
        let mut out = Vec::new();
        if self.halted || !dir.check(bp.signed.as_ref()) {
            return (false, out);
        }
        let signer = bp.originator();
        match bp.parcel().clone() {
            Parcel::Eot { decoded, dup, tx: t } => {
                if signer != self.n - 1 || t != tx {
                    return (false, out);
                }
                self.theta = Some((decoded, dup));
            }
            Parcel::Knowledge { holder, target, failed_tx } => {
                if signer != holder {
                    return (false, out);
                }
                if self.bl.get(&target) == Some(&failed_tx) {
                    self.claims.insert((holder, target, failed_tx));
                }
            }
            Parcel::Status { node, failed_tx, index, body } => {
                if signer != node || self.bl.get(&node) != Some(&failed_tx) {
                    return (false, out);
                }
                let record = self.records.get(&failed_tx).expect("blacklisted nodes have a failure record");
                if let Err(detail) = check_parcel(record, self.n, node, &index, &body, dir) {
                    let verdict = Verdict {
                        node,
                        failed_tx,
                        evidence: Evidence::Malformed { index: format!("{index:?}"), detail },
                        inequality: "status parcel fails validation".into(),
                    };
                    out.push(self.eliminate(verdict, tx));
                    return (true, out);
                }
                self.reports.entry(failed_tx).or_default().entry(node).or_default().entry(index).or_insert(body);
                if self.missing(node, failed_tx).is_none() {
                    self.sign_add(Parcel::Removal { node, tx });
                    self.bl.remove(&node);
                    self.claims.retain(|c| c.1 != node);
                    out.push(Control::Removed { node, failed_tx });
                    if let Some(c) = self.try_localize(failed_tx, tx) {
                        out.push(c);
                    }
                }
            }
            _ => return (false, out),
        }
        (true, out)
    }

    fn try_localize(&mut self, failed_tx: u64, tx: u64) -> Option<Control> {
        let record = self.records.get(&failed_tx)?;
        let complete = record.participants.iter().filter(|&&x| x != 0).all(|&x| self.missing(x, failed_tx).is_none());
        if !complete {
            return None;
        }
        let reports = self.reports.remove(&failed_tx).unwrap_or_default();
        let record = self.records.remove(&failed_tx).expect("checked above");
        match localize(&record, self.n, &reports) {
            Some(v) => Some(self.eliminate(v, tx)),
            None => Some(Control::NoVerdict { failed_tx }),
        }
    }

    /// Eliminate a node mid-transmission: forget all failure state, queue
    /// the next header and halt.
    fn eliminate(&mut self, verdict: Verdict, tx: u64) -> Control {
        self.en.insert(verdict.node);
        self.bl.clear();
        self.records.clear();
        self.reports.clear();
        self.claims.clear();
        self.theta = None;
        self.queue_header(tx + 1, None);
        self.halted = true;
        Control::Eliminated { verdict }
    }

    /// End of transmission `tx`: classify it and queue the next header.
    /// `confirmed` is the number of insertions the sender saw confirmed and
    /// `ledgers` its outgoing ledgers. Returns `None` when the sender was
    /// halted.
    pub fn end_transmission(
        &mut self,
        tx: u64,
        confirmed: u64,
        d: u64,
        ledgers: &BTreeMap<NodeId, EdgeLedger>,
    ) -> Option<Outcome> {
        self.pending_ack.clear();
        self.requests.clear();
        let theta = self.theta.take();
        if self.halted {
            self.halted = false;
            return None;
        }
        let reason = match theta {
            Some((true, _)) => None,
            Some((false, Some(p))) => Some(Reason::F4(p)),
            _ if confirmed < d => Some(Reason::F2),
            _ => Some(Reason::F3),
        };
        let mut blacklisted = Vec::new();
        if let Some(reason) = reason {
            let record = FailureRecord {
                failed_tx: tx,
                reason,
                participants: self.participants.clone(),
                eliminated: self.en.clone(),
                sender_edges: ledgers.clone(),
            };
            for &x in self.participants.iter().filter(|&&x| x != 0) {
                self.bl.insert(x, tx);
                blacklisted.push(x);
            }
            self.records.insert(tx, record);
        }
        self.queue_header(tx + 1, reason);
        Some(Outcome { tx, reason, blacklisted })
    }

    /// Parcels held in the sender's database.
    pub fn db_size(&self) -> usize {
        let statuses: usize = self.reports.values().flat_map(|r| r.values()).map(|r| r.len()).sum();
        statuses + self.claims.len() + usize::from(self.theta.is_some()) + self.records.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth_proto::parcel::{EdgeValues, Side, StatusBody};
    use crate::crypto::{keygen, Backend};

    #[test]
    fn failure_blacklists_and_reports_remove() {
        let (keys, dir) = keygen(&[0, 1, 2, 3], Backend::Ledger, 0).unwrap();
        let mut s = SenderControl::new(4, keys[&0].signing.clone());
        assert_eq!(s.bb.len(), 1);
        let out = s.end_transmission(1, 10, 1024, &BTreeMap::new()).unwrap();
        assert_eq!(out.reason, Some(Reason::F2));
        assert_eq!(out.blacklisted, vec![1, 2, 3]);
        // header, one failure, three blacklist entries
        assert_eq!(s.bb.len(), 5);
        assert!(!s.okay(1, 2));
        let pot = |s2, s3| Some(Side { values: EdgeValues::Potential { s2, s3 }, proof: None });
        let mut controls = Vec::new();
        for b in [0, 2, 3] {
            let out = (b != 0).then(|| pot(0, 0)).flatten();
            let inn = (b != 3).then(|| pot(0, 0)).flatten();
            let p = Parcel::Status { node: 1, failed_tx: 1, index: StatusIndex::Peer(b), body: StatusBody::Edge { out, inn } };
            let (ok, c) = s.receive(Bp::new(keys[&1].signing.sign(p)), &dir, 2);
            assert!(ok);
            controls.extend(c);
        }
        assert!(controls.is_empty());
        assert_eq!(s.request(1), Some((1, StatusIndex::Own)));
        let p = Parcel::Status { node: 1, failed_tx: 1, index: StatusIndex::Own, body: StatusBody::Own { sig_self: 0 } };
        let (_, c) = s.receive(Bp::new(keys[&1].signing.sign(p)), &dir, 2);
        assert_eq!(c, vec![Control::Removed { node: 1, failed_tx: 1 }]);
        assert!(!s.bl.contains_key(&1));
    }

    #[test]
    fn malformed_status_eliminates_and_halts() {
        let (keys, dir) = keygen(&[0, 1, 2, 3], Backend::Ledger, 0).unwrap();
        let mut s = SenderControl::new(4, keys[&0].signing.clone());
        s.end_transmission(1, 1024, 1024, &BTreeMap::new());
        let bad = Parcel::Status {
            node: 2,
            failed_tx: 1,
            index: StatusIndex::Peer(1),
            body: StatusBody::Edge { out: Some(Side { values: EdgeValues::Flow { s1: 9 }, proof: None }), inn: None },
        };
        let (_, c) = s.receive(Bp::new(keys[&2].signing.sign(bad)), &dir, 2);
        assert!(matches!(&c[..], [Control::Eliminated { verdict }] if verdict.node == 2));
        assert!(s.halted && s.bl.is_empty() && s.records.is_empty());
        assert!(s.choose(1).is_none());
        // halted transmissions are not classified
        assert_eq!(s.end_transmission(2, 0, 1024, &BTreeMap::new()), None);
        assert!(matches!(s.bb.entries[0].bp.parcel(), Parcel::Omega { eliminated: 1, blacklisted: 0, tx: 3, .. }));
        assert_eq!(s.participants, [0, 1, 3].into_iter().collect());
    }

    #[test]
    fn classification() {
        let (keys, _) = keygen(&[0, 1, 2, 3], Backend::Ledger, 0).unwrap();
        let mut s = SenderControl::new(4, keys[&0].signing.clone());
        s.theta = Some((true, None));
        assert_eq!(s.end_transmission(1, 0, 1024, &BTreeMap::new()).unwrap().reason, None);
        s.theta = Some((false, Some(5)));
        assert_eq!(s.end_transmission(2, 1024, 1024, &BTreeMap::new()).unwrap().reason, Some(Reason::F4(5)));
        assert!(s.participants.len() == 1);
        assert_eq!(s.end_transmission(3, 1024, 1024, &BTreeMap::new()).unwrap().reason, Some(Reason::F3));
        assert!(s.end_transmission(3, 1024, 1024, &BTreeMap::new()).unwrap().blacklisted.is_empty());
    }
}
