//! Broadcast buffer and the broadcast state of internal nodes and the
//! receiver: parcel acceptance, relay priority, requests and gating.

use std::collections::{BTreeMap, BTreeSet};

use super::parcel::{body_matches, report_indices, Bp, Parcel, Reason, StatusIndex};
use crate::crypto::{Directory, NodeId, SigningKey};

#[derive(Clone, Debug)]
pub struct Entry {
    pub bp: Bp,
    /// Peers this parcel has crossed an edge with.
    pub passed: BTreeSet<NodeId>,
    /// Insertion order, for oldest-first selection.
    pub seq: u64,
}

/// Parcels held for relay, each with its per-edge markings.
#[derive(Clone, Debug, Default)]
pub struct BroadcastBuffer {
    pub entries: Vec<Entry>,
    seq: u64,
}

impl BroadcastBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Entry> {
        self.entries.iter().find(|e| e.bp.id == id)
    }

    /// Add unless already held; mark `from` as passed either way.
    pub fn add(&mut self, bp: Bp, from: Option<NodeId>) -> bool {
        if let Some(e) = self.entries.iter_mut().find(|e| e.bp.id == bp.id) {
            e.passed.extend(from);
            return false;
        }
        self.seq += 1;
        self.entries.push(Entry { bp, passed: from.into_iter().collect(), seq: self.seq });
        true
    }

    pub fn mark(&mut self, id: u64, peer: NodeId) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.bp.id == id) {
            e.passed.insert(peer);
        }
    }

    pub fn retain(&mut self, f: impl Fn(&Parcel) -> bool) {
        self.entries.retain(|e| f(e.bp.parcel()));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Highest-priority parcel not yet passed to `peer`. A status parcel
    /// matching the peer's request outranks other status parcels.
    pub fn choose(&self, peer: NodeId, request: Option<(NodeId, StatusIndex)>) -> Option<Bp> {
        self.entries
            .iter()
            .filter(|e| !e.passed.contains(&peer))
            .min_by_key(|e| {
                let p = e.bp.parcel();
                let mut class = p.class();
                if let (Parcel::Status { node, index, .. }, Some(req)) = (p, request) {
                    if (*node, *index) == req {
                        class = 7;
                    }
                }
                (class, e.seq, e.bp.originator(), p.sub_key(), e.bp.id)
            })
            .map(|e| e.bp.clone())
    }
}

/// Something a parcel asks the owning node to do outside its broadcast state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    /// Clear signature ledgers and the re-shuffle counter.
    ClearLedgers,
    /// Clear packet buffers as well as ledgers.
    Wipe,
    /// Produce the node's own status report for a failed transmission.
    Report { failed_tx: u64, reason: Reason },
}

/// Broadcast state of an internal node or the receiver.
#[derive(Clone, Debug)]
pub struct Board {
    pub me: NodeId,
    pub n: usize,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub key: SigningKey,
    pub bb: BroadcastBuffer,
    pub bl: BTreeMap<NodeId, u64>,
    pub en: BTreeSet<NodeId>,
    /// Knowledge claims heard from neighbours: (holder, target, failed_tx).
    pub claims: BTreeSet<(NodeId, NodeId, u64)>,
    pub reported: BTreeSet<u64>,
    /// Parcel accepted from each peer in the last stage 2, to confirm.
    pub pending_ack: BTreeMap<NodeId, u64>,
    /// Latest request from each peer.
    pub requests: BTreeMap<NodeId, (NodeId, StatusIndex)>,
}

/// Counts of start-of-transmission parcels held for one transmission.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SotCounts {
    pub eliminated: usize,
    pub failures: usize,
    pub blacklisted: usize,
}

/// Header fields: (eliminated, blacklisted, failed).
pub type OmegaHeader = (usize, usize, usize);

pub fn omega_of(bb: &BroadcastBuffer, tx: u64) -> Option<OmegaHeader> {
    bb.entries.iter().find_map(|e| match e.bp.parcel() {
        Parcel::Omega { eliminated, blacklisted, failed, tx: t, .. } if *t == tx => Some((*eliminated, *blacklisted, *failed)),
        _ => None,
    })
}

pub fn sot_counts(bb: &BroadcastBuffer, tx: u64) -> SotCounts {
    let mut c = SotCounts::default();
    for e in &bb.entries {
        match e.bp.parcel() {
            Parcel::Eliminated { tx: t, .. } if *t == tx => c.eliminated += 1,
            Parcel::Failure { tx: t, .. } if *t == tx => c.failures += 1,
            Parcel::Blacklisted { tx: t, .. } if *t == tx => c.blacklisted += 1,
            _ => {}
        }
    }
    c
}

pub fn sot_complete(bb: &BroadcastBuffer, tx: u64) -> bool {
    match omega_of(bb, tx) {
        None => false,
        Some((e, b, f)) => {
            let c = sot_counts(bb, tx);
            c.eliminated >= e && c.failures >= f && c.blacklisted >= b
        }
    }
}

/// Shared gating: the full header set for `tx` is held and has crossed the
/// edge to `peer`, and no blacklist change is still owed to `peer`.
pub fn bb_allows(bb: &BroadcastBuffer, tx: u64, peer: NodeId) -> bool {
    if !sot_complete(bb, tx) {
        return false;
    }
    bb.entries.iter().all(|e| {
        let owed = match e.bp.parcel() {
            p if p.sot_tx() == Some(tx) => true,
            Parcel::Eot { .. } | Parcel::Removal { .. } | Parcel::Knowledge { .. } => true,
            _ => false,
        };
        !owed || e.passed.contains(&peer)
    })
}

impl Board {
    pub fn new(me: NodeId, n: usize, key: SigningKey) -> Self {
        Board {
            me,
            n,
            sender: 0,
            receiver: n - 1,
            key,
            bb: BroadcastBuffer::default(),
            bl: BTreeMap::new(),
            en: BTreeSet::new(),
            claims: BTreeSet::new(),
            reported: BTreeSet::new(),
            pending_ack: BTreeMap::new(),
            requests: BTreeMap::new(),
        }
    }

    pub fn has_full_sot(&self, tx: u64) -> bool {
        sot_complete(&self.bb, tx)
    }

    /// Packet-transfer gate for the edge shared with `peer`.
    pub fn okay(&self, peer: NodeId, tx: u64) -> bool {
        !self.bl.contains_key(&self.me)
            && !self.bl.contains_key(&peer)
            && !self.en.contains(&peer)
            && bb_allows(&self.bb, tx, peer)
    }

    fn reason_for(&self, failed_tx: u64, tx: u64) -> Option<Reason> {
        self.bb.entries.iter().find_map(|e| match e.bp.parcel() {
            Parcel::Failure { failed_tx: f, reason, tx: t } if *f == failed_tx && *t == tx => Some(*reason),
            _ => None,
        })
    }

    fn status_held(&self, node: NodeId, failed_tx: u64) -> BTreeSet<StatusIndex> {
        self.bb
            .entries
            .iter()
            .filter_map(|e| match e.bp.parcel() {
                Parcel::Status { node: x, failed_tx: f, index, .. } if *x == node && *f == failed_tx => Some(*index),
                _ => None,
            })
            .collect()
    }

    /// First report index of `node` for `failed_tx` not held, if any.
    fn missing(&self, node: NodeId, failed_tx: u64, tx: u64) -> Option<StatusIndex> {
        let reason = self.reason_for(failed_tx, tx)?;
        let held = self.status_held(node, failed_tx);
        report_indices(node, self.n, &self.en, &reason).into_iter().find(|i| !held.contains(i))
    }

    /// Request to send to `peer` in stage 1.
    pub fn request(&self, peer: NodeId, tx: u64) -> Option<(NodeId, StatusIndex)> {
        if let Some(&since) = self.bl.get(&peer) {
            if peer != self.me {
                if let Some(i) = self.missing(peer, since, tx) {
                    return Some((peer, i));
                }
            }
        }
        for &(holder, target, failed_tx) in &self.claims {
            if holder == peer && self.bl.get(&target) == Some(&failed_tx) && target != self.me {
                if let Some(i) = self.missing(target, failed_tx, tx) {
                    return Some((target, i));
                }
            }
        }
        None
    }

    pub fn choose(&self, peer: NodeId) -> Option<Bp> {
        self.bb.choose(peer, self.requests.get(&peer).copied())
    }

    fn valid_originator(&self, p: &Parcel, signer: NodeId) -> bool {
        match p {
            Parcel::Eot { .. } => signer == self.receiver,
            Parcel::Omega { .. }
            | Parcel::Eliminated { .. }
            | Parcel::Failure { .. }
            | Parcel::Blacklisted { .. }
            | Parcel::Removal { .. } => signer == self.sender,
            Parcel::Knowledge { holder, .. } => signer == *holder,
            Parcel::Status { node, .. } => signer == *node,
        }
    }

    /// Whether a header parcel arrives in order: header first, then all
    /// eliminations, then all failures, then blacklist entries.
    fn in_order(&self, p: &Parcel, tx: u64) -> bool {
        let Some((e, _, f)) = omega_of(&self.bb, tx) else {
            return matches!(p, Parcel::Omega { .. });
        };
        let c = sot_counts(&self.bb, tx);
        match p {
            Parcel::Omega { .. } => true,
            Parcel::Eliminated { .. } => true,
            Parcel::Failure { .. } => c.eliminated >= e,
            Parcel::Blacklisted { .. } => c.eliminated >= e && c.failures >= f,
            _ => false,
        }
    }

    /// Drop status data about `node` for transmissions other than `keep`.
    fn prune(&mut self, node: NodeId, keep: Option<u64>) {
        let me = self.me;
        self.claims.retain(|&(_, target, f)| target != node || Some(f) == keep);
        self.bb.retain(|p| match p {
            Parcel::Knowledge { holder, target, failed_tx } => !(*holder == me && *target == node && Some(*failed_tx) != keep),
            Parcel::Status { node: x, failed_tx, .. } => !(*x == node && Some(*failed_tx) != keep),
            _ => true,
        });
    }

    /// Stage-2 receipt of a parcel from `from`. Returns whether the parcel
    /// is confirmed back, plus effects for the owning node.
    pub fn receive(&mut self, from: NodeId, bp: Bp, dir: &Directory, tx: u64) -> (bool, Vec<Effect>) {
        let mut effects = Vec::new();
        let p = bp.parcel().clone();
        if !dir.check(bp.signed.as_ref()) || !self.valid_originator(&p, bp.originator()) {
            return (false, effects);
        }
        if let Some(t) = p.sot_tx() {
            if t != tx {
                return (false, effects);
            }
            if !self.has_full_sot(tx) && !self.in_order(&p, tx) {
                return (false, effects);
            }
        } else if !self.has_full_sot(tx) {
            return (false, effects);
        }
        match &p {
            Parcel::Eot { tx: t, .. } => {
                if *t != tx {
                    return (false, effects);
                }
                self.bb.add(bp, Some(from));
            }
            Parcel::Omega { blacklisted, .. } => {
                if self.bb.add(bp, Some(from)) && *blacklisted == 0 {
                    effects.push(Effect::ClearLedgers);
                }
            }
            Parcel::Eliminated { node, .. } => {
                self.bb.add(bp, Some(from));
                if self.en.insert(*node) {
                    effects.push(Effect::Wipe);
                    self.bb.retain(|q| q.sot_tx() == Some(tx));
                    self.bl.clear();
                    self.claims.clear();
                    self.reported.clear();
                    self.requests.clear();
                }
            }
            Parcel::Failure { .. } => {
                self.bb.add(bp, Some(from));
            }
            Parcel::Blacklisted { node, since, .. } => {
                let (node, since) = (*node, *since);
                if self.bb.add(bp, Some(from)) {
                    self.bl.insert(node, since);
                    self.prune(node, Some(since));
                    if node == self.me && !self.reported.contains(&since) {
                        if let Some(reason) = self.reason_for(since, tx) {
                            self.reported.insert(since);
                            effects.push(Effect::Report { failed_tx: since, reason });
                        }
                    }
                    let (_, b, _) = omega_of(&self.bb, tx).expect("header held");
                    if sot_counts(&self.bb, tx).blacklisted == b {
                        effects.push(Effect::ClearLedgers);
                    }
                }
            }
            Parcel::Removal { node, tx: t } => {
                if *t != tx {
                    return (false, effects);
                }
                let node = *node;
                if self.bb.add(bp, Some(from)) {
                    self.bl.remove(&node);
                    self.prune(node, None);
                }
            }
            Parcel::Knowledge { holder, target, failed_tx } => {
                if self.bl.get(target) == Some(failed_tx) {
                    self.claims.insert((*holder, *target, *failed_tx));
                }
            }
            Parcel::Status { node, failed_tx, index, body } => {
                let (node, failed_tx) = (*node, *failed_tx);
                if self.bl.get(&node) != Some(&failed_tx) {
                    return (false, effects);
                }
                let Some(reason) = self.reason_for(failed_tx, tx) else { return (false, effects) };
                let valid_index = report_indices(node, self.n, &self.en, &reason).contains(index);
                if !valid_index || !body_matches(index, body, &reason) {
                    return (false, effects);
                }
                if self.bb.add(bp, Some(from)) && node != self.me && self.missing(node, failed_tx, tx).is_none() {
                    let claim = Parcel::Knowledge { holder: self.me, target: node, failed_tx };
                    self.bb.add(Bp::new(self.key.sign(claim)), None);
                }
            }
        }
        (true, effects)
    }

    /// Add the node's own signed report parcels.
    pub fn add_own(&mut self, parcels: Vec<Parcel>) {
        for p in parcels {
            self.bb.add(Bp::new(self.key.sign(p)), None);
        }
    }

    /// Transmission boundary: drop the end-of-transmission parcel, the
    /// header broadcast, removals and the blacklist.
    pub fn end_of_transmission(&mut self) {
        self.bb.retain(|p| !matches!(p, Parcel::Eot { .. } | Parcel::Removal { .. }) && p.sot_tx().is_none());
        self.bl.clear();
        self.pending_ack.clear();
    }

    /// Parcels held, for memory accounting.
    pub fn held(&self) -> usize {
        self.bb.len()
    }
}
