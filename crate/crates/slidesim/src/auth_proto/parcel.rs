//! Broadcast parcels: end-of-transmission, start-of-transmission, blacklist
//! changes, knowledge claims and status-report parcels.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ledger::Proof;
use crate::crypto::{Canonical, NodeId, Signed};

/// Why a transmission failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reason {
    /// Sender inserted fewer than D packets.
    F2,
    /// Sender inserted D packets, no duplicate reported.
    F3,
    /// The receiver saw this fragment twice.
    F4(u32),
}

impl Reason {
    /// Numeric code carried in the start-of-transmission header: the
    /// duplicate label for F4, 1 for F2, 2 for F3.
    pub fn code(&self) -> u64 {
        match self {
            Reason::F2 => 1,
            Reason::F3 => 2,
            Reason::F4(p) => *p as u64,
        }
    }

    pub fn same_kind(&self, other: &Reason) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

impl Canonical for Reason {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Reason::F2 => out.push(2),
            Reason::F3 => out.push(3),
            Reason::F4(p) => {
                out.push(4);
                p.encode(out);
            }
        }
    }
}

/// Position of a parcel inside a status report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatusIndex {
    /// The combined incoming and outgoing ledgers shared with this peer.
    Peer(NodeId),
    /// The node's own re-shuffle potential drop.
    Own,
}

impl Canonical for StatusIndex {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            StatusIndex::Peer(b) => {
                out.push(0);
                b.encode(out);
            }
            StatusIndex::Own => out.push(1),
        }
    }
}

/// Reason-specific ledger values reported for one side of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeValues {
    Potential { s2: i64, s3: i64 },
    Flow { s1: i64 },
    Dup { sp: i64 },
}

impl EdgeValues {
    pub fn is_zero(&self) -> bool {
        match *self {
            EdgeValues::Potential { s2, s3 } => s2 == 0 && s3 == 0,
            EdgeValues::Flow { s1 } => s1 == 0,
            EdgeValues::Dup { sp } => sp == 0,
        }
    }

    pub fn matches(&self, reason: &Reason) -> bool {
        matches!(
            (self, reason),
            (EdgeValues::Potential { .. }, Reason::F2) | (EdgeValues::Flow { .. }, Reason::F3) | (EdgeValues::Dup { .. }, Reason::F4(_))
        )
    }
}

impl Canonical for EdgeValues {
    fn encode(&self, out: &mut Vec<u8>) {
        match *self {
            EdgeValues::Potential { s2, s3 } => {
                out.push(0);
                s2.encode(out);
                s3.encode(out);
            }
            EdgeValues::Flow { s1 } => {
                out.push(1);
                s1.encode(out);
            }
            EdgeValues::Dup { sp } => {
                out.push(2);
                sp.encode(out);
            }
        }
    }
}

/// One side of an edge in a status report, with the counterpart-signed
/// message backing it (absent when nothing crossed the edge).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Side {
    pub values: EdgeValues,
    pub proof: Option<Proof>,
}

impl Canonical for Side {
    fn encode(&self, out: &mut Vec<u8>) {
        self.values.encode(out);
        self.proof.encode(out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StatusBody {
    Edge { out: Option<Side>, inn: Option<Side> },
    Own { sig_self: i64 },
}

impl Canonical for StatusBody {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            StatusBody::Edge { out: o, inn } => {
                out.push(0);
                o.encode(out);
                inn.encode(out);
            }
            StatusBody::Own { sig_self } => {
                out.push(1);
                sig_self.encode(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Parcel {
    /// Receiver's end-of-transmission parcel.
    Eot { decoded: bool, dup: Option<u32>, tx: u64 },
    /// Header of the start-of-transmission broadcast.
    Omega { eliminated: usize, blacklisted: usize, failed: usize, reason: Option<Reason>, tx: u64 },
    Eliminated { node: NodeId, tx: u64 },
    Failure { failed_tx: u64, reason: Reason, tx: u64 },
    Blacklisted { node: NodeId, since: u64, tx: u64 },
    Removal { node: NodeId, tx: u64 },
    /// `holder` has every parcel of `target`'s report for `failed_tx`.
    Knowledge { holder: NodeId, target: NodeId, failed_tx: u64 },
    Status { node: NodeId, failed_tx: u64, index: StatusIndex, body: StatusBody },
}

impl Canonical for Parcel {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"bp");
        match self {
            Parcel::Eot { decoded, dup, tx } => {
                out.push(0);
                decoded.encode(out);
                dup.encode(out);
                tx.encode(out);
            }
            Parcel::Omega { eliminated, blacklisted, failed, reason, tx } => {
                out.push(1);
                eliminated.encode(out);
                blacklisted.encode(out);
                failed.encode(out);
                reason.encode(out);
                tx.encode(out);
            }
            Parcel::Eliminated { node, tx } => {
                out.push(2);
                node.encode(out);
                tx.encode(out);
            }
            Parcel::Failure { failed_tx, reason, tx } => {
                out.push(3);
                failed_tx.encode(out);
                reason.encode(out);
                tx.encode(out);
            }
            Parcel::Blacklisted { node, since, tx } => {
                out.push(4);
                node.encode(out);
                since.encode(out);
                tx.encode(out);
            }
            Parcel::Removal { node, tx } => {
                out.push(5);
                node.encode(out);
                tx.encode(out);
            }
            Parcel::Knowledge { holder, target, failed_tx } => {
                out.push(6);
                holder.encode(out);
                target.encode(out);
                failed_tx.encode(out);
            }
            Parcel::Status { node, failed_tx, index, body } => {
                out.push(7);
                node.encode(out);
                failed_tx.encode(out);
                index.encode(out);
                body.encode(out);
            }
        }
    }
}

impl Parcel {
    /// Transmission stamp of start-of-transmission parcels.
    pub fn sot_tx(&self) -> Option<u64> {
        match self {
            Parcel::Omega { tx, .. } | Parcel::Eliminated { tx, .. } | Parcel::Failure { tx, .. } | Parcel::Blacklisted { tx, .. } => {
                Some(*tx)
            }
            _ => None,
        }
    }

    /// Priority class: lower goes first.
    pub fn class(&self) -> u8 {
        match self {
            Parcel::Eot { .. } => 0,
            Parcel::Omega { .. } => 1,
            Parcel::Eliminated { .. } => 2,
            Parcel::Failure { .. } => 3,
            Parcel::Blacklisted { .. } => 4,
            Parcel::Removal { .. } => 5,
            Parcel::Knowledge { .. } => 6,
            Parcel::Status { .. } => 8,
        }
    }

    /// Deterministic tie-break inside a class.
    pub fn sub_key(&self) -> (u64, u64) {
        match self {
            Parcel::Eliminated { node, .. } | Parcel::Blacklisted { node, .. } | Parcel::Removal { node, .. } => (*node as u64, 0),
            Parcel::Failure { failed_tx, .. } => (*failed_tx, 0),
            Parcel::Knowledge { target, failed_tx, .. } => (*target as u64, *failed_tx),
            Parcel::Status { node, index, .. } => (
                *node as u64,
                match index {
                    StatusIndex::Peer(b) => *b as u64,
                    StatusIndex::Own => u64::MAX,
                },
            ),
            _ => (0, 0),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Parcel::Eot { .. } => "eot",
            Parcel::Omega { .. } => "sot-header",
            Parcel::Eliminated { .. } => "sot-eliminated",
            Parcel::Failure { .. } => "sot-failure",
            Parcel::Blacklisted { .. } => "sot-blacklisted",
            Parcel::Removal { .. } => "removal",
            Parcel::Knowledge { .. } => "knowledge",
            Parcel::Status { .. } => "status",
        }
    }
}

/// A signed parcel with its content identity.
#[derive(Clone, Debug)]
pub struct Bp {
    pub id: u64,
    pub signed: Arc<Signed<Parcel>>,
}

impl Bp {
    pub fn new(signed: Signed<Parcel>) -> Self {
        let mut h = Sha256::new();
        h.update(signed.value.to_canonical());
        h.update((signed.signer as u64).to_le_bytes());
        let id = u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"));
        Bp { id, signed: Arc::new(signed) }
    }

    pub fn parcel(&self) -> &Parcel {
        &self.signed.value
    }

    pub fn originator(&self) -> NodeId {
        self.signed.signer
    }
}

impl PartialEq for Bp {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Bp {}

/// The indices a complete status report must cover.
pub fn report_indices(node: NodeId, n: usize, eliminated: &std::collections::BTreeSet<NodeId>, reason: &Reason) -> Vec<StatusIndex> {
    let mut v: Vec<StatusIndex> =
        (0..n).filter(|&b| b != node && !eliminated.contains(&b)).map(StatusIndex::Peer).collect();
    if matches!(reason, Reason::F2) {
        v.push(StatusIndex::Own);
    }
    v
}

/// Structural check an internal node applies before relaying a status
/// parcel: the body must carry values of the failure's kind.
pub fn body_matches(index: &StatusIndex, body: &StatusBody, reason: &Reason) -> bool {
    match (index, body) {
        (StatusIndex::Own, StatusBody::Own { .. }) => matches!(reason, Reason::F2),
        (StatusIndex::Peer(_), StatusBody::Edge { out, inn }) => {
            out.as_ref().is_none_or(|s| s.values.matches(reason)) && inn.as_ref().is_none_or(|s| s.values.matches(reason))
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Backend};

    #[test]
    fn identity_ignores_nothing_in_content() {
        let (keys, _) = keygen(&[0, 1], Backend::Ledger, 0).unwrap();
        let a = Bp::new(keys[&0].signing.sign(Parcel::Removal { node: 1, tx: 3 }));
        let b = Bp::new(keys[&0].signing.sign(Parcel::Removal { node: 1, tx: 3 }));
        let c = Bp::new(keys[&0].signing.sign(Parcel::Removal { node: 1, tx: 4 }));
        let d = Bp::new(keys[&1].signing.sign(Parcel::Removal { node: 1, tx: 3 }));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn reason_codes() {
        assert_eq!(Reason::F2.code(), 1);
        assert_eq!(Reason::F3.code(), 2);
        assert_eq!(Reason::F4(17).code(), 17);
        assert!(Reason::F4(1).same_kind(&Reason::F4(9)));
        assert!(!Reason::F2.same_kind(&Reason::F3));
    }

    #[test]
    fn indices_cover_live_peers() {
        let en = [2].into_iter().collect();
        assert_eq!(report_indices(1, 5, &en, &Reason::F3), vec![StatusIndex::Peer(0), StatusIndex::Peer(3), StatusIndex::Peer(4)]);
        assert_eq!(report_indices(1, 4, &Default::default(), &Reason::F2).len(), 4);
    }

    #[test]
    fn body_kind_check() {
        let side = |v| Some(Side { values: v, proof: None });
        let flow = StatusBody::Edge { out: side(EdgeValues::Flow { s1: 3 }), inn: None };
        assert!(body_matches(&StatusIndex::Peer(2), &flow, &Reason::F3));
        assert!(!body_matches(&StatusIndex::Peer(2), &flow, &Reason::F2));
        assert!(!body_matches(&StatusIndex::Own, &flow, &Reason::F3));
        assert!(body_matches(&StatusIndex::Own, &StatusBody::Own { sig_self: 0 }, &Reason::F2));
    }
}
