//! Sender-side fault localization: status-parcel validation, pairwise
//! consistency checks between edge endpoints, per-node sanity checks and
//! the reason-specific inequalities that single out one corrupt node.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::auth_proto::ledger::{EdgeLedger, Proof};
use crate::auth_proto::parcel::{body_matches, report_indices, EdgeValues, Reason, Side, StatusBody, StatusIndex};
use crate::crypto::{Directory, NodeId};

/// What the sender archived about a failed transmission.
#[derive(Clone, Debug)]
pub struct FailureRecord {
    pub failed_tx: u64,
    pub reason: Reason,
    /// Nodes neither eliminated nor blacklisted when it started, sender included.
    pub participants: BTreeSet<NodeId>,
    pub eliminated: BTreeSet<NodeId>,
    /// The sender's outgoing ledgers at the end of the failed transmission.
    pub sender_edges: BTreeMap<NodeId, EdgeLedger>,
}

pub type Report = BTreeMap<StatusIndex, StatusBody>;

/// Evidence for an elimination.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// A validly signed status parcel that cannot come from an honest node.
    Malformed { index: String, detail: String },
    /// The out-side node's reported potential change is below what it signed.
    PotentialUnderReport { to: NodeId, signed: i64, reported: i64, slack: i64 },
    /// A sender neighbour claims more potential gain than it signed to the sender.
    PotentialOverReport { signed: i64, reported: i64, slack: i64 },
    /// Two endpoints of an edge disagree beyond one in-flight packet; the
    /// side with the older proof is blamed.
    EdgeMismatch { peer: NodeId, own: i64, other: i64, own_stamp: Option<i64>, other_stamp: Option<i64> },
    /// A node's own values are impossible for an honest node.
    NegativePotential { value: i64 },
    /// Potential gained beyond the round budget.
    PotentialBudget { lhs: i64, rhs: i64 },
    /// More current packets entered than left, beyond what buffers hold.
    FlowExcess { inflow: i64, outflow: i64, bound: i64 },
    /// A fragment copy left more often than it entered.
    DuplicateEmitted { fragment: u32, inflow: i64, outflow: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub node: NodeId,
    pub failed_tx: u64,
    pub evidence: Evidence,
    /// Human-readable instantiated inequality.
    pub inequality: String,
}

/// Node-level view of the reported values.
#[derive(Clone, Copy, Debug)]
struct SideView {
    values: EdgeValues,
    stamp: Option<i64>,
}

fn expect_side(side: &Option<Side>, present: bool, what: &str) -> Result<(), String> {
    match (side.is_some(), present) {
        (true, false) => Err(format!("{what} side reported for a non-existent edge")),
        (false, true) => Err(format!("{what} side missing")),
        _ => Ok(()),
    }
}

fn check_side(
    side: &Side,
    what: &str,
    peer: NodeId,
    record: &FailureRecord,
    outgoing: bool,
    dir: &Directory,
) -> Result<(), String> {
    if !side.values.matches(&record.reason) {
        return Err(format!("{what} side has values of the wrong kind"));
    }
    if side.values.is_zero() {
        return Ok(());
    }
    if !record.participants.contains(&peer) {
        return Err(format!("{what} side nonzero towards non-participant {peer}"));
    }
    let Some(proof) = &side.proof else {
        return Err(format!("{what} side nonzero without proof"));
    };
    if proof.signer() != peer {
        return Err(format!("{what} proof signed by {} instead of {peer}", proof.signer()));
    }
    match (proof, outgoing) {
        (Proof::Reply(_), true) | (Proof::Transfer(_), false) => {}
        _ => return Err(format!("{what} proof of the wrong message type")),
    }
    if !proof.verify(dir) {
        return Err(format!("{what} proof signature invalid"));
    }
    if proof.tx() != record.failed_tx {
        return Err(format!("{what} proof from transmission {} instead of {}", proof.tx(), record.failed_tx));
    }
    let consistent = match (side.values, record.reason) {
        (EdgeValues::Potential { s2, .. }, _) => s2 == proof.s2(),
        (EdgeValues::Flow { s1 }, _) => s1 == proof.s1(),
        (EdgeValues::Dup { sp }, Reason::F4(p)) => proof.sp() == Some((p, sp)),
        _ => false,
    };
    if !consistent {
        return Err(format!("{what} values disagree with proof"));
    }
    Ok(())
}

/// Validate one status parcel from `node`. Any error is grounds for
/// eliminating `node`, since the parcel carries its signature.
pub fn check_parcel(
    record: &FailureRecord,
    n: usize,
    node: NodeId,
    index: &StatusIndex,
    body: &StatusBody,
    dir: &Directory,
) -> Result<(), String> {
    let (sender, receiver) = (0, n - 1);
    if !report_indices(node, n, &record.eliminated, &record.reason).contains(index) {
        return Err(format!("index {index:?} not part of the report"));
    }
    if !body_matches(index, body, &record.reason) {
        return Err("body of the wrong kind".into());
    }
    if let (StatusIndex::Peer(peer), StatusBody::Edge { out, inn }) = (index, body) {
        let peer = *peer;
        let has_out = node != receiver && peer != sender;
        let has_in = node != sender && peer != receiver;
        expect_side(out, has_out, "out")?;
        expect_side(inn, has_in, "in")?;
        if let Some(s) = out {
            check_side(s, "out", peer, record, true, dir)?;
        }
        if let Some(s) = inn {
            check_side(s, "in", peer, record, false, dir)?;
        }
    }
    Ok(())
}

/// Reported values arranged by directed edge.
struct Tables {
    n: usize,
    reason: Reason,
    failed_tx: u64,
    nodes: BTreeSet<NodeId>,
    /// (from, to) -> the from-side view.
    out: BTreeMap<(NodeId, NodeId), SideView>,
    /// (from, to) -> the to-side view.
    inn: BTreeMap<(NodeId, NodeId), SideView>,
    own: BTreeMap<NodeId, i64>,
}

fn side_view(s: &Side) -> SideView {
    SideView { values: s.values, stamp: s.proof.as_ref().map(|p| p.stamp()) }
}

fn ledger_view(l: &EdgeLedger, reason: &Reason) -> SideView {
    match reason {
        Reason::F2 => SideView { values: EdgeValues::Potential { s2: l.s2, s3: l.s3 }, stamp: l.proof.as_ref().map(|p| p.stamp()) },
        Reason::F3 => SideView { values: EdgeValues::Flow { s1: l.s1 }, stamp: l.proof.as_ref().map(|p| p.stamp()) },
        Reason::F4(p) => SideView { values: EdgeValues::Dup { sp: l.sp_of(*p) }, stamp: l.sp_proof.get(p).map(|x| x.stamp()) },
    }
}

impl Tables {
    fn build(record: &FailureRecord, n: usize, reports: &BTreeMap<NodeId, Report>) -> Self {
        let mut t = Tables {
            n,
            reason: record.reason,
            failed_tx: record.failed_tx,
            nodes: record.participants.clone(),
            out: BTreeMap::new(),
            inn: BTreeMap::new(),
            own: BTreeMap::new(),
        };
        for (&peer, l) in &record.sender_edges {
            t.out.insert((0, peer), ledger_view(l, &record.reason));
        }
        for (&node, report) in reports {
            for (index, body) in report {
                match (index, body) {
                    (StatusIndex::Peer(b), StatusBody::Edge { out, inn }) => {
                        if let Some(s) = out {
                            t.out.insert((node, *b), side_view(s));
                        }
                        if let Some(s) = inn {
                            t.inn.insert((*b, node), side_view(s));
                        }
                    }
                    (StatusIndex::Own, StatusBody::Own { sig_self }) => {
                        t.own.insert(node, *sig_self);
                    }
                    _ => {}
                }
            }
        }
        t
    }

    fn two_n(&self) -> i64 {
        2 * self.n as i64
    }

    fn potential(v: Option<&SideView>) -> (i64, i64) {
        match v.map(|s| s.values) {
            Some(EdgeValues::Potential { s2, s3 }) => (s2, s3),
            _ => (0, 0),
        }
    }

    fn scalar(v: Option<&SideView>) -> i64 {
        match v.map(|s| s.values) {
            Some(EdgeValues::Flow { s1 }) => s1,
            Some(EdgeValues::Dup { sp }) => sp,
            _ => 0,
        }
    }

    fn verdict(&self, node: NodeId, evidence: Evidence, inequality: String) -> Verdict {
        Verdict { node, failed_tx: self.failed_tx, evidence, inequality }
    }

    /// Edges between participants, in id order.
    fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let (s, r) = (0, self.n - 1);
        let mut v = Vec::new();
        for &a in &self.nodes {
            for &b in &self.nodes {
                if a != b && a != r && b != s {
                    v.push((a, b));
                }
            }
        }
        v
    }

    fn pairwise(&self) -> Option<Verdict> {
        let slack = self.two_n();
        for (a, b) in self.edges() {
            let out = self.out.get(&(a, b));
            let inn = self.inn.get(&(a, b));
            match self.reason {
                Reason::F2 => {
                    let (_, a3) = Self::potential(out);
                    let (b2, b3) = Self::potential(inn);
                    if a != 0 && b2 > a3 + slack {
                        return Some(self.verdict(
                            a,
                            Evidence::PotentialUnderReport { to: b, signed: b2, reported: a3, slack },
                            format!("{b2} > {a3} + {slack}"),
                        ));
                    }
                    if a == 0 {
                        let (s2, _) = Self::potential(out);
                        if b3 - s2 > slack {
                            return Some(self.verdict(
                                b,
                                Evidence::PotentialOverReport { signed: s2, reported: b3, slack },
                                format!("{b3} - {s2} > {slack}"),
                            ));
                        }
                    }
                }
                Reason::F3 | Reason::F4(_) => {
                    let (av, bv) = (Self::scalar(out), Self::scalar(inn));
                    let d = bv - av;
                    if d != 0 && d != 1 {
                        let sa = out.and_then(|s| s.stamp);
                        let sb = inn.and_then(|s| s.stamp);
                        // None orders below every stamp
                        let blame_a = a != 0 && (b == 0 || sa <= sb);
                        let (node, peer, own, other, own_stamp, other_stamp) =
                            if blame_a { (a, b, av, bv, sa, sb) } else { (b, a, bv, av, sb, sa) };
                        return Some(self.verdict(
                            node,
                            Evidence::EdgeMismatch { peer, own, other, own_stamp, other_stamp },
                            format!("{bv} - {av} not in {{0, 1}}"),
                        ));
                    }
                }
            }
        }
        None
    }

    fn per_node(&self) -> Option<Verdict> {
        if !matches!(self.reason, Reason::F2) {
            return None;
        }
        for &a in self.nodes.iter().filter(|&&a| a != 0) {
            let own = self.own.get(&a).copied().unwrap_or(0);
            if own < 0 {
                return Some(self.verdict(a, Evidence::NegativePotential { value: own }, format!("{own} < 0")));
            }
            let gap: i64 = self
                .nodes
                .iter()
                .filter_map(|&b| self.inn.get(&(b, a)))
                .map(|s| {
                    let (s2, s3) = Self::potential(Some(s));
                    s2 - s3
                })
                .sum();
            if gap < 0 {
                return Some(self.verdict(a, Evidence::NegativePotential { value: gap }, format!("{gap} < 0")));
            }
        }
        None
    }

    fn pick(&self, mut found: Vec<(i64, Verdict)>) -> Option<Verdict> {
        found.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.node.cmp(&y.1.node)));
        found.into_iter().next().map(|(_, v)| v)
    }

    fn by_reason(&self) -> Option<Verdict> {
        let n = self.n as i64;
        let internal: Vec<NodeId> = self.nodes.iter().copied().filter(|&a| a != 0 && a != self.n - 1).collect();
        let mut found = Vec::new();
        for &a in &internal {
            match self.reason {
                Reason::F2 => {
                    let gained: i64 = self.nodes.iter().filter_map(|&b| self.inn.get(&(b, a))).map(|s| Self::potential(Some(s)).1).sum();
                    let lhs = 4 * n * n * n - 4 * n * n + gained;
                    let own = self.own.get(&a).copied().unwrap_or(0);
                    let signed_out: i64 =
                        self.nodes.iter().filter_map(|&b| self.inn.get(&(a, b))).map(|s| Self::potential(Some(s)).0).sum();
                    let rhs = own + signed_out;
                    if lhs < rhs {
                        found.push((
                            rhs - lhs,
                            self.verdict(a, Evidence::PotentialBudget { lhs, rhs }, format!("{lhs} < {own} + {signed_out}")),
                        ));
                    }
                }
                Reason::F3 => {
                    let inflow: i64 = self.nodes.iter().map(|&b| Self::scalar(self.inn.get(&(b, a)))).sum();
                    let outflow: i64 = self.nodes.iter().map(|&b| Self::scalar(self.out.get(&(a, b)))).sum();
                    let bound = 4 * n * n - 8 * n;
                    if inflow - outflow > bound {
                        found.push((
                            inflow - outflow - bound,
                            self.verdict(
                                a,
                                Evidence::FlowExcess { inflow, outflow, bound },
                                format!("{inflow} - {outflow} > {bound}"),
                            ),
                        ));
                    }
                }
                Reason::F4(p) => {
                    let outflow: i64 = self.nodes.iter().map(|&b| Self::scalar(self.inn.get(&(a, b)))).sum();
                    let inflow: i64 = self.nodes.iter().map(|&b| Self::scalar(self.inn.get(&(b, a)))).sum();
                    if outflow - inflow >= 1 {
                        found.push((
                            outflow - inflow,
                            self.verdict(
                                a,
                                Evidence::DuplicateEmitted { fragment: p, inflow, outflow },
                                format!("{outflow} - {inflow} >= 1"),
                            ),
                        ));
                    }
                }
            }
        }
        self.pick(found)
    }
}

/// Identify a corrupt node from complete, well-formed reports of every
/// participant other than the sender. `None` means no verdict.
pub fn localize(record: &FailureRecord, n: usize, reports: &BTreeMap<NodeId, Report>) -> Option<Verdict> {
    let t = Tables::build(record, n, reports);
    t.pairwise().or_else(|| t.per_node()).or_else(|| t.by_reason())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth_proto::ledger::{Reply, Transfer, PacketId};
    use crate::crypto::{keygen, Backend, KeyPair};
    use std::sync::Arc;

    const N: usize = 4;

    fn keys() -> (BTreeMap<NodeId, KeyPair>, Directory) {
        keygen(&[0, 1, 2, 3], Backend::Ledger, 0).unwrap()
    }

    fn record(reason: Reason) -> FailureRecord {
        FailureRecord {
            failed_tx: 1,
            reason,
            participants: (0..N).collect(),
            eliminated: BTreeSet::new(),
            sender_edges: BTreeMap::new(),
        }
    }

    fn reply(k: &BTreeMap<NodeId, KeyPair>, by: NodeId, stamp: i64, s1: i64, s3: i64, sp: Option<(u32, i64)>) -> Proof {
        Proof::Reply(Arc::new(k[&by].signing.sign(Reply { tx: 1, stamp, h: 0, rr: 0, s1, s3, sp })))
    }

    fn transfer(k: &BTreeMap<NodeId, KeyPair>, by: NodeId, stamp: i64, s1: i64, s3: i64, sp: Option<(u32, i64)>) -> Proof {
        let packet = PacketId { transmission: 1, codeword: 1, fragment: 0, digest: 0 };
        Proof::Transfer(Arc::new(k[&by].signing.sign(Transfer { tx: 1, stamp, packet, fr: 1, s1, s3, sp })))
    }

    fn flow(s1: i64, proof: Option<Proof>) -> Option<Side> {
        Some(Side { values: EdgeValues::Flow { s1 }, proof })
    }

    #[test]
    fn proof_checks() {
        let (k, dir) = keys();
        let rec = record(Reason::F3);
        let good = StatusBody::Edge { out: flow(2, Some(reply(&k, 2, 5, 2, 0, None))), inn: flow(0, None) };
        assert_eq!(check_parcel(&rec, N, 1, &StatusIndex::Peer(2), &good, &dir), Ok(()));
        let cases = [
            StatusBody::Edge { out: flow(3, Some(reply(&k, 2, 5, 2, 0, None))), inn: flow(0, None) },
            StatusBody::Edge { out: flow(2, None), inn: flow(0, None) },
            StatusBody::Edge { out: flow(2, Some(reply(&k, 3, 5, 2, 0, None))), inn: flow(0, None) },
            StatusBody::Edge { out: flow(2, Some(transfer(&k, 2, 5, 2, 0, None))), inn: flow(0, None) },
            StatusBody::Edge { out: flow(2, Some(reply(&k, 2, 5, 2, 0, None))), inn: None },
            StatusBody::Edge { out: Some(Side { values: EdgeValues::Dup { sp: 0 }, proof: None }), inn: flow(0, None) },
        ];
        for (i, c) in cases.iter().enumerate() {
            assert!(check_parcel(&rec, N, 1, &StatusIndex::Peer(2), c, &dir).is_err(), "case {i}");
        }
        // the receiver has no outgoing side; the sender no incoming one
        let r = StatusBody::Edge { out: None, inn: flow(0, None) };
        assert!(check_parcel(&rec, N, 3, &StatusIndex::Peer(1), &r, &dir).is_ok());
        let to_s = StatusBody::Edge { out: None, inn: flow(0, None) };
        assert!(check_parcel(&rec, N, 1, &StatusIndex::Peer(0), &to_s, &dir).is_ok());
        assert!(check_parcel(&rec, N, 1, &StatusIndex::Own, &StatusBody::Own { sig_self: 0 }, &dir).is_err());
    }

    #[test]
    fn wrong_transmission_proof_rejected() {
        let (k, dir) = keys();
        let rec = FailureRecord { failed_tx: 2, ..record(Reason::F3) };
        let body = StatusBody::Edge { out: flow(2, Some(reply(&k, 2, 5, 2, 0, None))), inn: flow(0, None) };
        assert!(check_parcel(&rec, N, 1, &StatusIndex::Peer(2), &body, &dir).is_err());
    }

    /// Flow reports for S -> 1 -> 2 -> R where node 1 keeps `held` packets.
    fn flow_reports(k: &BTreeMap<NodeId, KeyPair>, into1: i64, out1: i64) -> (FailureRecord, BTreeMap<NodeId, Report>) {
        let mut rec = record(Reason::F3);
        let mut l = EdgeLedger { s1: into1, ..Default::default() };
        l.proof = Some(reply(k, 1, 10, into1, 0, None));
        rec.sender_edges.insert(1, l);
        let zero = || flow(0, None);
        let mut reports = BTreeMap::new();
        let r1: Report = [
            (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: flow(into1, Some(transfer(k, 0, 9, into1, 0, None))) }),
            (StatusIndex::Peer(2), StatusBody::Edge { out: flow(out1, Some(reply(k, 2, 10, out1, 0, None))), inn: zero() }),
            (StatusIndex::Peer(3), StatusBody::Edge { out: zero(), inn: None }),
        ]
        .into();
        let r2: Report = [
            (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: zero() }),
            (StatusIndex::Peer(1), StatusBody::Edge { out: zero(), inn: flow(out1, Some(transfer(k, 1, 9, out1, 0, None))) }),
            (StatusIndex::Peer(3), StatusBody::Edge { out: flow(out1, Some(reply(k, 3, 10, out1, 0, None))), inn: None }),
        ]
        .into();
        let r3: Report = [
            (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: zero() }),
            (StatusIndex::Peer(1), StatusBody::Edge { out: None, inn: zero() }),
            (StatusIndex::Peer(2), StatusBody::Edge { out: None, inn: flow(out1, Some(transfer(k, 2, 9, out1, 0, None))) }),
        ]
        .into();
        reports.insert(1, r1);
        reports.insert(2, r2);
        reports.insert(3, r3);
        (rec, reports)
    }

    #[test]
    fn flow_excess_blames_the_sink() {
        let (k, _) = keys();
        let bound = 4 * 16 - 8 * 4;
        let (rec, reports) = flow_reports(&k, 40 + bound + 1, 40);
        let v = localize(&rec, N, &reports).expect("verdict");
        assert_eq!(v.node, 1);
        assert!(matches!(v.evidence, Evidence::FlowExcess { .. }));
        let (rec, reports) = flow_reports(&k, 40 + bound, 40);
        assert_eq!(localize(&rec, N, &reports), None);
    }

    #[test]
    fn stale_report_blamed_by_stamp() {
        let (k, _) = keys();
        let (rec, mut reports) = flow_reports(&k, 50, 40);
        // node 2 reports an old in-side value backed by an older transfer
        let r2 = reports.get_mut(&2).unwrap();
        r2.insert(
            StatusIndex::Peer(1),
            StatusBody::Edge { out: flow(0, None), inn: flow(30, Some(transfer(&k, 1, 3, 30, 0, None))) },
        );
        let v = localize(&rec, N, &reports).expect("verdict");
        assert_eq!(v.node, 2);
        assert!(matches!(v.evidence, Evidence::EdgeMismatch { peer: 1, .. }));
    }

    #[test]
    fn duplicate_emitter_found() {
        let (k, _) = keys();
        let p = 7;
        let dup = |sp: i64, proof: Option<Proof>| Some(Side { values: EdgeValues::Dup { sp }, proof });
        let mut rec = record(Reason::F4(p));
        let mut l = EdgeLedger::default();
        l.sp.insert(p, 1);
        l.sp_proof.insert(p, reply(&k, 1, 4, 1, 0, Some((p, 1))));
        rec.sender_edges.insert(1, l);
        let mut reports = BTreeMap::new();
        reports.insert(
            1,
            Report::from([
                (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: dup(1, Some(transfer(&k, 0, 3, 1, 0, Some((p, 1))))) }),
                (StatusIndex::Peer(2), StatusBody::Edge { out: dup(0, None), inn: dup(0, None) }),
                (StatusIndex::Peer(3), StatusBody::Edge { out: dup(2, Some(reply(&k, 3, 9, 2, 0, Some((p, 2))))), inn: None }),
            ]),
        );
        reports.insert(
            2,
            Report::from([
                (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: dup(0, None) }),
                (StatusIndex::Peer(1), StatusBody::Edge { out: dup(0, None), inn: dup(0, None) }),
                (StatusIndex::Peer(3), StatusBody::Edge { out: dup(0, None), inn: None }),
            ]),
        );
        reports.insert(
            3,
            Report::from([
                (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: dup(0, None) }),
                (StatusIndex::Peer(1), StatusBody::Edge { out: None, inn: dup(2, Some(transfer(&k, 1, 8, 2, 0, Some((p, 2))))) }),
                (StatusIndex::Peer(2), StatusBody::Edge { out: None, inn: dup(0, None) }),
            ]),
        );
        let v = localize(&rec, N, &reports).expect("verdict");
        assert_eq!(v.node, 1);
        assert!(matches!(v.evidence, Evidence::DuplicateEmitted { inflow: 1, outflow: 2, .. }));
    }

    #[test]
    fn potential_budget() {
        let pot = |s2, s3| Some(Side { values: EdgeValues::Potential { s2, s3 }, proof: None });
        let rec = record(Reason::F2);
        let n = N as i64;
        let budget = 4 * n * n * n - 4 * n * n;
        let mk = |own: i64| {
            let mut reports = BTreeMap::new();
            reports.insert(
                1,
                Report::from([
                    (StatusIndex::Peer(0), StatusBody::Edge { out: None, inn: pot(0, 0) }),
                    (StatusIndex::Peer(2), StatusBody::Edge { out: pot(0, 0), inn: pot(0, 0) }),
                    (StatusIndex::Peer(3), StatusBody::Edge { out: pot(0, 0), inn: None }),
                    (StatusIndex::Own, StatusBody::Own { sig_self: own }),
                ]),
            );
            for x in [2, 3] {
                let mut r = Report::new();
                for b in (0..N).filter(|&b| b != x) {
                    let out = (x != 3 && b != 0).then(|| pot(0, 0)).flatten();
                    let inn = (b != 3).then(|| pot(0, 0)).flatten();
                    r.insert(StatusIndex::Peer(b), StatusBody::Edge { out, inn });
                }
                if x == 2 {
                    r.insert(StatusIndex::Own, StatusBody::Own { sig_self: 0 });
                }
                reports.insert(x, r);
            }
            reports
        };
        assert_eq!(localize(&rec, N, &mk(budget)), None);
        let v = localize(&rec, N, &mk(budget + 1)).expect("verdict");
        assert_eq!(v.node, 1);
        assert!(matches!(v.evidence, Evidence::PotentialBudget { .. }));
        let v = localize(&rec, N, &mk(-1)).expect("verdict");
        assert!(matches!(v.evidence, Evidence::NegativePotential { value: -1 }));
    }
}
