//! Per-edge signature ledgers and the two stage-message checks.
//!
//! Each endpoint of a directed edge keeps a ledger: the net number of
//! current-codeword packets that crossed the edge (`s1`), the counterpart's
//! signed potential change (`s2`), its own potential change (`s3`), and a
//! per-fragment crossing count (`sp`). Values that the counterpart signed
//! are backed by the most recent counterpart message as proof.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::codec::{Packet, PacketRef};
use crate::crypto::{Canonical, Directory, NodeId, Signed};

/// Stage stamp: strictly increasing within a transmission.
pub fn stamp(t: i64, stage: u8) -> i64 {
    2 * t + stage as i64
}

/// Stage-1 reply signed by the incoming side of an edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub tx: u64,
    pub stamp: i64,
    pub h: usize,
    pub rr: i64,
    pub s1: i64,
    pub s3: i64,
    pub sp: Option<(u32, i64)>,
}

impl Canonical for Reply {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"rep");
        self.tx.encode(out);
        self.stamp.encode(out);
        self.h.encode(out);
        self.rr.encode(out);
        self.s1.encode(out);
        self.s3.encode(out);
        self.sp.encode(out);
    }
}

/// Identity of a packet inside a signed transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketId {
    pub transmission: u64,
    pub codeword: u64,
    pub fragment: u32,
    pub digest: u64,
}

impl PacketId {
    pub fn of(p: &Packet) -> Self {
        PacketId { transmission: p.transmission, codeword: p.codeword, fragment: p.fragment, digest: p.digest() }
    }
}

/// Stage-2 transfer metadata signed by the outgoing side of an edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub tx: u64,
    pub stamp: i64,
    pub packet: PacketId,
    pub fr: i64,
    pub s1: i64,
    pub s3: i64,
    pub sp: Option<(u32, i64)>,
}

impl Canonical for Transfer {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"xfr");
        self.tx.encode(out);
        self.stamp.encode(out);
        self.packet.transmission.encode(out);
        self.packet.codeword.encode(out);
        self.packet.fragment.encode(out);
        self.packet.digest.encode(out);
        self.fr.encode(out);
        self.s1.encode(out);
        self.s3.encode(out);
        self.sp.encode(out);
    }
}

/// A counterpart-signed message backing ledger values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Proof {
    Reply(Arc<Signed<Reply>>),
    Transfer(Arc<Signed<Transfer>>),
}

impl Proof {
    pub fn signer(&self) -> NodeId {
        match self {
            Proof::Reply(r) => r.signer,
            Proof::Transfer(x) => x.signer,
        }
    }

    pub fn tx(&self) -> u64 {
        match self {
            Proof::Reply(r) => r.value.tx,
            Proof::Transfer(x) => x.value.tx,
        }
    }

    pub fn stamp(&self) -> i64 {
        match self {
            Proof::Reply(r) => r.value.stamp,
            Proof::Transfer(x) => x.value.stamp,
        }
    }

    /// Net crossings the counterpart signed.
    pub fn s1(&self) -> i64 {
        match self {
            Proof::Reply(r) => r.value.s1,
            Proof::Transfer(x) => x.value.s1,
        }
    }

    /// The counterpart's own potential change, stored locally as `s2`.
    pub fn s2(&self) -> i64 {
        match self {
            Proof::Reply(r) => r.value.s3,
            Proof::Transfer(x) => x.value.s3,
        }
    }

    pub fn sp(&self) -> Option<(u32, i64)> {
        match self {
            Proof::Reply(r) => r.value.sp,
            Proof::Transfer(x) => x.value.sp,
        }
    }

    pub fn verify(&self, dir: &Directory) -> bool {
        match self {
            Proof::Reply(r) => dir.check(r.as_ref()),
            Proof::Transfer(x) => dir.check(x.as_ref()),
        }
    }
}

impl Canonical for Proof {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Proof::Reply(r) => {
                out.push(0);
                r.as_ref().encode(out);
            }
            Proof::Transfer(x) => {
                out.push(1);
                x.as_ref().encode(out);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeLedger {
    pub s1: i64,
    pub s2: i64,
    pub s3: i64,
    pub sp: BTreeMap<u32, i64>,
    pub proof: Option<Proof>,
    pub sp_proof: BTreeMap<u32, Proof>,
}

impl EdgeLedger {
    pub fn sp_of(&self, frag: u32) -> i64 {
        self.sp.get(&frag).copied().unwrap_or(0)
    }

    /// Entries held: the three counters plus one per tracked fragment.
    pub fn entries(&self) -> usize {
        3 + self.sp.len()
    }

    /// Copy counterpart-signed values from a proof.
    pub fn adopt(&mut self, proof: Proof) {
        self.s1 = proof.s1();
        self.s2 = proof.s2();
        if let Some((f, v)) = proof.sp() {
            self.sp.insert(f, v);
            self.sp_proof.insert(f, proof.clone());
        }
        self.proof = Some(proof);
    }

    /// Adopt only when the proof changes a value or none is held yet, so the
    /// stored proof is the one that set the current values.
    pub fn adopt_if_changed(&mut self, proof: Proof) -> bool {
        let sp_changed = proof.sp().is_some_and(|(f, v)| self.sp_of(f) != v || !self.sp_proof.contains_key(&f));
        if self.proof.is_none() || proof.s1() != self.s1 || proof.s2() != self.s2 || sp_changed {
            self.adopt(proof);
            return true;
        }
        false
    }
}

/// Context for checking a stage message.
pub struct CheckCtx<'a> {
    pub dir: &'a Directory,
    pub sender: NodeId,
    pub tx: u64,
    pub t: i64,
}

/// Check a transfer received by the incoming side. `new` is whether the
/// flag round is later than the last accepted round; `slot` is the landing
/// slot for a new packet.
pub fn verify_transfer(
    ctx: &CheckCtx,
    from: NodeId,
    msg: &Signed<Transfer>,
    packet: &PacketRef,
    ledger: &EdgeLedger,
    new: bool,
    slot: usize,
) -> bool {
    let v = &msg.value;
    if msg.signer != from || !ctx.dir.check(msg) {
        return false;
    }
    if v.tx != ctx.tx || v.stamp != stamp(ctx.t, 2) || v.packet != PacketId::of(packet) {
        return false;
    }
    if !packet.verify(ctx.dir, ctx.sender) {
        return false;
    }
    let current = packet.transmission == ctx.tx;
    if new {
        let s1_ok = v.s1 == ledger.s1 + current as i64;
        let sp_ok = if current {
            v.sp == Some((packet.fragment, ledger.sp_of(packet.fragment) + 1))
        } else {
            v.sp.is_none()
        };
        s1_ok && sp_ok && v.s3 - ledger.s2 >= slot as i64
    } else {
        let sp_ok = if current { v.sp == Some((packet.fragment, ledger.sp_of(packet.fragment))) } else { v.sp.is_none() };
        v.s1 == ledger.s1 && v.s3 == ledger.s2 && sp_ok
    }
}

/// Check a reply received by the outgoing side. `flag` is the in-flight
/// packet with its flag round and height, if any.
pub fn verify_reply(
    ctx: &CheckCtx,
    from: NodeId,
    from_is_receiver: bool,
    msg: &Signed<Reply>,
    ledger: &EdgeLedger,
    flag: Option<(&PacketRef, i64, usize)>,
) -> bool {
    let v = &msg.value;
    if msg.signer != from || !ctx.dir.check(msg) {
        return false;
    }
    if v.tx != ctx.tx || v.stamp != stamp(ctx.t, 1) {
        return false;
    }
    match flag {
        Some((p, fr, hfp)) if fr <= v.rr => {
            let current = p.transmission == ctx.tx;
            let s1_ok = v.s1 == ledger.s1 + current as i64;
            let sp_ok = if current { v.sp == Some((p.fragment, ledger.sp_of(p.fragment) + 1)) } else { v.sp.is_none() };
            let d2 = v.s3 - ledger.s2;
            let s2_ok = if from_is_receiver { d2 == 0 } else { d2 >= 1 && d2 <= hfp as i64 };
            s1_ok && sp_ok && s2_ok
        }
        _ => v.s1 == ledger.s1 && v.s3 == ledger.s2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Backend};

    fn setup() -> (std::collections::BTreeMap<NodeId, crate::crypto::KeyPair>, Directory, PacketRef) {
        let (keys, dir) = keygen(&[0, 1, 2], Backend::Ledger, 0).unwrap();
        let p = Arc::new(Packet::issue(&keys[&0].signing, 1, 1, 4, Arc::from(vec![1u8, 2])));
        (keys, dir, p)
    }

    fn transfer(keys: &std::collections::BTreeMap<NodeId, crate::crypto::KeyPair>, p: &PacketRef, s1: i64, s3: i64, sp: i64, t: i64) -> Signed<Transfer> {
        keys[&1].signing.sign(Transfer {
            tx: 1,
            stamp: stamp(t, 2),
            packet: PacketId::of(p),
            fr: t,
            s1,
            s3,
            sp: Some((p.fragment, sp)),
        })
    }

    #[test]
    fn fresh_edge_first_transfer() {
        let (keys, dir, p) = setup();
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 5 };
        let l = EdgeLedger::default();
        assert!(verify_transfer(&ctx, 1, &transfer(&keys, &p, 1, 3, 1, 5), &p, &l, true, 2));
    }

    #[test]
    fn inflated_count_rejected() {
        let (keys, dir, p) = setup();
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 5 };
        let l = EdgeLedger::default();
        assert!(!verify_transfer(&ctx, 1, &transfer(&keys, &p, 2, 3, 1, 5), &p, &l, true, 2));
        // potential claim below the landing slot
        assert!(!verify_transfer(&ctx, 1, &transfer(&keys, &p, 1, 1, 1, 5), &p, &l, true, 2));
    }

    #[test]
    fn stale_stamp_rejected() {
        let (keys, dir, p) = setup();
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 6 };
        let l = EdgeLedger::default();
        assert!(!verify_transfer(&ctx, 1, &transfer(&keys, &p, 1, 3, 1, 5), &p, &l, true, 2));
    }

    #[test]
    fn wrong_signer_rejected() {
        let (keys, dir, p) = setup();
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 5 };
        let l = EdgeLedger::default();
        assert!(!verify_transfer(&ctx, 2, &transfer(&keys, &p, 1, 3, 1, 5), &p, &l, true, 2));
    }

    #[test]
    fn old_packet_keeps_count() {
        let (keys, dir, _) = setup();
        let old = Arc::new(Packet::issue(&keys[&0].signing, 0, 1, 4, Arc::from(vec![1u8, 2])));
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 5 };
        let l = EdgeLedger { s1: 3, ..Default::default() };
        let msg = keys[&1].signing.sign(Transfer { tx: 1, stamp: stamp(5, 2), packet: PacketId::of(&old), fr: 5, s1: 3, s3: 2, sp: None });
        assert!(verify_transfer(&ctx, 1, &msg, &old, &l, true, 2));
    }

    #[test]
    fn reply_checks() {
        let (keys, dir, p) = setup();
        let ctx = CheckCtx { dir: &dir, sender: 0, tx: 1, t: 6 };
        let l = EdgeLedger::default();
        let ok = keys[&2].signing.sign(Reply { tx: 1, stamp: stamp(6, 1), h: 1, rr: 5, s1: 1, s3: 3, sp: Some((4, 1)) });
        assert!(verify_reply(&ctx, 2, false, &ok, &l, Some((&p, 5, 4))));
        // claimed landing above the flagged height
        let high = keys[&2].signing.sign(Reply { tx: 1, stamp: stamp(6, 1), h: 1, rr: 5, s1: 1, s3: 5, sp: Some((4, 1)) });
        assert!(!verify_reply(&ctx, 2, false, &high, &l, Some((&p, 5, 4))));
        // not yet received: nothing may change
        let idle = keys[&2].signing.sign(Reply { tx: 1, stamp: stamp(6, 1), h: 0, rr: 2, s1: 0, s3: 0, sp: None });
        assert!(verify_reply(&ctx, 2, false, &idle, &l, Some((&p, 5, 4))));
    }
}
