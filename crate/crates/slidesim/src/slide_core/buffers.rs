//! Outgoing and incoming edge buffers with their per-stage handlers.
//!
//! Slots are 1-indexed; `slots[0]` is never used. Round indices are
//! transmission-local and `RR = -1` marks "nothing received yet".

use serde::{Deserialize, Serialize};

use crate::codec::PacketRef;
use crate::crypto::NodeId;

/// Stage-1 message from an outgoing buffer to the peer's incoming buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutReport {
    pub h: usize,
    pub hfp: Option<usize>,
    pub fr: Option<i64>,
}

/// Stage-1 reply from an incoming buffer to the peer's outgoing buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InReport {
    pub h: usize,
    pub rr: i64,
}

/// Slide every occupied slot down so that occupancy becomes `1..=count`.
/// Returns the total number of slot positions the packets moved down.
fn compact(slots: &mut [Option<PacketRef>]) -> u64 {
    let mut next = 1;
    let mut moved = 0;
    for i in 1..slots.len() {
        if slots[i].is_some() {
            if i != next {
                slots[next] = slots[i].take();
                moved += (i - next) as u64;
            }
            next += 1;
        }
    }
    moved
}

#[derive(Clone, Debug)]
pub struct OutBuf {
    pub peer: NodeId,
    pub slots: Vec<Option<PacketRef>>,
    pub h: usize,
    pub sb: bool,
    pub ptilde: Option<PacketRef>,
    pub d: bool,
    pub fr: Option<i64>,
    pub hfp: Option<usize>,
    pub rr: Option<i64>,
    pub h_in: Option<usize>,
}

/// What a stage-1 reset did to the outgoing buffer.
#[derive(Clone, Debug, Default)]
pub struct ResetOutcome {
    /// The flagged packet, its height and the slide-down caused by removing it.
    pub confirmed: Option<(PacketRef, usize, u64)>,
    pub elevated: bool,
}

impl OutBuf {
    pub fn new(peer: NodeId, cap: usize) -> Self {
        OutBuf {
            peer,
            slots: vec![None; cap + 1],
            h: 0,
            sb: false,
            ptilde: None,
            d: false,
            fr: None,
            hfp: None,
            rr: None,
            h_in: Some(0),
        }
    }

    pub fn cap(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn report(&self) -> OutReport {
        match self.hfp {
            None => OutReport { h: self.h, hfp: None, fr: None },
            Some(hfp) => OutReport { h: self.h.saturating_sub(1), hfp: Some(hfp), fr: self.fr },
        }
    }

    /// Fold in the peer's stage-1 reply (or its absence) and reset.
    pub fn reset(&mut self, reply: Option<InReport>) -> ResetOutcome {
        match reply {
            Some(r) => {
                self.h_in = Some(r.h);
                self.rr = Some(r.rr);
            }
            None => {
                self.h_in = None;
                self.rr = None;
            }
        }
        let mut out = ResetOutcome::default();
        if self.d {
            self.d = false;
            let unconfirmed = match (self.rr, self.fr) {
                (None, _) => true,
                (Some(rr), Some(fr)) => fr > rr,
                _ => false,
            };
            if unconfirmed {
                self.sb = true;
            }
        }
        if let (Some(rr), Some(fr)) = (self.rr, self.fr) {
            if fr <= rr {
                let hfp = self.hfp.expect("flag round without flagged height");
                let p = self.slots[hfp].take().expect("flagged slot occupied");
                let slid = compact(&mut self.slots);
                self.fr = None;
                self.ptilde = None;
                self.hfp = None;
                self.sb = false;
                self.h -= 1;
                out.confirmed = Some((p, hfp, slid));
            }
        }
        if let (Some(rr), Some(fr), Some(hfp)) = (self.rr, self.fr, self.hfp) {
            if rr < fr && hfp < self.h {
                self.slots.swap(self.h, hfp);
                self.hfp = Some(self.h);
                out.elevated = true;
            }
        }
        out
    }

    /// Stage 2: create a flag if due and report whether a packet goes out.
    pub fn prepare_send(&mut self, t: i64) -> bool {
        let Some(h_in) = self.h_in else { return false };
        if !self.sb && self.h > h_in {
            self.ptilde = self.slots[self.h].clone();
            self.hfp = Some(self.h);
            self.fr = Some(t);
        }
        self.sb || self.h > h_in
    }

    /// Stage 2: mark the send and return the packet with its flag round.
    pub fn send(&mut self) -> Option<(PacketRef, i64)> {
        self.d = true;
        Some((self.ptilde.clone()?, self.fr?))
    }

    /// Packets held, counting the flagged copy.
    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn first_free(&self) -> Option<usize> {
        (1..self.slots.len()).find(|&i| self.slots[i].is_none())
    }

    /// Place a packet in the first free slot.
    pub fn push(&mut self, p: PacketRef) -> bool {
        match self.first_free() {
            Some(i) => {
                self.slots[i] = Some(p);
                self.h += 1;
                true
            }
            None => false,
        }
    }

    pub fn end_of_transmission(&mut self, clear_d: bool) -> u64 {
        let mut slid = 0;
        if let Some(hfp) = self.hfp.take() {
            self.slots[hfp] = None;
            slid = compact(&mut self.slots);
            self.h -= 1;
        }
        if clear_d {
            self.d = false;
        }
        self.sb = false;
        self.fr = None;
        self.ptilde = None;
        slid
    }

    pub fn clear(&mut self) {
        let cap = self.cap();
        *self = OutBuf::new(self.peer, cap);
    }

    /// Slot-layout invariant: with the flag at or below `h`, slots `1..=h`
    /// are exactly the occupied ones; with the flag above `h`, slots
    /// `1..h` and the flag slot are.
    pub fn check_layout(&self) -> Result<(), String> {
        let occ: Vec<usize> = (1..self.slots.len()).filter(|&i| self.slots[i].is_some()).collect();
        let expect: Vec<usize> = match self.hfp {
            Some(f) if f > self.h => (1..self.h).chain(std::iter::once(f)).collect(),
            _ => (1..=self.h).collect(),
        };
        if occ != expect {
            return Err(format!("out-buffer to {}: occupied {:?}, expected {:?} (h={}, hfp={:?})", self.peer, occ, expect, self.h, self.hfp));
        }
        if self.hfp.is_none() && (self.sb || self.fr.is_some()) {
            return Err(format!("out-buffer to {}: status or flag round without a flagged packet", self.peer));
        }
        if let Some(f) = self.hfp {
            if self.slots[f].as_ref().map(|p| p.as_ref()) != self.ptilde.as_deref() {
                return Err(format!("out-buffer to {}: flagged slot differs from the in-flight copy", self.peer));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct InBuf {
    pub peer: NodeId,
    pub slots: Vec<Option<PacketRef>>,
    pub h: usize,
    pub sb: bool,
    pub rr: i64,
    pub h_gp: Option<usize>,
    pub h_out: Option<usize>,
    pub sb_out: bool,
    pub fr: Option<i64>,
    /// Last packet accepted over this edge.
    pub last: Option<PacketRef>,
}

/// Result of a stage-2 receive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecvOutcome {
    /// Stored at this slot.
    Accepted { slot: usize },
    /// A packet was expected but did not arrive (or was refused).
    Missing,
    /// Re-delivery of a packet already held.
    Duplicate { slid: u64 },
    /// No packet was expected.
    Idle { slid: u64 },
}

impl InBuf {
    pub fn new(peer: NodeId, cap: usize) -> Self {
        InBuf {
            peer,
            slots: vec![None; cap + 1],
            h: 0,
            sb: false,
            rr: -1,
            h_gp: None,
            h_out: Some(0),
            sb_out: false,
            fr: None,
            last: None,
        }
    }

    pub fn cap(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn report(&self) -> InReport {
        InReport { h: self.h, rr: self.rr }
    }

    /// Stage 1, after sending the reply: fold in the peer's report.
    pub fn absorb(&mut self, msg: Option<OutReport>) {
        self.sb_out = false;
        self.fr = None;
        match msg {
            None => {
                self.sb_out = true;
                self.h_out = None;
            }
            Some(m) => {
                self.fr = m.fr;
                if m.fr.is_some_and(|fr| fr > self.rr) {
                    self.sb_out = true;
                    self.h_out = m.hfp;
                } else {
                    self.h_out = Some(m.h);
                    self.sb_out = false;
                }
            }
        }
    }

    /// Whether the peer's report says a packet should arrive this stage.
    pub fn expects(&self) -> bool {
        match self.h_out {
            None => false,
            Some(h_out) => self.sb_out || h_out > self.h,
        }
    }

    /// Whether a delivered packet with this flag round would be new.
    pub fn is_new(&self, fr: i64) -> bool {
        self.rr < fr
    }

    /// The slot a new packet would land in.
    pub fn landing_slot(&self) -> usize {
        self.h_gp.unwrap_or(self.h + 1)
    }

    fn reserve_ghost(&mut self) {
        self.sb = true;
        let reserve = match self.h_gp {
            Some(g) => g > self.h,
            None => self.h < self.cap(),
        };
        if reserve {
            self.h_gp = Some(self.h + 1);
        }
    }

    /// Stage-2 receive. `gate_open` is false when the peer's height report
    /// is unusable for this round; `msg` is the delivered packet after any
    /// validity filtering.
    pub fn receive(&mut self, gate_open: bool, msg: Option<(PacketRef, i64)>, t: i64) -> RecvOutcome {
        if self.h_out.is_none() || !gate_open {
            self.reserve_ghost();
            return RecvOutcome::Missing;
        }
        if self.expects() {
            match msg {
                Some((p, fr)) if self.rr < fr => {
                    let slot = self.landing_slot();
                    if slot > self.cap() {
                        self.reserve_ghost();
                        return RecvOutcome::Missing;
                    }
                    self.slots[slot] = Some(p.clone());
                    self.sb = false;
                    self.h += 1;
                    self.h_gp = None;
                    self.rr = t;
                    self.last = Some(p);
                    RecvOutcome::Accepted { slot }
                }
                Some(_) => {
                    self.sb = false;
                    let slid = compact(&mut self.slots);
                    self.h_gp = None;
                    RecvOutcome::Duplicate { slid }
                }
                None => {
                    self.reserve_ghost();
                    RecvOutcome::Missing
                }
            }
        } else {
            self.sb = false;
            let slid = compact(&mut self.slots);
            self.h_gp = None;
            RecvOutcome::Idle { slid }
        }
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn end_of_transmission(&mut self) -> u64 {
        self.h_gp = None;
        self.sb = false;
        self.rr = -1;
        compact(&mut self.slots)
    }

    pub fn clear(&mut self) {
        let cap = self.cap();
        *self = InBuf::new(self.peer, cap);
    }

    /// Slot-layout invariant: a ghost at or below `h` leaves exactly one
    /// gap with occupied slots up to `h+1`; otherwise slots `1..=h`.
    pub fn check_layout(&self) -> Result<(), String> {
        let occ: Vec<usize> = (1..self.slots.len()).filter(|&i| self.slots[i].is_some()).collect();
        let expect: Vec<usize> = match self.h_gp {
            Some(g) if g <= self.h => (1..=self.h + 1).filter(|&i| i != g).collect(),
            _ => (1..=self.h).collect(),
        };
        if occ != expect {
            return Err(format!("in-buffer from {}: occupied {:?}, expected {:?} (h={}, gp={:?})", self.peer, occ, expect, self.h, self.h_gp));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Packet;
    use crate::crypto::Signature;
    use std::sync::Arc;

    fn pkt(i: u32) -> PacketRef {
        Arc::new(Packet { transmission: 1, codeword: 1, fragment: i, payload: Arc::from(vec![0u8; 2]), sig: Signature::Tag(0) })
    }

    fn filled(h: usize) -> OutBuf {
        let mut b = OutBuf::new(1, 8);
        for i in 0..h {
            b.push(pkt(i as u32));
        }
        b
    }

    #[test]
    fn fresh_buffer_reports_zero() {
        let b = OutBuf::new(1, 8);
        assert_eq!(b.report(), OutReport { h: 0, hfp: None, fr: None });
    }

    #[test]
    fn flagged_report_subtracts_one() {
        let mut b = filled(5);
        b.hfp = Some(5);
        b.fr = Some(12);
        b.ptilde = b.slots[5].clone();
        assert_eq!(b.report(), OutReport { h: 4, hfp: Some(5), fr: Some(12) });
    }

    #[test]
    fn missing_reply_sets_problem_status() {
        let mut b = filled(3);
        b.h_in = Some(0);
        assert!(b.prepare_send(4));
        b.send();
        b.reset(None);
        assert!(b.sb);
        assert_eq!(b.h_in, None);
    }

    #[test]
    fn confirmation_removes_flag() {
        let mut b = filled(5);
        b.h_in = Some(0);
        b.prepare_send(12);
        b.send();
        let out = b.reset(Some(InReport { h: 1, rr: 12 }));
        assert_eq!(out.confirmed.as_ref().map(|c| c.1), Some(5));
        assert_eq!(b.h, 4);
        assert!(b.hfp.is_none() && !b.sb);
        b.check_layout().unwrap();
    }

    #[test]
    fn unreceived_flag_is_elevated() {
        let mut b = filled(5);
        b.hfp = Some(3);
        b.fr = Some(12);
        b.ptilde = b.slots[3].clone();
        let flagged = b.ptilde.clone();
        let out = b.reset(Some(InReport { h: 1, rr: 9 }));
        assert!(out.elevated);
        assert_eq!(b.hfp, Some(5));
        assert_eq!(b.slots[5], flagged);
        b.check_layout().unwrap();
    }

    #[test]
    fn flag_and_send_rules() {
        let mut b = filled(3);
        b.h_in = Some(1);
        assert!(b.prepare_send(7));
        assert_eq!(b.hfp, Some(3));
        let mut c = filled(2);
        c.h_in = Some(2);
        assert!(!c.prepare_send(7));
        assert!(c.hfp.is_none());
        // resend keeps the original flag round
        b.send();
        b.reset(Some(InReport { h: 1, rr: -1 }));
        assert!(b.sb);
        assert!(b.prepare_send(8));
        assert_eq!(b.send().map(|x| x.1), Some(7));
    }

    #[test]
    fn accept_then_duplicate() {
        let mut r = InBuf::new(0, 8);
        for i in 0..4 {
            r.slots[i + 1] = Some(pkt(i as u32));
        }
        r.h = 4;
        r.absorb(Some(OutReport { h: 6, hfp: Some(7), fr: Some(3) }));
        assert_eq!(r.receive(true, Some((pkt(9), 3)), 3), RecvOutcome::Accepted { slot: 5 });
        assert_eq!(r.h, 5);
        r.absorb(Some(OutReport { h: 6, hfp: Some(7), fr: Some(3) }));
        assert!(matches!(r.receive(true, Some((pkt(9), 3)), 4), RecvOutcome::Duplicate { .. }));
        assert_eq!(r.h, 5);
        r.check_layout().unwrap();
    }

    #[test]
    fn silent_edge_keeps_ghost() {
        let mut r = InBuf::new(0, 8);
        r.absorb(None);
        assert_eq!(r.receive(true, None, 2), RecvOutcome::Missing);
        assert_eq!(r.h_gp, Some(1));
        assert_eq!(r.h, 0);
        r.absorb(None);
        r.receive(true, None, 3);
        assert_eq!(r.h_gp, Some(1));
    }

    #[test]
    fn compact_counts_slide() {
        let mut s: Vec<Option<PacketRef>> = vec![None, Some(pkt(1)), None, Some(pkt(2)), Some(pkt(3))];
        assert_eq!(compact(&mut s), 2);
        assert!(s[1].is_some() && s[2].is_some() && s[3].is_some() && s[4].is_none());
    }
}
