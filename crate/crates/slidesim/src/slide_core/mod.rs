//! Edge-scheduling Slide protocol: per-edge buffers, per-stage handlers,
//! and the local re-shuffle that keeps a node's buffers balanced.

mod buffers;

pub use buffers::{InBuf, InReport, OutBuf, OutReport, RecvOutcome, ResetOutcome};

use serde::{Deserialize, Serialize};

use crate::codec::PacketRef;
use crate::crypto::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Internal,
    Receiver,
}

/// Reference to one of a node's buffers by position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufRef {
    Out(usize),
    In(usize),
}

/// One re-shuffle move with the adjusted donor and recipient heights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Move {
    pub from: BufRef,
    pub to: BufRef,
    /// Slot the packet left.
    pub from_slot: usize,
    /// Slot the packet landed in.
    pub to_slot: usize,
}

impl Move {
    /// Potential released by the move: source height minus landing height.
    pub fn drop(&self) -> i64 {
        self.from_slot as i64 - self.to_slot as i64
    }
}

/// A node's buffers. Sender nodes only use `outs`, the receiver only `ins`.
#[derive(Clone, Debug)]
pub struct Buffers {
    pub outs: Vec<OutBuf>,
    pub ins: Vec<InBuf>,
    /// Round-robin cursors over neighbour ids, for max and min selection.
    pub cursor_max: usize,
    pub cursor_min: usize,
    /// Buffers whose peer has been eliminated take no part in re-shuffling.
    pub disabled: Vec<NodeId>,
}

/// Re-shuffle iteration cap; a correct run converges long before this.
const MAX_MOVES: usize = 1 << 16;

impl Buffers {
    /// Buffers for `id` in a complete graph on `n` nodes with sender 0 and
    /// receiver `n-1`.
    pub fn for_node(id: NodeId, n: usize, cap: usize) -> Self {
        Self::with_peers(id, n, cap, |_| true)
    }

    /// Buffers for `id` along the edges to the peers accepted by `adjacent`.
    pub fn with_peers(id: NodeId, n: usize, cap: usize, adjacent: impl Fn(NodeId) -> bool) -> Self {
        let sender = 0;
        let receiver = n - 1;
        let outs = if id == receiver {
            Vec::new()
        } else {
            (0..n).filter(|&b| b != id && b != sender && adjacent(b)).map(|b| OutBuf::new(b, cap)).collect()
        };
        let ins = if id == sender {
            Vec::new()
        } else {
            (0..n).filter(|&a| a != id && a != receiver && adjacent(a)).map(|a| InBuf::new(a, cap)).collect()
        };
        Buffers { outs, ins, cursor_max: 0, cursor_min: 0, disabled: Vec::new() }
    }

    pub fn out_to(&self, peer: NodeId) -> Option<usize> {
        self.outs.iter().position(|b| b.peer == peer)
    }

    pub fn in_from(&self, peer: NodeId) -> Option<usize> {
        self.ins.iter().position(|b| b.peer == peer)
    }

    fn peer(&self, r: BufRef) -> NodeId {
        match r {
            BufRef::Out(i) => self.outs[i].peer,
            BufRef::In(i) => self.ins[i].peer,
        }
    }

    fn height(&self, r: BufRef) -> usize {
        match r {
            BufRef::Out(i) => self.outs[i].h,
            BufRef::In(i) => self.ins[i].h,
        }
    }

    fn live(&self) -> Vec<BufRef> {
        let outs = (0..self.outs.len()).filter(|&i| !self.disabled.contains(&self.outs[i].peer)).map(BufRef::Out);
        let ins = (0..self.ins.len()).filter(|&i| !self.disabled.contains(&self.ins[i].peer)).map(BufRef::In);
        outs.chain(ins).collect()
    }

    /// Pick among tied buffers: preferred kind first, then the first peer
    /// at or after the cursor in cyclic id order.
    fn pick(&self, tied: &[BufRef], prefer_in: bool, cursor: usize) -> BufRef {
        let preferred: Vec<BufRef> =
            tied.iter().copied().filter(|r| matches!(r, BufRef::In(_)) == prefer_in).collect();
        let pool = if preferred.is_empty() { tied.to_vec() } else { preferred };
        *pool
            .iter()
            .min_by_key(|r| {
                let p = self.peer(**r);
                if p >= cursor { (0, p) } else { (1, p) }
            })
            .expect("non-empty pool")
    }

    /// Move packets from the fullest to the emptiest buffer until balanced.
    pub fn reshuffle(&mut self) -> Vec<Move> {
        let mut moves = Vec::new();
        let live = self.live();
        if live.len() < 2 {
            return moves;
        }
        for _ in 0..MAX_MOVES {
            let big = live.iter().map(|&r| self.height(r)).max().expect("live buffers");
            let small = live.iter().map(|&r| self.height(r)).min().expect("live buffers");
            let tied_max: Vec<BufRef> = live.iter().copied().filter(|&r| self.height(r) == big).collect();
            let tied_min: Vec<BufRef> = live.iter().copied().filter(|&r| self.height(r) == small).collect();
            let from = self.pick(&tied_max, true, self.cursor_max);
            let to = self.pick(&tied_min, false, self.cursor_min);
            let go = big > small + 1
                || (big == small + 1 && matches!(from, BufRef::In(_)) && matches!(to, BufRef::Out(_)));
            if !go || from == to {
                break;
            }
            self.cursor_max = self.peer(from) + 1;
            self.cursor_min = self.peer(to) + 1;
            // Adjust heights for flagged and ghost packets.
            let mut m_from = big;
            let mut m_to = small;
            match from {
                BufRef::Out(i) => {
                    if self.outs[i].hfp.is_some_and(|f| f >= self.outs[i].h) {
                        m_from -= 1;
                    }
                }
                BufRef::In(i) => {
                    let b = &self.ins[i];
                    if b.h + 1 < b.slots.len() && b.slots[b.h + 1].is_some() {
                        m_from += 1;
                    }
                }
            }
            match to {
                BufRef::Out(i) => {
                    let b = &self.outs[i];
                    if b.h > 0 && b.slots[b.h].is_none() {
                        m_to -= 1;
                    }
                }
                BufRef::In(i) => {
                    if self.ins[i].h_gp.is_some() {
                        m_to += 1;
                    }
                }
            }
            let p: PacketRef = match from {
                BufRef::Out(i) => self.outs[i].slots[m_from].take(),
                BufRef::In(i) => self.ins[i].slots[m_from].take(),
            }
            .expect("re-shuffle donor slot occupied");
            match to {
                BufRef::Out(i) => {
                    let b = &mut self.outs[i];
                    debug_assert!(b.slots[m_to + 1].is_none());
                    b.slots[m_to + 1] = Some(p);
                    b.h += 1;
                }
                BufRef::In(i) => {
                    let b = &mut self.ins[i];
                    debug_assert!(b.slots[m_to + 1].is_none());
                    b.slots[m_to + 1] = Some(p);
                    b.h += 1;
                }
            }
            match from {
                BufRef::Out(i) => self.outs[i].h -= 1,
                BufRef::In(i) => {
                    let b = &mut self.ins[i];
                    b.h -= 1;
                    if b.h_gp.is_some_and(|g| g > b.h) {
                        b.h_gp = Some(b.h + 1);
                    }
                }
            }
            moves.push(Move { from, to, from_slot: m_from, to_slot: m_to + 1 });
        }
        moves
    }

    /// Packets held across all buffers, counting flagged copies.
    pub fn packets(&self) -> usize {
        self.outs.iter().map(|b| b.occupancy()).sum::<usize>() + self.ins.iter().map(|b| b.occupancy()).sum::<usize>()
    }

    /// Balance invariant over live buffers: heights differ by at most one
    /// and no incoming buffer is taller than any outgoing buffer.
    pub fn check_balance(&self) -> Result<(), String> {
        let live = self.live();
        let hs: Vec<usize> = live.iter().map(|&r| self.height(r)).collect();
        let (Some(&mx), Some(&mn)) = (hs.iter().max(), hs.iter().min()) else { return Ok(()) };
        if mx > mn + 1 {
            return Err(format!("unbalanced buffers: max {mx}, min {mn}"));
        }
        let max_in = live.iter().filter(|r| matches!(r, BufRef::In(_))).map(|&r| self.height(r)).max();
        let min_out = live.iter().filter(|r| matches!(r, BufRef::Out(_))).map(|&r| self.height(r)).min();
        if let (Some(i), Some(o)) = (max_in, min_out) {
            if i > o {
                return Err(format!("incoming buffer at {i} above outgoing buffer at {o}"));
            }
        }
        Ok(())
    }

    pub fn check_layout(&self) -> Result<(), String> {
        for b in &self.outs {
            b.check_layout()?;
        }
        for b in &self.ins {
            b.check_layout()?;
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

    /// Internal node 1 of n = 4: outs to 2, 3 and ins from 0, 2.
    fn node() -> Buffers {
        Buffers::for_node(1, 4, 8)
    }

    fn fill_out(b: &mut Buffers, i: usize, h: usize) {
        for k in 0..h {
            b.outs[i].push(pkt(100 * i as u32 + k as u32));
        }
    }

    fn fill_in(b: &mut Buffers, i: usize, h: usize) {
        for k in 0..h {
            b.ins[i].slots[k + 1] = Some(pkt(1000 + 100 * i as u32 + k as u32));
        }
        b.ins[i].h = h;
    }

    #[test]
    fn internal_buffer_counts() {
        let b = Buffers::for_node(2, 5, 10);
        assert_eq!(b.outs.len(), 3);
        assert_eq!(b.ins.len(), 3);
        assert!(Buffers::for_node(0, 5, 10).ins.is_empty());
        assert!(Buffers::for_node(4, 5, 10).outs.is_empty());
    }

    #[test]
    fn five_three_becomes_four_four() {
        let mut b = node();
        fill_out(&mut b, 0, 5);
        fill_out(&mut b, 1, 3);
        fill_in(&mut b, 0, 4);
        fill_in(&mut b, 1, 4);
        let moves = b.reshuffle();
        assert_eq!(moves.len(), 1);
        assert_eq!(b.outs[0].h, 4);
        assert_eq!(b.outs[1].h, 4);
        b.check_balance().unwrap();
        b.check_layout().unwrap();
    }

    #[test]
    fn incoming_one_taller_moves() {
        let mut b = node();
        fill_out(&mut b, 0, 3);
        fill_out(&mut b, 1, 3);
        fill_in(&mut b, 0, 4);
        fill_in(&mut b, 1, 3);
        let moves = b.reshuffle();
        assert_eq!(moves.len(), 1);
        assert_eq!(moves[0].from, BufRef::In(0));
        assert!(matches!(moves[0].to, BufRef::Out(_)));
        b.check_balance().unwrap();
    }

    #[test]
    fn equal_heights_do_nothing() {
        let mut b = node();
        for i in 0..2 {
            fill_out(&mut b, i, 2);
            fill_in(&mut b, i, 2);
        }
        assert!(b.reshuffle().is_empty());
    }

    #[test]
    fn flagged_packet_never_moves() {
        let mut b = node();
        fill_out(&mut b, 0, 4);
        let o = &mut b.outs[0];
        o.hfp = Some(4);
        o.fr = Some(1);
        o.ptilde = o.slots[4].clone();
        let flagged = o.ptilde.clone();
        b.reshuffle();
        assert_eq!(b.outs[0].slots[4], flagged);
        b.check_layout().unwrap();
        b.check_balance().unwrap();
    }

    #[test]
    fn ghost_slot_not_filled() {
        let mut b = node();
        fill_in(&mut b, 0, 0);
        b.ins[0].h_gp = Some(1);
        fill_out(&mut b, 0, 3);
        fill_out(&mut b, 1, 3);
        fill_in(&mut b, 1, 3);
        b.reshuffle();
        assert!(b.ins[0].slots[1].is_none());
        b.check_layout().unwrap();
    }

    fn slot_sum(b: &Buffers) -> i64 {
        let outs = b.outs.iter().flat_map(|o| o.slots.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i as i64));
        let ins = b.ins.iter().flat_map(|o| o.slots.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i as i64));
        outs.chain(ins).sum()
    }

    proptest::proptest! {
        #[test]
        fn reshuffle_balances_and_accounts(n in 4usize..7, heights in proptest::collection::vec(0usize..=12, 12)) {
            let cap = 2 * n;
            let mut b = Buffers::for_node(1, n, cap);
            let outs = b.outs.len();
            for i in 0..outs {
                fill_out(&mut b, i, heights[i % heights.len()] % (cap + 1));
            }
            for i in 0..b.ins.len() {
                fill_in(&mut b, i, heights[(outs + i) % heights.len()] % (cap + 1));
            }
            let before = (b.packets(), slot_sum(&b));
            let moves = b.reshuffle();
            proptest::prop_assert_eq!(b.packets(), before.0);
            proptest::prop_assert_eq!(before.1 - slot_sum(&b), moves.iter().map(|m| m.drop()).sum::<i64>());
            proptest::prop_assert!(moves.iter().all(|m| m.drop() >= 0));
            proptest::prop_assert_eq!(b.check_balance(), Ok(()));
            proptest::prop_assert_eq!(b.check_layout(), Ok(()));
        }
    }
}
