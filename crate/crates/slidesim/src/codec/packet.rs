//! Sender-signed codeword fragments.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{CodecError, Codeword, Message, ReedSolomon};
use crate::crypto::{Canonical, Directory, NodeId, Signature, SigningKey};

/// One fragment of one codeword, stamped with the transmission it was
/// issued in and signed by the sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub transmission: u64,
    pub codeword: u64,
    pub fragment: u32,
    pub payload: Arc<[u8]>,
    pub sig: Signature,
}

pub type PacketRef = Arc<Packet>;

struct Body<'a> {
    transmission: u64,
    codeword: u64,
    fragment: u32,
    payload: &'a [u8],
}

impl Canonical for Body<'_> {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"pkt");
        self.transmission.encode(out);
        self.codeword.encode(out);
        self.fragment.encode(out);
        self.payload.encode(out);
    }
}

impl Packet {
    pub fn issue(key: &SigningKey, transmission: u64, codeword: u64, fragment: u32, payload: Arc<[u8]>) -> Self {
        let body = Body { transmission, codeword, fragment, payload: &payload };
        let sig = key.sign_bytes(&body.to_canonical());
        Packet { transmission, codeword, fragment, payload, sig }
    }

    pub fn verify(&self, dir: &Directory, sender: NodeId) -> bool {
        let body = Body {
            transmission: self.transmission,
            codeword: self.codeword,
            fragment: self.fragment,
            payload: &self.payload,
        };
        dir.verify_bytes(sender, &body.to_canonical(), &self.sig).unwrap_or(false)
    }

    /// Short content digest used in traces.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.transmission.to_le_bytes());
        h.update(self.codeword.to_le_bytes());
        h.update(self.fragment.to_le_bytes());
        h.update(&self.payload[..]);
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
    }
}

/// Sign every fragment of a codeword for the given transmission.
pub fn sign_codeword(key: &SigningKey, transmission: u64, cw: &Codeword) -> Vec<PacketRef> {
    cw.fragments
        .iter()
        .enumerate()
        .map(|(i, f)| Arc::new(Packet::issue(key, transmission, cw.message_index, i as u32, f.clone())))
        .collect()
}

/// Decode from signed packets. Packets whose signature fails are treated as
/// absent; packets from different codewords are an error.
pub fn decode_packets(
    rs: &ReedSolomon,
    packets: &[PacketRef],
    dir: &Directory,
    sender: NodeId,
) -> Result<Message, CodecError> {
    let Some(first) = packets.first() else {
        return Err(CodecError::Insufficient { have: 0, need: rs.params().threshold });
    };
    let index = first.codeword;
    if packets.iter().any(|p| p.codeword != index) {
        return Err(CodecError::MixedCodewords);
    }
    let frags: Vec<(usize, &[u8])> = packets
        .iter()
        .filter(|p| p.verify(dir, sender))
        .map(|p| (p.fragment as usize, &p.payload[..]))
        .collect();
    let payload = rs.decode(&frags)?;
    Ok(Message { index, payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{derive_params_sized, PacketSizing};
    use crate::crypto::{keygen, Backend};
    use num_rational::Ratio;

    #[test]
    fn signature_binding_and_decode() {
        let p = derive_params_sized(
            4,
            Ratio::new(3, 8),
            Ratio::new(1, 2),
            PacketSizing { packet_bits: 32, security_bits: 0, authenticated: false },
        )
        .unwrap();
        let rs = ReedSolomon::new(&p);
        let (keys, dir) = keygen(&[0, 1], Backend::Ledger, 0).unwrap();
        let msg = Message { index: 3, payload: (0..p.message_bytes).map(|i| i as u8).collect() };
        let cw = rs.encode(&msg).unwrap();
        let pkts = sign_codeword(&keys[&0].signing, 1, &cw);
        assert_eq!(pkts.len(), p.d);
        assert!(pkts.iter().all(|x| x.verify(&dir, 0)));

        // mutating a payload byte invalidates exactly that fragment
        let mut bad = (*pkts[5]).clone();
        let mut pl = bad.payload.to_vec();
        pl[0] ^= 1;
        bad.payload = pl.into();
        assert!(!bad.verify(&dir, 0));
        assert!(pkts.iter().enumerate().all(|(i, x)| i == 5 || x.verify(&dir, 0)));

        let subset: Vec<PacketRef> = pkts.iter().take(p.threshold).cloned().collect();
        assert_eq!(decode_packets(&rs, &subset, &dir, 0).unwrap(), msg);

        // a tampered packet counts as absent, so the threshold is missed
        let mut short = subset.clone();
        short[0] = Arc::new(bad);
        assert!(matches!(decode_packets(&rs, &short, &dir, 0), Err(CodecError::Insufficient { .. })));

        // signed by a non-sender: rejected
        let forged = Arc::new(Packet::issue(&keys[&1].signing, 1, 3, 0, cw.fragments[0].clone()));
        assert!(!forged.verify(&dir, 0));

        let mut mixed = subset;
        let other = Arc::new(Packet::issue(&keys[&0].signing, 1, 4, 1, cw.fragments[1].clone()));
        mixed.push(other);
        assert_eq!(decode_packets(&rs, &mixed, &dir, 0), Err(CodecError::MixedCodewords));
    }
}
