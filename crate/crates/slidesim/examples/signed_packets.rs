//! Sign every fragment of a codeword with the sender's key, tamper with some
//! packets and decode from what still verifies. Runs once per signature
//! backend.

use std::sync::Arc;

use num_rational::Ratio;
use slidesim::codec::{decode_packets, sign_codeword, Packet};
use slidesim::codec::{derive_params_sized, Message, PacketSizing, ReedSolomon};
use slidesim::crypto::{keygen, Backend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sizing = PacketSizing { authenticated: true, ..PacketSizing::default() };
    let p = derive_params_sized(4, Ratio::new(3, 8), Ratio::new(1, 2), sizing)?;
    let rs = ReedSolomon::new(&p);
    let msg = Message { index: 3, payload: (0..p.message_bytes).map(|i| (i * 31) as u8).collect() };
    let cw = rs.encode(&msg)?;

    for backend in [Backend::Ledger, Backend::Ed25519] {
        let (keys, dir) = keygen(&[0, 1, 2, 3], backend, 42)?;
        let mut packets = sign_codeword(&keys[&0].signing, 1, &cw);

        // A relay rewrites payloads of the first few packets without the sender's key.
        let tampered = p.d - p.threshold;
        for pk in packets.iter_mut().take(tampered) {
            let mut payload = pk.payload.to_vec();
            payload[0] ^= 0xff;
            *pk = Arc::new(Packet { payload: payload.into(), ..(**pk).clone() });
        }
        // A relay signs its own packet: valid signature, wrong signer.
        let forged = Packet::issue(&keys[&1].signing, 1, 3, 0, cw.fragments[0].clone());

        let valid = packets.iter().filter(|pk| pk.verify(&dir, 0)).count();
        let decoded = decode_packets(&rs, &packets, &dir, 0)?;
        println!(
            "{backend:?}: {valid}/{} packets verify, forged packet verifies = {}, decoded message {} intact = {}",
            p.d,
            forged.verify(&dir, 0),
            decoded.index,
            decoded == msg
        );
    }
    Ok(())
}
