//! An internal node's broadcast board receiving the start-of-transmission
//! header after a failure: packet transfers to a peer stay blocked until the
//! peer has been handed the header, blacklisting the node itself makes it
//! report its status, and a header signed by anyone but the sender is refused.

use slidesim::auth_proto::board::Board;
use slidesim::auth_proto::parcel::{Bp, Parcel, Reason};
use slidesim::crypto::{keygen, Backend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (keys, dir) = keygen(&[0, 1, 2, 3], Backend::Ed25519, 9)?;
    let mut board = Board::new(1, 4, keys[&1].signing.clone());
    let from_sender = |p: Parcel| Bp::new(keys[&0].signing.sign(p));
    let tx = 2;

    let forged = Bp::new(keys[&2].signing.sign(Parcel::Omega { eliminated: 0, blacklisted: 1, failed: 1, reason: None, tx }));
    println!("header signed by node 2 accepted: {}", board.receive(2, forged, &dir, tx).0);

    let sot = [
        Parcel::Omega { eliminated: 0, blacklisted: 1, failed: 1, reason: None, tx },
        Parcel::Failure { failed_tx: 1, reason: Reason::F3, tx },
        Parcel::Blacklisted { node: 1, since: 1, tx },
    ];
    for p in sot {
        let kind = p.kind();
        let (ok, effects) = board.receive(0, from_sender(p), &dir, tx);
        println!("{kind}: accepted {ok}, effects {effects:?}");
    }
    println!("full header held: {}", board.has_full_sot(tx));
    for peer in [0, 2, 3] {
        println!("transfers to {peer} allowed: {}", board.okay(peer, tx));
    }
    println!("next parcel for node 2: {:?}", board.choose(2).map(|bp| bp.parcel().kind()));
    Ok(())
}
