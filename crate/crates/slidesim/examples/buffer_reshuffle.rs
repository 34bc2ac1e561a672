//! Load one outgoing buffer of an internal node and let the re-shuffle
//! spread the packets over all its buffers, printing the potential released
//! by each move.

use std::sync::Arc;

use slidesim::codec::Packet;
use slidesim::crypto::{keygen, Backend};
use slidesim::slide_core::{BufRef, Buffers};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 5;
    let cap = 2 * n;
    let (keys, _) = keygen(&[0], Backend::Ledger, 0)?;
    let mut bufs = Buffers::for_node(2, n, cap);

    let to = bufs.out_to(4).expect("edge to the receiver");
    for frag in 0..cap as u32 {
        bufs.outs[to].push(Arc::new(Packet::issue(&keys[&0].signing, 1, 1, frag, Arc::from(vec![0u8; 8]))));
    }
    print_heights("before", &bufs);

    let moves = bufs.reshuffle();
    for m in &moves {
        println!("  {} slot {} -> {} slot {} (drop {})", name(&bufs, m.from), m.from_slot, name(&bufs, m.to), m.to_slot, m.drop());
    }
    print_heights("after", &bufs);
    println!("total drop {}, packets {}", moves.iter().map(|m| m.drop()).sum::<i64>(), bufs.packets());
    bufs.check_balance()?;
    bufs.check_layout()?;
    Ok(())
}

fn name(b: &Buffers, r: BufRef) -> String {
    match r {
        BufRef::Out(i) => format!("out->{}", b.outs[i].peer),
        BufRef::In(i) => format!("in<-{}", b.ins[i].peer),
    }
}

fn print_heights(label: &str, b: &Buffers) {
    let outs: Vec<String> = b.outs.iter().map(|o| format!("out->{}:{}", o.peer, o.h)).collect();
    let ins: Vec<String> = b.ins.iter().map(|i| format!("in<-{}:{}", i.peer, i.h)).collect();
    println!("{label}: {} {}", outs.join(" "), ins.join(" "));
}
