//! Encode a message for n = 4, then decode it from a random subset of
//! fragments of exactly the threshold size and show that one fewer fails.

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidesim::codec::{derive_params, Message, ReedSolomon};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = derive_params(4, Ratio::new(3, 8), Ratio::new(1, 2))?;
    println!("n={} D={} threshold={} payload={}B message={}B", p.n, p.d, p.threshold, p.payload_bytes, p.message_bytes);

    let rs = ReedSolomon::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let msg = Message { index: 1, payload: (0..p.message_bytes).map(|_| rng.gen()).collect() };
    let cw = rs.encode(&msg)?;

    for size in [p.threshold, p.threshold - 1] {
        let keep = sample(&mut rng, p.d, size);
        let frags: Vec<(usize, &[u8])> = keep.iter().map(|i| (i, &cw.fragments[i][..])).collect();
        match rs.decode(&frags) {
            Ok(payload) => println!("{size} fragments: decoded, payload matches = {}", payload == msg.payload),
            Err(e) => println!("{size} fragments: {e}"),
        }
    }
    Ok(())
}
