//! Record a trace of an honest run, audit it, then corrupt one buffer height
//! in the trace and audit again.

use slidesim::engine::run_scenario;
use slidesim::engine::scenario::{Mode, Scenario};
use slidesim::engine::trace::{audit, Record};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Scenario::churn(4, Mode::Slide, 0.3, 1, 3, None);
    let mut trace = Vec::new();
    run_scenario(&s, Some(&mut trace))?;
    let clean = audit(&trace[..])?;
    println!("clean: {} rounds, {} findings", clean.rounds, clean.findings.len());

    let mut edited = Vec::new();
    for line in std::str::from_utf8(&trace)?.lines() {
        let mut rec: Record = serde_json::from_str(line)?;
        if let Record::St { g: 50, nodes, .. } = &mut rec {
            nodes[1].out[0].1 += 1;
        }
        edited.push(serde_json::to_string(&rec)?);
    }
    let tampered = audit((edited.join("\n") + "\n").as_bytes())?;
    println!("tampered: {} findings", tampered.findings.len());
    for f in tampered.findings.iter().take(3) {
        println!("  round {}: {}", f.g, f.what);
    }
    Ok(())
}
