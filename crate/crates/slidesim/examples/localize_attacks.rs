//! Run each corrupt behavior against the authenticated protocol and print
//! how the failure was classified and which node the sender eliminated.

use slidesim::adversary::Behavior;
use slidesim::engine::run_scenario;
use slidesim::engine::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let behaviors = [
        Behavior::Deleter,
        Behavior::Replacer,
        Behavior::ReportForger,
        Behavior::Ghost,
        Behavior::Duplicator,
        Behavior::Liar,
    ];
    for b in behaviors {
        let r = run_scenario(&Scenario::attack(4, b, 1, 6, 11), None)?;
        let fails: Vec<String> = r.failures().map(|t| format!("tx {} {:?}", t.tx, t.reason)).collect();
        println!("{b:?}: delivered {}/{}, failures [{}]", r.delivered, r.transmissions.len(), fails.join(", "));
        for e in &r.eliminations {
            println!("  eliminated node {} in tx {}: {}", e.node, e.tx, e.verdict.inequality);
        }
        let blacklisted: Vec<_> = r.failures().flat_map(|t| t.blacklisted.iter().copied()).collect();
        let cleared: Vec<_> = r.removals.iter().map(|x| x.node).collect();
        if !blacklisted.is_empty() {
            println!("  blacklisted {blacklisted:?}, later cleared {cleared:?}");
        }
    }

    let r = run_scenario(&Scenario::mixed(4, 8, 5), None)?;
    println!("mixed: delivered {}/{}", r.delivered, r.transmissions.len());
    for e in &r.eliminations {
        println!("  eliminated node {} in tx {}: {}", e.node, e.tx, e.verdict.inequality);
    }
    Ok(())
}
