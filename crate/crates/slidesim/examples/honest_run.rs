//! Run honest scenarios in both modes and print the per-transmission
//! delivery rounds against the slide-mode length bound.

use slidesim::cli::summary;
use slidesim::engine::run_scenario;
use slidesim::engine::scenario::{Mode, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for mode in [Mode::Slide, Mode::Auth] {
        let s = Scenario::churn(4, mode, 0.3, 3, 21, None);
        let r = run_scenario(&s, None)?;
        print!("{}", summary(&r));
        for d in &r.deliveries {
            println!("  message {} decoded in round {} of {}", d.message, d.round, 3 * r.d);
        }
        for t in &r.transmissions {
            println!("  tx {}: wasted {} blocked {} drop {}", t.tx, t.wasted, t.blocked, t.drop);
        }
    }
    Ok(())
}
