//! A churning edge schedule around a fixed backbone: validate it against a
//! corruption plan, sample a few rounds and show that putting a corrupt node
//! on the backbone is refused.

use std::collections::BTreeMap;

use slidesim::adversary::{complete, corrupted_by, smallest_path, Behavior, Corruption, Schedule};

fn main() {
    let n = 5;
    let plan = BTreeMap::from([(2, Corruption { round: 1, behavior: Behavior::Deleter })]);
    let base: Vec<_> = complete(n).into_iter().collect();
    let backbone = Schedule::default_backbone(n, &base, &plan).expect("honest path exists");
    println!("backbone {backbone:?}");

    let schedule = Schedule::Churn { p: 0.3, seed: 11, base: base.clone(), backbone };
    schedule.check(n, &plan).expect("structurally valid");
    match schedule.validate(n, &plan, 2000) {
        Ok(()) => println!("2000 rounds conform"),
        Err(v) => println!("{v}"),
    }

    let mut runner = schedule.runner();
    for g in 1..=5 {
        let active = runner.next_round();
        let bad = corrupted_by(&plan, g);
        println!("round {g}: {} active edges, shortest honest path {:?}", active.len(), smallest_path(n, &active, &bad));
    }

    let bad_spine = Schedule::Churn { p: 0.3, seed: 11, base, backbone: vec![0, 2, 4] };
    println!("backbone through node 2: {:?}", bad_spine.check(n, &plan));
}
