mod common;

use std::collections::BTreeMap;

use avatar_core::generate::sample_hosts;
use avatar_core::{detectors, RunOptions, Simulation};
use common::{corruptions, legal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Corrupt one field of one host in a legal configuration: the fault must be
/// detected and the system must return to the same legal configuration.
fn single_faults(capacity: u32, host_sets: u64) -> BTreeMap<String, usize> {
    let mut stuck = BTreeMap::new();
    for set in 0..host_sets {
        let mut rng = ChaCha8Rng::seed_from_u64(set);
        let n = 1 + (set as u32 * 7) % capacity;
        let hosts = sample_hosts(n, capacity, &mut rng);
        let c = legal(capacity, &hosts);
        let base = Simulation::new(&c, set).unwrap();
        let opts = RunOptions::for_capacity(capacity);
        for h in &hosts {
            for (label, bad) in corruptions(&c.nodes[h], &hosts, base.params()) {
                let mut sim = base.clone();
                sim.inject(bad).unwrap();
                assert!(!detectors(&sim.configuration(), sim.params()).is_empty(), "{label} undetected");
                let sum = sim.run(&opts);
                if sum.converged_round.is_none() || sim.configuration() != c {
                    let key = label.split('=').next().unwrap().to_string();
                    *stuck.entry(format!("{key} n={n}")).or_insert(0) += 1;
                }
            }
        }
    }
    stuck
}

#[test]
fn single_fault_recovery_small() {
    let stuck = single_faults(8, 16);
    assert!(stuck.is_empty(), "{stuck:?}");
}

#[test]
fn single_fault_recovery_medium() {
    let stuck = single_faults(32, 4);
    assert!(stuck.is_empty(), "{stuck:?}");
}
