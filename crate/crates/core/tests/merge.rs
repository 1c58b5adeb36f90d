mod common;

use avatar_core::topology::floor_log2;
use avatar_core::{is_proper_cluster, RunOptions, Simulation};
use common::paired_clusters;

/// Rounds until every host has left merge mode under one label, and the merged cluster is proper.
fn merge_rounds(capacity: u32, seed: u64) -> u64 {
    let (c, all) = paired_clusters(capacity, seed);
    let mut sim = Simulation::new(&c, seed).unwrap();
    let opts = RunOptions::for_capacity(capacity);
    let limit = 20 * (floor_log2(capacity) as u64 + 1);
    while sim.round() < limit {
        let rec = sim.step_round(&opts);
        assert_eq!(rec.resets, 0, "N={capacity} seed={seed} round {}", rec.round);
        assert!(rec.connected);
        let first = sim.states()[0].cluster;
        if sim.states().iter().all(|s| s.merge.is_none() && s.cluster == first) {
            let conf = sim.configuration();
            assert!(is_proper_cluster(&conf, &all, sim.params()), "N={capacity} seed={seed}");
            return rec.round;
        }
    }
    panic!("merge did not complete: N={capacity} seed={seed}");
}

#[test]
fn root_paired_merge_within_bound() {
    for capacity in [16u32, 64] {
        let bound = 5 * (floor_log2(capacity) as u64 + 1) + 4;
        for seed in 0..100 {
            let r = merge_rounds(capacity, seed);
            assert!(r <= bound, "N={capacity} seed={seed}: {r} > {bound}");
        }
    }
}

#[test]
fn small_merges() {
    for capacity in [2u32, 3, 5, 8] {
        let bound = 5 * (floor_log2(capacity) as u64 + 1) + 4;
        for seed in 0..30 {
            assert!(merge_rounds(capacity, seed) <= bound);
        }
    }
}
