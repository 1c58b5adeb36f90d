mod common;

use avatar_core::generate::sample_hosts;
use avatar_core::state::Stage;
use avatar_core::topology::floor_log2;
use avatar_core::{RunOptions, Simulation};
use common::cluster_config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rounds until a root-started verification wave has returned and every guest is clean again.
fn wave_rounds(capacity: u32, n: u32, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts = sample_hosts(n, capacity, &mut rng);
    let c = cluster_config(capacity, &hosts, Stage::Checking, true);
    let mut sim = Simulation::new(&c, seed).unwrap();
    let opts = RunOptions::for_capacity(capacity);
    let limit = 4 * (floor_log2(capacity) as u64 + 1) + 8;
    while sim.round() < limit {
        let rec = sim.step_round(&opts);
        assert_eq!(rec.resets, 0);
        assert_eq!(rec.actions_applied, 0);
        let done = sim.states().iter().all(|s| s.is_terminated());
        if done {
            return rec.round;
        }
    }
    panic!("wave did not complete: N={capacity} n={n} seed={seed}");
}

#[test]
fn wave_within_bound() {
    for capacity in [4u32, 8, 16, 32] {
        let bound = 2 * (floor_log2(capacity) as u64 + 1) + 2;
        for n in [1u32, 2, 4, 8, 16].into_iter().filter(|&n| n <= capacity) {
            let seen: Vec<u64> = (0..20).map(|seed| wave_rounds(capacity, n, seed)).collect();
            let worst = *seen.iter().max().unwrap();
            assert!(worst <= bound, "N={capacity} n={n}: {worst} > {bound}");
            // the wave spans the whole guest tree, so its length does not depend on the host set
            assert!(seen.iter().all(|&r| r == worst), "N={capacity} n={n}: {seen:?}");
        }
    }
}
