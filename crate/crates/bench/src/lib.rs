//! Fixtures for the benchmarks in `benches/`.

use avatar_core::generate::generate;
use avatar_core::{GraphKind, HostId, InitialConfigSpec, RunOptions, Simulation, StatePolicy};

/// Every `stride`-th id below `capacity`.
pub fn spaced_hosts(capacity: u32, stride: u32) -> Vec<HostId> {
    (0..capacity).step_by(stride.max(1) as usize).map(HostId).collect()
}

pub fn spec(kind: GraphKind, capacity: u32, seed: u64) -> InitialConfigSpec {
    InitialConfigSpec { kind, n: capacity, capacity, seed, policy: StatePolicy::RandomFields }
}

/// A simulation advanced `rounds` rounds from a generated start, so merges are in flight.
pub fn mid_run(kind: GraphKind, capacity: u32, seed: u64, rounds: u64) -> (Simulation, RunOptions) {
    let g = generate(&spec(kind, capacity, seed)).expect("valid spec");
    let mut sim = Simulation::new(&g.config, seed).expect("generated configs are valid");
    let mut opts = RunOptions::for_capacity(capacity);
    opts.keep_records = false;
    for _ in 0..rounds {
        sim.step_round(&opts);
    }
    (sim, opts)
}
