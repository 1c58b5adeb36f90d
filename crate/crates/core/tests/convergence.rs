use avatar_core::experiment::{run_experiment, ExperimentOptions};
use avatar_core::topology::floor_log2;
use avatar_core::{avatar_edges, GraphKind, InitialConfigSpec, StatePolicy};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = GraphKind> {
    prop_oneof![
        Just(GraphKind::Line),
        Just(GraphKind::Star),
        Just(GraphKind::Clique),
        Just(GraphKind::RandomTree),
        Just(GraphKind::RandomConnected),
        Just(GraphKind::AdversarialFakeClusters),
    ]
}

fn policy() -> impl Strategy<Value = StatePolicy> {
    prop_oneof![Just(StatePolicy::Zeroed), Just(StatePolicy::RandomFields), Just(StatePolicy::Crafted)]
}

fn spec() -> impl Strategy<Value = InitialConfigSpec> {
    (kind(), policy(), 1u32..=40, any::<u64>()).prop_flat_map(|(kind, policy, capacity, seed)| {
        (1..=capacity).prop_map(move |n| InitialConfigSpec { kind, n, capacity, seed, policy })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(std::env::var("PROPTEST_CASES").ok().and_then(|v| v.parse().ok()).unwrap_or(96)))]

    /// From any generated start: converge to the target graph, stay connected,
    /// never let one witness hand an endpoint more than 2 log N new neighbours, then fall silent.
    #[test]
    fn converges_safely(spec in spec()) {
        let mut opts = ExperimentOptions::for_capacity(spec.capacity);
        opts.closure_rounds = 10;
        let exp = run_experiment(&spec, &opts).unwrap();
        let r = &exp.result;
        prop_assert!(r.converged(), "{:?}", spec);
        prop_assert_eq!(r.connectivity_violations, 0);
        prop_assert!(r.max_gain <= (2 * floor_log2(spec.capacity)).max(1));
        prop_assert_eq!(r.silent_after_convergence, Some(true));
        let hosts = exp.generated.config.hosts();
        let target: Vec<_> = avatar_edges(spec.capacity, &hosts).unwrap().into_keys().collect();
        prop_assert_eq!(exp.sim.edge_list(), target);
    }
}
