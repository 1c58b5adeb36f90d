mod common;

use std::collections::BTreeSet;

use avatar_core::topology::{degrees, floor_log2, max_degree};
use avatar_core::{avatar_edges, compute_ranges, max_degree_bound, CbtTree, GuestId, HostId};
use common::{oracle_avatar, oracle_host, oracle_tree_edges, subsets};
use proptest::prelude::*;

fn as_pairs(capacity: u32, hosts: &[HostId]) -> BTreeSet<(u32, u32)> {
    avatar_edges(capacity, hosts).unwrap().keys().map(|(a, b)| (a.0, b.0)).collect()
}

#[test]
fn all_subsets_of_eight_match_oracle() {
    assert_eq!(max_degree_bound(8), 8);
    let mut count = 0;
    for hosts in subsets(8) {
        let raw: Vec<u32> = hosts.iter().map(|h| h.0).collect();
        assert_eq!(as_pairs(8, &hosts), oracle_avatar(8, &raw), "hosts {raw:?}");
        let edges = avatar_edges(8, &hosts).unwrap();
        assert!(max_degree(&hosts, &edges) <= 8);
        count += 1;
    }
    assert_eq!(count, 255);
}

#[test]
fn tree_matches_recursive_definition() {
    for n in 1..=70 {
        let tree = CbtTree::new(n).unwrap();
        let mut expected = Vec::new();
        let root = oracle_tree_edges(0, n, &mut expected).unwrap();
        assert_eq!(tree.root(), GuestId(root));
        let mut got: Vec<(u32, u32)> = tree.edges().map(|(p, c)| (p.0, c.0)).collect();
        got.sort_unstable();
        expected.sort_unstable();
        assert_eq!(got, expected, "N={n}");
        assert_eq!(tree.num_levels(), floor_log2(n) + 1);
        for (p, c) in expected {
            assert_eq!(tree.parent(GuestId(c)), Some(GuestId(p)));
            assert!(tree.is_ancestor(GuestId(p), GuestId(c)));
            assert_eq!(tree.level(GuestId(c)), tree.level(GuestId(p)) + 1);
        }
    }
}

#[test]
fn single_host_has_no_edges() {
    assert!(avatar_edges(16, &[HostId(5)]).unwrap().is_empty());
    let r = compute_ranges(&[HostId(5)], 16).unwrap();
    assert_eq!(r.range_of(HostId(5)).map(|r| (r.lo, r.hi)), Some((0, 16)));
}

#[test]
fn bad_host_sets_rejected() {
    assert!(avatar_edges(8, &[HostId(8)]).is_err());
    assert!(avatar_edges(8, &[]).is_err());
}

fn host_set() -> impl Strategy<Value = (u32, Vec<HostId>)> {
    (2u32..300).prop_flat_map(|n| {
        proptest::collection::btree_set(0..n, 1..=(n as usize).min(64))
            .prop_map(move |s| (n, s.into_iter().map(HostId).collect()))
    })
}

proptest! {
    #[test]
    fn edges_match_oracle((n, hosts) in host_set()) {
        let raw: Vec<u32> = hosts.iter().map(|h| h.0).collect();
        prop_assert_eq!(as_pairs(n, &hosts), oracle_avatar(n, &raw));
    }

    #[test]
    fn degree_within_bound((n, hosts) in host_set()) {
        let edges = avatar_edges(n, &hosts).unwrap();
        for d in degrees(&hosts, &edges).values() {
            prop_assert!(*d <= max_degree_bound(n));
        }
    }

    #[test]
    fn ranges_partition_guests((n, hosts) in host_set()) {
        let ranges = compute_ranges(&hosts, n).unwrap();
        let raw: Vec<u32> = hosts.iter().map(|h| h.0).collect();
        let total: u32 = ranges.iter().map(|(_, r)| r.len()).sum();
        prop_assert_eq!(total, n);
        for g in 0..n {
            prop_assert_eq!(ranges.host_of(GuestId(g)).0, oracle_host(&raw, g));
        }
    }
}
