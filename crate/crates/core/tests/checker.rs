mod common;

use avatar_core::config::Configuration;
use avatar_core::state::Stage;
use avatar_core::{detectors, is_proper_cluster, is_valid_cluster, HostId, Params};
use common::{cluster_config, corruptions, legal, subsets};

/// Edges addable in one round: not present, and the endpoints share a neighbour.
fn distance_two(c: &Configuration) -> Vec<(HostId, HostId)> {
    let adj = c.adjacency();
    let hosts = c.hosts();
    let mut out = Vec::new();
    for (i, &a) in hosts.iter().enumerate() {
        for &b in &hosts[i + 1..] {
            if !c.has_edge(a, b) && adj[&a].iter().any(|v| adj[&b].contains(v)) {
                out.push((a, b));
            }
        }
    }
    out
}

#[test]
fn legal_configurations_are_silent_to_detectors() {
    let params = Params::new(8, 0).unwrap();
    for hosts in subsets(8) {
        let c = legal(8, &hosts);
        assert!(detectors(&c, &params).is_empty(), "{hosts:?}");
        assert!(is_proper_cluster(&c, &hosts, &params));
    }
}

#[test]
fn every_single_perturbation_is_detected() {
    let params = Params::new(8, 0).unwrap();
    let mut checked = 0usize;
    for hosts in subsets(8) {
        let base = legal(8, &hosts);
        for &(a, b) in &base.edges {
            let mut c = base.clone();
            c.remove_edge(a, b);
            assert!(!detectors(&c, &params).is_empty(), "{hosts:?} delete {a}-{b}");
            checked += 1;
        }
        for (a, b) in distance_two(&base) {
            let mut c = base.clone();
            c.add_edge(a, b);
            assert!(!detectors(&c, &params).is_empty(), "{hosts:?} add {a}-{b}");
            checked += 1;
        }
        for s in base.nodes.values() {
            for (label, bad) in corruptions(s, &hosts, &params) {
                let mut c = base.clone();
                c.nodes.insert(s.id, bad);
                assert!(!detectors(&c, &params).is_empty(), "{hosts:?} host {} {label}", s.id);
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn cluster_predicates() {
    let params = Params::new(16, 0).unwrap();
    let hosts = [HostId(1), HostId(4), HostId(9), HostId(12)];
    let c = cluster_config(16, &hosts, Stage::Checking, true);
    assert!(is_valid_cluster(&c, &hosts));
    assert!(is_proper_cluster(&c, &hosts, &params));
    assert!(!is_valid_cluster(&c, &hosts[..3]));
    let mut broken = c.clone();
    let &(a, b) = broken.edges.iter().next().unwrap();
    broken.remove_edge(a, b);
    assert!(!is_valid_cluster(&broken, &hosts));
}
