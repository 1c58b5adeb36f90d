//! Global configurations: host states plus the undirected host graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::state::{GuestSlot, NodeState, Pfc, Role, RootCtl, Stage};
use crate::topology::{avatar_edges, canonical, compute_ranges, CbtTree, HostId, TopologyError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub capacity: u32,
    pub nodes: BTreeMap<HostId, NodeState>,
    pub edges: BTreeSet<(HostId, HostId)>,
}

impl Configuration {
    pub fn hosts(&self) -> Vec<HostId> {
        self.nodes.keys().copied().collect()
    }

    pub fn adjacency(&self) -> BTreeMap<HostId, Vec<HostId>> {
        let mut adj: BTreeMap<HostId, Vec<HostId>> = self.nodes.keys().map(|&h| (h, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        adj
    }

    pub fn add_edge(&mut self, a: HostId, b: HostId) {
        if a != b {
            self.edges.insert(canonical(a, b));
        }
    }

    pub fn remove_edge(&mut self, a: HostId, b: HostId) -> bool {
        self.edges.remove(&canonical(a, b))
    }

    pub fn has_edge(&self, a: HostId, b: HostId) -> bool {
        self.edges.contains(&canonical(a, b))
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.hosts(), &self.edges)
    }
}

pub fn is_connected(hosts: &[HostId], edges: &BTreeSet<(HostId, HostId)>) -> bool {
    let Some(&start) = hosts.first() else { return true };
    let mut adj: BTreeMap<HostId, Vec<HostId>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(v) {
                stack.push(v);
            }
        }
    }
    hosts.iter().all(|h| seen.contains(h))
}

/// States of a fault-free cluster over the sorted host set `hosts`, all guests clean.
/// The root host gets `root_stage`; every member gets `faulty` and `role`.
pub fn cluster_states(
    capacity: u32,
    hosts: &[HostId],
    root_stage: Stage,
    faulty: bool,
) -> Result<Vec<NodeState>, TopologyError> {
    let ranges = compute_ranges(hosts, capacity)?;
    let tree = CbtTree::new(capacity)?;
    let root_host = ranges.host_of(tree.root());
    Ok(ranges
        .iter()
        .map(|(h, r)| {
            let (pred, succ) = ranges.pointers(h).expect("member");
            NodeState {
                id: h,
                cluster: root_host,
                pred,
                succ,
                guests: vec![GuestSlot { pfc: Pfc::Clean, ..Default::default() }; r.len() as usize],
                role: Role::Idle,
                root: (h == root_host).then_some(RootCtl::new(root_stage)),
                holding: None,
                followed: false,
                merge: None,
                faulty,
                reset_last_round: false,
                wait: 0,
            }
        })
        .collect())
}

/// The converged configuration for a host set: one terminated cluster on the Avatar graph.
pub fn legal_configuration(capacity: u32, hosts: &[HostId]) -> Result<Configuration, TopologyError> {
    let states = cluster_states(capacity, hosts, Stage::Terminated, false)?;
    let edges = avatar_edges(capacity, hosts)?.keys().copied().collect();
    Ok(Configuration {
        capacity,
        nodes: states.into_iter().map(|s| (s.id, s)).collect(),
        edges,
    })
}
