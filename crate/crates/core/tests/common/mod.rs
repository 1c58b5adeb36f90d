#![allow(dead_code)]
//! Independent oracles and fixtures shared by the integration tests.

use std::collections::BTreeSet;

use avatar_core::config::{cluster_states, Configuration};
use avatar_core::state::{Command, GuestSlot, MergeInfo, Pfc, Resolution, Role, RootCtl, Stage};
use avatar_core::generate::sample_hosts;
use avatar_core::{legal_configuration, HostId, NodeState, Params};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Guest edges of the complete binary search tree over `[lo, hi)`, by direct recursion.
pub fn oracle_tree_edges(lo: u32, hi: u32, out: &mut Vec<(u32, u32)>) -> Option<u32> {
    if lo >= hi {
        return None;
    }
    let root = (lo + hi - 1) / 2;
    for c in [oracle_tree_edges(lo, root, out), oracle_tree_edges(root + 1, hi, out)].into_iter().flatten() {
        out.push((root, c));
    }
    Some(root)
}

/// Host simulating guest `g`: the largest host id not above `g`, else the smallest host.
pub fn oracle_host(hosts: &[u32], g: u32) -> u32 {
    hosts.iter().copied().filter(|&h| h <= g).max().unwrap_or(hosts[0])
}

/// Brute-force host graph: mapped tree edges plus the successor chain.
pub fn oracle_avatar(capacity: u32, hosts: &[u32]) -> BTreeSet<(u32, u32)> {
    let mut sorted = hosts.to_vec();
    sorted.sort_unstable();
    let mut guest = Vec::new();
    oracle_tree_edges(0, capacity, &mut guest);
    let mut out = BTreeSet::new();
    for (a, b) in guest {
        let (ha, hb) = (oracle_host(&sorted, a), oracle_host(&sorted, b));
        if ha != hb {
            out.insert((ha.min(hb), ha.max(hb)));
        }
    }
    for w in sorted.windows(2) {
        out.insert((w[0], w[1]));
    }
    out
}

/// Every nonempty subset of `[0, n)`, as sorted host lists.
pub fn subsets(n: u32) -> impl Iterator<Item = Vec<HostId>> {
    (1u32..(1 << n)).map(move |mask| (0..n).filter(|i| mask >> i & 1 == 1).map(HostId).collect())
}

pub fn legal(capacity: u32, hosts: &[HostId]) -> Configuration {
    legal_configuration(capacity, hosts).expect("valid host set")
}

/// A single-field corruption of a legal host state, with a label for failure messages.
pub fn corruptions(s: &NodeState, hosts: &[HostId], params: &Params) -> Vec<(String, NodeState)> {
    let mut out: Vec<(String, NodeState)> = Vec::new();
    let mut push = |label: String, f: &dyn Fn(&mut NodeState)| {
        let mut c = s.clone();
        f(&mut c);
        if c != *s {
            out.push((label, c));
        }
    };
    let others = || hosts.iter().copied().filter(|&h| h != s.id);
    for h in others() {
        push(format!("cluster={}", h.0), &|c| c.cluster = h);
        push(format!("pred={}", h.0), &|c| c.pred = Some(h));
        push(format!("succ={}", h.0), &|c| c.succ = Some(h));
        push(format!("holding={}", h.0), &|c| c.holding = Some(h));
    }
    push("pred=none".into(), &|c| c.pred = None);
    push("succ=none".into(), &|c| c.succ = None);
    push("faulty".into(), &|c| c.faulty = true);
    push("reset_last_round".into(), &|c| c.reset_last_round = true);
    push("followed".into(), &|c| c.followed = true);
    push("wait".into(), &|c| c.wait = 1);
    for role in [Role::OpenLeader, Role::ClosedLeader, Role::Searching, Role::Informed, Role::Merging] {
        push(format!("role={role:?}"), &|c| c.role = role);
    }
    let partner = others().next().unwrap_or(HostId(s.id.0 ^ 1));
    let key = 7;
    let view = params.psi.eval(key);
    push("merge=valid".into(), &|c| c.merge = Some(MergeInfo::new(partner, key, view, c.pred, c.succ)));
    push("merge=forged".into(), &|c| c.merge = Some(MergeInfo::new(partner, key, view ^ 1, c.pred, c.succ)));
    match s.root {
        Some(_) => {
            push("root=none".into(), &|c| c.root = None);
            push("root.timer".into(), &|c| c.root.as_mut().unwrap().timer = 1);
            for stage in [
                Stage::Unassigned,
                Stage::Leader { closing: false },
                Stage::Follower { long: false, polls_left: 1 },
                Stage::Waiting { leader: partner, handed: false },
                Stage::Matched { partner },
                Stage::Ready,
                Stage::Checking,
            ] {
                push(format!("root.stage={stage:?}"), &|c| c.root = Some(RootCtl::new(stage)));
            }
        }
        None => push("root=some".into(), &|c| c.root = Some(RootCtl::new(Stage::Terminated))),
    }
    push("guests+1".into(), &|c| c.guests.push(GuestSlot::default()));
    push("guests-1".into(), &|c| {
        c.guests.pop();
    });
    for i in 0..s.guests.len() {
        push(format!("guest[{i}].pfc"), &|c| c.guests[i].pfc = Pfc::Propagate(Command::Search));
        push(format!("guest[{i}].feedback"), &|c| {
            c.guests[i].pfc = Pfc::Feedback(Command::Lead, Default::default())
        });
        for res in [Resolution::Unresolved, Resolution::Won, Resolution::Lost] {
            push(format!("guest[{i}].res={res:?}"), &|c| c.guests[i].res = res);
        }
    }
    out
}

/// A proper cluster over `hosts` whose root is about to start a wave of the given stage.
pub fn cluster_config(capacity: u32, hosts: &[HostId], stage: Stage, faulty: bool) -> Configuration {
    let states = cluster_states(capacity, hosts, stage, faulty).expect("valid host set");
    let edges = avatar_core::avatar_edges(capacity, hosts).expect("valid").keys().copied().collect();
    Configuration { capacity, nodes: states.into_iter().map(|s| (s.id, s)).collect(), edges }
}

/// Two proper clusters that have finished their prep waves, root hosts adjacent.
pub fn paired_clusters(capacity: u32, seed: u64) -> (Configuration, Vec<HostId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=capacity);
    let mut hosts = sample_hosts(n, capacity, &mut rng);
    hosts.shuffle(&mut rng);
    let cut = rng.gen_range(1..n as usize);
    let (mut a, mut b) = (hosts[..cut].to_vec(), hosts[cut..].to_vec());
    a.sort();
    b.sort();
    let params = Params::new(capacity, seed).unwrap();
    let ca = cluster_config(capacity, &a, Stage::Ready, true);
    let cb = cluster_config(capacity, &b, Stage::Ready, true);
    let root_of = |c: &Configuration| c.nodes.values().find(|s| s.root.is_some()).unwrap().id;
    let (ra, rb) = (root_of(&ca), root_of(&cb));
    let key = rng.gen::<u32>() as u64;
    let view = params.psi.eval(key);
    let mut out = Configuration { capacity, nodes: Default::default(), edges: Default::default() };
    for (c, partner) in [(ca, rb), (cb, ra)] {
        for (h, mut s) in c.nodes {
            s.role = Role::Merging;
            s.merge = Some(MergeInfo::new(partner, key, view, s.pred, s.succ));
            for g in &mut s.guests {
                g.res = Resolution::Unresolved;
            }
            out.nodes.insert(h, s);
        }
        out.edges.extend(c.edges);
    }
    out.add_edge(ra, rb);
    hosts.sort();
    (out, hosts)
}
