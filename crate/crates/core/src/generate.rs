//! Initial configurations: base graphs and state-corruption policies.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{cluster_states, Configuration};
use crate::state::{
    Command, Feedback, GuestSlot, MergeInfo, NodeState, Pfc, Psi, Resolution, Role, RootCtl, Stage,
};
use crate::topology::{avatar_edges, canonical, CbtTree, HostId, Range, TopologyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Line,
    Star,
    Clique,
    RandomTree,
    RandomConnected,
    /// Chains of two-host clusters whose bridging members carry forged merge states.
    AdversarialMergeForgery,
    /// Terminated-looking clusters labelled with ids of hosts that are not their roots.
    AdversarialFakeClusters,
}

impl GraphKind {
    pub const ALL: [GraphKind; 7] = [
        GraphKind::Line,
        GraphKind::Star,
        GraphKind::Clique,
        GraphKind::RandomTree,
        GraphKind::RandomConnected,
        GraphKind::AdversarialMergeForgery,
        GraphKind::AdversarialFakeClusters,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GraphKind::Line => "line",
            GraphKind::Star => "star",
            GraphKind::Clique => "clique",
            GraphKind::RandomTree => "random-tree",
            GraphKind::RandomConnected => "random-connected",
            GraphKind::AdversarialMergeForgery => "adversarial-merge-forgery",
            GraphKind::AdversarialFakeClusters => "adversarial-fake-clusters",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphKind {
    type Err = GenerateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GraphKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GenerateError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatePolicy {
    /// Every field at its zero value.
    Zeroed,
    /// Every field drawn at random.
    #[default]
    RandomFields,
    /// Each host a fresh singleton cluster.
    Crafted,
}

impl StatePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StatePolicy::Zeroed => "zeroed",
            StatePolicy::RandomFields => "random-fields",
            StatePolicy::Crafted => "crafted",
        }
    }
}

impl fmt::Display for StatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatePolicy {
    type Err = GenerateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeroed" => Ok(StatePolicy::Zeroed),
            "random-fields" => Ok(StatePolicy::RandomFields),
            "crafted" => Ok(StatePolicy::Crafted),
            _ => Err(GenerateError::UnknownPolicy(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("unknown graph kind {0:?}")]
    UnknownKind(String),
    #[error("unknown state policy {0:?}")]
    UnknownPolicy(String),
    #[error("need 1 <= n <= N (got n={n}, N={capacity})")]
    BadSize { n: u32, capacity: u32 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialConfigSpec {
    pub kind: GraphKind,
    pub n: u32,
    pub capacity: u32,
    pub seed: u64,
    pub policy: StatePolicy,
}

/// A planted pair of forged merge states and whether its random string happens to be valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forgery {
    pub a: HostId,
    pub b: HostId,
    pub key: u64,
    pub view: u64,
    pub success: bool,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub config: Configuration,
    pub forgeries: Vec<Forgery>,
}

fn gen_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xD134_2543_DE82_EF95) ^ 0x5851_F42D_4C95_7F2D)
}

/// Sorted host ids: all of `[0, N)` when `n == N`, otherwise a random subset.
pub fn sample_hosts(n: u32, capacity: u32, rng: &mut impl Rng) -> Vec<HostId> {
    let mut v: Vec<HostId> = if n == capacity {
        (0..capacity).map(HostId).collect()
    } else {
        index::sample(rng, capacity as usize, n as usize)
            .into_iter()
            .map(|i| HostId(i as u32))
            .collect()
    };
    v.sort();
    v
}

fn random_tree(hosts: &[HostId], rng: &mut impl Rng) -> BTreeSet<(HostId, HostId)> {
    let mut order = hosts.to_vec();
    order.shuffle(rng);
    let mut edges = BTreeSet::new();
    for i in 1..order.len() {
        let j = rng.gen_range(0..i);
        edges.insert(canonical(order[i], order[j]));
    }
    edges
}

fn base_edges(kind: GraphKind, hosts: &[HostId], rng: &mut impl Rng) -> BTreeSet<(HostId, HostId)> {
    let n = hosts.len();
    match kind {
        GraphKind::Line => hosts.windows(2).map(|w| (w[0], w[1])).collect(),
        GraphKind::Star => {
            let hub = hosts[rng.gen_range(0..n)];
            hosts.iter().filter(|&&h| h != hub).map(|&h| canonical(hub, h)).collect()
        }
        GraphKind::Clique => {
            let mut e = BTreeSet::new();
            for i in 0..n {
                for j in i + 1..n {
                    e.insert((hosts[i], hosts[j]));
                }
            }
            e
        }
        GraphKind::RandomTree => random_tree(hosts, rng),
        _ => {
            let mut e = random_tree(hosts, rng);
            if n >= 3 {
                let max_edges = n * (n - 1) / 2;
                let target = (e.len() + n).min(max_edges);
                while e.len() < target {
                    let a = hosts[rng.gen_range(0..n)];
                    let b = hosts[rng.gen_range(0..n)];
                    if a != b {
                        e.insert(canonical(a, b));
                    }
                }
            }
            e
        }
    }
}

fn random_command(rng: &mut impl Rng) -> Command {
    [
        Command::Lead,
        Command::Close,
        Command::Search,
        Command::Inform,
        Command::Prep,
        Command::Merge,
        Command::Terminate,
    ][rng.gen_range(0..7)]
}

fn random_opt_host(hosts: &[HostId], rng: &mut impl Rng) -> Option<HostId> {
    rng.gen_bool(0.5).then(|| hosts[rng.gen_range(0..hosts.len())])
}

fn random_pfc(hosts: &[HostId], rng: &mut impl Rng) -> Pfc {
    match rng.gen_range(0..3) {
        0 => Pfc::Clean,
        1 => Pfc::Propagate(random_command(rng)),
        _ => Pfc::Feedback(
            random_command(rng),
            Feedback {
                faulty: rng.gen(),
                followed: rng.gen(),
                candidate: random_opt_host(hosts, rng),
                handoff: random_opt_host(hosts, rng),
            },
        ),
    }
}

fn random_stage(hosts: &[HostId], rng: &mut impl Rng) -> Stage {
    let h = hosts[rng.gen_range(0..hosts.len())];
    match rng.gen_range(0..9) {
        0 => Stage::Unassigned,
        1 => Stage::Leader { closing: rng.gen() },
        2 => Stage::Follower { long: rng.gen(), polls_left: rng.gen_range(0..13) },
        3 => Stage::Informing { leader: h },
        4 => Stage::Waiting { leader: h, handed: rng.gen() },
        5 => Stage::Matched { partner: h },
        6 => Stage::Ready,
        7 => Stage::Checking,
        _ => Stage::Terminated,
    }
}

/// A state with every field drawn at random (pointers point in the right direction so that
/// the guest vector has a well-defined length).
pub fn random_state(id: HostId, hosts: &[HostId], capacity: u32, tree: &CbtTree, rng: &mut impl Rng) -> NodeState {
    let lower: Vec<HostId> = hosts.iter().copied().filter(|&h| h < id).collect();
    let upper: Vec<HostId> = hosts.iter().copied().filter(|&h| h > id).collect();
    let pred = (!lower.is_empty() && rng.gen_bool(0.5)).then(|| lower[rng.gen_range(0..lower.len())]);
    let succ = (!upper.is_empty() && rng.gen_bool(0.5)).then(|| upper[rng.gen_range(0..upper.len())]);
    let range = Range::from_pointers(id, pred, succ, capacity);
    let merging = rng.gen_bool(0.2);
    let resolving = merging && rng.gen_bool(0.5);
    let guests = (0..range.len())
        .map(|_| GuestSlot {
            pfc: random_pfc(hosts, rng),
            res: if !merging {
                Resolution::Settled
            } else if resolving {
                [Resolution::Unresolved, Resolution::Won, Resolution::Lost][rng.gen_range(0..3)]
            } else {
                Resolution::Unresolved
            },
        })
        .collect();
    let hosts_root = range.contains(tree.root());
    let merge = merging.then(|| {
        let mut m = MergeInfo::new(hosts[rng.gen_range(0..hosts.len())], rng.gen_range(0..1000), rng.gen(), pred, succ);
        m.resolving = resolving;
        m.done = rng.gen();
        m.new_cluster = resolving.then(|| hosts[rng.gen_range(0..hosts.len())]);
        m.timer = rng.gen_range(0..20);
        m
    });
    NodeState {
        id,
        cluster: if rng.gen_bool(0.3) { id } else { hosts[rng.gen_range(0..hosts.len())] },
        pred,
        succ,
        guests,
        role: [
            Role::Idle,
            Role::OpenLeader,
            Role::ClosedLeader,
            Role::Searching,
            Role::Informed,
            Role::Merging,
        ][rng.gen_range(0..6)],
        root: (hosts_root || rng.gen_bool(0.1)).then(|| RootCtl {
            stage: random_stage(hosts, rng),
            timer: rng.gen_range(0..20),
        }),
        holding: random_opt_host(hosts, rng),
        followed: rng.gen(),
        merge,
        faulty: rng.gen(),
        reset_last_round: rng.gen_bool(0.2),
        wait: rng.gen_range(0..5),
    }
}

pub fn zeroed_state(id: HostId, capacity: u32) -> NodeState {
    NodeState {
        id,
        cluster: HostId(0),
        pred: None,
        succ: None,
        guests: vec![GuestSlot::default(); capacity as usize],
        role: Role::Idle,
        root: None,
        holding: None,
        followed: false,
        merge: None,
        faulty: false,
        reset_last_round: false,
        wait: 0,
    }
}

pub fn crafted_state(id: HostId, capacity: u32) -> NodeState {
    let mut s = NodeState::singleton(id, capacity);
    s.reset_last_round = false;
    s
}

pub fn policy_state(
    policy: StatePolicy,
    id: HostId,
    hosts: &[HostId],
    capacity: u32,
    tree: &CbtTree,
    rng: &mut impl Rng,
) -> NodeState {
    match policy {
        StatePolicy::Zeroed => zeroed_state(id, capacity),
        StatePolicy::RandomFields => random_state(id, hosts, capacity, tree, rng),
        StatePolicy::Crafted => crafted_state(id, capacity),
    }
}

pub fn generate(spec: &InitialConfigSpec) -> Result<Generated, GenerateError> {
    let (n, capacity) = (spec.n, spec.capacity);
    if n == 0 || n > capacity {
        return Err(GenerateError::BadSize { n, capacity });
    }
    let tree = CbtTree::new(capacity)?;
    let mut rng = gen_rng(spec.seed);
    let hosts = sample_hosts(n, capacity, &mut rng);
    match spec.kind {
        GraphKind::AdversarialMergeForgery => return forgery_config(spec, &hosts, &tree, &mut rng),
        GraphKind::AdversarialFakeClusters => return fake_clusters(spec, &hosts, &mut rng),
        _ => {}
    }
    let edges = base_edges(spec.kind, &hosts, &mut rng);
    let nodes = hosts
        .iter()
        .map(|&h| (h, policy_state(spec.policy, h, &hosts, capacity, &tree, &mut rng)))
        .collect();
    Ok(Generated { config: Configuration { capacity, nodes, edges }, forgeries: Vec::new() })
}

/// Groups of four hosts form two proper two-host clusters joined by one edge between their
/// non-root members, both of which claim to be preparing a merge with the other cluster.
/// Groups and leftover singletons are chained by edges between cluster roots, so every
/// forged edge is a bridge.
fn forgery_config(
    spec: &InitialConfigSpec,
    hosts: &[HostId],
    tree: &CbtTree,
    rng: &mut ChaCha8Rng,
) -> Result<Generated, GenerateError> {
    let capacity = spec.capacity;
    let psi = Psi::new(spec.seed, capacity);
    let mut order = hosts.to_vec();
    order.shuffle(rng);
    let mut config = Configuration { capacity, nodes: Default::default(), edges: Default::default() };
    let mut forgeries = Vec::new();
    let mut chain: Vec<(HostId, HostId)> = Vec::new();
    let mut chunks = order.chunks(4);
    for chunk in &mut chunks {
        if chunk.len() < 4 {
            for &h in chunk {
                config.nodes.insert(h, crafted_state(h, capacity));
                chain.push((h, h));
            }
            continue;
        }
        let mut pair_states = Vec::new();
        for half in chunk.chunks(2) {
            let mut members = half.to_vec();
            members.sort();
            let states = cluster_states(capacity, &members, Stage::Unassigned, true)?;
            let root = states[0].cluster;
            let other = members.iter().copied().find(|&h| h != root).expect("two members");
            config.add_edge(members[0], members[1]);
            pair_states.push((root, other, states));
        }
        let key = rng.gen_range(0..1_000_000u64);
        let view = rng.gen::<u64>() & psi.mask();
        let (ra, xa, _) = &pair_states[0];
        let (rb, xb, _) = &pair_states[1];
        let (ra, xa, rb, xb) = (*ra, *xa, *rb, *xb);
        config.add_edge(xa, xb);
        for (root, other, states) in pair_states {
            let partner = if root == ra { rb } else { ra };
            for mut s in states {
                if s.id == other {
                    s.role = Role::Merging;
                    s.merge = Some(MergeInfo::new(partner, key, view, s.pred, s.succ));
                    for g in &mut s.guests {
                        g.res = Resolution::Unresolved;
                    }
                }
                config.nodes.insert(s.id, s);
            }
            let _ = root;
        }
        forgeries.push(Forgery { a: xa, b: xb, key, view, success: psi.valid(key, view) });
        chain.push((ra, rb));
    }
    for w in chain.windows(2) {
        config.add_edge(w[0].1, w[1].0);
    }
    let _ = tree;
    Ok(Generated { config, forgeries })
}

/// Contiguous chunks of the sorted host set, each wired as its Avatar graph with
/// terminated states, labelled with a member that is not the chunk's root host.
fn fake_clusters(spec: &InitialConfigSpec, hosts: &[HostId], rng: &mut ChaCha8Rng) -> Result<Generated, GenerateError> {
    let capacity = spec.capacity;
    let mut config = Configuration { capacity, nodes: Default::default(), edges: Default::default() };
    let mut start = 0;
    let mut chunks: Vec<Vec<HostId>> = Vec::new();
    while start < hosts.len() {
        let len = rng.gen_range(1..=hosts.len() - start).min(8);
        chunks.push(hosts[start..start + len].to_vec());
        start += len;
    }
    for members in &chunks {
        let mut states = cluster_states(capacity, members, Stage::Terminated, false)?;
        let root = states[0].cluster;
        let label = members
            .iter()
            .copied()
            .find(|&h| h != root)
            .unwrap_or_else(|| hosts.iter().copied().find(|&h| h != root).unwrap_or(root));
        for s in &mut states {
            s.cluster = label;
        }
        for (a, b) in avatar_edges(capacity, members)?.into_keys() {
            config.add_edge(a, b);
        }
        for s in states {
            config.nodes.insert(s.id, s);
        }
    }
    for w in chunks.windows(2) {
        let a = w[0][rng.gen_range(0..w[0].len())];
        let b = w[1][rng.gen_range(0..w[1].len())];
        config.add_edge(a, b);
    }
    Ok(Generated { config, forgeries: Vec::new() })
}
