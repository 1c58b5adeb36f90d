//! Local consistency checks a host runs on its neighbourhood, and the global predicates
//! built from them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::Configuration;
use crate::state::{pfc_pair_legal, GuestSlot, NodeState, Params, Resolution, Stage};
use crate::topology::{avatar_edges, compute_ranges, GuestId, HostId, Range};

/// A neighbour as seen by a host: its last heartbeat, if one arrived over the current edge.
#[derive(Clone, Copy, Debug)]
pub struct Neighbor<'a> {
    pub id: HostId,
    pub state: Option<&'a NodeState>,
}

/// A neighbour belonging to the host's cluster, with the pointers that apply to it.
#[derive(Clone, Copy, Debug)]
pub struct Peer<'a> {
    pub state: &'a NodeState,
    pub range: Range,
    pub pred: Option<HostId>,
    pub succ: Option<HostId>,
    /// Only won copies count (a merging host seen by an already merged one).
    pub won_only: bool,
}

impl Peer<'_> {
    pub fn id(&self) -> HostId {
        self.state.id
    }
}

#[derive(Debug)]
pub struct LocalView<'a> {
    pub me: &'a NodeState,
    pub range: Range,
    pub peers: Vec<Peer<'a>>,
    pub external: Vec<&'a NodeState>,
    pub unknown: Vec<HostId>,
}

impl<'a> LocalView<'a> {
    /// Classify neighbours of a host that is not resolving a merge.
    pub fn build(me: &'a NodeState, nbrs: &[Neighbor<'a>], capacity: u32) -> Self {
        let mut peers = Vec::new();
        let mut external = Vec::new();
        let mut unknown = Vec::new();
        let in_merge = me.merge.is_some();
        for nb in nbrs {
            let Some(v) = nb.state else {
                unknown.push(nb.id);
                continue;
            };
            let switched = !in_merge
                && v.merge
                    .as_ref()
                    .is_some_and(|m| m.resolving && m.new_cluster == Some(me.cluster));
            if switched {
                let m = v.merge.as_ref().expect("checked");
                peers.push(Peer {
                    state: v,
                    range: Range::from_pointers(v.id, m.new_pred, m.new_succ, capacity),
                    pred: m.new_pred,
                    succ: m.new_succ,
                    won_only: true,
                });
            } else if v.cluster == me.cluster {
                peers.push(Peer {
                    state: v,
                    range: v.range(capacity),
                    pred: v.pred,
                    succ: v.succ,
                    won_only: false,
                });
            } else {
                external.push(v);
            }
        }
        LocalView { me, range: me.range(capacity), peers, external, unknown }
    }

    pub fn peer(&self, id: HostId) -> Option<&Peer<'a>> {
        self.peers.iter().find(|p| p.state.id == id)
    }

    pub fn peer_hosting(&self, g: u32) -> Option<&Peer<'a>> {
        self.peers.iter().find(|p| p.range.contains_raw(g))
    }

    /// Wave state of guest `g`, from this host or the peer simulating it.
    pub fn lookup(&self, g: u32, capacity: u32) -> Option<GuestSlot> {
        if self.range.contains_raw(g) {
            return self.me.guests.get((g - self.range.lo) as usize).copied();
        }
        let p = self.peer_hosting(g)?;
        let s = *p.state.slot(capacity, GuestId(g))?;
        if p.won_only && s.res != Resolution::Won {
            return None;
        }
        Some(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    SlotCount,
    RootGuestMismatch,
    RootCtlMismatch,
    Overlap(HostId),
    BadPred,
    BadSucc,
    MissingType2(GuestId),
    Unjustified(HostId),
    PfcPair(GuestId, GuestId),
    BadMerge,
    Watchdog,
    External(HostId),
    Unknown(HostId),
    NotTerminated,
    NeighborNotTerminated(HostId),
}

fn pfc_active(s: &GuestSlot) -> bool {
    matches!(s.res, Resolution::Settled | Resolution::Unresolved | Resolution::Won)
}

/// Checks of a host's own fields that need no neighbour.
pub fn own_violations(me: &NodeState, params: &Params, out: &mut Vec<Violation>) {
    let capacity = params.capacity();
    let range = me.range(capacity);
    if range.is_empty() || me.guests.len() != range.len() as usize {
        out.push(Violation::SlotCount);
        return;
    }
    let hosts_root = range.contains(params.tree.root());
    if hosts_root != (me.cluster == me.id) {
        out.push(Violation::RootGuestMismatch);
    }
    if hosts_root != me.root.is_some() {
        out.push(Violation::RootCtlMismatch);
    }
    if me.wait > params.connect_bound {
        out.push(Violation::Watchdog);
    }
    if let Some(r) = me.root {
        let over = match r.stage {
            Stage::Waiting { .. } => r.timer > params.follower_bound,
            Stage::Ready => r.timer > params.merge_bound,
            _ => false,
        };
        if over {
            out.push(Violation::Watchdog);
        }
        if r.stage == Stage::Ready && me.merge.is_none() {
            out.push(Violation::BadMerge);
        }
        // only a clean verification wave ends in this stage; once that wave has drained
        // from this host nothing may be left over
        let drained = me.guests.iter().all(|g| g.pfc.is_clean());
        if r.stage == Stage::Terminated && (me.faulty || r.timer != 0 || (drained && !me.is_terminated())) {
            out.push(Violation::RootCtlMismatch);
        }
    }
    match &me.merge {
        Some(m) => {
            if m.partner == me.cluster || !params.psi.valid(m.key, m.view) {
                out.push(Violation::BadMerge);
            }
            if m.timer > params.merge_bound {
                out.push(Violation::Watchdog);
            }
            if m.resolving && m.new_cluster.is_none() {
                out.push(Violation::BadMerge);
            }
            if !m.resolving && me.guests.iter().any(|s| s.res != Resolution::Unresolved) {
                out.push(Violation::BadMerge);
            }
        }
        None => {
            if me.guests.iter().any(|s| s.res != Resolution::Settled) {
                out.push(Violation::BadMerge);
            }
        }
    }
}

/// Structural checks of the cluster around a host that is not resolving a merge.
/// With `pfc`, also checks wave-state pairs on every tree edge touching the host.
pub fn structural_violations(view: &LocalView<'_>, params: &Params, pfc: bool, out: &mut Vec<Violation>) {
    let me = view.me;
    let capacity = params.capacity();
    let tree = &params.tree;
    let range = view.range;
    let lenient = !view.unknown.is_empty();
    for p in &view.peers {
        if p.range.overlaps(&range) || p.range.is_empty() {
            out.push(Violation::Overlap(p.id()));
        }
    }
    match me.pred {
        Some(pid) => match view.peer(pid) {
            Some(p) if p.range.hi == me.id.0 && p.succ == Some(me.id) => {}
            None if lenient && view.unknown.contains(&pid) => {}
            _ => out.push(Violation::BadPred),
        },
        None => {
            if range.lo != 0 {
                out.push(Violation::BadPred);
            }
        }
    }
    match me.succ {
        Some(sid) => match view.peer(sid) {
            Some(p) if p.pred == Some(me.id) && p.range.lo == range.hi => {}
            None if lenient && view.unknown.contains(&sid) => {}
            _ => out.push(Violation::BadSucc),
        },
        None => {
            if range.hi != capacity {
                out.push(Violation::BadSucc);
            }
        }
    }
    for p in &view.peers {
        let pid = p.id();
        let type1 = me.pred == Some(pid) || me.succ == Some(pid) || p.pred == Some(me.id) || p.succ == Some(me.id);
        if !type1 && !tree.ranges_adjacent(range, p.range) {
            out.push(Violation::Unjustified(pid));
        }
    }
    let own = |g: u32| me.guests.get((g - range.lo) as usize);
    for g in range.lo..range.hi {
        let par = tree.parent_raw(g);
        if par != u32::MAX && !range.contains_raw(par) {
            if view.peer_hosting(par).is_none() {
                if !lenient {
                    out.push(Violation::MissingType2(GuestId(par)));
                }
            } else if pfc {
                check_pair(view, capacity, par, g, out);
            }
        } else if pfc && par != u32::MAX {
            if let (Some(a), Some(b)) = (own(par), own(g)) {
                if pfc_active(a) && pfc_active(b) && !pfc_pair_legal(&a.pfc, &b.pfc) {
                    out.push(Violation::PfcPair(GuestId(par), GuestId(g)));
                }
            }
        }
        for c in tree.child_slots(g) {
            if c == u32::MAX || range.contains_raw(c) {
                continue;
            }
            if view.peer_hosting(c).is_none() {
                if !lenient {
                    out.push(Violation::MissingType2(GuestId(c)));
                }
            } else if pfc {
                check_pair(view, capacity, g, c, out);
            }
        }
    }
}

fn check_pair(view: &LocalView<'_>, capacity: u32, parent: u32, child: u32, out: &mut Vec<Violation>) {
    if let (Some(a), Some(b)) = (view.lookup(parent, capacity), view.lookup(child, capacity)) {
        if pfc_active(&a) && pfc_active(&b) && a.res == b.res && !pfc_pair_legal(&a.pfc, &b.pfc) {
            out.push(Violation::PfcPair(GuestId(parent), GuestId(child)));
        }
    }
}

/// Legality check of the final configuration from one host's neighbourhood.
pub fn legality_violations(me: &NodeState, nbrs: &[Neighbor<'_>], params: &Params) -> Vec<Violation> {
    let mut out = Vec::new();
    if !me.is_terminated() {
        out.push(Violation::NotTerminated);
    }
    own_violations(me, params, &mut out);
    if out.contains(&Violation::SlotCount) {
        return out;
    }
    let view = LocalView::build(me, nbrs, params.capacity());
    for &u in &view.unknown {
        out.push(Violation::Unknown(u));
    }
    for e in &view.external {
        out.push(Violation::External(e.id));
    }
    for p in &view.peers {
        if p.won_only || !p.state.is_terminated() {
            out.push(Violation::NeighborNotTerminated(p.id()));
        }
    }
    structural_violations(&view, params, true, &mut out);
    out
}

/// Hosts whose local legality check fails.
pub fn detectors(config: &Configuration, params: &Params) -> BTreeSet<HostId> {
    let adj = config.adjacency();
    let mut out = BTreeSet::new();
    for (h, s) in &config.nodes {
        let nbrs: Vec<Neighbor<'_>> = adj[h]
            .iter()
            .map(|v| Neighbor { id: *v, state: config.nodes.get(v) })
            .collect();
        if !legality_violations(s, &nbrs, params).is_empty() {
            out.insert(*h);
        }
    }
    out
}

/// Induced subgraph is the Avatar graph of `members` and every pointer pair matches it.
pub fn is_valid_cluster(config: &Configuration, members: &[HostId]) -> bool {
    let mut sorted = members.to_vec();
    sorted.sort();
    sorted.dedup();
    let Ok(ranges) = compute_ranges(&sorted, config.capacity) else { return false };
    for (h, _) in ranges.iter() {
        let Some(s) = config.nodes.get(&h) else { return false };
        if (s.pred, s.succ) != ranges.pointers(h).expect("member") {
            return false;
        }
    }
    let Ok(expected) = avatar_edges(config.capacity, &sorted) else { return false };
    let set: BTreeSet<HostId> = sorted.iter().copied().collect();
    let induced: Vec<(HostId, HostId)> = config
        .edges
        .iter()
        .filter(|(a, b)| set.contains(a) && set.contains(b))
        .copied()
        .collect();
    induced.len() == expected.len() && induced.iter().all(|e| expected.contains_key(e))
}

/// Valid, uniformly labelled by its root host, closed under its label, and wave-consistent.
pub fn is_proper_cluster(config: &Configuration, members: &[HostId], params: &Params) -> bool {
    if !is_valid_cluster(config, members) {
        return false;
    }
    let mut sorted = members.to_vec();
    sorted.sort();
    sorted.dedup();
    let ranges = compute_ranges(&sorted, config.capacity).expect("valid");
    let tree = &params.tree;
    let root_host = ranges.host_of(tree.root());
    let set: BTreeSet<HostId> = sorted.iter().copied().collect();
    for &h in &sorted {
        let s = &config.nodes[&h];
        let r = ranges.range_of(h).expect("member");
        if s.cluster != root_host || s.merge.is_some() || s.guests.len() != r.len() as usize {
            return false;
        }
        if s.guests.iter().any(|g| g.res != Resolution::Settled) {
            return false;
        }
    }
    for &(a, b) in &config.edges {
        let (ia, ib) = (set.contains(&a), set.contains(&b));
        if ia != ib {
            let outside = if ia { b } else { a };
            if config.nodes.get(&outside).is_some_and(|s| s.cluster == root_host) {
                return false;
            }
        }
    }
    let slot = |g: GuestId| {
        let h = ranges.host_of(g);
        let r = ranges.range_of(h).expect("member");
        config.nodes[&h].guests[(g.0 - r.lo) as usize]
    };
    tree.edges().all(|(p, c)| pfc_pair_legal(&slot(p).pfc, &slot(c).pfc))
}

/// Detector-free, a single cluster on the Avatar graph of all hosts, all faulty bits clear.
pub fn check_convergence(config: &Configuration, params: &Params) -> bool {
    let hosts = config.hosts();
    let clusters: BTreeSet<HostId> = config.nodes.values().map(|s| s.cluster).collect();
    if clusters.len() != 1 || config.nodes.values().any(|s| s.faulty) {
        return false;
    }
    let Ok(expected) = avatar_edges(config.capacity, &hosts) else { return false };
    if expected.len() != config.edges.len() || !config.edges.iter().all(|e| expected.contains_key(e)) {
        return false;
    }
    detectors(config, params).is_empty()
}

/// Partition hosts by their cluster label.
pub fn clusters(config: &Configuration) -> BTreeMap<HostId, Vec<HostId>> {
    let mut out: BTreeMap<HostId, Vec<HostId>> = BTreeMap::new();
    for (h, s) in &config.nodes {
        out.entry(s.cluster).or_default().push(*h);
    }
    out
}
