//! Node state, messages and actions exchanged by the protocol.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::topology::{ceil_log2, CbtTree, GuestId, HostId, Range, TopologyError};

/// Command carried by a propagate–feedback–clean wave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    /// Open the cluster as a potential leader.
    Lead,
    /// Close leadership and attach waiting followers.
    Close,
    /// Poll members for a neighbouring leader.
    Search,
    /// Tell members a leader was chosen.
    Inform,
    /// Distribute merge partner and the shared random string.
    Prep,
    /// Post-merge wave over the merged tree.
    Merge,
    /// Verify the cluster and clear the faulty bit.
    Terminate,
}

/// Aggregated feedback payload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Feedback {
    pub faulty: bool,
    pub followed: bool,
    pub candidate: Option<HostId>,
    pub handoff: Option<HostId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pfc {
    #[default]
    Clean,
    Propagate(Command),
    Feedback(Command, Feedback),
}

impl Pfc {
    pub fn is_clean(&self) -> bool {
        matches!(self, Pfc::Clean)
    }

    pub fn command(&self) -> Option<Command> {
        match *self {
            Pfc::Clean => None,
            Pfc::Propagate(c) | Pfc::Feedback(c, _) => Some(c),
        }
    }
}

/// Whether a (parent, child) pair of wave states can occur in a fault-free cluster.
pub fn pfc_pair_legal(parent: &Pfc, child: &Pfc) -> bool {
    match (parent, child) {
        (Pfc::Clean, Pfc::Clean) => true,
        (Pfc::Propagate(_), Pfc::Clean) => true,
        (Pfc::Propagate(a), Pfc::Propagate(b)) => a == b,
        (Pfc::Propagate(a), Pfc::Feedback(b, _)) => a == b,
        (Pfc::Feedback(a, _), Pfc::Feedback(b, _)) => a == b,
        (Pfc::Feedback(..), Pfc::Clean) => true,
        _ => false,
    }
}

/// Merge status of one guest copy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[default]
    Settled,
    Unresolved,
    Won,
    Lost,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GuestSlot {
    pub pfc: Pfc,
    pub res: Resolution,
}

/// Member-visible role of a host.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[default]
    Idle,
    OpenLeader,
    ClosedLeader,
    Searching,
    Informed,
    Merging,
}

/// Controller of the host owning the cluster's root guest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Unassigned,
    Leader { closing: bool },
    Follower { long: bool, polls_left: u8 },
    Informing { leader: HostId },
    Waiting { leader: HostId, handed: bool },
    Matched { partner: HostId },
    Ready,
    Checking,
    Terminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RootCtl {
    pub stage: Stage,
    pub timer: u32,
}

impl RootCtl {
    pub fn new(stage: Stage) -> Self {
        RootCtl { stage, timer: 0 }
    }
}

/// Merge bookkeeping; present from the prep wave until the host adopts the merged cluster.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MergeInfo {
    pub partner: HostId,
    pub key: u64,
    pub view: u64,
    pub resolving: bool,
    pub done: bool,
    pub new_pred: Option<HostId>,
    pub new_succ: Option<HostId>,
    pub new_cluster: Option<HostId>,
    /// Introductions addressed to this host by itself: (guest, counterpart, new cluster).
    pub intro: Vec<(GuestId, Counterpart, HostId)>,
    pub verdict: Option<Feedback>,
    pub timer: u32,
}

impl MergeInfo {
    pub fn new(partner: HostId, key: u64, view: u64, pred: Option<HostId>, succ: Option<HostId>) -> Self {
        MergeInfo {
            partner,
            key,
            view,
            resolving: false,
            done: false,
            new_pred: pred,
            new_succ: succ,
            new_cluster: None,
            intro: Vec::new(),
            verdict: None,
            timer: 0,
        }
    }
}

/// Full local state of a host; broadcast to all neighbours every round.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub id: HostId,
    pub cluster: HostId,
    pub pred: Option<HostId>,
    pub succ: Option<HostId>,
    /// One slot per guest of the tree range derived from `pred`/`succ`.
    pub guests: Vec<GuestSlot>,
    pub role: Role,
    pub root: Option<RootCtl>,
    pub holding: Option<HostId>,
    pub followed: bool,
    pub merge: Option<MergeInfo>,
    pub faulty: bool,
    pub reset_last_round: bool,
    pub wait: u32,
}

impl NodeState {
    /// The state a host takes on reset: a singleton cluster owning every guest.
    pub fn singleton(id: HostId, capacity: u32) -> Self {
        NodeState {
            id,
            cluster: id,
            pred: None,
            succ: None,
            guests: vec![GuestSlot::default(); capacity as usize],
            role: Role::Idle,
            root: Some(RootCtl::new(Stage::Unassigned)),
            holding: None,
            followed: false,
            merge: None,
            faulty: true,
            reset_last_round: true,
            wait: 0,
        }
    }

    /// Range of guests this host simulates (pre-merge range while merging).
    pub fn range(&self, capacity: u32) -> Range {
        Range::from_pointers(self.id, self.pred, self.succ, capacity)
    }

    pub fn slot(&self, capacity: u32, g: GuestId) -> Option<&GuestSlot> {
        let r = self.range(capacity);
        if !r.contains(g) {
            return None;
        }
        self.guests.get((g.0 - r.lo) as usize)
    }

    pub fn is_resolving(&self) -> bool {
        self.merge.as_ref().is_some_and(|m| m.resolving)
    }

    /// Quiescent and verified: faulty bit clear, no wave, no pending role or merge.
    pub fn is_terminated(&self) -> bool {
        !self.faulty
            && !self.reset_last_round
            && self.merge.is_none()
            && self.role == Role::Idle
            && self.holding.is_none()
            && !self.followed
            && self.wait == 0
            && self.guests.iter().all(|s| s.pfc.is_clean() && s.res == Resolution::Settled)
            && self.root.map_or(true, |r| r.stage == Stage::Terminated && r.timer == 0)
    }
}

/// Tree edge `(parent, child)` leaving a carried region, with the host of `child`.
pub type Link = (GuestId, GuestId, HostId);

/// The other copy of a guest during a merge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Counterpart {
    /// Simulated by this host.
    Real(HostId),
    /// Dropped by `orig`, which already knows the copy cannot survive; `links` are the
    /// edges from the dropped region below it to copies that are still live.
    Carried { orig: HostId, links: Vec<Link> },
}

impl Counterpart {
    /// The host whose range held this copy.
    pub fn host(&self) -> HostId {
        match *self {
            Counterpart::Real(h) | Counterpart::Carried { orig: h, .. } => h,
        }
    }
}

/// Directed control messages; heartbeats (full states) are implicit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    /// To a waiting follower root: merge with this cluster.
    Partner { cluster: HostId },
    /// To a waiting follower root: your leader host is now `leader`.
    Reattach { leader: HostId },
    /// From the losing copy to the winning copy of `guest`: its children on the losing side.
    ChildHosts { guest: GuestId, children: Vec<(GuestId, Counterpart)> },
    /// You simulate `guest` and so does `counterpart`; resolve it into cluster `cluster`.
    Introduce { guest: GuestId, counterpart: Counterpart, cluster: HostId },
}

/// Topology action. Adds require both `(u, via)` and `(via, w)` at the start of the round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Delete { other: HostId },
    Add { u: HostId, w: HostId, via: HostId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Reset,
    /// Emitted by the new root host of a merged cluster.
    MergeComplete,
}

/// Shared random string oracle: `k`-bit values derived from a run seed and a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Psi {
    pub seed: u64,
    pub bits: u32,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Psi {
    pub fn new(seed: u64, capacity: u32) -> Self {
        Psi { seed, bits: (2 * ceil_log2(capacity)).min(64) }
    }

    pub fn mask(&self) -> u64 {
        if self.bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    pub fn eval(&self, key: u64) -> u64 {
        splitmix(self.seed ^ splitmix(key)) & self.mask()
    }

    pub fn valid(&self, key: u64, view: u64) -> bool {
        self.eval(key) == view
    }
}

/// Protocol constants for one tree size.
#[derive(Clone, Debug)]
pub struct Params {
    pub tree: Arc<CbtTree>,
    pub psi: Psi,
    pub short_polls: u8,
    pub long_polls: u8,
    /// Rounds a host may block attaching followers.
    pub connect_bound: u32,
    /// Rounds a follower root waits for its leader.
    pub follower_bound: u32,
    /// Rounds a host may stay in merge mode.
    pub merge_bound: u32,
}

impl Params {
    pub fn new(capacity: u32, seed: u64) -> Result<Self, TopologyError> {
        let tree = CbtTree::new(capacity)?;
        let l = tree.num_levels();
        Ok(Params {
            tree: Arc::new(tree),
            psi: Psi::new(seed, capacity),
            short_polls: 2,
            long_polls: 12,
            connect_bound: 2 * (5 * l + 6),
            follower_bound: 2 * (16 * l + 16),
            merge_bound: 3 * (5 * l + 4),
        })
    }

    pub fn capacity(&self) -> u32 {
        self.tree.capacity()
    }

    pub fn levels(&self) -> u32 {
        self.tree.num_levels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfc_pairs() {
        use Command::*;
        let f = Feedback::default();
        assert!(pfc_pair_legal(&Pfc::Clean, &Pfc::Clean));
        assert!(pfc_pair_legal(&Pfc::Propagate(Lead), &Pfc::Propagate(Lead)));
        assert!(!pfc_pair_legal(&Pfc::Propagate(Lead), &Pfc::Propagate(Close)));
        assert!(pfc_pair_legal(&Pfc::Feedback(Lead, f), &Pfc::Clean));
        assert!(!pfc_pair_legal(&Pfc::Clean, &Pfc::Propagate(Lead)));
        assert!(!pfc_pair_legal(&Pfc::Clean, &Pfc::Feedback(Lead, f)));
        assert!(!pfc_pair_legal(&Pfc::Feedback(Lead, f), &Pfc::Propagate(Lead)));
    }

    #[test]
    fn psi_width() {
        let p = Psi::new(7, 64);
        assert_eq!(p.bits, 12);
        for k in 0..100 {
            assert!(p.eval(k) < 4096);
            assert!(p.valid(k, p.eval(k)));
        }
    }
}
