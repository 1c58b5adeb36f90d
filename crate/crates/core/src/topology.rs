//! Complete binary search tree over `[0, N)`, host ranges and the Avatar host graph.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a physical host. Hosts are drawn from `[0, N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

/// Identifier of a virtual guest node of the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuestId(pub u32);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for GuestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("tree capacity must be at least 1")]
    InvalidCapacity,
    #[error("host set is empty")]
    EmptyHostSet,
    #[error("host set must be strictly increasing (offending host {0})")]
    Unsorted(HostId),
    #[error("host {host} outside [0, {capacity})")]
    OutOfRange { host: HostId, capacity: u32 },
}

const NONE: u32 = u32::MAX;

/// `floor(log2(n))` for `n >= 1`.
pub fn floor_log2(n: u32) -> u32 {
    31 - n.max(1).leading_zeros()
}

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

/// Upper bound on the degree of any host in a legal Avatar graph.
pub fn max_degree_bound(capacity: u32) -> u32 {
    2 * floor_log2(capacity) + 2
}

/// The balanced binary search tree on `[0, N)`: the subtree over `[a, b]` is rooted at
/// `floor((a + b) / 2)`.
#[derive(Debug, Clone)]
pub struct CbtTree {
    capacity: u32,
    root: u32,
    parent: Vec<u32>,
    children: Vec<[u32; 2]>,
    level: Vec<u8>,
    levels: u32,
}

impl CbtTree {
    pub fn new(capacity: u32) -> Result<Self, TopologyError> {
        if capacity == 0 {
            return Err(TopologyError::InvalidCapacity);
        }
        let n = capacity as usize;
        let mut parent = vec![NONE; n];
        let mut children = vec![[NONE; 2]; n];
        let mut level = vec![0u8; n];
        let mut levels = 0;
        let root = (capacity - 1) / 2;
        // (lo, hi) half-open, parent, side, depth
        let mut stack = vec![(0u32, capacity, NONE, 0usize, 0u32)];
        while let Some((lo, hi, par, side, depth)) = stack.pop() {
            if lo >= hi {
                continue;
            }
            let r = (lo + hi - 1) / 2;
            parent[r as usize] = par;
            if par != NONE {
                children[par as usize][side] = r;
            }
            level[r as usize] = depth as u8;
            levels = levels.max(depth + 1);
            stack.push((lo, r, r, 0, depth + 1));
            stack.push((r + 1, hi, r, 1, depth + 1));
        }
        Ok(CbtTree { capacity, root, parent, children, level, levels })
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn root(&self) -> GuestId {
        GuestId(self.root)
    }

    pub fn parent(&self, g: GuestId) -> Option<GuestId> {
        match self.parent[g.0 as usize] {
            NONE => None,
            p => Some(GuestId(p)),
        }
    }

    pub fn children(&self, g: GuestId) -> impl Iterator<Item = GuestId> + '_ {
        self.children[g.0 as usize]
            .iter()
            .filter(|&&c| c != NONE)
            .map(|&c| GuestId(c))
    }

    /// Raw child slots (`u32::MAX` marks an absent child); used on hot paths.
    #[inline]
    pub fn child_slots(&self, g: u32) -> [u32; 2] {
        self.children[g as usize]
    }

    #[inline]
    pub fn parent_raw(&self, g: u32) -> u32 {
        self.parent[g as usize]
    }

    pub fn level(&self, g: GuestId) -> u32 {
        self.level[g.0 as usize] as u32
    }

    /// Whether `a` is `d` or one of its ancestors.
    pub fn is_ancestor(&self, a: GuestId, d: GuestId) -> bool {
        let la = self.level[a.0 as usize];
        let mut x = d.0;
        while self.level[x as usize] > la {
            x = self.parent[x as usize];
        }
        x == a.0
    }

    /// Number of levels `L`.
    pub fn num_levels(&self) -> u32 {
        self.levels
    }

    /// All (parent, child) pairs.
    pub fn edges(&self) -> impl Iterator<Item = (GuestId, GuestId)> + '_ {
        (0..self.capacity).filter_map(move |c| {
            let p = self.parent[c as usize];
            (p != NONE).then_some((GuestId(p), GuestId(c)))
        })
    }

    /// Guests of `range` whose tree parent lies outside it, plus guests with a child
    /// outside it, each paired with that outside tree neighbour.
    pub fn crossing_edges(&self, range: Range) -> Vec<(GuestId, GuestId)> {
        let mut out = Vec::new();
        for g in range.lo..range.hi {
            let p = self.parent[g as usize];
            if p != NONE && !range.contains_raw(p) {
                out.push((GuestId(g), GuestId(p)));
            }
            for c in self.children[g as usize] {
                if c != NONE && !range.contains_raw(c) {
                    out.push((GuestId(g), GuestId(c)));
                }
            }
        }
        out
    }

    /// Whether some tree edge joins a guest of `a` to a guest of `b` (disjoint ranges).
    pub fn ranges_adjacent(&self, a: Range, b: Range) -> bool {
        let (small, big) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        for g in small.lo..small.hi {
            let p = self.parent[g as usize];
            if p != NONE && big.contains_raw(p) {
                return true;
            }
            for c in self.children[g as usize] {
                if c != NONE && big.contains_raw(c) {
                    return true;
                }
            }
        }
        false
    }
}

/// Half-open interval of guests `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Range {
    pub lo: u32,
    pub hi: u32,
}

impl Range {
    pub fn new(lo: u32, hi: u32) -> Self {
        Range { lo, hi }
    }

    /// The range a host owns given its cluster predecessor and successor.
    pub fn from_pointers(id: HostId, pred: Option<HostId>, succ: Option<HostId>, capacity: u32) -> Self {
        let lo = if pred.is_some() { id.0 } else { 0 };
        let hi = succ.map_or(capacity, |s| s.0);
        Range { lo, hi }
    }

    pub fn contains(&self, g: GuestId) -> bool {
        self.contains_raw(g.0)
    }

    #[inline]
    pub fn contains_raw(&self, g: u32) -> bool {
        self.lo <= g && g < self.hi
    }

    pub fn len(&self) -> u32 {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn overlaps(&self, other: &Range) -> bool {
        self.lo < other.hi && other.lo < self.hi && !self.is_empty() && !other.is_empty()
    }

    /// The unique shallowest guest of a non-empty range (an ancestor of all others).
    pub fn top(&self, tree: &CbtTree) -> GuestId {
        let mut x = tree.root;
        while !self.contains_raw(x) {
            let [l, r] = tree.children[x as usize];
            x = if x < self.lo { r } else { l };
            if x == NONE {
                return GuestId(self.lo);
            }
        }
        GuestId(x)
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

/// Assignment of guests to a sorted host set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeMap {
    capacity: u32,
    hosts: Vec<HostId>,
}

impl RangeMap {
    pub fn hosts(&self) -> &[HostId] {
        &self.hosts
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn range(&self, idx: usize) -> Range {
        let lo = if idx == 0 { 0 } else { self.hosts[idx].0 };
        let hi = self.hosts.get(idx + 1).map_or(self.capacity, |h| h.0);
        Range { lo, hi }
    }

    pub fn range_of(&self, h: HostId) -> Option<Range> {
        self.hosts.binary_search(&h).ok().map(|i| self.range(i))
    }

    /// Predecessor and successor of a member host in sorted order.
    pub fn pointers(&self, h: HostId) -> Option<(Option<HostId>, Option<HostId>)> {
        let i = self.hosts.binary_search(&h).ok()?;
        let pred = i.checked_sub(1).map(|j| self.hosts[j]);
        Some((pred, self.hosts.get(i + 1).copied()))
    }

    pub fn host_of(&self, g: GuestId) -> HostId {
        match self.hosts.binary_search(&HostId(g.0)) {
            Ok(i) => self.hosts[i],
            Err(0) => self.hosts[0],
            Err(i) => self.hosts[i - 1],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (HostId, Range)> + '_ {
        (0..self.hosts.len()).map(move |i| (self.hosts[i], self.range(i)))
    }

    pub fn to_map(&self) -> BTreeMap<HostId, Range> {
        self.iter().collect()
    }
}

/// Partition `[0, N)` among the sorted host set.
pub fn compute_ranges(hosts: &[HostId], capacity: u32) -> Result<RangeMap, TopologyError> {
    if capacity == 0 {
        return Err(TopologyError::InvalidCapacity);
    }
    if hosts.is_empty() {
        return Err(TopologyError::EmptyHostSet);
    }
    for (i, &h) in hosts.iter().enumerate() {
        if h.0 >= capacity {
            return Err(TopologyError::OutOfRange { host: h, capacity });
        }
        if i > 0 && hosts[i - 1] >= h {
            return Err(TopologyError::Unsorted(h));
        }
    }
    Ok(RangeMap { capacity, hosts: hosts.to_vec() })
}

/// Which rules justify a host edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeKinds {
    /// Consecutive hosts in sorted order.
    pub type1: bool,
    /// Image of a guest edge.
    pub type2: bool,
}

/// Undirected host edges keyed canonically as `(min, max)`.
pub type EdgeSet = BTreeMap<(HostId, HostId), EdgeKinds>;

pub fn canonical(a: HostId, b: HostId) -> (HostId, HostId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Host graph induced by an arbitrary guest-edge enumeration.
pub fn avatar_edges_with<I>(ranges: &RangeMap, guest_edges: I) -> EdgeSet
where
    I: IntoIterator<Item = (GuestId, GuestId)>,
{
    let mut out = EdgeSet::new();
    for w in ranges.hosts.windows(2) {
        out.entry((w[0], w[1])).or_default().type1 = true;
    }
    for (a, b) in guest_edges {
        let (ha, hb) = (ranges.host_of(a), ranges.host_of(b));
        if ha != hb {
            out.entry(canonical(ha, hb)).or_default().type2 = true;
        }
    }
    out
}

/// Edges of `Avatar_CBT(N, V)` for a sorted host set `V`.
pub fn avatar_edges(capacity: u32, hosts: &[HostId]) -> Result<EdgeSet, TopologyError> {
    let ranges = compute_ranges(hosts, capacity)?;
    let tree = CbtTree::new(capacity)?;
    Ok(avatar_edges_with(&ranges, tree.edges()))
}

pub fn degrees(hosts: &[HostId], edges: &EdgeSet) -> BTreeMap<HostId, u32> {
    let mut deg: BTreeMap<HostId, u32> = hosts.iter().map(|&h| (h, 0)).collect();
    for &(a, b) in edges.keys() {
        *deg.entry(a).or_default() += 1;
        *deg.entry(b).or_default() += 1;
    }
    deg
}

pub fn max_degree(hosts: &[HostId], edges: &EdgeSet) -> u32 {
    degrees(hosts, edges).values().copied().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(v: &[u32]) -> Vec<HostId> {
        v.iter().map(|&x| HostId(x)).collect()
    }

    #[test]
    fn small_trees() {
        let t = CbtTree::new(4).unwrap();
        assert_eq!(t.root(), GuestId(1));
        let mut e: Vec<_> = t.edges().map(|(p, c)| (p.0, c.0)).collect();
        e.sort();
        assert_eq!(e, vec![(1, 0), (1, 2), (2, 3)]);
        let t = CbtTree::new(15).unwrap();
        assert_eq!(t.root(), GuestId(7));
        let kids: Vec<_> = t.children(GuestId(7)).map(|g| g.0).collect();
        assert_eq!(kids, vec![3, 11]);
        assert_eq!(t.num_levels(), 4);
        let t = CbtTree::new(1).unwrap();
        assert_eq!(t.root(), GuestId(0));
        assert_eq!(t.num_levels(), 1);
        assert_eq!(t.edges().count(), 0);
        assert!(CbtTree::new(0).is_err());
    }

    #[test]
    fn level_count_matches_log() {
        for n in 1..600 {
            let t = CbtTree::new(n).unwrap();
            assert_eq!(t.num_levels(), floor_log2(n) + 1, "N={n}");
        }
    }

    #[test]
    fn ranges_and_errors() {
        let r = compute_ranges(&hs(&[2, 5, 9]), 16).unwrap();
        assert_eq!(r.range_of(HostId(2)), Some(Range::new(0, 5)));
        assert_eq!(r.range_of(HostId(5)), Some(Range::new(5, 9)));
        assert_eq!(r.range_of(HostId(9)), Some(Range::new(9, 16)));
        assert_eq!(r.host_of(GuestId(1)), HostId(2));
        assert_eq!(r.host_of(GuestId(15)), HostId(9));
        let r = compute_ranges(&hs(&[3]), 8).unwrap();
        assert_eq!(r.range_of(HostId(3)), Some(Range::new(0, 8)));
        assert_eq!(compute_ranges(&[], 8), Err(TopologyError::EmptyHostSet));
        assert!(matches!(compute_ranges(&hs(&[3, 1]), 8), Err(TopologyError::Unsorted(_))));
        assert!(matches!(compute_ranges(&hs(&[3, 3]), 8), Err(TopologyError::Unsorted(_))));
        assert!(matches!(compute_ranges(&hs(&[8]), 8), Err(TopologyError::OutOfRange { .. })));
    }

    #[test]
    fn small_avatar() {
        let e = avatar_edges(4, &hs(&[0, 3])).unwrap();
        assert_eq!(e.len(), 1);
        let k = e[&(HostId(0), HostId(3))];
        assert!(k.type1 && k.type2);
        assert!(avatar_edges(4, &hs(&[2])).unwrap().is_empty());
    }

    #[test]
    fn log_helpers() {
        assert_eq!(floor_log2(1), 0);
        assert_eq!(floor_log2(8), 3);
        assert_eq!(floor_log2(9), 3);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(max_degree_bound(256), 18);
    }
}
