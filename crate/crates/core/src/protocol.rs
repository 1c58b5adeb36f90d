//! One synchronous round of the self-stabilizing protocol at a single host.
//!
//! A host reads its previous state, the previous-round heartbeats of its neighbours and
//! the control messages addressed to it, and returns its next state plus the messages
//! and topology actions it issues this round.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checker::{own_violations, structural_violations, LocalView, Neighbor, Violation};
use crate::state::{
    pfc_pair_legal, Action, Command, Control, Counterpart, Event, Feedback, GuestSlot, Link, MergeInfo, NodeState,
    Params, Pfc, Resolution, Role, RootCtl, Stage,
};
use crate::topology::{GuestId, HostId, Range};

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutput {
    pub state: NodeState,
    pub messages: Vec<(HostId, Control)>,
    pub actions: Vec<Action>,
    pub events: Vec<Event>,
}

impl StepOutput {
    fn quiet(state: NodeState) -> Self {
        StepOutput { state, messages: Vec::new(), actions: Vec::new(), events: Vec::new() }
    }
}

/// Which of the two copies of guest `g` survives a merge: the copy on the host that
/// simulates `g` in the merged tree.
pub fn winner(x: HostId, y: HostId, g: GuestId) -> HostId {
    match (x.0 <= g.0, y.0 <= g.0) {
        (true, true) => x.max(y),
        (true, false) => x,
        (false, true) => y,
        (false, false) => x.min(y),
    }
}

fn reset(prev: &NodeState, params: &Params) -> StepOutput {
    let mut out = StepOutput::quiet(NodeState::singleton(prev.id, params.capacity()));
    out.events.push(Event::Reset);
    out
}

/// Copies of adjacent guests on the same side of a merge; resolved copies only see each other.
fn same_tree(a: Resolution, b: Resolution) -> bool {
    use Resolution::*;
    a == b || matches!((a, b), (Settled, Unresolved) | (Unresolved, Settled))
}

fn is_waiting_root(v: &NodeState) -> bool {
    matches!(v.root, Some(RootCtl { stage: Stage::Waiting { .. }, .. }))
}

fn potential_leader(v: &NodeState, my_cluster: HostId) -> bool {
    v.cluster != my_cluster
        && (v.role == Role::OpenLeader || v.merge.as_ref().is_some_and(|m| m.partner != my_cluster))
}

/// A non-root host with no wave passing through it is left with state that only a
/// corruption can produce next to a terminated peer: no wave will come to clear it.
fn stale(v: &NodeState) -> bool {
    v.root.is_none() && !v.is_terminated() && v.guests.iter().all(|g| g.pfc.is_clean())
}

/// Advance one round.
pub fn step<R: Rng>(
    prev: &NodeState,
    nbrs: &[Neighbor<'_>],
    inbox: &[(HostId, Control)],
    params: &Params,
    round: u64,
    rng: &mut R,
) -> StepOutput {
    let mut viol = Vec::new();
    own_violations(prev, params, &mut viol);
    if viol.contains(&Violation::SlotCount) {
        if prev.reset_last_round {
            let mut s = prev.clone();
            s.reset_last_round = false;
            return StepOutput::quiet(s);
        }
        return reset(prev, params);
    }
    let can_reset = !prev.reset_last_round;
    if prev.is_resolving() {
        if !viol.is_empty() && can_reset {
            return reset(prev, params);
        }
        return Resolver::new(prev, nbrs, params).run(inbox, None);
    }
    let view = LocalView::build(prev, nbrs, params.capacity());
    if viol.is_empty() {
        structural_violations(&view, params, false, &mut viol);
    }
    if prev.merge.is_some() {
        let start = root_start(prev, &view, params);
        let introduced = inbox.iter().any(|(_, m)| matches!(m, Control::Introduce { .. }));
        if start.is_some() || introduced {
            if !viol.is_empty() && can_reset {
                return reset(prev, params);
            }
            return Resolver::new(prev, nbrs, params).run(inbox, start);
        }
    }
    let fault = if prev.is_terminated() {
        !viol.is_empty()
            || !view.external.is_empty()
            || view.peers.iter().any(|p| p.state.faulty || p.won_only || stale(p.state))
    } else {
        !viol.is_empty()
    };
    if fault && can_reset {
        return reset(prev, params);
    }
    let mut n = Normal::new(prev, &view, params, round);
    n.run(inbox, rng);
    if n.pair_fault && can_reset {
        return reset(prev, params);
    }
    n.finish()
}

/// Both root hosts of a matched pair have finished their prep waves: resolve the root guest.
fn root_start(prev: &NodeState, view: &LocalView<'_>, params: &Params) -> Option<(GuestId, HostId, HostId)> {
    let m = prev.merge.as_ref()?;
    let r = prev.root?;
    if r.stage != Stage::Ready || m.resolving {
        return None;
    }
    let root_g = params.tree.root();
    let cap = params.capacity();
    if !prev.slot(cap, root_g)?.pfc.is_clean() {
        return None;
    }
    let p = view.external.iter().find(|v| v.id == m.partner)?;
    let pm = p.merge.as_ref()?;
    let ready = p.root.is_some_and(|c| c.stage == Stage::Ready)
        && !pm.resolving
        && pm.partner == prev.cluster
        && p.cluster == p.id
        && params.psi.valid(pm.key, pm.view)
        && p.slot(cap, root_g).is_some_and(|s| s.pfc.is_clean());
    ready.then(|| (root_g, p.id, winner(prev.id, p.id, root_g)))
}

struct Normal<'a, 'v> {
    prev: &'a NodeState,
    view: &'a LocalView<'v>,
    params: &'a Params,
    round: u64,
    s: NodeState,
    messages: Vec<(HostId, Control)>,
    actions: Vec<Action>,
    pair_fault: bool,
    connect_block: Option<bool>,
    connected: bool,
}

impl<'a, 'v> Normal<'a, 'v> {
    fn new(prev: &'a NodeState, view: &'a LocalView<'v>, params: &'a Params, round: u64) -> Self {
        let mut s = prev.clone();
        s.reset_last_round = false;
        Normal {
            prev,
            view,
            params,
            round,
            s,
            messages: Vec::new(),
            actions: Vec::new(),
            pair_fault: false,
            connect_block: None,
            connected: false,
        }
    }

    fn finish(self) -> StepOutput {
        StepOutput { state: self.s, messages: self.messages, actions: self.actions, events: Vec::new() }
    }

    fn me(&self) -> HostId {
        self.prev.id
    }

    fn run<R: Rng>(&mut self, inbox: &[(HostId, Control)], rng: &mut R) {
        if let Some(m) = &mut self.s.merge {
            m.timer += 1;
        }
        if let Some(r) = &mut self.s.root {
            if matches!(r.stage, Stage::Waiting { .. } | Stage::Ready) {
                r.timer += 1;
            }
        }
        self.read_inbox(inbox);
        self.waiting_checks();
        self.mark_leader();
        if self.prev.merge.is_some() {
            self.prep_phase();
        }
        self.waves(rng);
        // consecutive rounds spent holding a close wave back
        if self.connect_block == Some(true) && !self.connected {
            self.s.wait += 1;
        } else {
            self.s.wait = 0;
        }
    }

    fn read_inbox(&mut self, inbox: &[(HostId, Control)]) {
        for (_, msg) in inbox {
            let Some(r) = &mut self.s.root else { continue };
            match *msg {
                Control::Partner { cluster } => {
                    if matches!(r.stage, Stage::Waiting { .. }) && cluster != self.prev.cluster {
                        *r = RootCtl::new(Stage::Matched { partner: cluster });
                    }
                }
                Control::Reattach { leader } => {
                    if let Stage::Waiting { .. } = r.stage {
                        r.stage = Stage::Waiting { leader, handed: true };
                    }
                }
                _ => {}
            }
        }
    }

    /// A waiting follower root gives up once its leader host stops leading.
    fn waiting_checks(&mut self) {
        let Some(r) = &mut self.s.root else { return };
        let Stage::Waiting { leader, .. } = r.stage else { return };
        let gone = match self.view.external.iter().find(|v| v.id == leader) {
            Some(v) => matches!(v.role, Role::Searching | Role::Informed) && v.merge.is_none(),
            None => !self.view.unknown.contains(&leader),
        };
        if gone {
            *r = RootCtl::new(Stage::Unassigned);
            self.s.holding = None;
        }
    }

    fn mark_leader(&mut self) {
        if self.prev.role != Role::Searching {
            return;
        }
        if let Some(c) = self.s.holding {
            let still = self.view.external.iter().any(|v| v.id == c) || self.view.unknown.contains(&c);
            if !still {
                self.s.holding = None;
            }
        }
        if self.s.holding.is_none() {
            self.s.holding = self
                .view
                .external
                .iter()
                .filter(|v| potential_leader(v, self.prev.cluster))
                .map(|v| v.id)
                .min();
        }
    }

    /// Merge-mode bookkeeping before resolution starts: note followers and drop edges
    /// to the partner cluster.
    fn prep_phase(&mut self) {
        let m = self.prev.merge.as_ref().expect("merging");
        let me = self.me();
        if followed_by(self.view.external.iter().copied(), me) {
            self.s.followed = true;
        }
        if !self.params.psi.valid(m.key, m.view) {
            return;
        }
        let i_am_root = self.prev.cluster == me;
        for v in &self.view.external {
            let Some(vm) = &v.merge else { continue };
            if vm.resolving || v.cluster != m.partner || vm.partner != self.prev.cluster {
                continue;
            }
            if !self.params.psi.valid(vm.key, vm.view) || (i_am_root && v.cluster == v.id) {
                continue;
            }
            self.actions.push(Action::Delete { other: v.id });
        }
    }

    fn connect_blocked(&mut self) -> bool {
        if let Some(b) = self.connect_block {
            return b;
        }
        let me = self.me();
        let cap = self.params.capacity();
        let blocked = !self.view.unknown.is_empty()
            || self.view.external.iter().any(|b| {
                if is_waiting_root(b) {
                    return false;
                }
                let holds = b.holding == Some(me) && matches!(b.role, Role::Searching | Role::Informed);
                let carries = b.role == Role::Searching
                    && b.guests.iter().any(|s| {
                        matches!(s.pfc, Pfc::Feedback(Command::Search, fb) if fb.candidate == Some(me))
                    });
                let _ = cap;
                holds || carries
            });
        self.connect_block = Some(blocked);
        blocked
    }

    fn lookup(&self, g: u32) -> Option<GuestSlot> {
        self.view.lookup(g, self.params.capacity())
    }

    fn waves<R: Rng>(&mut self, rng: &mut R) {
        let tree = self.params.tree.clone();
        let range = self.view.range;
        let top = range.top(&tree).0;
        let root_g = tree.root().0;
        let host_fault = !self.view.external.is_empty() || !self.view.unknown.is_empty();
        for g in range.lo..range.hi {
            let i = (g - range.lo) as usize;
            let cur = self.prev.guests[i];
            let par = tree.parent_raw(g);
            // A copy in a different merge state belongs to another tree for now.
            let pslot = if par == NONE {
                None
            } else {
                match self.lookup(par) {
                    Some(p) if same_tree(p.res, cur.res) => Some(p),
                    _ => continue,
                }
            };
            if let Some(p) = pslot {
                if !pfc_pair_legal(&p.pfc, &cur.pfc) {
                    self.pair_fault = true;
                }
            }
            let mut kids = [None; 2];
            let mut missing = false;
            for (k, c) in tree.child_slots(g).into_iter().enumerate() {
                if c != NONE {
                    match self.lookup(c) {
                        Some(s) if same_tree(s.res, cur.res) => kids[k] = Some(s.pfc),
                        _ => missing = true,
                    }
                }
            }
            if missing {
                continue;
            }
            let kids_clean = kids.iter().flatten().all(|k| k.is_clean());
            match cur.pfc {
                Pfc::Clean => {
                    if !kids_clean {
                        continue;
                    }
                    if g == root_g {
                        if let Some(cmd) = self.initiate(rng) {
                            self.s.guests[i].pfc = Pfc::Propagate(cmd);
                            self.on_propagate(cmd, None);
                        }
                    } else if let Some(Pfc::Propagate(cmd)) = pslot.map(|p| p.pfc) {
                        self.s.guests[i].pfc = Pfc::Propagate(cmd);
                        if g == top {
                            self.on_propagate(cmd, Some(par));
                        }
                    }
                }
                Pfc::Propagate(cmd) => {
                    let parent_ok = par == NONE || pslot.is_some_and(|p| p.pfc == Pfc::Propagate(cmd));
                    let mut fbs = [None; 2];
                    let mut ready = parent_ok;
                    for (k, kid) in kids.iter().enumerate() {
                        match kid {
                            Some(Pfc::Feedback(c, fb)) if *c == cmd => fbs[k] = Some(*fb),
                            Some(_) => ready = false,
                            None => {}
                        }
                    }
                    if !ready {
                        continue;
                    }
                    let Some(fb) = self.feedback(g, cmd, fbs, g == top, par, host_fault) else {
                        continue;
                    };
                    self.s.guests[i].pfc = Pfc::Feedback(cmd, fb);
                    if g == root_g {
                        self.root_result(cmd, fb);
                    }
                }
                Pfc::Feedback(..) => {
                    let parent_ok = par == NONE || matches!(pslot.map(|p| p.pfc), Some(Pfc::Feedback(..)));
                    if parent_ok && kids_clean {
                        self.s.guests[i].pfc = Pfc::Clean;
                    }
                }
            }
        }
    }

    /// Host-level effects when the wave reaches this host's shallowest guest.
    fn on_propagate(&mut self, cmd: Command, parent: Option<u32>) {
        let is_root_host = self.prev.root.is_some();
        let s = &mut self.s;
        s.faulty = cmd != Command::Terminate;
        if cmd != Command::Prep {
            if let Some(m) = &s.merge {
                if !m.resolving {
                    s.merge = None;
                    for g in &mut s.guests {
                        g.res = Resolution::Settled;
                    }
                }
            }
        }
        match cmd {
            Command::Lead => {
                s.role = Role::OpenLeader;
                s.holding = None;
            }
            Command::Close => {
                s.role = Role::ClosedLeader;
                s.holding = None;
            }
            Command::Search => s.role = Role::Searching,
            Command::Inform => {
                s.role = Role::Informed;
                if !is_root_host {
                    s.holding = None;
                }
            }
            Command::Prep => {
                s.role = Role::Merging;
                s.holding = None;
                s.followed = false;
                let info = match parent {
                    None => match s.root.map(|r| r.stage) {
                        Some(Stage::Matched { partner }) => {
                            Some((partner, self.round, self.params.psi.eval(self.round)))
                        }
                        _ => None,
                    },
                    Some(p) => self
                        .view
                        .peer_hosting(p)
                        .and_then(|h| h.state.merge.as_ref())
                        .map(|m| (m.partner, m.key, m.view)),
                };
                if let Some((partner, key, view)) = info {
                    s.merge = Some(MergeInfo::new(partner, key, view, s.pred, s.succ));
                    for g in &mut s.guests {
                        g.res = Resolution::Unresolved;
                    }
                }
            }
            Command::Terminate => {
                s.role = Role::Idle;
                s.holding = None;
                s.followed = false;
            }
            Command::Merge => {}
        }
    }

    /// Compute the feedback payload of guest `g`; `None` while attaching followers must wait.
    fn feedback(
        &mut self,
        g: u32,
        cmd: Command,
        kids: [Option<Feedback>; 2],
        is_top: bool,
        par: u32,
        host_fault: bool,
    ) -> Option<Feedback> {
        let kids = kids.into_iter().flatten();
        let mut fb = Feedback { faulty: host_fault, ..Default::default() };
        let mut cands = Vec::new();
        let mut handoffs = Vec::new();
        for k in kids {
            fb.faulty |= k.faulty;
            fb.followed |= k.followed;
            cands.extend(k.candidate);
            handoffs.extend(k.handoff);
        }
        let me = self.me();
        let remote_parent = if par == NONE || self.view.range.contains_raw(par) {
            None
        } else {
            self.view.peer_hosting(par).map(|p| p.id())
        };
        match cmd {
            Command::Search => {
                let own = if is_top && self.prev.role == Role::Searching { self.s.holding } else { None };
                cands.extend(own);
                if let Some(c) = cands.iter().copied().min() {
                    fb.candidate = Some(c);
                    if let Some(p) = remote_parent {
                        self.actions.push(Action::Add { u: p, w: c, via: me });
                        if own == Some(c) || self.s.holding != Some(c) {
                            self.actions.push(Action::Delete { other: c });
                        }
                        if own == Some(c) {
                            self.s.holding = None;
                        }
                    }
                }
            }
            Command::Close => {
                if self.connect_blocked() {
                    return None;
                }
                self.connected = true;
                if is_top {
                    for b in &self.view.external {
                        if let Some(RootCtl { stage: Stage::Waiting { leader, handed: false }, .. }) = b.root {
                            if leader == me {
                                handoffs.push(b.id);
                            }
                        }
                    }
                }
                handoffs.sort();
                handoffs.dedup();
                handoffs.retain(|&b| b != me);
                let mut it = handoffs.chunks_exact(2);
                for pair in &mut it {
                    let (a, b) = (pair[0], pair[1]);
                    self.actions.push(Action::Add { u: a, w: b, via: me });
                    self.actions.push(Action::Delete { other: b });
                    self.messages.push((a, Control::Partner { cluster: b }));
                    self.messages.push((b, Control::Partner { cluster: a }));
                }
                if let [b] = *it.remainder() {
                    fb.handoff = Some(b);
                    if let Some(p) = remote_parent {
                        self.actions.push(Action::Add { u: p, w: b, via: me });
                        self.actions.push(Action::Delete { other: b });
                        self.messages.push((b, Control::Reattach { leader: p }));
                    }
                }
            }
            _ => {}
        }
        let _ = g;
        Some(fb)
    }

    /// Root controller: the next wave to start, if any.
    fn initiate<R: Rng>(&mut self, rng: &mut R) -> Option<Command> {
        let r = self.s.root.as_mut()?;
        let cmd = match r.stage {
            Stage::Unassigned => {
                if rng.gen_bool(0.5) {
                    r.stage = Stage::Leader { closing: false };
                    Command::Lead
                } else {
                    let long = rng.gen_bool(0.5);
                    let polls = if long { self.params.long_polls } else { self.params.short_polls };
                    r.stage = Stage::Follower { long, polls_left: polls };
                    Command::Search
                }
            }
            Stage::Leader { closing: false } => Command::Lead,
            Stage::Leader { closing: true } => Command::Close,
            Stage::Follower { .. } => Command::Search,
            Stage::Informing { .. } => Command::Inform,
            Stage::Matched { .. } => Command::Prep,
            Stage::Checking => Command::Terminate,
            Stage::Waiting { .. } | Stage::Ready | Stage::Terminated => return None,
        };
        r.timer = 0;
        Some(cmd)
    }

    fn root_result(&mut self, cmd: Command, fb: Feedback) {
        let me_cluster = self.prev.cluster;
        let Some(r) = self.s.root.as_mut() else { return };
        let next = if cmd == Command::Terminate {
            if fb.faulty {
                Stage::Unassigned
            } else {
                Stage::Terminated
            }
        } else if let (Command::Close, Stage::Leader { closing: true }, Some(b)) = (cmd, r.stage, fb.handoff) {
            self.messages.push((b, Control::Partner { cluster: me_cluster }));
            Stage::Matched { partner: b }
        } else if !fb.faulty {
            Stage::Checking
        } else {
            match (r.stage, cmd) {
                (Stage::Leader { closing: false }, Command::Lead) => Stage::Leader { closing: true },
                (Stage::Follower { long, polls_left }, Command::Search) => match fb.candidate {
                    Some(c) => {
                        self.s.holding = Some(c);
                        Stage::Informing { leader: c }
                    }
                    None if polls_left > 1 => Stage::Follower { long, polls_left: polls_left - 1 },
                    None => Stage::Unassigned,
                },
                (Stage::Informing { leader }, Command::Inform) => Stage::Waiting { leader, handed: false },
                (Stage::Matched { .. }, Command::Prep) if self.s.merge.is_some() => Stage::Ready,
                _ => Stage::Unassigned,
            }
        };
        let r = self.s.root.as_mut().expect("root");
        *r = RootCtl::new(next);
    }
}

fn followed_by<'a>(mut external: impl Iterator<Item = &'a NodeState>, me: HostId) -> bool {
    external.any(|b| {
        (b.role == Role::Searching && b.holding == Some(me))
            || matches!(b.root, Some(RootCtl { stage: Stage::Waiting { leader, .. }, .. }) if leader == me)
    })
}

/// Merge-mode neighbour classification for a host resolving a merge.
#[derive(Clone, Copy)]
struct SessionPeer<'a> {
    state: &'a NodeState,
    /// Range and pointers in the merged cluster.
    new_range: Range,
    new_pred: Option<HostId>,
    new_succ: Option<HostId>,
    /// Pointers and guest copies are final.
    done: bool,
    /// Already adopted the merged cluster.
    switched: bool,
}

struct Resolver<'a> {
    prev: &'a NodeState,
    params: &'a Params,
    s: NodeState,
    old_range: Range,
    session: Vec<SessionPeer<'a>>,
    external: Vec<&'a NodeState>,
    unknown: Vec<HostId>,
    messages: Vec<(HostId, Control)>,
    actions: Vec<Action>,
    events: Vec<Event>,
    fault: bool,
}

impl<'a> Resolver<'a> {
    fn new(prev: &'a NodeState, nbrs: &[Neighbor<'a>], params: &'a Params) -> Self {
        let cap = params.capacity();
        let m = prev.merge.as_ref().expect("merging");
        let mut session = Vec::new();
        let mut external = Vec::new();
        let mut unknown = Vec::new();
        for nb in nbrs {
            let Some(v) = nb.state else {
                unknown.push(nb.id);
                continue;
            };
            let peer = match &v.merge {
                Some(vm)
                    if (v.cluster == prev.cluster && vm.partner == m.partner)
                        || (v.cluster == m.partner && vm.partner == prev.cluster) =>
                {
                    Some(SessionPeer {
                        state: v,
                        new_range: Range::from_pointers(v.id, vm.new_pred, vm.new_succ, cap),
                        new_pred: vm.new_pred,
                        new_succ: vm.new_succ,
                        done: vm.done,
                        switched: false,
                    })
                }
                None if m.new_cluster == Some(v.cluster) => Some(SessionPeer {
                    state: v,
                    new_range: v.range(cap),
                    new_pred: v.pred,
                    new_succ: v.succ,
                    done: true,
                    switched: true,
                }),
                _ => None,
            };
            match peer {
                Some(p) => session.push(p),
                None => external.push(v),
            }
        }
        let mut s = prev.clone();
        s.reset_last_round = false;
        Resolver {
            prev,
            params,
            s,
            old_range: prev.range(cap),
            session,
            external,
            unknown,
            messages: Vec::new(),
            actions: Vec::new(),
            events: Vec::new(),
            fault: false,
        }
    }

    fn me(&self) -> HostId {
        self.prev.id
    }

    fn merge(&mut self) -> &mut MergeInfo {
        self.s.merge.as_mut().expect("merging")
    }

    fn run(mut self, inbox: &[(HostId, Control)], start: Option<(GuestId, HostId, HostId)>) -> StepOutput {
        let me = self.me();
        self.merge().timer += 1;
        if followed_by(self.external.iter().copied(), me) {
            self.s.followed = true;
        }
        let mut intros: Vec<(GuestId, Counterpart, HostId)> = std::mem::take(&mut self.merge().intro);
        intros.extend(start.map(|(g, y, nc)| (g, Counterpart::Real(y), nc)));
        for (_, msg) in inbox {
            if let Control::Introduce { guest, counterpart, cluster } = msg {
                intros.push((*guest, counterpart.clone(), *cluster));
            }
        }
        for (g, y, nc) in intros {
            self.resolve(g, y, nc);
        }
        for (_, msg) in inbox {
            if let Control::ChildHosts { guest, children } = msg {
                self.introduce_children(*guest, children);
            }
        }
        if self.fault {
            return reset(self.prev, self.params);
        }
        self.waves();
        let all_resolved = self
            .s
            .guests
            .iter()
            .all(|g| matches!(g.res, Resolution::Won | Resolution::Lost));
        self.merge().done = all_resolved;
        let prev_done = self.prev.merge.as_ref().is_some_and(|m| m.done);
        if prev_done {
            let settled = self.prune();
            let clean = self
                .s
                .guests
                .iter()
                .all(|g| g.res != Resolution::Won || g.pfc.is_clean());
            if settled && clean && self.unknown.is_empty() {
                return self.switch();
            }
        }
        StepOutput { state: self.s, messages: self.messages, actions: self.actions, events: self.events }
    }

    fn old_host_of(&self, c: u32) -> Option<HostId> {
        if self.old_range.contains_raw(c) {
            return Some(self.me());
        }
        let cap = self.params.capacity();
        self.session
            .iter()
            .find(|p| !p.switched && p.state.cluster == self.prev.cluster && p.state.range(cap).contains_raw(c))
            .map(|p| p.state.id)
    }

    fn resolve(&mut self, g: GuestId, cp: Counterpart, nc: HostId) {
        if !self.old_range.contains(g) {
            return;
        }
        let i = (g.0 - self.old_range.lo) as usize;
        if self.s.guests[i].res != Resolution::Unresolved {
            return;
        }
        let x = self.me();
        let y = cp.host();
        let w = winner(x, y, g);
        {
            let m = self.merge();
            if m.new_cluster.is_some_and(|c| c != nc) {
                self.fault = true;
                return;
            }
            m.resolving = true;
            m.new_cluster = Some(nc);
            if y > x {
                m.new_succ = Some(m.new_succ.map_or(y, |s| s.min(y)));
            } else if y < x {
                m.new_pred = Some(m.new_pred.map_or(y, |p| p.max(y)));
            }
        }
        if w == x {
            self.s.guests[i] = GuestSlot { pfc: Pfc::Propagate(Command::Merge), res: Resolution::Won };
            if let Counterpart::Carried { orig, links } = cp {
                // The dropped copy has no host to speak for it: introduce its children here.
                let tree = self.params.tree.clone();
                let children: Vec<(GuestId, Counterpart)> = tree
                    .children(g)
                    .map(|c| match links.iter().find(|l| l.0 == g && l.1 == c) {
                        Some(l) => (c, Counterpart::Real(l.2)),
                        None => {
                            let sub = links.iter().filter(|l| tree.is_ancestor(c, l.0)).copied().collect();
                            (c, Counterpart::Carried { orig, links: sub })
                        }
                    })
                    .collect();
                self.introduce_children(g, &children);
            }
            return;
        }
        if matches!(cp, Counterpart::Carried { .. }) {
            self.fault = true;
            return;
        }
        self.s.guests[i] = GuestSlot { pfc: Pfc::Clean, res: Resolution::Lost };
        let tree = self.params.tree.clone();
        let keep = self.keep();
        let mut children = Vec::new();
        for c in tree.children(g) {
            let Some(lc) = self.old_host_of(c.0) else {
                self.fault = true;
                return;
            };
            if lc == x && !keep(c.0) {
                let Some(links) = self.carry(c, &keep) else {
                    self.fault = true;
                    return;
                };
                let mut hosts: Vec<HostId> = links.iter().map(|l| l.2).filter(|&h| h != x && h != w).collect();
                hosts.sort_unstable();
                hosts.dedup();
                for h in hosts {
                    self.actions.push(Action::Add { u: w, w: h, via: x });
                }
                children.push((c, Counterpart::Carried { orig: x, links }));
            } else {
                if lc != x {
                    self.actions.push(Action::Add { u: w, w: lc, via: x });
                }
                children.push((c, Counterpart::Real(lc)));
            }
        }
        if !children.is_empty() {
            self.messages.push((w, Control::ChildHosts { guest: g, children }));
        }
    }

    /// Copies this host may still win, plus the copy of its current successor guess:
    /// that contest is what connects merged neighbours from different sides.
    fn keep(&self) -> impl Fn(u32) -> bool {
        let m = self.s.merge.as_ref().expect("merging");
        let r = Range::from_pointers(self.me(), m.new_pred, m.new_succ, self.params.capacity());
        let succ = m.new_succ.map_or(NONE, |h| h.0);
        move |g| r.contains_raw(g) || g == succ
    }

    /// Drop the copies below `c` (inclusive) that lie outside `keep` and are reachable
    /// through dropped copies only; returns the edges leaving that region.
    fn carry(&mut self, c: GuestId, keep: impl Fn(u32) -> bool) -> Option<Vec<Link>> {
        let tree = self.params.tree.clone();
        let mut links = Vec::new();
        let mut stack = vec![c.0];
        while let Some(p) = stack.pop() {
            let i = (p - self.old_range.lo) as usize;
            if self.s.guests[i].res != Resolution::Unresolved {
                return None;
            }
            self.s.guests[i] = GuestSlot { pfc: Pfc::Clean, res: Resolution::Lost };
            for d in tree.children(GuestId(p)) {
                if self.old_range.contains(d) && !keep(d.0) {
                    stack.push(d.0);
                } else {
                    links.push((GuestId(p), d, self.old_host_of(d.0)?));
                }
            }
        }
        Some(links)
    }

    fn introduce_children(&mut self, g: GuestId, children: &[(GuestId, Counterpart)]) {
        if !self.old_range.contains(g) {
            return;
        }
        let i = (g.0 - self.old_range.lo) as usize;
        if self.s.guests[i].res != Resolution::Won {
            return;
        }
        let me = self.me();
        let Some(nc) = self.s.merge.as_ref().and_then(|m| m.new_cluster) else { return };
        for (c, cp) in children {
            let c = *c;
            let Some(wc) = self.old_host_of(c.0) else {
                self.fault = true;
                return;
            };
            if wc == me {
                self.merge().intro.push((c, cp.clone(), nc));
            } else {
                match cp {
                    Counterpart::Real(lc) => self.actions.push(Action::Add { u: wc, w: *lc, via: me }),
                    Counterpart::Carried { links, .. } => {
                        let mut hosts: Vec<HostId> = links.iter().map(|l| l.2).filter(|&h| h != wc).collect();
                        hosts.sort_unstable();
                        hosts.dedup();
                        for h in hosts {
                            self.actions.push(Action::Add { u: wc, w: h, via: me });
                        }
                    }
                }
                self.messages.push((wc, Control::Introduce { guest: c, counterpart: cp.clone(), cluster: nc }));
            }
            if let Counterpart::Real(lc) = cp {
                self.messages.push((*lc, Control::Introduce { guest: c, counterpart: Counterpart::Real(wc), cluster: nc }));
            }
        }
    }

    /// Surviving copy of guest `h`, wherever it lives in the merge session.
    fn won_copy(&self, h: u32) -> Option<GuestSlot> {
        let cap = self.params.capacity();
        if self.old_range.contains_raw(h) {
            let s = self.s_prev_slot(h);
            if s.res == Resolution::Won {
                return Some(s);
            }
        }
        for p in &self.session {
            if p.switched {
                if p.new_range.contains_raw(h) {
                    return p.state.slot(cap, GuestId(h)).copied();
                }
            } else if let Some(s) = p.state.slot(cap, GuestId(h)) {
                if s.res == Resolution::Won {
                    return Some(*s);
                }
            }
        }
        None
    }

    fn s_prev_slot(&self, h: u32) -> GuestSlot {
        self.prev.guests[(h - self.old_range.lo) as usize]
    }

    /// Propagate–feedback–clean over the surviving copies.
    fn waves(&mut self) {
        let tree = self.params.tree.clone();
        let root_g = tree.root().0;
        let host_fault = !self.external.is_empty();
        for g in self.old_range.lo..self.old_range.hi {
            let i = (g - self.old_range.lo) as usize;
            let cur = self.prev.guests[i];
            if cur.res != Resolution::Won {
                continue;
            }
            let par = tree.parent_raw(g);
            let ppfc = if par == NONE {
                None
            } else {
                match self.won_copy(par) {
                    Some(p) => Some(p.pfc),
                    None => continue,
                }
            };
            let mut kids = [None; 2];
            let mut missing = false;
            for (k, c) in tree.child_slots(g).into_iter().enumerate() {
                if c != NONE {
                    match self.won_copy(c) {
                        Some(s) => kids[k] = Some(s.pfc),
                        None => missing = true,
                    }
                }
            }
            if missing {
                continue;
            }
            match cur.pfc {
                Pfc::Propagate(cmd) => {
                    let parent_ok = par == NONE || ppfc == Some(Pfc::Propagate(cmd));
                    let mut fb = Feedback { faulty: host_fault, followed: self.s.followed, ..Default::default() };
                    let mut ready = parent_ok;
                    for kid in kids.iter().flatten() {
                        match kid {
                            Pfc::Feedback(c, k) if *c == cmd => {
                                fb.faulty |= k.faulty;
                                fb.followed |= k.followed;
                            }
                            _ => ready = false,
                        }
                    }
                    if ready {
                        self.s.guests[i].pfc = Pfc::Feedback(cmd, fb);
                        if g == root_g {
                            self.merge().verdict = Some(fb);
                        }
                    }
                }
                Pfc::Feedback(..) => {
                    let parent_ok = par == NONE || matches!(ppfc, Some(Pfc::Feedback(..)));
                    if parent_ok && kids.iter().flatten().all(|k| k.is_clean()) {
                        self.s.guests[i].pfc = Pfc::Clean;
                    }
                }
                Pfc::Clean => {}
            }
        }
    }

    /// Delete edges not justified in the merged cluster; true when none remain.
    fn prune(&mut self) -> bool {
        let me = self.me();
        let m = self.s.merge.as_ref().expect("merging");
        let cap = self.params.capacity();
        let my_range = Range::from_pointers(me, m.new_pred, m.new_succ, cap);
        let (mp, ms) = (m.new_pred, m.new_succ);
        let mut settled = true;
        for p in &self.session {
            if !p.done {
                settled = false;
                continue;
            }
            let pid = p.state.id;
            let type1 = mp == Some(pid) || ms == Some(pid) || p.new_pred == Some(me) || p.new_succ == Some(me);
            if !type1 && !self.params.tree.ranges_adjacent(my_range, p.new_range) {
                self.actions.push(Action::Delete { other: pid });
                settled = false;
            }
        }
        settled
    }

    fn switch(mut self) -> StepOutput {
        let cap = self.params.capacity();
        let me = self.me();
        let m = self.s.merge.take().expect("merging");
        let new_range = Range::from_pointers(me, m.new_pred, m.new_succ, cap);
        let won: Vec<u32> = (self.old_range.lo..self.old_range.hi)
            .filter(|&g| self.s.guests[(g - self.old_range.lo) as usize].res == Resolution::Won)
            .collect();
        let expected: Vec<u32> = (new_range.lo..new_range.hi).collect();
        let Some(nc) = m.new_cluster else { return reset(self.prev, self.params) };
        if won != expected {
            return reset(self.prev, self.params);
        }
        let s = &mut self.s;
        s.pred = m.new_pred;
        s.succ = m.new_succ;
        s.cluster = nc;
        s.guests = vec![GuestSlot::default(); new_range.len() as usize];
        s.role = Role::Idle;
        s.holding = None;
        s.wait = 0;
        let hosts_root = new_range.contains(self.params.tree.root());
        s.root = if hosts_root {
            let fb = m.verdict.unwrap_or(Feedback { faulty: true, ..Default::default() });
            let stage = if !fb.faulty {
                Stage::Checking
            } else if fb.followed {
                Stage::Leader { closing: false }
            } else {
                Stage::Unassigned
            };
            self.events.push(Event::MergeComplete);
            Some(RootCtl::new(stage))
        } else {
            None
        };
        s.followed = false;
        StepOutput { state: self.s, messages: self.messages, actions: self.actions, events: self.events }
    }
}
