//! Deterministic synchronous round simulator.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{check_convergence, detectors, Neighbor};
use crate::config::Configuration;
use crate::protocol::step;
use crate::state::{Action, Control, Event, NodeState, Params};
use crate::topology::{avatar_edges, floor_log2, HostId, TopologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("host {0} is outside the id space")]
    HostOutOfRange(HostId),
    #[error("state stored under key {key} claims id {id}")]
    IdMismatch { key: HostId, id: HostId },
    #[error("edge ({0}, {1}) references an unknown host or is a self-loop")]
    BadEdge(HostId, HostId),
    #[error("configuration has no hosts")]
    Empty,
}

/// Per-round trace record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub edges: usize,
    pub max_degree: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Vec<u32>>,
    pub actions_applied: u32,
    pub actions_rejected: u32,
    pub messages: u32,
    pub messages_rejected: u32,
    pub resets: u32,
    pub merges: u32,
    pub clusters: u32,
    /// Largest number of new neighbours one witness gave one endpoint this round.
    pub max_gain: u32,
    pub connected: bool,
    /// No actions, no control messages, every heartbeat unchanged.
    pub silent: bool,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detectors: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_rounds: u64,
    /// Stop after the configuration has been converged for this many consecutive rounds.
    pub settle_rounds: u64,
    pub record_degrees: bool,
    pub record_detectors: bool,
    pub keep_records: bool,
    /// Snapshot the edge list of every round.
    pub record_edges: bool,
}

impl RunOptions {
    pub fn for_capacity(capacity: u32) -> Self {
        let l = floor_log2(capacity.max(1)) as u64 + 1;
        RunOptions {
            max_rounds: 200 * l * l,
            settle_rounds: 2 * l + 2,
            record_degrees: false,
            record_detectors: false,
            keep_records: true,
            record_edges: false,
        }
    }
}

/// Aggregate of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    pub converged_round: Option<u64>,
    pub initial_max_degree: u32,
    pub max_degree: u32,
    pub final_max_degree: u32,
    pub resets: u64,
    pub merges: u64,
    pub merge_rounds: Vec<u64>,
    pub connectivity_violations: u64,
    pub first_disconnect: Option<u64>,
    pub actions_rejected: u64,
    pub messages_rejected: u64,
    pub max_gain: u32,
    pub records: Vec<RoundRecord>,
    pub edge_snapshots: Vec<Vec<(HostId, HostId)>>,
}

#[derive(Clone)]
pub struct Simulation {
    params: Params,
    ids: Vec<HostId>,
    pos: Vec<u32>,
    states: Vec<NodeState>,
    adj: Vec<Vec<usize>>,
    prev_adj: Vec<Vec<usize>>,
    inbox: Vec<Vec<(HostId, Control)>>,
    rngs: Vec<ChaCha8Rng>,
    round: u64,
    target_edges: usize,
}

const ABSENT: u32 = u32::MAX;

fn node_seed(seed: u64, id: HostId) -> u64 {
    seed ^ (id.0 as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Simulation {
    /// Prepare a run. Heartbeats of the initial states are treated as already delivered.
    pub fn new(config: &Configuration, seed: u64) -> Result<Self, EngineError> {
        let params = Params::new(config.capacity, seed)?;
        if config.nodes.is_empty() {
            return Err(EngineError::Empty);
        }
        let ids: Vec<HostId> = config.nodes.keys().copied().collect();
        let mut pos = vec![ABSENT; config.capacity as usize];
        for (i, (&k, s)) in config.nodes.iter().enumerate() {
            if k.0 >= config.capacity {
                return Err(EngineError::HostOutOfRange(k));
            }
            if s.id != k {
                return Err(EngineError::IdMismatch { key: k, id: s.id });
            }
            pos[k.0 as usize] = i as u32;
        }
        let mut adj = vec![Vec::new(); ids.len()];
        for &(a, b) in &config.edges {
            let ok = a != b && a.0 < config.capacity && b.0 < config.capacity;
            if !ok || pos[a.0 as usize] == ABSENT || pos[b.0 as usize] == ABSENT {
                return Err(EngineError::BadEdge(a, b));
            }
            let (ia, ib) = (pos[a.0 as usize] as usize, pos[b.0 as usize] as usize);
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        let target_edges = avatar_edges(config.capacity, &ids)?.len();
        Ok(Simulation {
            params,
            rngs: ids.iter().map(|&h| ChaCha8Rng::seed_from_u64(node_seed(seed, h))).collect(),
            states: config.nodes.values().cloned().collect(),
            prev_adj: adj.clone(),
            adj,
            inbox: vec![Vec::new(); ids.len()],
            ids,
            pos,
            round: 0,
            target_edges,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn configuration(&self) -> Configuration {
        let mut edges = BTreeSet::new();
        for (i, l) in self.adj.iter().enumerate() {
            for &j in l {
                if i < j {
                    edges.insert((self.ids[i], self.ids[j]));
                }
            }
        }
        Configuration {
            capacity: self.params.capacity(),
            nodes: self.states.iter().map(|s| (s.id, s.clone())).collect(),
            edges,
        }
    }

    pub fn edge_list(&self) -> Vec<(HostId, HostId)> {
        let mut out = Vec::new();
        for (i, l) in self.adj.iter().enumerate() {
            for &j in l {
                if i < j {
                    out.push((self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }

    /// Overwrite one host's state (fault injection).
    pub fn inject(&mut self, state: NodeState) -> Result<(), EngineError> {
        let id = state.id;
        let p = self.pos.get(id.0 as usize).copied().unwrap_or(ABSENT);
        if p == ABSENT {
            return Err(EngineError::HostOutOfRange(id));
        }
        self.states[p as usize] = state;
        Ok(())
    }

    fn idx(&self, h: HostId) -> Option<usize> {
        match self.pos.get(h.0 as usize) {
            Some(&p) if p != ABSENT => Some(p as usize),
            _ => None,
        }
    }

    fn has_edge(adj: &[Vec<usize>], a: usize, b: usize) -> bool {
        adj[a].binary_search(&b).is_ok()
    }

    pub fn max_degree(&self) -> u32 {
        self.adj.iter().map(|l| l.len() as u32).max().unwrap_or(0)
    }

    fn connected(&self) -> bool {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Cheap necessary conditions first, then the full check.
    pub fn is_converged(&self) -> bool {
        let c = self.states[0].cluster;
        let edges: usize = self.adj.iter().map(Vec::len).sum::<usize>() / 2;
        if edges != self.target_edges || self.states.iter().any(|s| s.cluster != c || !s.is_terminated()) {
            return false;
        }
        check_convergence(&self.configuration(), &self.params)
    }

    /// Execute one synchronous round.
    pub fn step_round(&mut self, opts: &RunOptions) -> RoundRecord {
        self.round += 1;
        let n = self.states.len();
        let mut outs = Vec::with_capacity(n);
        for u in 0..n {
            let nbrs: Vec<Neighbor<'_>> = self.adj[u]
                .iter()
                .map(|&v| Neighbor {
                    id: self.ids[v],
                    state: Self::has_edge(&self.prev_adj, u, v).then(|| &self.states[v]),
                })
                .collect();
            outs.push(step(&self.states[u], &nbrs, &self.inbox[u], &self.params, self.round, &mut self.rngs[u]));
        }
        let mut rec = RoundRecord {
            round: self.round,
            edges: 0,
            max_degree: 0,
            degrees: None,
            actions_applied: 0,
            actions_rejected: 0,
            messages: 0,
            messages_rejected: 0,
            resets: 0,
            merges: 0,
            clusters: 0,
            max_gain: 0,
            connected: true,
            silent: true,
            converged: false,
            detectors: None,
        };
        let mut next_inbox = vec![Vec::new(); n];
        let mut deletes = Vec::new();
        let mut adds = Vec::new();
        for (u, out) in outs.iter().enumerate() {
            for ev in &out.events {
                match ev {
                    Event::Reset => rec.resets += 1,
                    Event::MergeComplete => rec.merges += 1,
                }
            }
            for (to, msg) in &out.messages {
                match self.idx(*to) {
                    Some(v) if Self::has_edge(&self.adj, u, v) => {
                        next_inbox[v].push((self.ids[u], msg.clone()));
                        rec.messages += 1;
                    }
                    _ => rec.messages_rejected += 1,
                }
            }
            for act in &out.actions {
                match *act {
                    Action::Delete { other } => match self.idx(other) {
                        Some(v) if Self::has_edge(&self.adj, u, v) => deletes.push((u, v)),
                        _ => rec.actions_rejected += 1,
                    },
                    Action::Add { u: a, w: b, via } => {
                        let me = self.ids[u];
                        let ok = match (self.idx(a), self.idx(b), self.idx(via)) {
                            (Some(ia), Some(ib), Some(iv)) => {
                                ia != ib
                                    && (me == a || me == b || me == via)
                                    && Self::has_edge(&self.adj, ia, iv)
                                    && Self::has_edge(&self.adj, iv, ib)
                            }
                            _ => false,
                        };
                        if ok {
                            adds.push((self.idx(a).unwrap(), self.idx(b).unwrap(), self.idx(via).unwrap()));
                        } else {
                            rec.actions_rejected += 1;
                        }
                    }
                }
            }
        }
        let mut new_adj = self.adj.clone();
        for &(a, b) in &deletes {
            if let Ok(p) = new_adj[a].binary_search(&b) {
                new_adj[a].remove(p);
            }
            if let Ok(p) = new_adj[b].binary_search(&a) {
                new_adj[b].remove(p);
            }
            rec.actions_applied += 1;
        }
        let mut gains: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for &(a, b, via) in &adds {
            rec.actions_applied += 1;
            if let Err(p) = new_adj[a].binary_search(&b) {
                new_adj[a].insert(p, b);
                let q = new_adj[b].binary_search(&a).unwrap_err();
                new_adj[b].insert(q, a);
                *gains.entry((via, a)).or_default() += 1;
                *gains.entry((via, b)).or_default() += 1;
            }
        }
        rec.max_gain = gains.values().copied().max().unwrap_or(0);
        let mut changed = false;
        let mut new_states = Vec::with_capacity(n);
        for (u, out) in outs.into_iter().enumerate() {
            if out.state != self.states[u] {
                changed = true;
            }
            new_states.push(out.state);
        }
        rec.silent = !changed && rec.messages == 0 && deletes.is_empty() && adds.is_empty();
        self.states = new_states;
        self.inbox = next_inbox;
        self.prev_adj = std::mem::replace(&mut self.adj, new_adj);
        rec.edges = self.adj.iter().map(Vec::len).sum::<usize>() / 2;
        rec.max_degree = self.max_degree();
        if opts.record_degrees {
            rec.degrees = Some(self.adj.iter().map(|l| l.len() as u32).collect());
        }
        rec.connected = self.connected();
        let mut cl: Vec<HostId> = self.states.iter().map(|s| s.cluster).collect();
        cl.sort_unstable();
        cl.dedup();
        rec.clusters = cl.len() as u32;
        rec.converged = self.is_converged();
        if opts.record_detectors {
            rec.detectors = Some(detectors(&self.configuration(), &self.params).len() as u32);
        }
        rec
    }

    /// Run until converged for `settle_rounds` consecutive rounds or `max_rounds` elapse.
    pub fn run(&mut self, opts: &RunOptions) -> RunSummary {
        let mut sum = RunSummary {
            rounds: 0,
            converged_round: None,
            initial_max_degree: self.max_degree(),
            max_degree: self.max_degree(),
            final_max_degree: 0,
            resets: 0,
            merges: 0,
            merge_rounds: Vec::new(),
            connectivity_violations: 0,
            first_disconnect: None,
            actions_rejected: 0,
            messages_rejected: 0,
            max_gain: 0,
            records: Vec::new(),
            edge_snapshots: Vec::new(),
        };
        if self.is_converged() {
            sum.converged_round = Some(self.round);
        }
        let mut settled = 0;
        while self.round < opts.max_rounds {
            if sum.converged_round.is_some() && settled >= opts.settle_rounds {
                break;
            }
            let rec = self.step_round(opts);
            sum.rounds = rec.round;
            sum.max_degree = sum.max_degree.max(rec.max_degree);
            sum.resets += rec.resets as u64;
            sum.merges += rec.merges as u64;
            for _ in 0..rec.merges {
                sum.merge_rounds.push(rec.round);
            }
            if !rec.connected {
                sum.connectivity_violations += 1;
                sum.first_disconnect.get_or_insert(rec.round);
            }
            sum.actions_rejected += rec.actions_rejected as u64;
            sum.messages_rejected += rec.messages_rejected as u64;
            sum.max_gain = sum.max_gain.max(rec.max_gain);
            if rec.converged {
                sum.converged_round.get_or_insert(rec.round);
                settled += 1;
            } else {
                sum.converged_round = None;
                settled = 0;
            }
            if opts.record_edges {
                sum.edge_snapshots.push(self.edge_list());
            }
            if opts.keep_records {
                sum.records.push(rec);
            }
        }
        sum.final_max_degree = self.max_degree();
        sum
    }
}
