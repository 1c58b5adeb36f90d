//! Plain-text configuration files.
//!
//! ```text
//! N n
//! nodes 0 3 5          (optional; otherwise hosts are the ids mentioned below)
//! u v                  (one undirected edge per line)
//! state u field=value ...
//! ```
//! Hosts without a `state` line start in the converged state of the sorted host set;
//! `state` lines override individual fields. `#` starts a comment.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::{legal_configuration, Configuration};
use crate::state::{GuestSlot, Role, RootCtl, Stage};
use crate::topology::{HostId, TopologyError};

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown state field {field:?}")]
    UnknownField { line: usize, field: String },
    #[error("header declares {declared} hosts but {found} were found")]
    HostCount { declared: u32, found: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn syntax(line: usize, msg: impl Into<String>) -> GraphFileError {
    GraphFileError::Syntax { line, msg: msg.into() }
}

fn parse_u32(tok: &str, line: usize) -> Result<u32, GraphFileError> {
    tok.parse().map_err(|_| syntax(line, format!("expected an integer, got {tok:?}")))
}

fn parse_opt_host(tok: &str, line: usize) -> Result<Option<HostId>, GraphFileError> {
    if tok == "-" || tok == "none" {
        Ok(None)
    } else {
        parse_u32(tok, line).map(|v| Some(HostId(v)))
    }
}

fn parse_bool(tok: &str, line: usize) -> Result<bool, GraphFileError> {
    match tok {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(syntax(line, format!("expected 0/1, got {tok:?}"))),
    }
}

fn parse_role(tok: &str, line: usize) -> Result<Role, GraphFileError> {
    Ok(match tok {
        "idle" => Role::Idle,
        "open-leader" => Role::OpenLeader,
        "closed-leader" => Role::ClosedLeader,
        "searching" => Role::Searching,
        "informed" => Role::Informed,
        "merging" => Role::Merging,
        _ => return Err(syntax(line, format!("unknown role {tok:?}"))),
    })
}

fn parse_stage(tok: &str, line: usize) -> Result<Option<Stage>, GraphFileError> {
    Ok(Some(match tok {
        "-" | "none" => return Ok(None),
        "unassigned" => Stage::Unassigned,
        "leader" => Stage::Leader { closing: false },
        "checking" => Stage::Checking,
        "terminated" => Stage::Terminated,
        _ => return Err(syntax(line, format!("unknown stage {tok:?}"))),
    }))
}

type StateLine = (usize, HostId, Vec<(String, String)>);

pub fn parse(text: &str) -> Result<Configuration, GraphFileError> {
    let mut header = None;
    let mut nodes: Option<Vec<HostId>> = None;
    let mut edges = Vec::new();
    let mut states: Vec<StateLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if header.is_none() {
            if toks.len() != 2 {
                return Err(syntax(line, "header must be `N n`"));
            }
            header = Some((parse_u32(toks[0], line)?, parse_u32(toks[1], line)?));
            continue;
        }
        match toks[0] {
            "nodes" => {
                let v = toks[1..].iter().map(|t| parse_u32(t, line).map(HostId)).collect::<Result<_, _>>()?;
                nodes = Some(v);
            }
            "state" => {
                let h = HostId(parse_u32(toks.get(1).ok_or_else(|| syntax(line, "missing host"))?, line)?);
                let mut fields = Vec::new();
                for t in &toks[2..] {
                    let (k, v) = t.split_once('=').ok_or_else(|| syntax(line, format!("expected field=value, got {t:?}")))?;
                    fields.push((k.to_string(), v.to_string()));
                }
                states.push((line, h, fields));
            }
            _ => {
                if toks.len() != 2 {
                    return Err(syntax(line, "edge lines must be `u v`"));
                }
                edges.push((line, HostId(parse_u32(toks[0], line)?), HostId(parse_u32(toks[1], line)?)));
            }
        }
    }
    let (capacity, n) = header.ok_or_else(|| syntax(0, "empty file"))?;
    let hosts: BTreeSet<HostId> = match nodes {
        Some(v) => v.into_iter().collect(),
        None => {
            let mut s: BTreeSet<HostId> = edges.iter().flat_map(|&(_, a, b)| [a, b]).collect();
            s.extend(states.iter().map(|(_, h, _)| *h));
            if s.is_empty() && n == 1 {
                s.insert(HostId(0));
            }
            s
        }
    };
    if hosts.len() != n as usize {
        return Err(GraphFileError::HostCount { declared: n, found: hosts.len() });
    }
    let hosts: Vec<HostId> = hosts.into_iter().collect();
    let mut config = legal_configuration(capacity, &hosts)?;
    config.edges.clear();
    for (line, a, b) in edges {
        if a == b || !config.nodes.contains_key(&a) || !config.nodes.contains_key(&b) {
            return Err(syntax(line, format!("bad edge {a} {b}")));
        }
        config.add_edge(a, b);
    }
    for (line, h, fields) in states {
        let s = config.nodes.get_mut(&h).ok_or_else(|| syntax(line, format!("unknown host {h}")))?;
        for (k, v) in fields {
            match k.as_str() {
                "cluster" => s.cluster = HostId(parse_u32(&v, line)?),
                "pred" => s.pred = parse_opt_host(&v, line)?,
                "succ" => s.succ = parse_opt_host(&v, line)?,
                "faulty" => s.faulty = parse_bool(&v, line)?,
                "reset" => s.reset_last_round = parse_bool(&v, line)?,
                "role" => s.role = parse_role(&v, line)?,
                "holding" => s.holding = parse_opt_host(&v, line)?,
                "stage" => s.root = parse_stage(&v, line)?.map(RootCtl::new),
                _ => return Err(GraphFileError::UnknownField { line, field: k }),
            }
        }
        let len = s.range(capacity).len() as usize;
        s.guests.resize(len, GuestSlot::default());
    }
    Ok(config)
}

/// Write the edge list and host set (states are not serialized).
pub fn format(config: &Configuration) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", config.capacity, config.nodes.len());
    let ids: Vec<String> = config.nodes.keys().map(|h| h.0.to_string()).collect();
    let _ = writeln!(out, "nodes {}", ids.join(" "));
    for (a, b) in &config.edges {
        let _ = writeln!(out, "{} {}", a.0, b.0);
    }
    out
}
