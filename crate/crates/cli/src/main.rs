//! `avatar`: run, sweep, check and build Avatar overlay configurations.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avatar_core::experiment::{
    export_trace, format_record, run_sweep, summarize, ExperimentOptions, SweepSpec, TraceFormat,
};
use avatar_core::{avatar_edges, detectors, graphfile, GraphKind, HostId, InitialConfigSpec, Params};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avatar", version, about = "Self-stabilizing Avatar overlay simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one run and print its result record.
    Sim(SimArgs),
    /// Run a grid of experiments described by a JSON spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, env = "AVATAR_OUT_DIR", default_value = "avatar-out")]
        out: PathBuf,
    },
    /// Run the local detectors on a graph file.
    Check {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Print the Avatar edges of a host set.
    Build {
        #[arg(long = "N")]
        capacity: u32,
        /// Comma-separated host ids.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<u32>,
    },
}

#[derive(clap::Args)]
struct SimArgs {
    #[arg(long = "gen", default_value = "random-connected")]
    kind: GraphKind,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long = "N")]
    capacity: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "random-fields")]
    policy: avatar_core::StatePolicy,
    /// Start from a graph file instead of a generator.
    #[arg(long, conflicts_with_all = ["kind", "n", "capacity", "policy"])]
    graph: Option<PathBuf>,
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Rounds simulated after convergence to confirm silence.
    #[arg(long, default_value_t = 50)]
    closure_rounds: u64,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "records")]
    trace_format: TraceFormat,
    /// Write the result record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sim(a: SimArgs) -> Result<bool> {
    let mut opts;
    let (record, summary) = if let Some(path) = &a.graph {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = graphfile::parse(&text)?;
        opts = ExperimentOptions::for_capacity(config.capacity);
        configure(&mut opts, &a);
        let mut s = avatar_core::Simulation::new(&config, a.seed)?;
        let summary = s.run(&opts.run);
        let rec = format!(
            "graph={} N={} n={} seed={} converged_round={} rounds={} max_degree={} resets={} merges={} \
             connectivity_violations={}",
            path.display(),
            config.capacity,
            config.nodes.len(),
            a.seed,
            summary.converged_round.map_or(-1, |c| c as i64),
            summary.rounds,
            summary.max_degree,
            summary.resets,
            summary.merges,
            summary.connectivity_violations,
        );
        let ok = summary.converged_round.is_some() && summary.connectivity_violations == 0;
        ((rec, ok), summary)
    } else {
        let capacity = a.capacity.or(a.n).context("--N or --n is required")?;
        let spec = InitialConfigSpec { kind: a.kind, n: a.n.unwrap_or(capacity), capacity, seed: a.seed, policy: a.policy };
        opts = ExperimentOptions::for_capacity(capacity);
        configure(&mut opts, &a);
        opts.closure_rounds = a.closure_rounds;
        let exp = avatar_core::experiment::run_experiment(&spec, &opts)?;
        ((format_record(&exp.result), exp.result.ok()), exp.summary)
    };
    if let Some(path) = &a.trace {
        fs::write(path, export_trace(&summary, a.trace_format)).with_context(|| format!("writing {}", path.display()))?;
    }
    match &a.out {
        Some(path) => fs::write(path, format!("{}\n", record.0)).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{}", record.0),
    }
    Ok(record.1)
}

fn configure(opts: &mut ExperimentOptions, a: &SimArgs) {
    if let Some(m) = a.max_rounds {
        opts.run.max_rounds = m;
    }
    opts.run.keep_records = a.trace.is_some() && a.trace_format == TraceFormat::Records;
    opts.run.record_detectors = opts.run.keep_records;
    opts.run.record_edges = a.trace.is_some() && a.trace_format == TraceFormat::EdgelistPerRound;
}

fn sweep(spec: PathBuf, out: PathBuf) -> Result<bool> {
    let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SweepSpec = serde_json::from_str(&text).context("parsing sweep spec")?;
    let results = run_sweep(&spec, &out)?;
    for &capacity in &spec.sizes {
        let s = summarize(&results, None, capacity);
        eprintln!("N={capacity}: {}/{} converged, {} failing", s.converged, s.runs, s.failures.len());
    }
    println!("{}", out.join("results.txt").display());
    Ok(results.iter().all(|r| r.ok()))
}

fn check(graph: PathBuf) -> Result<bool> {
    let text = fs::read_to_string(&graph).with_context(|| format!("reading {}", graph.display()))?;
    let config = graphfile::parse(&text)?;
    let params = Params::new(config.capacity, 0)?;
    let found = detectors(&config, &params);
    for h in &found {
        println!("detector {h}");
    }
    println!("detectors={} converged={}", found.len(), avatar_core::check_convergence(&config, &params));
    Ok(found.is_empty())
}

fn build(capacity: u32, nodes: Vec<u32>) -> Result<bool> {
    let mut hosts: Vec<HostId> = nodes.into_iter().map(HostId).collect();
    hosts.sort();
    if hosts.windows(2).any(|w| w[0] == w[1]) {
        bail!("duplicate host id");
    }
    let edges = avatar_edges(capacity, &hosts)?;
    println!("{capacity} {}", hosts.len());
    let ids: Vec<String> = hosts.iter().map(|h| h.0.to_string()).collect();
    println!("nodes {}", ids.join(" "));
    for ((a, b), k) in &edges {
        let kind = match (k.type1, k.type2) {
            (true, true) => "type1,type2",
            (true, false) => "type1",
            _ => "type2",
        };
        println!("{a} {b} # {kind}");
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Sim(a) => sim(a),
        Cmd::Sweep { spec, out } => sweep(spec, out),
        Cmd::Check { graph } => check(graph),
        Cmd::Build { capacity, nodes } => build(capacity, nodes),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
