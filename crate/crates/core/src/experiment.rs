//! Metrics, result records, sweeps and trace export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, RunOptions, RunSummary, Simulation};
use crate::generate::{generate, GenerateError, Generated, GraphKind, InitialConfigSpec, StatePolicy};
use crate::topology::{avatar_edges, floor_log2, max_degree, HostId};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sweep spec: {0}")]
    Spec(#[from] serde_json::Error),
    #[error("sweep spec: {0}")]
    Invalid(String),
}

/// `max degree during the run / max(initial max degree, max degree of the target graph)`.
pub fn degree_expansion(max_during: u32, delta_initial: u32, delta_target: u32) -> f64 {
    let denom = delta_initial.max(delta_target).max(1);
    max_during as f64 / denom as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: GraphKind,
    pub policy: StatePolicy,
    pub n: u32,
    pub capacity: u32,
    pub seed: u64,
    pub levels: u32,
    pub converged_round: Option<u64>,
    pub rounds: u64,
    pub max_degree: u32,
    pub final_max_degree: u32,
    pub delta_initial: u32,
    pub delta_target: u32,
    pub degree_expansion: f64,
    pub resets: u64,
    pub merges: u64,
    pub max_gain: u32,
    pub connectivity_violations: u64,
    pub actions_rejected: u64,
    pub forgeries: u32,
    pub forgery_success: bool,
    /// Every round after convergence was silent (`None` if the run did not converge).
    pub silent_after_convergence: Option<bool>,
}

impl ExperimentResult {
    pub fn converged(&self) -> bool {
        self.converged_round.is_some()
    }

    pub fn connectivity_ok(&self) -> bool {
        self.connectivity_violations == 0
    }

    /// Converged and, if closure was checked, stayed silent.
    pub fn silence_ok(&self) -> bool {
        self.converged() && self.silent_after_convergence != Some(false)
    }

    /// Converged, stayed connected and fell silent.
    pub fn ok(&self) -> bool {
        self.connectivity_ok() && self.silence_ok()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub run: RunOptions,
    /// Extra rounds to simulate after convergence when checking silence.
    pub closure_rounds: u64,
}

impl ExperimentOptions {
    pub fn for_capacity(capacity: u32) -> Self {
        ExperimentOptions { run: RunOptions::for_capacity(capacity), closure_rounds: 0 }
    }
}

pub struct Experiment {
    pub result: ExperimentResult,
    pub summary: RunSummary,
    pub generated: Generated,
    pub sim: Simulation,
}

/// Generate, run to convergence (or the round cap), then optionally check closure.
pub fn run_experiment(spec: &InitialConfigSpec, opts: &ExperimentOptions) -> Result<Experiment, ExperimentError> {
    let generated = generate(spec)?;
    let mut sim = Simulation::new(&generated.config, spec.seed)?;
    let summary = sim.run(&opts.run);
    let hosts: Vec<HostId> = generated.config.hosts();
    let delta_target = max_degree(&hosts, &avatar_edges(spec.capacity, &hosts).expect("sampled hosts are valid"));
    let silent = match summary.converged_round {
        Some(_) if opts.closure_rounds > 0 => {
            let mut closure = opts.run.clone();
            closure.keep_records = false;
            let mut ok = true;
            for _ in 0..opts.closure_rounds {
                let rec = sim.step_round(&closure);
                ok &= rec.silent && rec.converged;
            }
            Some(ok)
        }
        _ => None,
    };
    let result = ExperimentResult {
        kind: spec.kind,
        policy: spec.policy,
        n: spec.n,
        capacity: spec.capacity,
        seed: spec.seed,
        levels: floor_log2(spec.capacity) + 1,
        converged_round: summary.converged_round,
        rounds: summary.rounds,
        max_degree: summary.max_degree,
        final_max_degree: summary.final_max_degree,
        delta_initial: summary.initial_max_degree,
        delta_target,
        degree_expansion: degree_expansion(summary.max_degree, summary.initial_max_degree, delta_target),
        resets: summary.resets,
        merges: summary.merges,
        max_gain: summary.max_gain,
        connectivity_violations: summary.connectivity_violations,
        actions_rejected: summary.actions_rejected,
        forgeries: generated.forgeries.len() as u32,
        forgery_success: generated.forgeries.iter().any(|f| f.success),
        silent_after_convergence: silent,
    };
    Ok(Experiment { result, summary, generated, sim })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// One `key=value` line per run; floats with six decimals so repeated runs are byte-identical.
/// `converged_round` is -1 for runs that did not converge.
pub fn format_record(r: &ExperimentResult) -> String {
    format!(
        "spec={}/{}/n{}/N{} kind={} policy={} n={} N={} seed={} L={} converged={} converged_round={} rounds={} \
         max_degree={} final_max_degree={} delta_initial={} delta_target={} degree_expansion={:.6} \
         expansion_per_L2={:.6} resets={} merges={} max_gain={} connectivity_violations={} \
         actions_rejected={} forgeries={} forgery_success={} silent_after_convergence={} \
         connectivity_ok={} silence_ok={}",
        r.kind,
        r.policy,
        r.n,
        r.capacity,
        r.kind,
        r.policy,
        r.n,
        r.capacity,
        r.seed,
        r.levels,
        r.converged(),
        r.converged_round.map_or(-1, |c| c as i64),
        r.rounds,
        r.max_degree,
        r.final_max_degree,
        r.delta_initial,
        r.delta_target,
        r.degree_expansion,
        r.degree_expansion / (r.levels as f64 * r.levels as f64),
        r.resets,
        r.merges,
        r.max_gain,
        r.connectivity_violations,
        r.actions_rejected,
        r.forgeries,
        r.forgery_success,
        opt(r.silent_after_convergence),
        r.connectivity_ok(),
        r.silence_ok(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    /// One JSON object per round.
    Records,
    /// `round: u-v u-v ...` per round.
    EdgelistPerRound,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "records" => Ok(TraceFormat::Records),
            "edgelist-per-round" => Ok(TraceFormat::EdgelistPerRound),
            _ => Err(format!("unknown trace format {s:?} (records | edgelist-per-round)")),
        }
    }
}

pub fn export_trace(summary: &RunSummary, format: TraceFormat) -> String {
    let mut out = String::new();
    match format {
        TraceFormat::Records => {
            for r in &summary.records {
                out.push_str(&serde_json::to_string(r).expect("plain data"));
                out.push('\n');
            }
        }
        TraceFormat::EdgelistPerRound => {
            for (i, edges) in summary.edge_snapshots.iter().enumerate() {
                let _ = write!(out, "{}:", i + 1);
                for (a, b) in edges {
                    let _ = write!(out, " {}-{}", a.0, b.0);
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Grid of runs; `n` defaults to `N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kinds: Vec<GraphKind>,
    pub sizes: Vec<u32>,
    #[serde(default)]
    pub n: Option<u32>,
    pub seeds: u64,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub policy: StatePolicy,
    #[serde(default)]
    pub max_rounds: Option<u64>,
    /// Rounds simulated after convergence to confirm silence.
    #[serde(default = "default_closure")]
    pub closure_rounds: u64,
}

fn default_closure() -> u64 {
    50
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.to_string()));
        if self.kinds.is_empty() || self.sizes.is_empty() || self.seeds == 0 {
            return bad("kinds, sizes and seeds must be nonempty");
        }
        if self.sizes.contains(&0) || self.n == Some(0) {
            return bad("sizes and n must be positive");
        }
        if self.seed_base.checked_add(self.seeds).is_none() {
            return bad("seed range overflows");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub kind: Option<GraphKind>,
    pub capacity: u32,
    pub runs: u32,
    pub converged: u32,
    pub median_round: Option<f64>,
    pub p95_round: Option<u64>,
    pub median_per_l2: Option<f64>,
    pub max_expansion: f64,
    pub max_expansion_per_l2: f64,
    /// Seeds that did not converge, disconnected, or did not fall silent.
    pub failures: Vec<u64>,
}

pub fn median(values: &mut [u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m] as f64
    } else {
        (values[m - 1] + values[m]) as f64 / 2.0
    })
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn summarize(results: &[ExperimentResult], kind: Option<GraphKind>, capacity: u32) -> CellSummary {
    let cell: Vec<&ExperimentResult> = results
        .iter()
        .filter(|r| r.capacity == capacity && kind.map_or(true, |k| r.kind == k))
        .collect();
    let l = (floor_log2(capacity) + 1) as f64;
    let mut rounds: Vec<u64> = cell.iter().filter_map(|r| r.converged_round).collect();
    let med = median(&mut rounds);
    let p95 = percentile(&rounds, 95.0);
    let max_exp = cell.iter().map(|r| r.degree_expansion).fold(0.0, f64::max);
    CellSummary {
        kind,
        capacity,
        runs: cell.len() as u32,
        converged: cell.iter().filter(|r| r.converged()).count() as u32,
        median_round: med,
        p95_round: p95,
        median_per_l2: med.map(|m| m / (l * l)),
        max_expansion: max_exp,
        max_expansion_per_l2: max_exp / (l * l),
        failures: cell.iter().filter(|r| !r.ok()).map(|r| r.seed).collect(),
    }
}

pub fn format_summary(s: &CellSummary) -> String {
    let failures: Vec<String> = s.failures.iter().map(u64::to_string).collect();
    format!(
        "kind={} N={} runs={} converged={} median_round={} p95_round={} median_per_L2={} \
         max_expansion={:.6} max_expansion_per_L2={:.6} failures={}",
        s.kind.map_or("all", |k| k.name()),
        s.capacity,
        s.runs,
        s.converged,
        opt(s.median_round.map(|m| format!("{m:.6}"))),
        opt(s.p95_round),
        opt(s.median_per_l2.map(|m| format!("{m:.6}"))),
        s.max_expansion,
        s.max_expansion_per_l2,
        if failures.is_empty() { "none".to_string() } else { failures.join(",") },
    )
}

/// Run every cell of the grid; results go to `results.txt`, per-cell summaries to `summary.txt`.
/// Both files are created before the first run so a bad output path fails early.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<Vec<ExperimentResult>, ExperimentError> {
    spec.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let results_path = out_dir.join("results.txt");
    let summary_path = out_dir.join("summary.txt");
    fs::write(&results_path, "").map_err(io(&results_path))?;
    fs::write(&summary_path, "").map_err(io(&summary_path))?;
    let mut results = Vec::new();
    let mut lines = String::new();
    for &capacity in &spec.sizes {
        for &kind in &spec.kinds {
            for i in 0..spec.seeds {
                let ispec = InitialConfigSpec {
                    kind,
                    n: spec.n.unwrap_or(capacity).min(capacity),
                    capacity,
                    seed: spec.seed_base + i,
                    policy: spec.policy,
                };
                let mut opts = ExperimentOptions::for_capacity(capacity);
                opts.run.keep_records = false;
                opts.closure_rounds = spec.closure_rounds;
                if let Some(m) = spec.max_rounds {
                    opts.run.max_rounds = m;
                }
                let exp = run_experiment(&ispec, &opts)?;
                lines.push_str(&format_record(&exp.result));
                lines.push('\n');
                results.push(exp.result);
            }
        }
    }
    fs::write(&results_path, lines).map_err(io(&results_path))?;
    let mut summary = String::new();
    for &capacity in &spec.sizes {
        for &kind in &spec.kinds {
            summary.push_str(&format_summary(&summarize(&results, Some(kind), capacity)));
            summary.push('\n');
        }
    }
    fs::write(&summary_path, summary).map_err(io(&summary_path))?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3, 1, 2]), Some(2.0));
        assert_eq!(median(&mut [4, 1, 2, 3]), Some(2.5));
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=20).collect();
        assert_eq!(percentile(&v, 95.0), Some(19));
        assert_eq!(percentile(&v, 100.0), Some(20));
        assert_eq!(percentile(&[7], 95.0), Some(7));
        assert_eq!(percentile(&[], 95.0), None);
    }

    #[test]
    fn spec_validation() {
        let spec: SweepSpec = serde_json::from_str(r#"{"kinds":["line"],"sizes":[16],"seeds":1}"#).unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.closure_rounds, 50);
        assert!(serde_json::from_str::<SweepSpec>(r#"{"kinds":["ring"],"sizes":[16],"seeds":1}"#).is_err());
        assert!(serde_json::from_str::<SweepSpec>(r#"{"kinds":["line"],"sizes":[16],"seeds":1,"x":0}"#).is_err());
        let empty = SweepSpec { seeds: 0, ..spec };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn expansion_uses_larger_denominator() {
        assert_eq!(degree_expansion(8, 2, 4), 2.0);
        assert_eq!(degree_expansion(8, 16, 4), 0.5);
    }
}
