//! Self-stabilizing construction of the Avatar overlay over a complete binary search tree.
//!
//! * [`topology`]: the tree, host ranges and the target host graph.
//! * [`checker`]: local consistency checks and global legality predicates.
//! * [`protocol`]: one synchronous round at one host.
//! * [`engine`]: the round simulator.
//! * [`generate`], [`graphfile`]: initial configurations.
//! * [`experiment`]: metrics, result records, sweeps and traces.

pub mod checker;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod generate;
pub mod graphfile;
pub mod protocol;
pub mod state;
pub mod topology;

pub use checker::{check_convergence, detectors, is_proper_cluster, is_valid_cluster};
pub use config::{legal_configuration, Configuration};
pub use engine::{RoundRecord, RunOptions, RunSummary, Simulation};
pub use generate::{generate, GraphKind, InitialConfigSpec, StatePolicy};
pub use state::{NodeState, Params};
pub use topology::{avatar_edges, compute_ranges, max_degree_bound, CbtTree, GuestId, HostId, Range};
