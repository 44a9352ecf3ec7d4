//! Tick-driven attack and defense scenarios.
//!
//! Each tick: link events apply, flows emit packets, queued packets take
//! one hop, the victim's rate detector runs, and filters go in once the
//! first attack packets have been traced. Every hop costs one tick.

mod config;
mod network;
pub mod presets;
mod run;
mod traffic;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{
    AttackerSpec, BenignFlow, DefenseScope, LinkAction, RouteChange, ScenarioConfig, ScenarioFile, ScenarioParams, SpoofMode,
    TopologySource,
};
pub use network::{route_change, Fate, Hop, Network, PacketTrace, SimWarning, Step};
pub use run::{
    distinct_attackers, run_scenario, Counters, FlowKind, FlowRef, FlowStats, ReconstructionStats, SimOutcome, SimReport,
    TracedAttacker,
};
pub use traffic::{generate_traffic, TrafficSpec};

use crate::id_assignment::AssignmentError;
use crate::marking::MarkingError;
use crate::topology::{PortRef, TopologyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no link between {0} and {1}")]
    UnknownLink(PortRef, PortRef),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Marking(#[from] MarkingError),
}

/// Index of the first tick whose count reaches `threshold`.
pub fn ids_detect(counts: &[u64], threshold: u64) -> Option<usize> {
    counts.iter().position(|&c| c >= threshold)
}
