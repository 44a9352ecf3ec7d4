//! Single-packet IP traceback.
//!
//! Routers write a small per-port ID into a fixed 40-byte IPv4 option as a
//! packet crosses them. Because the IDs facing any one node are distinct,
//! the receiver can walk the ID list backwards through the topology and
//! recover the exact router path from a single packet.
//!
//! - [`topology`]: the router graph and hop-count routing
//! - [`id_assignment`]: per-port ID labeling and its verifier
//! - [`codec`]: IPv4 header and option wire formats
//! - [`marking`]: the per-router forwarding pipeline
//! - [`reconstruction`]: backward path recovery
//! - [`simulator`]: tick-based attack/defense scenarios
//! - [`cli`]: the `tracemax` command

pub mod cli;
pub mod codec;
pub mod id_assignment;
pub mod topology;
pub mod marking;
pub mod prefix;
pub mod reconstruction;
pub mod simulator;
