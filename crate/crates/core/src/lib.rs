//! Round-synchronous simulation of Distance-2-Dispersion by `n` mobile
//! agents on anonymous port-labeled graphs, with independent verification
//! oracles.
//!
//! The crate is organized around the lifecycle of one simulation:
//!
//! * [`graph`] builds and validates the port-labeled graphs agents walk on;
//! * [`protocol`] holds the per-agent state machine (one operation per
//!   sub-round of the 24-round iteration frame);
//! * [`engine`] drives the global synchronous clock, applies moves, and
//!   records the trace;
//! * [`verify`] judges final configurations and traces against brute-force
//!   oracles (maximal independence, dispersion, leader uniqueness, tree
//!   validity, memory and round budgets).

pub mod engine;
pub mod graph;
pub mod protocol;
pub mod runner;
pub mod verify;

pub use engine::{Metrics, Placement, SimState, TraceEvent};
pub use graph::{GraphError, GraphFamilySpec, PortLabeledGraph};
