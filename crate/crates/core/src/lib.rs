//! Device placement laboratory.
//!
//! Models computation graphs and device clusters, simulates the makespan of a
//! placement, and trains a REINFORCE placement agent that revisits every node
//! once per episode in one of six fixed traversal orders. The [`harness`]
//! module runs the seeded experiment grid and tallies which order finds the
//! fastest placement per graph.

pub mod embedding;
pub mod error;
pub mod generators;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod simulator;
pub mod traversal;

pub use error::{Error, Result};
pub use graph::{ComputationGraph, Edge, GraphBuilder, GraphStats, NodeId, OpNode};
pub use simulator::{ClusterSpec, DeviceSpec, Placement, SimulationResult};
pub use traversal::{Traversal, TraversalKind};
