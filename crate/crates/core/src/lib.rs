//! Functional and cycle-level model of a memory system built from slices:
//! DRAM with a co-located systolic array, aggregation engine and a mesh
//! network interface.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod icn;
pub mod oracle;
pub mod partitioner;
pub mod sim;
pub mod types;
pub mod workloads;

pub use config::{ExperimentConfig, MemoryKind, SliceConfig, SystemConfig};
pub use error::{Error, Result};
pub use types::{MatrixId, NodeId, Orientation, Region, SliceId};
