//! Distributed CoCoA least squares and its generalization error under column partitions.

pub mod cli;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod problem;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream, Vector};
pub use problem::{PartitionSpec, ProblemInstance};
pub use solver::{CocoaSolver, SolverConfig};
pub use theory::ExtendedReal;
