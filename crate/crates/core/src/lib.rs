//! Simulator and online controller for weighted page interleaving between
//! local DDR and a CXL memory expander.
//!
//! The [`simulator`] turns device and workload profiles into a steady-state
//! throughput at a given CXL page ratio. The [`tuner`] closes the loop: it
//! reads smoothed counters, estimates throughput with a linear model from
//! [`estimator`], and hill-climbs the interleave ratio.

pub mod allocator;
pub mod config;
pub mod device;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod report;
pub mod simulator;
pub mod tuner;
pub mod workload;

pub use error::{Error, Result};
