#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Distributed scenario-based portfolio optimization.
//!
//! The crate is organised around the pipeline of an asset-liability study:
//!
//! * [`scenario`] generates correlated lognormal scenario sets and evaluates a
//!   fixed-mix strategy on each scenario.
//! * [`partition`] splits scenarios across machines so counts differ by at most one.
//! * [`stats`] reduces per-machine outcome summaries to the mean/stdev objective,
//!   including the ring circulation.
//! * [`topology`] builds star, multi-level tree, ring, ring-of-rings and optimal
//!   (binomial) trees together with their broadcast and reduce schedules.
//! * [`perf`] is the analytic transaction-time model and its fitting routines.
//! * [`tabu`] is the master's Tabu-search loop over strategy parameters.
//! * [`gradient`] evaluates dependent variables and chain-rule gradients on a
//!   hyperplane-constrained domain, with the row/column distribution plan.
//! * [`runtime`] runs the master/worker protocol over TCP, UDP or a
//!   deterministic simulated network.
//!
//! Data-parallel inner loops (scenario generation, strategy evaluation) use
//! rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise.

pub mod error;
pub mod gradient;
mod par;
pub mod partition;
pub mod perf;
pub mod runtime;
pub mod scenario;
pub mod stats;
pub mod tabu;
pub mod topology;

pub use error::{Error, Result};
