//! Placement of complex-event-processing flows on edge workers.
//!
//! [`flow`] builds the step DAG from publish/subscribe topics, [`cost`]
//! prices placements, [`solvers`] produces them, [`sim`] runs a placed flow
//! in virtual time and [`metrics`] summarizes the resulting event log.

pub mod cost;
pub mod flow;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod solvers;
