//! Patch-centric data-driven sweeps.
//!
//! A mesh is decomposed into patches; each `(patch, angle)` pair runs as a
//! reentrant patch-program that computes whatever `(cell, angle)` vertices are
//! ready, exchanges upwind data with other programs through routed streams,
//! and halts until new data arrives. A simulated multi-process runtime with
//! one master and several workers per process schedules the programs, and a
//! single-group discrete-ordinates solver drives it.

pub mod clock;
pub mod coarsen;
pub mod ids;
pub mod mesh;
pub mod patchprog;
pub mod runtime;
pub mod solver;
pub mod sweepgraph;

#[cfg(test)]
mod testutil;

pub use ids::{AngleId, CellId, CoarseVertexId, PatchId, ProgramId, SweepVertex};
