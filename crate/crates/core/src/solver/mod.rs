//! Single-group discrete-ordinates source iteration.
//!
//! The transport kernel is a step (fully upwind) finite-volume scheme. Sums
//! over incoming faces always run in ascending face order, so the value of a
//! vertex depends only on its inputs and never on the schedule that produced
//! them. This is what makes runtime results bitwise comparable with the
//! sequential reference sweep.

mod iteration;
mod kernel;
mod oracle;
mod sweeper;
mod xs;

use thiserror::Error;

use crate::coarsen::CoarsenError;
use crate::ids::{AngleId, CellId};
use crate::mesh::{DirectionSet, MeshError};
use crate::patchprog::KernelError;
use crate::runtime::RuntimeError;
use crate::sweepgraph::SweepGraphError;

pub use iteration::{
    scalar_flux, source_iteration, update_scattering_source, SolutionState, SolverConfig,
    SweepEngine,
};
pub use kernel::{BoundaryInflux, StepGeometry, StepKernel};
pub use oracle::{sequential_oracle_sweep, OracleSweeper};
pub use sweeper::{RuntimeSweeper, SweepAudit, SweepMode, SweeperConfig};
pub use xs::CrossSections;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid cross sections: {0}")]
    CrossSections(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Graph(#[from] SweepGraphError),
    #[error(transparent)]
    Coarsen(#[from] CoarsenError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("sweep graph of angle {0} is cyclic")]
    Cycle(AngleId),
    /// The runtime failed; `partial` holds what was computed (NaN elsewhere).
    #[error("{source}")]
    Runtime {
        source: RuntimeError,
        partial: Box<AngularFlux>,
    },
}

/// Angular flux `ψ(cell, angle)`, stored angle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularFlux {
    num_cells: usize,
    num_angles: usize,
    values: Vec<f64>,
}

impl AngularFlux {
    /// All values NaN ("not computed").
    pub fn new(num_cells: usize, num_angles: usize) -> Self {
        Self {
            num_cells,
            num_angles,
            values: vec![f64::NAN; num_cells * num_angles],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_angles(&self) -> usize {
        self.num_angles
    }

    pub fn get(&self, cell: CellId, angle: AngleId) -> f64 {
        self.values[angle.index() * self.num_cells + cell.index()]
    }

    pub fn set(&mut self, cell: CellId, angle: AngleId, value: f64) {
        self.values[angle.index() * self.num_cells + cell.index()] = value;
    }

    /// Values of one angle, indexed by cell.
    pub fn angle(&self, angle: AngleId) -> &[f64] {
        let start = angle.index() * self.num_cells;
        &self.values[start..start + self.num_cells]
    }

    pub(crate) fn angle_mut(&mut self, angle: AngleId) -> &mut [f64] {
        let start = angle.index() * self.num_cells;
        &mut self.values[start..start + self.num_cells]
    }

    /// First `(cell, angle)`, in angle-major order, whose bits differ.
    pub fn first_difference(&self, other: &AngularFlux) -> Option<(CellId, AngleId)> {
        if self.num_cells != other.num_cells || self.num_angles != other.num_angles {
            return Some((CellId(0), AngleId(0)));
        }
        let i = self
            .values
            .iter()
            .zip(&other.values)
            .position(|(a, b)| a.to_bits() != b.to_bits())?;
        Some((
            CellId::new(i % self.num_cells),
            AngleId::new(i / self.num_cells),
        ))
    }

    /// Nested `[angle][cell]` arrays for JSON output.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_angles)
            .map(|a| self.angle(AngleId::new(a)).to_vec())
            .collect()
    }
}

/// Rejects empty direction sets before any sweep is built.
pub(crate) fn check_directions(dirs: &DirectionSet) -> Result<(), SolverError> {
    if dirs.is_empty() {
        return Err(SolverError::Config("no sweep directions".into()));
    }
    Ok(())
}
