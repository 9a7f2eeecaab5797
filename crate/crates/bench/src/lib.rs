//! Problem builders shared by the sweep benchmarks.

use std::sync::Arc;

use patchsweep::mesh::{
    build_structured_mesh, decompose_structured, level_symmetric_directions, Decomposition,
    DirectionSet, StructuredMeshSpec, UnstructuredMesh,
};
use patchsweep::solver::{
    BoundaryInflux, CrossSections, OracleSweeper, RuntimeSweeper, StepGeometry, StepKernel,
    SweepEngine, SweeperConfig,
};

/// A structured box with a fixed scattering source, ready to sweep.
pub struct BenchProblem {
    pub mesh: UnstructuredMesh,
    pub decomp: Decomposition,
    pub dirs: DirectionSet,
    pub kernel: Arc<StepKernel>,
}

impl BenchProblem {
    pub fn structured(dims: [usize; 3], patch: [usize; 3], sn: usize) -> Self {
        let mesh = build_structured_mesh(&StructuredMeshSpec::unit(dims)).expect("mesh");
        let decomp = decompose_structured(&mesh, patch).expect("decomposition");
        let dirs = level_symmetric_directions(sn).expect("quadrature");
        let n = mesh.num_cells();
        let xs = CrossSections::uniform(n, 1.0, 0.5, 1.0).expect("cross sections");
        let geometry =
            Arc::new(StepGeometry::build(&mesh, &dirs, BoundaryInflux::Vacuum).expect("geometry"));
        let kernel = Arc::new(StepKernel::new(geometry, &xs, &vec![0.25; n]).expect("kernel"));
        Self {
            mesh,
            decomp,
            dirs,
            kernel,
        }
    }

    pub fn vertices(&self) -> u64 {
        (self.mesh.num_cells() * self.dirs.len()) as u64
    }

    /// A runtime sweeper that has already done its first sweep, so that a
    /// coarsened sweeper is measured on its steady state.
    pub fn warm_sweeper(&self, config: SweeperConfig) -> RuntimeSweeper {
        let mut sweeper =
            RuntimeSweeper::new(&self.mesh, &self.decomp, &self.dirs, config).expect("sweeper");
        sweeper.sweep(&self.kernel).expect("first sweep");
        sweeper
    }

    pub fn oracle(&self) -> OracleSweeper {
        OracleSweeper::new(&self.mesh, &self.dirs).expect("acyclic")
    }
}
