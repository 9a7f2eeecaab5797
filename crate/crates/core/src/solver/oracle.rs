use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::iteration::SweepEngine;
use super::{check_directions, AngularFlux, SolverError, StepKernel};
use crate::ids::{AngleId, CellId};
use crate::mesh::{DirectionSet, UnstructuredMesh};
use crate::sweepgraph::AngleGraph;

/// Single-threaded reference sweep over the global graph of each angle.
///
/// Cells are visited in Kahn order with the smallest ready cell id first, one
/// kernel call per cell.
#[derive(Clone, Debug)]
pub struct OracleSweeper {
    num_cells: usize,
    orders: Vec<Vec<CellId>>,
}

impl OracleSweeper {
    pub fn new(mesh: &UnstructuredMesh, dirs: &DirectionSet) -> Result<Self, SolverError> {
        check_directions(dirs)?;
        let orders = dirs
            .iter()
            .map(|(a, d)| kahn_ascending(&AngleGraph::build(mesh, a, d.omega)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            num_cells: mesh.num_cells(),
            orders,
        })
    }

    /// Visit order of one angle.
    pub fn order(&self, angle: AngleId) -> &[CellId] {
        &self.orders[angle.index()]
    }
}

fn kahn_ascending(graph: &AngleGraph) -> Result<Vec<CellId>, SolverError> {
    let n = graph.num_vertices();
    let mut indeg: Vec<usize> = (0..n).map(|c| graph.upwind(CellId::new(c)).len()).collect();
    let mut ready: BinaryHeap<Reverse<CellId>> = (0..n)
        .filter(|&c| indeg[c] == 0)
        .map(|c| Reverse(CellId::new(c)))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(c)) = ready.pop() {
        order.push(c);
        for &d in graph.downwind(c) {
            indeg[d.index()] -= 1;
            if indeg[d.index()] == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(SolverError::Cycle(graph.angle()))
    }
}

impl SweepEngine for OracleSweeper {
    fn sweep(&mut self, kernel: &Arc<StepKernel>) -> Result<AngularFlux, SolverError> {
        let mut psi = AngularFlux::new(self.num_cells, self.orders.len());
        for (a, order) in self.orders.iter().enumerate() {
            let angle = AngleId::new(a);
            let values = psi.angle_mut(angle);
            for &c in order {
                let v = kernel.solve_cell(angle, c, |u| {
                    Some(values[u.index()]).filter(|x| !x.is_nan())
                })?;
                values[c.index()] = v;
            }
        }
        Ok(psi)
    }
}

/// One reference sweep of every angle with `kernel`.
pub fn sequential_oracle_sweep(
    mesh: &UnstructuredMesh,
    dirs: &DirectionSet,
    kernel: &Arc<StepKernel>,
) -> Result<AngularFlux, SolverError> {
    OracleSweeper::new(mesh, dirs)?.sweep(kernel)
}
