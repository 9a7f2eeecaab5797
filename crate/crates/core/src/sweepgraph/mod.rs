//! Sweep dependency graphs.
//!
//! For a direction `Ω`, cell `v` depends on neighbor `u` when the face of `v`
//! shared with `u` has `Ω·n < -ε`. [`AngleGraph`] holds the global graph of
//! one angle; [`PatchSubgraph`] is its restriction to a patch together with
//! the cut edges that cross the patch boundary.

mod priority;

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ids::{AngleId, CellId, PatchId};
use crate::mesh::{dot, Cell, Decomposition, Neighbor, UnstructuredMesh};

pub use priority::{
    combined_priority, compute_patch_priority, compute_vertex_priority, PriorityAssignment,
    Strategy,
};

/// Faces with `|Ω·n| ≤ GRAZING_EPS` carry no dependency in either direction.
pub const GRAZING_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepGraphError {
    #[error("sweep graph of angle {angle} has a cycle through {} cells: {cells:?}", cells.len())]
    Cycle { angle: AngleId, cells: Vec<CellId> },
}

/// Indices of the faces of `cell` through which flux enters along `omega`.
pub fn upwind_faces(cell: &Cell, omega: [f64; 3]) -> Vec<usize> {
    cell.faces
        .iter()
        .enumerate()
        .filter(|(_, f)| dot(omega, f.normal) < -GRAZING_EPS)
        .map(|(i, _)| i)
        .collect()
}

/// Dependency graph of all cells for one angle.
#[derive(Clone, Debug)]
pub struct AngleGraph {
    angle: AngleId,
    upwind: Vec<Vec<CellId>>,
    downwind: Vec<Vec<CellId>>,
}

impl AngleGraph {
    pub fn build(mesh: &UnstructuredMesh, angle: AngleId, omega: [f64; 3]) -> Self {
        let n = mesh.num_cells();
        let mut upwind = vec![Vec::new(); n];
        let mut downwind = vec![Vec::new(); n];
        for cell in mesh.cells() {
            let ups = &mut upwind[cell.id.index()];
            for fi in upwind_faces(cell, omega) {
                if let Neighbor::Cell(u) = cell.faces[fi].neighbor {
                    if !ups.contains(&u) {
                        ups.push(u);
                    }
                }
            }
            ups.sort_unstable();
            for &u in ups.iter() {
                downwind[u.index()].push(cell.id);
            }
        }
        // Cells are visited in ascending order, so every downwind list is sorted.
        Self {
            angle,
            upwind,
            downwind,
        }
    }

    pub fn angle(&self) -> AngleId {
        self.angle
    }

    pub fn num_vertices(&self) -> usize {
        self.upwind.len()
    }

    pub fn upwind(&self, c: CellId) -> &[CellId] {
        &self.upwind[c.index()]
    }

    pub fn downwind(&self, c: CellId) -> &[CellId] {
        &self.downwind[c.index()]
    }

    pub fn num_edges(&self) -> usize {
        self.upwind.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (CellId, CellId)> + '_ {
        self.downwind
            .iter()
            .enumerate()
            .flat_map(|(u, ws)| ws.iter().map(move |&w| (CellId::new(u), w)))
    }

    /// Kahn's algorithm with ascending-id tie-break; `Err` holds the residual cells.
    pub fn topological_order(&self) -> Result<Vec<CellId>, Vec<CellId>> {
        let n = self.num_vertices();
        let mut indeg: Vec<usize> = self.upwind.iter().map(Vec::len).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<CellId>> = (0..n)
            .filter(|&c| indeg[c] == 0)
            .map(|c| std::cmp::Reverse(CellId::new(c)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(u)) = ready.pop() {
            order.push(u);
            for &w in self.downwind(u) {
                indeg[w.index()] -= 1;
                if indeg[w.index()] == 0 {
                    ready.push(std::cmp::Reverse(w));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err((0..n).filter(|&c| indeg[c] > 0).map(CellId::new).collect())
        }
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph angle_{} {{\n", self.angle.0);
        for (u, w) in self.edges() {
            let _ = writeln!(s, "  {} -> {};", u.0, w.0);
        }
        s.push_str("}\n");
        s
    }
}

/// Residual cells left when Kahn's algorithm stalls; empty iff acyclic.
pub fn detect_cycles(graph: &AngleGraph) -> Vec<CellId> {
    match graph.topological_order() {
        Ok(_) => Vec::new(),
        Err(residual) => residual,
    }
}

pub fn ensure_acyclic(graph: &AngleGraph) -> Result<(), SweepGraphError> {
    let cells = detect_cycles(graph);
    if cells.is_empty() {
        Ok(())
    } else {
        Err(SweepGraphError::Cycle {
            angle: graph.angle,
            cells,
        })
    }
}

/// A dependency edge crossing a patch boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CutEdge {
    pub from: CellId,
    pub to: CellId,
    /// Source patch for incoming cuts, target patch for outgoing ones.
    pub patch: PatchId,
}

/// The dependency subgraph of one `(patch, angle)` pair.
#[derive(Clone, Debug)]
pub struct PatchSubgraph {
    pub patch: PatchId,
    pub angle: AngleId,
    /// Ascending; a vertex's local index is its position here.
    pub local_vertices: Vec<CellId>,
    pub local_edges: Vec<(CellId, CellId)>,
    pub in_cut_edges: Vec<CutEdge>,
    pub out_cut_edges: Vec<CutEdge>,
    /// In-degree over local and incoming cut edges, by local index.
    pub upwind_count: Vec<u32>,
    local_downwind: Vec<Vec<u32>>,
    remote_downwind: Vec<Vec<(CellId, PatchId)>>,
}

impl PatchSubgraph {
    pub fn build(graph: &AngleGraph, decomp: &Decomposition, patch: PatchId) -> Self {
        let local_vertices = decomp.patch(patch).local_cells.clone();
        let n = local_vertices.len();
        let local_index = |c: CellId| local_vertices.binary_search(&c).ok();
        let mut local_edges = Vec::new();
        let mut in_cut_edges = Vec::new();
        let mut out_cut_edges = Vec::new();
        let mut upwind_count = vec![0u32; n];
        let mut local_downwind = vec![Vec::new(); n];
        let mut remote_downwind = vec![Vec::new(); n];
        for (li, &v) in local_vertices.iter().enumerate() {
            for &u in graph.upwind(v) {
                upwind_count[li] += 1;
                let src = decomp.patch_of(u);
                if src == patch {
                    local_edges.push((u, v));
                } else {
                    in_cut_edges.push(CutEdge {
                        from: u,
                        to: v,
                        patch: src,
                    });
                }
            }
            for &w in graph.downwind(v) {
                let tgt = decomp.patch_of(w);
                if tgt == patch {
                    let wi = local_index(w).expect("local cell indexed");
                    local_downwind[li].push(wi as u32);
                } else {
                    out_cut_edges.push(CutEdge {
                        from: v,
                        to: w,
                        patch: tgt,
                    });
                    remote_downwind[li].push((w, tgt));
                }
            }
        }
        Self {
            patch,
            angle: graph.angle,
            local_vertices,
            local_edges,
            in_cut_edges,
            out_cut_edges,
            upwind_count,
            local_downwind,
            remote_downwind,
        }
    }

    pub fn len(&self) -> usize {
        self.local_vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_vertices.is_empty()
    }

    pub fn local_index(&self, cell: CellId) -> Option<usize> {
        self.local_vertices.binary_search(&cell).ok()
    }

    /// Local downwind neighbors of local vertex `li`, as local indices.
    pub fn local_downwind(&self, li: usize) -> &[u32] {
        &self.local_downwind[li]
    }

    /// Remote downwind neighbors of local vertex `li` with their owning patch.
    pub fn remote_downwind(&self, li: usize) -> &[(CellId, PatchId)] {
        &self.remote_downwind[li]
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph patch_{}_angle_{} {{\n", self.patch.0, self.angle.0);
        for &(u, v) in &self.local_edges {
            let _ = writeln!(s, "  {} -> {};", u.0, v.0);
        }
        for e in &self.in_cut_edges {
            let _ = writeln!(
                s,
                "  {} -> {} [style=dashed, label=\"from {}\"];",
                e.from.0, e.to.0, e.patch
            );
        }
        for e in &self.out_cut_edges {
            let _ = writeln!(
                s,
                "  {} -> {} [style=dashed, label=\"to {}\"];",
                e.from.0, e.to.0, e.patch
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Convenience: builds the angle graph and extracts one patch's subgraph.
pub fn build_patch_subgraph(
    mesh: &UnstructuredMesh,
    decomp: &Decomposition,
    patch: PatchId,
    angle: AngleId,
    omega: [f64; 3],
) -> PatchSubgraph {
    PatchSubgraph::build(&AngleGraph::build(mesh, angle, omega), decomp, patch)
}

/// Graphs for every angle and every `(patch, angle)` pair.
#[derive(Clone, Debug)]
pub struct SweepGraphs {
    pub angles: Vec<AngleGraph>,
    /// `subgraphs[angle][patch]`.
    pub subgraphs: Vec<Vec<PatchSubgraph>>,
}

impl SweepGraphs {
    /// Builds all graphs and rejects any angle whose vertex graph has a cycle.
    pub fn build(
        mesh: &UnstructuredMesh,
        decomp: &Decomposition,
        directions: &crate::mesh::DirectionSet,
    ) -> Result<Self, SweepGraphError> {
        let mut angles = Vec::with_capacity(directions.len());
        let mut subgraphs = Vec::with_capacity(directions.len());
        for (a, d) in directions.iter() {
            let graph = AngleGraph::build(mesh, a, d.omega);
            ensure_acyclic(&graph)?;
            subgraphs.push(
                decomp
                    .patches()
                    .iter()
                    .map(|p| PatchSubgraph::build(&graph, decomp, p.patch_id))
                    .collect(),
            );
            angles.push(graph);
        }
        Ok(Self { angles, subgraphs })
    }

    pub fn subgraph(&self, patch: PatchId, angle: AngleId) -> &PatchSubgraph {
        &self.subgraphs[angle.index()][patch.index()]
    }
}

/// Shortest hop distance from `sources` following `next`; `None` when unreachable.
pub(crate) fn bfs_distances(
    n: usize,
    sources: impl IntoIterator<Item = usize>,
    mut next: impl FnMut(usize, &mut dyn FnMut(usize)),
) -> Vec<Option<u32>> {
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued vertices have a distance");
        next(u, &mut |w| {
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
        });
    }
    dist
}
