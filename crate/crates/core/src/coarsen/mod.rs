//! Coarsened sweep graphs.
//!
//! A first sweep in DAG mode records every cluster a program solved in one
//! kernel call. Those clusters become the vertices of a coarsened graph whose
//! edges bundle all fine dependencies between two clusters. Later sweeps
//! schedule whole clusters instead of single vertices.

mod program;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::ids::{AngleId, CellId, CoarseVertexId, ProgramId};
use crate::mesh::{Decomposition, DirectionSet, Fnv, UnstructuredMesh};
use crate::patchprog::ClusterRecord;
use crate::sweepgraph::AngleGraph;

pub use program::{CgProgram, CgProgramConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoarsenError {
    #[error("cluster trace for angle {angle} misses {missing} vertices (first: {first})")]
    IncompleteTrace {
        angle: AngleId,
        missing: usize,
        first: CellId,
    },
    #[error("vertex {cell} appears in more than one cluster at angle {angle}")]
    DuplicateVertex { angle: AngleId, cell: CellId },
    #[error("cluster of {owner} belongs to angle {}, expected {expected}", owner.task)]
    ForeignCluster { owner: ProgramId, expected: AngleId },
    #[error("empty cluster recorded by {0}")]
    EmptyCluster(ProgramId),
    #[error("internal invariant violated: coarsened graph of angle {angle} has a cycle through {cycle:?}")]
    Cycle {
        angle: AngleId,
        cycle: Vec<CoarseVertexId>,
    },
    #[error("coarsened graph is stale: built for fingerprint {built:#x}, current {current:#x}")]
    Stale { built: u64, current: u64 },
}

/// Fingerprint of everything a coarsened graph depends on.
pub fn sweep_fingerprint(
    mesh: &UnstructuredMesh,
    decomp: &Decomposition,
    directions: &DirectionSet,
) -> u64 {
    let mut h = Fnv::default();
    h.write_u64(mesh.fingerprint());
    h.write_u64(decomp.fingerprint());
    h.write_u64(directions.fingerprint());
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseVertex {
    pub id: CoarseVertexId,
    pub owner: ProgramId,
    /// The recorded cluster in execution order.
    pub vertices: Vec<CellId>,
}

/// All fine edges from one cluster to another, as aligned lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseEdge {
    pub src: CoarseVertexId,
    pub tgt: CoarseVertexId,
    pub sources: Vec<CellId>,
    pub targets: Vec<CellId>,
}

impl CoarseEdge {
    pub fn pairs(&self) -> impl Iterator<Item = (CellId, CellId)> + '_ {
        self.sources
            .iter()
            .copied()
            .zip(self.targets.iter().copied())
    }
}

#[derive(Clone, Debug)]
pub struct CoarsenedGraph {
    pub angle: AngleId,
    pub fingerprint: u64,
    /// Indexed by coarse vertex id, ordered by recording sequence.
    pub cvertices: Vec<CoarseVertex>,
    /// Sorted by `(src, tgt)`.
    pub cedges: Vec<CoarseEdge>,
    pub in_degree: Vec<u32>,
    cluster_of: Vec<CoarseVertexId>,
    out_edges: Vec<Vec<u32>>,
}

impl CoarsenedGraph {
    pub fn num_vertices(&self) -> usize {
        self.cvertices.len()
    }

    pub fn num_fine_vertices(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn cluster_of(&self, cell: CellId) -> CoarseVertexId {
        self.cluster_of[cell.index()]
    }

    pub fn vertex(&self, id: CoarseVertexId) -> &CoarseVertex {
        &self.cvertices[id.index()]
    }

    /// Outgoing coarse edges of `id`.
    pub fn out_edges(&self, id: CoarseVertexId) -> impl Iterator<Item = &CoarseEdge> + '_ {
        self.out_edges[id.index()]
            .iter()
            .map(move |&e| &self.cedges[e as usize])
    }

    /// The coarse vertex whose cluster contains exactly `cells` (in any order).
    pub fn find_cluster(&self, cells: &[CellId]) -> Option<&CoarseVertex> {
        let mut want = cells.to_vec();
        want.sort();
        self.cvertices.iter().find(|cv| {
            let mut have = cv.vertices.clone();
            have.sort();
            have == want
        })
    }

    pub fn edge(&self, src: CoarseVertexId, tgt: CoarseVertexId) -> Option<&CoarseEdge> {
        self.cedges
            .binary_search_by_key(&(src, tgt), |e| (e.src, e.tgt))
            .ok()
            .map(|i| &self.cedges[i])
    }

    pub fn check_fingerprint(&self, current: u64) -> Result<(), CoarsenError> {
        if self.fingerprint == current {
            Ok(())
        } else {
            Err(CoarsenError::Stale {
                built: self.fingerprint,
                current,
            })
        }
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph cg_angle_{} {{\n", self.angle.0);
        for cv in &self.cvertices {
            let cells: Vec<String> = cv.vertices.iter().map(|c| c.0.to_string()).collect();
            let _ = writeln!(
                s,
                "  {} [label=\"{} {} ({})\"];",
                cv.id.0,
                cv.id,
                cv.owner,
                cells.join(",")
            );
        }
        for e in &self.cedges {
            let pairs: Vec<String> = e.pairs().map(|(u, v)| format!("{}>{}", u.0, v.0)).collect();
            let _ = writeln!(
                s,
                "  {} -> {} [label=\"{}\"];",
                e.src.0,
                e.tgt.0,
                pairs.join(" ")
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Builds the coarsened graph of one angle from the clusters recorded by all
/// programs of that angle during a DAG-mode sweep.
///
/// Clusters are numbered by recording sequence. Each coarse edge lists its
/// fine pairs ordered by the source's position in its cluster, then the
/// target's position in its cluster.
pub fn build_coarsened_graph<'a>(
    graph: &AngleGraph,
    traces: impl IntoIterator<Item = &'a ClusterRecord>,
    fingerprint: u64,
) -> Result<CoarsenedGraph, CoarsenError> {
    let angle = graph.angle();
    let n = graph.num_vertices();
    let mut records: Vec<&ClusterRecord> = traces.into_iter().collect();
    records.sort_by_key(|r| r.seq);

    const UNSET: u32 = u32::MAX;
    let mut cluster_of = vec![UNSET; n];
    let mut position = vec![0u32; n];
    let mut cvertices = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if rec.owner.task != angle {
            return Err(CoarsenError::ForeignCluster {
                owner: rec.owner,
                expected: angle,
            });
        }
        if rec.vertices.is_empty() {
            return Err(CoarsenError::EmptyCluster(rec.owner));
        }
        for (pos, &c) in rec.vertices.iter().enumerate() {
            if cluster_of[c.index()] != UNSET {
                return Err(CoarsenError::DuplicateVertex { angle, cell: c });
            }
            cluster_of[c.index()] = i as u32;
            position[c.index()] = pos as u32;
        }
        cvertices.push(CoarseVertex {
            id: CoarseVertexId::new(i),
            owner: rec.owner,
            vertices: rec.vertices.clone(),
        });
    }
    let missing: Vec<usize> = (0..n).filter(|&c| cluster_of[c] == UNSET).collect();
    if let Some(&first) = missing.first() {
        return Err(CoarsenError::IncompleteTrace {
            angle,
            missing: missing.len(),
            first: CellId::new(first),
        });
    }

    let mut bundles: BTreeMap<(u32, u32), Vec<(u32, u32, CellId, CellId)>> = BTreeMap::new();
    for (u, v) in graph.edges() {
        let (cu, cv) = (cluster_of[u.index()], cluster_of[v.index()]);
        if cu != cv {
            bundles.entry((cu, cv)).or_default().push((
                position[u.index()],
                position[v.index()],
                u,
                v,
            ));
        }
    }
    let mut in_degree = vec![0u32; cvertices.len()];
    let mut out_edges = vec![Vec::new(); cvertices.len()];
    let mut cedges = Vec::with_capacity(bundles.len());
    for ((cu, cv), mut pairs) in bundles {
        pairs.sort();
        in_degree[cv as usize] += 1;
        out_edges[cu as usize].push(cedges.len() as u32);
        cedges.push(CoarseEdge {
            src: CoarseVertexId(cu),
            tgt: CoarseVertexId(cv),
            sources: pairs.iter().map(|p| p.2).collect(),
            targets: pairs.iter().map(|p| p.3).collect(),
        });
    }
    Ok(CoarsenedGraph {
        angle,
        fingerprint,
        cvertices,
        cedges,
        in_degree,
        cluster_of: cluster_of.into_iter().map(CoarseVertexId).collect(),
        out_edges,
    })
}

/// Checks that the coarsened graph admits a topological order.
///
/// A failure means the trace was not produced by a legal execution.
pub fn verify_acyclic(cg: &CoarsenedGraph) -> Result<(), CoarsenError> {
    let n = cg.num_vertices();
    let mut indeg = cg.in_degree.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for e in cg.out_edges(CoarseVertexId::new(i)) {
            let t = e.tgt.index();
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    if seen == n {
        return Ok(());
    }
    // Every remaining vertex has a remaining predecessor; walk backwards
    // until a vertex repeats.
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &cg.cedges {
        if indeg[e.tgt.index()] > 0 && indeg[e.src.index()] > 0 {
            preds[e.tgt.index()].push(e.src.index());
        }
    }
    let start = (0..n).find(|&i| indeg[i] > 0).expect("a vertex is left");
    let mut order = Vec::new();
    let mut at = vec![usize::MAX; n];
    let mut cur = start;
    while at[cur] == usize::MAX {
        at[cur] = order.len();
        order.push(cur);
        cur = preds[cur][0];
    }
    let mut cycle: Vec<CoarseVertexId> = order[at[cur]..]
        .iter()
        .map(|&i| CoarseVertexId::new(i))
        .collect();
    cycle.reverse();
    Err(CoarsenError::Cycle {
        angle: cg.angle,
        cycle,
    })
}

#[cfg(test)]
mod tests;
