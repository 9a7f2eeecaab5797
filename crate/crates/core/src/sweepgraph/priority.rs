//! Two-level scheduling priorities: per-vertex within a patch-program and
//! per-`(patch, angle)` across programs.
//!
//! Larger integers are scheduled first. The combined program priority is
//! `angle_priority[a] * C + patch_priority[p]` with `C` larger than the span of
//! patch priorities, so programs of one angle are always preferred over those
//! of any later angle.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{bfs_distances, AngleGraph, PatchSubgraph, SweepGraphError, SweepGraphs};
use crate::ids::{AngleId, CellId, PatchId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Longest distance on critical path.
    Ldcp,
    /// Breadth-first depth from the sources.
    Bfs,
    /// Shortest local boundary distance.
    Slbd,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ldcp, Strategy::Bfs, Strategy::Slbd];

    /// Equal-priority ready vertices are taken most-recently-enabled first.
    pub fn lifo_ties(self) -> bool {
        matches!(self, Strategy::Slbd)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ldcp => "ldcp",
            Strategy::Bfs => "bfs",
            Strategy::Slbd => "slbd",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ldcp" => Ok(Strategy::Ldcp),
            "bfs" => Ok(Strategy::Bfs),
            "slbd" => Ok(Strategy::Slbd),
            other => Err(format!("unknown priority strategy {other:?}")),
        }
    }
}

/// Longest path length (in edges) from each vertex to any sink.
fn longest_to_sink(graph: &AngleGraph) -> Result<Vec<i64>, SweepGraphError> {
    let order = graph
        .topological_order()
        .map_err(|cells| SweepGraphError::Cycle {
            angle: graph.angle(),
            cells,
        })?;
    let mut dist = vec![0i64; graph.num_vertices()];
    for &u in order.iter().rev() {
        dist[u.index()] = graph
            .downwind(u)
            .iter()
            .map(|w| dist[w.index()] + 1)
            .max()
            .unwrap_or(0);
    }
    Ok(dist)
}

/// Longest local path from each local vertex to a local sink.
fn local_longest(sg: &PatchSubgraph) -> Vec<i64> {
    let n = sg.len();
    let mut indeg = vec![0u32; n];
    for li in 0..n {
        for &w in sg.local_downwind(li) {
            indeg[w as usize] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &w in sg.local_downwind(u) {
            indeg[w as usize] -= 1;
            if indeg[w as usize] == 0 {
                order.push(w as usize);
            }
        }
    }
    let mut dist = vec![0i64; n];
    for &u in order.iter().rev() {
        dist[u] = sg
            .local_downwind(u)
            .iter()
            .map(|&w| dist[w as usize] + 1)
            .max()
            .unwrap_or(0);
    }
    dist
}

/// Per-cell vertex priority for one angle.
///
/// * LDCP: longest path to a sink of the whole angle graph.
/// * BFS: minus the hop depth from the source set.
/// * SLBD: minus the local hop distance to the nearest local vertex that has
///   an outgoing cut edge. Vertices that cannot reach such a vertex inside
///   their patch get `-(|V_p| + longest local path)`, placing them after all
///   boundary-reaching ones; in a patch with no outgoing cut edges this is a
///   uniform shift of `-(longest local path)`.
pub fn compute_vertex_priority(
    graph: &AngleGraph,
    subgraphs: &[PatchSubgraph],
    strategy: Strategy,
) -> Result<Vec<i64>, SweepGraphError> {
    let n = graph.num_vertices();
    match strategy {
        Strategy::Ldcp => longest_to_sink(graph),
        Strategy::Bfs => {
            graph
                .topological_order()
                .map_err(|cells| SweepGraphError::Cycle {
                    angle: graph.angle(),
                    cells,
                })?;
            let sources = (0..n).filter(|&c| graph.upwind(CellId::new(c)).is_empty());
            let depth = bfs_distances(n, sources, |u, visit| {
                for w in graph.downwind(CellId::new(u)) {
                    visit(w.index());
                }
            });
            Ok(depth
                .into_iter()
                .map(|d| -(d.expect("acyclic graph reaches every vertex") as i64))
                .collect())
        }
        Strategy::Slbd => {
            graph
                .topological_order()
                .map_err(|cells| SweepGraphError::Cycle {
                    angle: graph.angle(),
                    cells,
                })?;
            let mut prio = vec![0i64; n];
            for sg in subgraphs {
                let m = sg.len();
                let boundary = (0..m).filter(|&li| !sg.remote_downwind(li).is_empty());
                // Reverse local edges: distance from v forward to a boundary vertex.
                let mut reverse = vec![Vec::new(); m];
                for li in 0..m {
                    for &w in sg.local_downwind(li) {
                        reverse[w as usize].push(li);
                    }
                }
                let dist = bfs_distances(m, boundary, |u, visit| {
                    for &v in &reverse[u] {
                        visit(v);
                    }
                });
                let longest = local_longest(sg);
                for (li, &c) in sg.local_vertices.iter().enumerate() {
                    prio[c.index()] = match dist[li] {
                        Some(d) => -(d as i64),
                        None => -(m as i64 + longest[li]),
                    };
                }
            }
            Ok(prio)
        }
    }
}

/// Patch-level condensation of one angle: `p -> q` when a cut edge crosses.
fn condensation(subgraphs: &[PatchSubgraph]) -> Vec<BTreeSet<usize>> {
    subgraphs
        .iter()
        .map(|sg| sg.out_cut_edges.iter().map(|e| e.patch.index()).collect())
        .collect()
}

fn kahn_order(succ: &[BTreeSet<usize>]) -> Option<Vec<usize>> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &q in s {
            indeg[q] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&p| indeg[p] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &q in &succ[u] {
            indeg[q] -= 1;
            if indeg[q] == 0 {
                order.push(q);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Drops DFS back edges. Roots are taken in ascending id, preferring patches
/// with no incoming edge; successors are explored in ascending id.
fn drop_back_edges(succ: &[BTreeSet<usize>]) -> Vec<BTreeSet<usize>> {
    let n = succ.len();
    let mut has_pred = vec![false; n];
    for s in succ {
        for &q in s {
            has_pred[q] = true;
        }
    }
    let roots = (0..n)
        .filter(|&p| !has_pred[p])
        .chain((0..n).filter(|&p| has_pred[p]));
    let mut color = vec![0u8; n];
    let mut dag: Vec<BTreeSet<usize>> = succ.to_vec();
    for root in roots {
        if color[root] != 0 {
            continue;
        }
        color[root] = 1;
        let mut stack: Vec<(usize, Vec<usize>)> =
            vec![(root, succ[root].iter().copied().collect())];
        while let Some((u, pending)) = stack.last_mut() {
            let u = *u;
            if pending.is_empty() {
                color[u] = 2;
                stack.pop();
                continue;
            }
            let w = pending.remove(0);
            match color[w] {
                1 => {
                    dag[u].remove(&w);
                }
                0 => {
                    color[w] = 1;
                    stack.push((w, succ[w].iter().copied().collect()));
                }
                _ => {}
            }
        }
    }
    dag
}

fn bfs_depth(succ: &[BTreeSet<usize>]) -> Vec<i64> {
    let n = succ.len();
    let mut has_pred = vec![false; n];
    for s in succ {
        for &q in s {
            has_pred[q] = true;
        }
    }
    let depth = bfs_distances(n, (0..n).filter(|&p| !has_pred[p]), |u, visit| {
        for &q in &succ[u] {
            visit(q);
        }
    });
    depth
        .into_iter()
        .map(|d| d.map_or(0, |d| d as i64))
        .collect()
}

/// Per-patch priority for one angle over the patch condensation graph.
///
/// When the condensation has cycles (interleaved patches), every strategy
/// falls back to minus the BFS depth over the condensation with DFS back
/// edges removed. `process_of_patch` feeds SLBD: its boundary patches are
/// those adjacent (through a cut edge, either way) to a patch on another
/// process; with a single process SLBD equals BFS.
pub fn compute_patch_priority(
    subgraphs: &[PatchSubgraph],
    strategy: Strategy,
    process_of_patch: Option<&[usize]>,
) -> Vec<i64> {
    let succ = condensation(subgraphs);
    let n = succ.len();
    let Some(order) = kahn_order(&succ) else {
        let dag = drop_back_edges(&succ);
        return bfs_depth(&dag).into_iter().map(|d| -d).collect();
    };
    match strategy {
        Strategy::Ldcp => {
            let mut dist = vec![0i64; n];
            for &u in order.iter().rev() {
                dist[u] = succ[u].iter().map(|&q| dist[q] + 1).max().unwrap_or(0);
            }
            dist
        }
        Strategy::Bfs => bfs_depth(&succ).into_iter().map(|d| -d).collect(),
        Strategy::Slbd => {
            let bfs: Vec<i64> = bfs_depth(&succ).into_iter().map(|d| -d).collect();
            let Some(proc_of) = process_of_patch else {
                return bfs;
            };
            let distinct: BTreeSet<usize> = proc_of.iter().copied().collect();
            if distinct.len() <= 1 {
                return bfs;
            }
            let mut boundary = vec![false; n];
            for (p, s) in succ.iter().enumerate() {
                for &q in s {
                    if proc_of[p] != proc_of[q] {
                        boundary[p] = true;
                        boundary[q] = true;
                    }
                }
            }
            let mut pred = vec![Vec::new(); n];
            for (p, s) in succ.iter().enumerate() {
                for &q in s {
                    pred[q].push(p);
                }
            }
            let dist = bfs_distances(n, (0..n).filter(|&p| boundary[p]), |u, visit| {
                for &p in &pred[u] {
                    visit(p);
                }
            });
            (0..n)
                .map(|p| match dist[p] {
                    Some(d) => -(d as i64),
                    None => bfs[p] - n as i64,
                })
                .collect()
        }
    }
}

/// Vertex, patch and angle priorities of one sweep configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityAssignment {
    pub strategy: Strategy,
    /// `vertex[angle][cell]`.
    pub vertex: Vec<Vec<i64>>,
    /// `patch[angle][patch]`.
    pub patch: Vec<Vec<i64>>,
    /// `angle[a] = number_of_angles - a`.
    pub angle: Vec<i64>,
    pub c: i64,
}

impl PriorityAssignment {
    pub fn build(
        graphs: &SweepGraphs,
        strategy: Strategy,
        process_of_patch: Option<&[usize]>,
    ) -> Result<Self, SweepGraphError> {
        let mut vertex = Vec::with_capacity(graphs.angles.len());
        let mut patch = Vec::with_capacity(graphs.angles.len());
        for (g, subs) in graphs.angles.iter().zip(&graphs.subgraphs) {
            vertex.push(compute_vertex_priority(g, subs, strategy)?);
            patch.push(compute_patch_priority(subs, strategy, process_of_patch));
        }
        Ok(Self::from_parts(strategy, vertex, patch))
    }

    pub fn from_parts(strategy: Strategy, vertex: Vec<Vec<i64>>, patch: Vec<Vec<i64>>) -> Self {
        let num_angles = patch.len() as i64;
        let angle = (0..num_angles).map(|a| num_angles - a).collect();
        let all = patch.iter().flatten();
        let max_abs = all.clone().map(|p| p.abs()).max().unwrap_or(0);
        let span = match (all.clone().min(), all.max()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0,
        };
        Self {
            strategy,
            vertex,
            patch,
            angle,
            c: 1 + max_abs.max(span),
        }
    }

    pub fn vertex_priority(&self, angle: AngleId, cell: CellId) -> i64 {
        self.vertex[angle.index()][cell.index()]
    }

    pub fn combined(&self, patch: PatchId, angle: AngleId) -> i64 {
        combined_priority(self, patch, angle)
    }
}

/// `angle_priority[a] * C + patch_priority[p]`.
pub fn combined_priority(assignment: &PriorityAssignment, patch: PatchId, angle: AngleId) -> i64 {
    assignment.angle[angle.index()] * assignment.c + assignment.patch[angle.index()][patch.index()]
}
