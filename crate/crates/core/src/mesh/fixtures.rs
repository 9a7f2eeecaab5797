//! Small meshes built directly from a desired dependency graph.
//!
//! For a sweep direction `Ω`, an edge `u -> v` is realized as a face pair with
//! normal `+Ω` on `u` and `-Ω` on `v`, so the induced sweep graph reproduces
//! the requested edges exactly. Geometry is otherwise meaningless.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::UnstructuredMesh;
use super::{norm, Cell, Decomposition, Direction, DirectionSet, Face, MeshError, Neighbor};
use crate::ids::{CellId, PatchId};

/// Builds a mesh whose sweep graph along `omega` is exactly `edges`.
///
/// Duplicate edges are merged. Cycles are allowed (for cycle-detection tests).
pub fn dependency_mesh(
    num_cells: usize,
    edges: &[(usize, usize)],
    omega: [f64; 3],
) -> Result<UnstructuredMesh, MeshError> {
    let len = norm(omega);
    let n = omega.map(|x| x / len);
    let unique: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut faces: Vec<Vec<Face>> = vec![Vec::new(); num_cells];
    for &(u, v) in &unique {
        if u >= num_cells || v >= num_cells || u == v {
            return Err(MeshError::Argument(format!("bad fixture edge {u} -> {v}")));
        }
        if unique.contains(&(v, u)) {
            return Err(MeshError::Argument(format!(
                "edges {u} -> {v} and {v} -> {u} would share a face"
            )));
        }
        faces[u].push(Face {
            area: 1.0,
            normal: n,
            neighbor: Neighbor::Cell(CellId::new(v)),
        });
        faces[v].push(Face {
            area: 1.0,
            normal: n.map(|x| -x),
            neighbor: Neighbor::Cell(CellId::new(u)),
        });
    }
    let cells = faces
        .into_iter()
        .enumerate()
        .map(|(i, faces)| Cell {
            id: CellId::new(i),
            centroid: [i as f64, 0.0, 0.0],
            volume: 1.0,
            faces,
        })
        .collect();
    UnstructuredMesh::new(cells)
}

/// A single direction along `+x` with unit weight.
pub fn single_direction(omega: [f64; 3]) -> DirectionSet {
    let len = norm(omega);
    DirectionSet::new(vec![Direction {
        omega: omega.map(|x| x / len),
        weight: 1.0,
    }])
    .expect("single direction is valid")
}

/// Cell ids of the upwind starter patch in [`two_patch_zigzag`].
pub const ZIGZAG_UPWIND_PATCH: [usize; 8] = [0, 1, 7, 8, 11, 12, 13, 15];
/// Cell ids of the second patch in [`two_patch_zigzag`].
pub const ZIGZAG_DOWNWIND_PATCH: [usize; 8] = [2, 3, 4, 5, 6, 9, 10, 14];

/// Edges of the two-patch interleaved sweep fixture.
pub const ZIGZAG_EDGES: [(usize, usize); 18] = [
    // starter patch: its own sources
    (0, 1),
    (1, 7),
    // second patch: two sources feeding a local diamond
    (2, 4),
    (3, 5),
    (4, 6),
    (5, 6),
    // back into the starter patch
    (6, 7),
    (5, 13),
    // starter chain
    (7, 8),
    (8, 12),
    (12, 13),
    (13, 15),
    // two cut edges leaving one cluster together
    (8, 9),
    (12, 14),
    (9, 14),
    (14, 10),
    // final hop home
    (10, 11),
    (15, 11),
];

/// Sixteen cells split into two patches of eight with dependencies that
/// zig-zag between them, swept along `+x`.
///
/// Patch 0 holds the starter sources `{0, 1}`; patch 1 holds the sources
/// `{2, 3}`. With an unbounded clustering grain patch 0 computes in three
/// clusters `(0,1)`, `(7,8,12,13,15)`, `(11)` and patch 1 in two:
/// `{2,3,4,5,6}` then `(9,14,10)`. The cut edges `8 -> 9` and `12 -> 14` leave
/// the same cluster and travel in one stream.
pub fn two_patch_zigzag() -> (UnstructuredMesh, Decomposition, DirectionSet) {
    let omega = [1.0, 0.0, 0.0];
    let mesh = dependency_mesh(16, &ZIGZAG_EDGES, omega).expect("fixture is valid");
    let mut assignment = vec![PatchId(0); 16];
    for c in ZIGZAG_DOWNWIND_PATCH {
        assignment[c] = PatchId(1);
    }
    let decomp = Decomposition::from_assignment(&mesh, assignment).expect("fixture is valid");
    (mesh, decomp, single_direction(omega))
}

/// Random DAG on `n` vertices: each forward pair of a random topological
/// order becomes an edge with probability `p`.
pub fn random_dag(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                edges.push((order[i], order[j]));
            }
        }
    }
    edges
}

/// Random assignment of `n` cells to `patches` patches, every patch non-empty.
pub fn random_assignment(n: usize, patches: usize, seed: u64) -> Vec<PatchId> {
    assert!(patches >= 1 && patches <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<PatchId> = (0..n)
        .map(|i| {
            if i < patches {
                PatchId::new(i)
            } else {
                PatchId::new(rng.gen_range(0..patches))
            }
        })
        .collect();
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_fixture_is_consistent() {
        let (mesh, decomp, dirs) = two_patch_zigzag();
        assert_eq!(mesh.num_cells(), 16);
        assert_eq!(dirs.len(), 1);
        decomp.check_invariants(&mesh).unwrap();
        assert_eq!(decomp.patch(PatchId(0)).local_cells.len(), 8);
        assert_eq!(decomp.patch(PatchId(1)).local_cells.len(), 8);
    }

    #[test]
    fn antiparallel_edges_are_rejected() {
        assert!(dependency_mesh(2, &[(0, 1), (1, 0)], [1.0, 0.0, 0.0]).is_err());
    }
}
