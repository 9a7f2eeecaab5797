//! Tetrahedral toy meshes: a box of cubes, each split into six Kuhn tetrahedra,
//! with optional interior vertex jitter and a cylindrical clip.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, norm, Cell, Face, MeshError, Neighbor, UnstructuredMesh};
use crate::ids::CellId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TetMeshSpec {
    /// Cubes per axis; each cube yields six tetrahedra.
    pub cubes: [usize; 3],
    /// Interior vertex displacement as a fraction of the cube edge.
    pub jitter: f64,
    pub seed: u64,
    /// Keep only cells whose centroid lies in the inscribed z-aligned cylinder.
    pub cylinder: bool,
}

impl Default for TetMeshSpec {
    fn default() -> Self {
        Self {
            cubes: [5, 5, 4],
            jitter: 0.1,
            seed: 1,
            cylinder: false,
        }
    }
}

const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn build_tet_mesh(spec: &TetMeshSpec) -> Result<UnstructuredMesh, MeshError> {
    if spec.cubes.contains(&0) {
        return Err(MeshError::Argument("cube counts must be positive".into()));
    }
    if !(0.0..0.25).contains(&spec.jitter) {
        return Err(MeshError::Argument("jitter must lie in [0, 0.25)".into()));
    }
    let [nx, ny, nz] = spec.cubes;
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let mut p = [i as f64, j as f64, k as f64];
                let interior = [(i, nx), (j, ny), (k, nz)];
                for (axis, (idx, n)) in interior.into_iter().enumerate() {
                    if idx > 0 && idx < n && spec.jitter > 0.0 {
                        p[axis] += rng.gen_range(-spec.jitter..spec.jitter);
                    }
                }
                points.push(p);
            }
        }
    }

    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let radius = cx.min(cy);
    let mut tets: Vec<[usize; 4]> = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in KUHN_PERMS {
                    let mut at = [i, j, k];
                    let mut verts = [vid(at[0], at[1], at[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        at[axis] += 1;
                        verts[s + 1] = vid(at[0], at[1], at[2]);
                    }
                    if spec.cylinder {
                        let c = centroid(&points, &verts);
                        if (c[0] - cx).hypot(c[1] - cy) > radius {
                            continue;
                        }
                    }
                    tets.push(verts);
                }
            }
        }
    }

    // Face key (sorted vertex triple) -> (tet, local face).
    let mut shared: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
    for (t, verts) in tets.iter().enumerate() {
        for f in 0..4 {
            let mut key = face_vertices(verts, f);
            key.sort_unstable();
            shared.entry(key).or_default().push((t, f));
        }
    }

    let mut cells = Vec::with_capacity(tets.len());
    for (t, verts) in tets.iter().enumerate() {
        let c = centroid(&points, verts);
        let [a, b, cc, d] = verts.map(|v| points[v]);
        let volume = dot(sub(b, a), cross(sub(cc, a), sub(d, a))).abs() / 6.0;
        let mut faces = Vec::with_capacity(4);
        for f in 0..4 {
            let fv = face_vertices(verts, f);
            let [p0, p1, p2] = fv.map(|v| points[v]);
            let mut n = cross(sub(p1, p0), sub(p2, p0));
            let len = norm(n);
            let area = 0.5 * len;
            n = n.map(|x| x / len);
            // Orient away from the opposite vertex.
            let opposite = points[verts[f]];
            if dot(n, sub(p0, opposite)) < 0.0 {
                n = n.map(|x| -x);
            }
            let mut key = fv;
            key.sort_unstable();
            let neighbor = shared[&key]
                .iter()
                .find(|&&(other, _)| other != t)
                .map_or(Neighbor::Boundary, |&(other, _)| {
                    Neighbor::Cell(CellId::new(other))
                });
            faces.push(Face {
                area,
                normal: n,
                neighbor,
            });
        }
        cells.push(Cell {
            id: CellId::new(t),
            centroid: c,
            volume,
            faces,
        });
    }
    UnstructuredMesh::new(cells)
}

/// Vertices of the face opposite local vertex `f`.
fn face_vertices(verts: &[usize; 4], f: usize) -> [usize; 3] {
    let mut out = [0; 3];
    let mut n = 0;
    for (i, &v) in verts.iter().enumerate() {
        if i != f {
            out[n] = v;
            n += 1;
        }
    }
    out
}

fn centroid(points: &[[f64; 3]], verts: &[usize; 4]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for &v in verts {
        for a in 0..3 {
            c[a] += points[v][a] / 4.0;
        }
    }
    c
}
