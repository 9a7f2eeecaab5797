//! Cell/face mesh representation, patch decomposition and discrete-ordinate sets.
//!
//! Structured meshes are lowered into the same cell/face form as unstructured
//! ones so that everything downstream works on a single representation. The
//! structured layout is kept only as metadata on [`UnstructuredMesh`].

mod decompose;
mod directions;
pub mod fixtures;
mod io;
mod structured;
pub mod tetra;

use thiserror::Error;

use crate::ids::CellId;

pub use decompose::{decompose_structured, decompose_unstructured, Decomposition, Patch};
pub use directions::{level_symmetric_directions, Direction, DirectionSet};
pub use io::{mesh_from_json, mesh_to_json};
pub use structured::{build_structured_mesh, StructuredMeshSpec};

/// Tolerance on `|n| - 1` for face normals.
pub const NORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("mesh of {0} cells exceeds the addressable cell range")]
    Capacity(u128),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What lies across a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Neighbor {
    Cell(CellId),
    Boundary,
}

impl Neighbor {
    pub fn cell(self) -> Option<CellId> {
        match self {
            Neighbor::Cell(c) => Some(c),
            Neighbor::Boundary => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub area: f64,
    /// Outward unit normal.
    pub normal: [f64; 3],
    pub neighbor: Neighbor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: CellId,
    pub centroid: [f64; 3],
    pub volume: f64,
    pub faces: Vec<Face>,
}

/// A validated mesh in cell/face form.
#[derive(Clone, Debug, PartialEq)]
pub struct UnstructuredMesh {
    cells: Vec<Cell>,
    structured: Option<StructuredMeshSpec>,
}

impl UnstructuredMesh {
    /// Validates and wraps a list of cells.
    ///
    /// Checks that ids are dense `0..N` in order, normals are unit vectors,
    /// areas and volumes are positive, and face adjacency is symmetric.
    pub fn new(cells: Vec<Cell>) -> Result<Self, MeshError> {
        let n = cells.len();
        for (i, cell) in cells.iter().enumerate() {
            if cell.id.index() != i {
                return Err(MeshError::Invalid(format!(
                    "cell ids must be dense and ordered: position {i} holds {}",
                    cell.id
                )));
            }
            if !(cell.volume > 0.0) {
                return Err(MeshError::Invalid(format!(
                    "{} has non-positive volume",
                    cell.id
                )));
            }
            for (fi, face) in cell.faces.iter().enumerate() {
                if !(face.area > 0.0) {
                    return Err(MeshError::Invalid(format!(
                        "{} face {fi} has non-positive area",
                        cell.id
                    )));
                }
                let len = norm(face.normal);
                if (len - 1.0).abs() > NORMAL_TOLERANCE {
                    return Err(MeshError::Invalid(format!(
                        "{} face {fi} normal has length {len}",
                        cell.id
                    )));
                }
                if let Neighbor::Cell(nb) = face.neighbor {
                    if nb.index() >= n {
                        return Err(MeshError::Invalid(format!(
                            "{} face {fi} references missing {nb}",
                            cell.id
                        )));
                    }
                    if nb == cell.id {
                        return Err(MeshError::Invalid(format!(
                            "{} face {fi} references itself",
                            cell.id
                        )));
                    }
                }
            }
        }
        for cell in &cells {
            for face in &cell.faces {
                if let Neighbor::Cell(nb) = face.neighbor {
                    let back = cells[nb.index()]
                        .faces
                        .iter()
                        .any(|f| f.neighbor == Neighbor::Cell(cell.id));
                    if !back {
                        return Err(MeshError::Invalid(format!(
                            "asymmetric adjacency: {} lists {nb} but not vice versa",
                            cell.id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            cells,
            structured: None,
        })
    }

    pub(crate) fn with_structured(mut self, spec: StructuredMeshSpec) -> Self {
        self.structured = Some(spec);
        self
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id.index()]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// The structured layout this mesh was generated from, if any.
    pub fn structured(&self) -> Option<&StructuredMeshSpec> {
        self.structured.as_ref()
    }

    /// Distinct face-neighbors of `id`, in face order.
    pub fn neighbors(&self, id: CellId) -> impl Iterator<Item = CellId> + '_ {
        let faces = &self.cells[id.index()].faces;
        faces.iter().enumerate().filter_map(move |(i, f)| {
            let nb = f.neighbor.cell()?;
            // Skip repeated neighbors across several faces.
            let seen = faces[..i].iter().any(|g| g.neighbor == Neighbor::Cell(nb));
            (!seen).then_some(nb)
        })
    }

    /// Number of interior face pairs (each shared face counted once).
    pub fn interior_face_count(&self) -> usize {
        let half: usize = self
            .cells
            .iter()
            .map(|c| {
                c.faces
                    .iter()
                    .filter(|f| f.neighbor != Neighbor::Boundary)
                    .count()
            })
            .sum();
        half / 2
    }

    /// Order-sensitive fingerprint of topology and geometry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.write_u64(self.cells.len() as u64);
        for cell in &self.cells {
            h.write_u64(cell.faces.len() as u64);
            h.write_u64(cell.volume.to_bits());
            for face in &cell.faces {
                h.write_u64(face.area.to_bits());
                for x in face.normal {
                    h.write_u64(x.to_bits());
                }
                h.write_u64(match face.neighbor {
                    Neighbor::Cell(c) => c.0 as u64,
                    Neighbor::Boundary => u64::MAX,
                });
            }
        }
        h.finish()
    }
}

#[inline]
pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// 64-bit FNV-1a, used for cheap structural fingerprints.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub(crate) fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}
