use serde::{Deserialize, Serialize};

use super::{Cell, Face, MeshError, Neighbor, UnstructuredMesh};
use crate::ids::CellId;

/// Dimensions and cell edge lengths of a box of hexahedral cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredMeshSpec {
    pub dims: [usize; 3],
    pub cell_extent: [f64; 3],
}

impl StructuredMeshSpec {
    pub fn new(dims: [usize; 3], cell_extent: [f64; 3]) -> Result<Self, MeshError> {
        let spec = Self { dims, cell_extent };
        spec.validate()?;
        Ok(spec)
    }

    pub fn unit(dims: [usize; 3]) -> Self {
        Self {
            dims,
            cell_extent: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.dims.contains(&0) {
            return Err(MeshError::Argument(format!(
                "structured dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self
            .cell_extent
            .iter()
            .any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(MeshError::Argument(format!(
                "cell extents must be positive and finite, got {:?}",
                self.cell_extent
            )));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear id of `(i, j, k)`, x fastest.
    #[inline]
    pub fn cell_id(&self, ijk: [usize; 3]) -> CellId {
        CellId::new(ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2]))
    }

    #[inline]
    pub fn ijk(&self, id: CellId) -> [usize; 3] {
        let n = id.index();
        let [nx, ny, _] = self.dims;
        [n % nx, (n / nx) % ny, n / (nx * ny)]
    }
}

/// Materializes a structured box as a cell/face mesh.
///
/// Every cell gets six faces in the order `-x, +x, -y, +y, -z, +z`.
pub fn build_structured_mesh(spec: &StructuredMeshSpec) -> Result<UnstructuredMesh, MeshError> {
    spec.validate()?;
    let total: u128 = spec.dims.iter().map(|&d| d as u128).product();
    if total > u32::MAX as u128 {
        return Err(MeshError::Capacity(total));
    }
    let [ex, ey, ez] = spec.cell_extent;
    let areas = [ey * ez, ex * ez, ex * ey];
    let volume = ex * ey * ez;

    let mut cells = Vec::with_capacity(total as usize);
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let ijk = [i, j, k];
                let id = spec.cell_id(ijk);
                let mut faces = Vec::with_capacity(6);
                for axis in 0..3 {
                    for (sign, step) in [(-1.0, -1isize), (1.0, 1)] {
                        let mut normal = [0.0; 3];
                        normal[axis] = sign;
                        let pos = ijk[axis] as isize + step;
                        let neighbor = if pos < 0 || pos >= spec.dims[axis] as isize {
                            Neighbor::Boundary
                        } else {
                            let mut nb = ijk;
                            nb[axis] = pos as usize;
                            Neighbor::Cell(spec.cell_id(nb))
                        };
                        faces.push(Face {
                            area: areas[axis],
                            normal,
                            neighbor,
                        });
                    }
                }
                cells.push(Cell {
                    id,
                    centroid: [
                        (i as f64 + 0.5) * ex,
                        (j as f64 + 0.5) * ey,
                        (k as f64 + 0.5) * ez,
                    ],
                    volume,
                    faces,
                });
            }
        }
    }
    Ok(UnstructuredMesh::new(cells)?.with_structured(*spec))
}
