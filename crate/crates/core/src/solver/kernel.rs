use std::sync::Arc;

use super::{CrossSections, SolverError};
use crate::ids::{AngleId, CellId};
use crate::mesh::{dot, DirectionSet, Neighbor, UnstructuredMesh};
use crate::patchprog::{FluxStore, KernelError, SweepKernel};
use crate::sweepgraph::upwind_faces;

/// Angular flux entering through boundary faces.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum BoundaryInflux {
    #[default]
    Vacuum,
    Uniform(f64),
    /// Indexed by the dominant axis of the outward normal:
    /// `-x, +x, -y, +y, -z, +z`.
    PerSide([f64; 6]),
}

impl BoundaryInflux {
    pub fn value(&self, outward_normal: [f64; 3]) -> f64 {
        match *self {
            BoundaryInflux::Vacuum => 0.0,
            BoundaryInflux::Uniform(v) => v,
            BoundaryInflux::PerSide(sides) => {
                let axis = (0..3)
                    .max_by(|&a, &b| outward_normal[a].abs().total_cmp(&outward_normal[b].abs()))
                    .expect("three axes");
                sides[2 * axis + usize::from(outward_normal[axis] > 0.0)]
            }
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let valid = match *self {
            BoundaryInflux::Vacuum => true,
            BoundaryInflux::Uniform(v) => ok(v),
            BoundaryInflux::PerSide(s) => s.iter().all(|&v| ok(v)),
        };
        if valid {
            Ok(())
        } else {
            Err(SolverError::Config(format!(
                "boundary influx {self:?} must be finite and ≥ 0"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Inflow {
    Cell(CellId),
    Boundary(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct IncomingFace {
    from: Inflow,
    /// `|Ω·n|·A`
    alpha: f64,
}

#[derive(Clone, Debug)]
struct AngleGeometry {
    /// `offsets[c]..offsets[c + 1]` indexes `faces`.
    offsets: Vec<usize>,
    faces: Vec<IncomingFace>,
    alpha_sum: Vec<f64>,
}

/// Incoming-face coefficients of every cell for every angle, in ascending
/// face order.
#[derive(Clone, Debug)]
pub struct StepGeometry {
    volume: Vec<f64>,
    angles: Vec<AngleGeometry>,
}

impl StepGeometry {
    pub fn build(
        mesh: &UnstructuredMesh,
        dirs: &DirectionSet,
        influx: BoundaryInflux,
    ) -> Result<Self, SolverError> {
        influx.validate()?;
        let volume = mesh.cells().iter().map(|c| c.volume).collect();
        let angles = dirs
            .iter()
            .map(|(_, d)| {
                let mut offsets = Vec::with_capacity(mesh.num_cells() + 1);
                let mut faces = Vec::new();
                let mut alpha_sum = Vec::with_capacity(mesh.num_cells());
                offsets.push(0);
                for cell in mesh.cells() {
                    let mut sum = 0.0;
                    for fi in upwind_faces(cell, d.omega) {
                        let face = &cell.faces[fi];
                        let alpha = dot(d.omega, face.normal).abs() * face.area;
                        sum += alpha;
                        faces.push(IncomingFace {
                            from: match face.neighbor {
                                Neighbor::Cell(u) => Inflow::Cell(u),
                                Neighbor::Boundary => Inflow::Boundary(influx.value(face.normal)),
                            },
                            alpha,
                        });
                    }
                    alpha_sum.push(sum);
                    offsets.push(faces.len());
                }
                AngleGeometry {
                    offsets,
                    faces,
                    alpha_sum,
                }
            })
            .collect();
        Ok(Self { volume, angles })
    }

    pub fn num_cells(&self) -> usize {
        self.volume.len()
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    /// `(upwind cell or None for boundary, α)` of each incoming face.
    pub fn incoming(&self, angle: AngleId, cell: CellId) -> Vec<(Option<CellId>, f64)> {
        let g = &self.angles[angle.index()];
        g.faces[g.offsets[cell.index()]..g.offsets[cell.index() + 1]]
            .iter()
            .map(|f| match f.from {
                Inflow::Cell(u) => (Some(u), f.alpha),
                Inflow::Boundary(_) => (None, f.alpha),
            })
            .collect()
    }
}

/// The step-upwind cell solve for one source iteration.
///
/// `ψ = (q·V + s·V + Σ α_f ψ_f) / (σ_t·V + Σ α_f)` over incoming faces.
#[derive(Clone, Debug)]
pub struct StepKernel {
    geometry: Arc<StepGeometry>,
    /// `σ_t·V`
    removal: Vec<f64>,
    /// `q·V + s·V`
    emission: Vec<f64>,
}

impl StepKernel {
    /// `scattering` is the isotropic scattering source per cell.
    pub fn new(
        geometry: Arc<StepGeometry>,
        xs: &CrossSections,
        scattering: &[f64],
    ) -> Result<Self, SolverError> {
        let n = geometry.num_cells();
        if xs.num_cells() != n || scattering.len() != n {
            return Err(SolverError::Config(format!(
                "kernel inputs cover {} and {} cells, geometry {n}",
                xs.num_cells(),
                scattering.len()
            )));
        }
        let v = &geometry.volume;
        let removal = (0..n).map(|c| xs.sigma_t[c] * v[c]).collect();
        let emission = (0..n)
            .map(|c| xs.q_ext[c] * v[c] + scattering[c] * v[c])
            .collect();
        Ok(Self {
            geometry,
            removal,
            emission,
        })
    }

    pub fn geometry(&self) -> &Arc<StepGeometry> {
        &self.geometry
    }

    /// Solves one vertex given a lookup of upwind values.
    pub fn solve_cell(
        &self,
        angle: AngleId,
        cell: CellId,
        upwind: impl Fn(CellId) -> Option<f64>,
    ) -> Result<f64, KernelError> {
        let g = &self.geometry.angles[angle.index()];
        let c = cell.index();
        let mut inflow = 0.0;
        for face in &g.faces[g.offsets[c]..g.offsets[c + 1]] {
            let psi = match face.from {
                Inflow::Cell(u) => upwind(u).ok_or(KernelError::MissingUpwind {
                    cell,
                    upwind: u,
                    angle,
                })?,
                Inflow::Boundary(v) => v,
            };
            inflow += face.alpha * psi;
        }
        let denominator = self.removal[c] + g.alpha_sum[c];
        if denominator == 0.0 {
            return Err(KernelError::Degenerate { cell, angle });
        }
        Ok((self.emission[c] + inflow) / denominator)
    }
}

impl SweepKernel for StepKernel {
    fn solve(
        &self,
        angle: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), KernelError> {
        for &cell in cluster {
            let psi = self.solve_cell(angle, cell, |u| flux.get(u))?;
            flux.set(cell, psi);
        }
        Ok(())
    }
}
