use std::sync::Arc;

use serde::Serialize;

use super::{AngularFlux, CrossSections, SolverError, StepGeometry, StepKernel};
use crate::ids::{AngleId, CellId};
use crate::mesh::DirectionSet;

/// Anything that can sweep every angle once with a given kernel.
pub trait SweepEngine {
    fn sweep(&mut self, kernel: &Arc<StepKernel>) -> Result<AngularFlux, SolverError>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Stop once `max_c |φ_new − φ_old|` drops below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(SolverError::Config(format!(
                "need tol > 0 and max_iters ≥ 1, got {} and {}",
                self.tol, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolutionState {
    #[serde(skip)]
    pub psi: AngularFlux,
    pub phi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Residual after each iteration.
    pub residuals: Vec<f64>,
}

/// `φ(c) = Σ_m w_m ψ(c, m)`, summed in ascending angle order.
pub fn scalar_flux(psi: &AngularFlux, dirs: &DirectionSet) -> Vec<f64> {
    let mut phi = vec![0.0; psi.num_cells()];
    for (a, d) in dirs.iter() {
        for (c, p) in phi.iter_mut().enumerate() {
            *p += d.weight * psi.get(CellId::new(c), a);
        }
    }
    phi
}

/// Isotropic scattering source `σ_s(c)·φ(c)`.
pub fn update_scattering_source(phi: &[f64], xs: &CrossSections) -> Vec<f64> {
    phi.iter().zip(&xs.sigma_s).map(|(p, s)| s * p).collect()
}

/// Source iteration from `φ = 0` until the max-norm change of `φ` is below
/// `config.tol` or `config.max_iters` sweeps have run.
///
/// Non-convergence is not an error: the returned state has `converged = false`.
pub fn source_iteration(
    engine: &mut dyn SweepEngine,
    geometry: &Arc<StepGeometry>,
    dirs: &DirectionSet,
    xs: &CrossSections,
    config: &SolverConfig,
) -> Result<SolutionState, SolverError> {
    config.validate()?;
    xs.validate()?;
    if dirs.len() != geometry.num_angles() || xs.num_cells() != geometry.num_cells() {
        return Err(SolverError::Config(
            "directions, cross sections and geometry disagree in size".into(),
        ));
    }
    let mut phi = vec![0.0; geometry.num_cells()];
    let mut residuals = Vec::new();
    let mut psi = AngularFlux::new(geometry.num_cells(), dirs.len());
    let mut converged = false;
    for _ in 0..config.max_iters {
        let scattering = update_scattering_source(&phi, xs);
        let kernel = Arc::new(StepKernel::new(Arc::clone(geometry), xs, &scattering)?);
        psi = engine.sweep(&kernel)?;
        let next = scalar_flux(&psi, dirs);
        let residual = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phi = next;
        residuals.push(residual);
        if residual < config.tol {
            converged = true;
            break;
        }
    }
    Ok(SolutionState {
        psi,
        phi,
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        converged,
        residuals,
    })
}

impl SolutionState {
    pub fn psi_at(&self, cell: CellId, angle: AngleId) -> f64 {
        self.psi.get(cell, angle)
    }
}
