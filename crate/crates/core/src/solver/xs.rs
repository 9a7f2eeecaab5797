use serde::{Deserialize, Serialize};

use super::SolverError;

/// Per-cell material data: total and scattering cross sections (1/length)
/// and the external source density.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossSections {
    pub sigma_t: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub q_ext: Vec<f64>,
}

#[derive(Deserialize)]
struct Uniform {
    sigma_t: f64,
    sigma_s: f64,
    q_ext: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum XsFile {
    Uniform {
        uniform: Uniform,
    },
    PerCell {
        sigma_t: Vec<f64>,
        sigma_s: Vec<f64>,
        q_ext: Vec<f64>,
    },
}

impl CrossSections {
    pub fn uniform(
        num_cells: usize,
        sigma_t: f64,
        sigma_s: f64,
        q_ext: f64,
    ) -> Result<Self, SolverError> {
        Self::per_cell(
            vec![sigma_t; num_cells],
            vec![sigma_s; num_cells],
            vec![q_ext; num_cells],
        )
    }

    pub fn per_cell(
        sigma_t: Vec<f64>,
        sigma_s: Vec<f64>,
        q_ext: Vec<f64>,
    ) -> Result<Self, SolverError> {
        let xs = Self {
            sigma_t,
            sigma_s,
            q_ext,
        };
        xs.validate()?;
        Ok(xs)
    }

    /// Parses `{"uniform": {...}}` or per-cell arrays and checks the length
    /// against the mesh.
    pub fn from_json(text: &str, num_cells: usize) -> Result<Self, SolverError> {
        let parsed: XsFile =
            serde_json::from_str(text).map_err(|e| SolverError::CrossSections(e.to_string()))?;
        let xs = match parsed {
            XsFile::Uniform { uniform: u } => {
                Self::uniform(num_cells, u.sigma_t, u.sigma_s, u.q_ext)?
            }
            XsFile::PerCell {
                sigma_t,
                sigma_s,
                q_ext,
            } => Self::per_cell(sigma_t, sigma_s, q_ext)?,
        };
        if xs.num_cells() != num_cells {
            return Err(SolverError::CrossSections(format!(
                "{} cells of data for a mesh of {num_cells}",
                xs.num_cells()
            )));
        }
        Ok(xs)
    }

    pub fn num_cells(&self) -> usize {
        self.sigma_t.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.sigma_t.len();
        if self.sigma_s.len() != n || self.q_ext.len() != n {
            return Err(SolverError::CrossSections(format!(
                "array lengths differ: sigma_t {n}, sigma_s {}, q_ext {}",
                self.sigma_s.len(),
                self.q_ext.len()
            )));
        }
        for c in 0..n {
            let (t, s, q) = (self.sigma_t[c], self.sigma_s[c], self.q_ext[c]);
            if !(t >= 0.0 && s >= 0.0 && q >= 0.0) || !(t.is_finite() && q.is_finite()) {
                return Err(SolverError::CrossSections(format!(
                    "cell {c}: values must be finite and nonnegative (sigma_t {t}, sigma_s {s}, q_ext {q})"
                )));
            }
            if s > t {
                return Err(SolverError::CrossSections(format!(
                    "cell {c}: sigma_s {s} exceeds sigma_t {t}"
                )));
            }
        }
        Ok(())
    }
}
