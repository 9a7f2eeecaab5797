use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::ids::{AngleId, CellId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("degenerate cell {cell} at angle {angle}: zero removal and no incoming faces")]
    Degenerate { cell: CellId, angle: AngleId },
    #[error("upwind value of {upwind} missing when computing {cell} at angle {angle}")]
    MissingUpwind {
        cell: CellId,
        upwind: CellId,
        angle: AngleId,
    },
    #[error("kernel failure: {0}")]
    Other(String),
}

/// Read/write access to angular flux values of one angle.
pub trait FluxStore {
    /// Value of `cell` if it has been computed or received.
    fn get(&self, cell: CellId) -> Option<f64>;
    fn set(&mut self, cell: CellId, value: f64);
}

/// The per-vertex numerical computation run on a cluster of ready vertices.
///
/// `cluster` is a valid topological order: every upwind value a vertex needs
/// is either already in `flux` or produced earlier in the same cluster.
pub trait SweepKernel: Send + Sync {
    fn solve(
        &self,
        angle: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), KernelError>;
}

impl<K: SweepKernel + ?Sized> SweepKernel for Arc<K> {
    fn solve(
        &self,
        angle: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), KernelError> {
        (**self).solve(angle, cluster, flux)
    }
}

/// Flux of one patch for one angle: local cells by local index plus ghost
/// values received through streams.
#[derive(Clone, Debug)]
pub struct PatchFlux {
    local_cells: Arc<[CellId]>,
    local: Vec<f64>,
    ghost: HashMap<CellId, f64>,
}

impl PatchFlux {
    /// `local_cells` must be ascending.
    pub fn new(local_cells: Arc<[CellId]>) -> Self {
        let n = local_cells.len();
        Self {
            local_cells,
            local: vec![f64::NAN; n],
            ghost: HashMap::new(),
        }
    }

    pub fn set_ghost(&mut self, cell: CellId, value: f64) {
        self.ghost.insert(cell, value);
    }

    pub fn local_index(&self, cell: CellId) -> Option<usize> {
        self.local_cells.binary_search(&cell).ok()
    }

    pub fn local_value(&self, li: usize) -> f64 {
        self.local[li]
    }

    /// `(cell, value)` for every local cell, NaN when not computed.
    pub fn local_values(&self) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.local_cells
            .iter()
            .copied()
            .zip(self.local.iter().copied())
    }
}

impl FluxStore for PatchFlux {
    fn get(&self, cell: CellId) -> Option<f64> {
        match self.local_cells.binary_search(&cell) {
            Ok(li) => Some(self.local[li]).filter(|v| !v.is_nan()),
            Err(_) => self.ghost.get(&cell).copied(),
        }
    }

    fn set(&mut self, cell: CellId, value: f64) {
        match self.local_cells.binary_search(&cell) {
            Ok(li) => self.local[li] = value,
            Err(_) => {
                self.ghost.insert(cell, value);
            }
        }
    }
}

/// Dense flux over all cells, used by the sequential reference sweep.
#[derive(Clone, Debug)]
pub struct DenseFlux(pub Vec<f64>);

impl DenseFlux {
    pub fn new(num_cells: usize) -> Self {
        Self(vec![f64::NAN; num_cells])
    }
}

impl FluxStore for DenseFlux {
    fn get(&self, cell: CellId) -> Option<f64> {
        Some(self.0[cell.index()]).filter(|v| !v.is_nan())
    }

    fn set(&mut self, cell: CellId, value: f64) {
        self.0[cell.index()] = value;
    }
}

/// Wraps a kernel and records, per `(angle, cell)`, how many times it was
/// computed and a global logical timestamp of the latest computation.
///
/// Stamps come from one shared atomic counter, so if `u` is computed before
/// its value is sent to `v`, `stamp(u) < stamp(v)` holds across threads.
pub struct RecordingKernel<K> {
    inner: K,
    num_cells: usize,
    counts: Vec<AtomicU32>,
    stamps: Vec<AtomicU64>,
    clock: AtomicU64,
}

impl<K: SweepKernel> RecordingKernel<K> {
    pub fn new(inner: K, num_cells: usize, num_angles: usize) -> Self {
        let n = num_cells * num_angles;
        Self {
            inner,
            num_cells,
            counts: (0..n).map(|_| AtomicU32::new(0)).collect(),
            stamps: (0..n).map(|_| AtomicU64::new(0)).collect(),
            clock: AtomicU64::new(0),
        }
    }

    fn slot(&self, angle: AngleId, cell: CellId) -> usize {
        angle.index() * self.num_cells + cell.index()
    }

    pub fn count(&self, angle: AngleId, cell: CellId) -> u32 {
        self.counts[self.slot(angle, cell)].load(Ordering::SeqCst)
    }

    /// Logical time of the last computation of the vertex (1-based; 0 = never).
    pub fn stamp(&self, angle: AngleId, cell: CellId) -> u64 {
        self.stamps[self.slot(angle, cell)].load(Ordering::SeqCst)
    }

    /// Vertices computed a number of times other than one.
    pub fn not_exactly_once(&self) -> Vec<(AngleId, CellId, u32)> {
        self.counts
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let n = c.load(Ordering::SeqCst);
                (n != 1).then(|| {
                    (
                        AngleId::new(i / self.num_cells),
                        CellId::new(i % self.num_cells),
                        n,
                    )
                })
            })
            .collect()
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::SeqCst);
        }
        for s in &self.stamps {
            s.store(0, Ordering::SeqCst);
        }
        self.clock.store(0, Ordering::SeqCst);
    }
}

impl<K: SweepKernel> SweepKernel for RecordingKernel<K> {
    fn solve(
        &self,
        angle: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), KernelError> {
        // Compute one vertex at a time so stamps follow the in-cluster order.
        for &c in cluster {
            self.inner.solve(angle, std::slice::from_ref(&c), flux)?;
            let slot = self.slot(angle, c);
            self.counts[slot].fetch_add(1, Ordering::SeqCst);
            let t = self.clock.fetch_add(1, Ordering::SeqCst) + 1;
            self.stamps[slot].store(t, Ordering::SeqCst);
        }
        Ok(())
    }
}

/// Test kernel: value = 1 + sum of upwind values (in the given upwind order).
pub struct PathCountKernel {
    pub upwind: Vec<Vec<Vec<CellId>>>,
}

impl PathCountKernel {
    /// `upwind[angle][cell]` lists the cells `cell` depends on.
    pub fn new(upwind: Vec<Vec<Vec<CellId>>>) -> Self {
        Self { upwind }
    }
}

impl SweepKernel for PathCountKernel {
    fn solve(
        &self,
        angle: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), KernelError> {
        for &c in cluster {
            let mut v = 1.0;
            for &u in &self.upwind[angle.index()][c.index()] {
                v += flux.get(u).ok_or(KernelError::MissingUpwind {
                    cell: c,
                    upwind: u,
                    angle,
                })?;
            }
            flux.set(c, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_flux_separates_local_and_ghost() {
        let cells: Arc<[CellId]> = vec![CellId(2), CellId(5)].into();
        let mut f = PatchFlux::new(cells);
        assert_eq!(f.get(CellId(2)), None);
        f.set(CellId(5), 3.0);
        f.set_ghost(CellId(9), 1.0);
        assert_eq!(f.get(CellId(5)), Some(3.0));
        assert_eq!(f.get(CellId(9)), Some(1.0));
        assert_eq!(f.local_value(1), 3.0);
        assert!(f.local_value(0).is_nan());
    }

    #[test]
    fn recording_kernel_counts_and_stamps() {
        let up = vec![vec![vec![], vec![CellId(0)]]];
        let k = RecordingKernel::new(PathCountKernel::new(up), 2, 1);
        let mut flux = DenseFlux::new(2);
        k.solve(AngleId(0), &[CellId(0), CellId(1)], &mut flux)
            .unwrap();
        assert_eq!(flux.0, vec![1.0, 2.0]);
        assert_eq!(k.count(AngleId(0), CellId(1)), 1);
        assert!(k.stamp(AngleId(0), CellId(0)) < k.stamp(AngleId(0), CellId(1)));
        assert!(k.not_exactly_once().is_empty());
    }
}
