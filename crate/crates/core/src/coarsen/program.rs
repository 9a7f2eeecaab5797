use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::sync::Arc;

use super::{CoarsenError, CoarsenedGraph};
use crate::clock::Meter;
use crate::ids::{CellId, CoarseVertexId, ProgramId};
use crate::patchprog::{
    Grain, PatchFlux, PatchProgram, ProgramError, ProgramStats, Stream, SweepKernel,
};

#[derive(Clone, Copy, Debug)]
pub struct CgProgramConfig {
    /// Fine-vertex budget per kernel call; at least one coarse vertex always runs.
    pub grain: Grain,
    pub meter: Meter,
}

impl Default for CgProgramConfig {
    fn default() -> Self {
        Self {
            grain: Grain::UNBOUNDED,
            meter: Meter::default(),
        }
    }
}

/// Sweeps the coarse vertices owned by one `(patch, angle)` pair.
///
/// Ready units are whole recorded clusters, replayed in recorded order.
/// Coarse vertices are prioritized by recording sequence.
pub struct CgProgram {
    id: ProgramId,
    cg: Arc<CoarsenedGraph>,
    kernel: Arc<dyn SweepKernel>,
    config: CgProgramConfig,
    total: usize,
    counts: BTreeMap<CoarseVertexId, u32>,
    ready: BinaryHeap<std::cmp::Reverse<CoarseVertexId>>,
    outstreams: BTreeMap<ProgramId, Stream>,
    computed: usize,
    initialized: bool,
    flux: PatchFlux,
    stats: ProgramStats,
}

impl fmt::Debug for CgProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CgProgram")
            .field("id", &self.id)
            .field("computed", &self.computed)
            .field("total", &self.total)
            .finish()
    }
}

impl CgProgram {
    /// Fails with [`CoarsenError::Stale`] when `fingerprint` differs from the
    /// one the graph was built for.
    pub fn new(
        id: ProgramId,
        cg: Arc<CoarsenedGraph>,
        kernel: Arc<dyn SweepKernel>,
        config: CgProgramConfig,
        fingerprint: u64,
    ) -> Result<Self, CoarsenError> {
        cg.check_fingerprint(fingerprint)?;
        if id.task != cg.angle {
            return Err(CoarsenError::ForeignCluster {
                owner: id,
                expected: cg.angle,
            });
        }
        let owned: Vec<&super::CoarseVertex> =
            cg.cvertices.iter().filter(|cv| cv.owner == id).collect();
        let mut cells: Vec<CellId> = owned
            .iter()
            .flat_map(|cv| cv.vertices.iter().copied())
            .collect();
        cells.sort();
        let counts = owned.iter().map(|cv| (cv.id, 0)).collect();
        Ok(Self {
            id,
            total: cells.len(),
            flux: PatchFlux::new(cells.into()),
            cg,
            kernel,
            config,
            counts,
            ready: BinaryHeap::new(),
            outstreams: BTreeMap::new(),
            computed: 0,
            initialized: false,
            stats: ProgramStats::default(),
        })
    }

    pub fn flux(&self) -> &PatchFlux {
        &self.flux
    }

    pub fn ready_units(&self) -> Vec<CoarseVertexId> {
        let mut v: Vec<_> = self.ready.iter().map(|r| r.0).collect();
        v.sort();
        v
    }

    fn check_init(&self) -> Result<(), ProgramError> {
        if self.initialized {
            Ok(())
        } else {
            Err(ProgramError::NotInitialized(self.id))
        }
    }
}

impl PatchProgram for CgProgram {
    fn id(&self) -> ProgramId {
        self.id
    }

    fn init(&mut self) -> Result<(), ProgramError> {
        if self.initialized {
            return Err(ProgramError::AlreadyInitialized(self.id));
        }
        for (&cv, count) in self.counts.iter_mut() {
            *count = self.cg.in_degree[cv.index()];
            if *count == 0 {
                self.ready.push(std::cmp::Reverse(cv));
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// Each distinct `(source cluster, target cluster)` pair in a stream
    /// satisfies one coarse in-edge.
    fn input(&mut self, stream: Stream) -> Result<(), ProgramError> {
        self.check_init()?;
        if stream.tgt != self.id {
            return Err(ProgramError::Misrouted {
                program: self.id,
                tgt: stream.tgt,
            });
        }
        let span = self.config.meter.start();
        let mut pairs = BTreeSet::new();
        for rec in &stream.payload {
            let cv = self.cg.cluster_of(rec.to);
            if self.cg.vertex(cv).owner != self.id {
                return Err(ProgramError::NotLocal {
                    program: self.id,
                    cell: rec.to,
                });
            }
            self.flux.set_ghost(rec.from, rec.value);
            pairs.insert((self.cg.cluster_of(rec.from), cv, rec.to));
        }
        let mut seen = BTreeSet::new();
        for (src, tgt, cell) in pairs {
            if !seen.insert((src, tgt)) {
                continue;
            }
            let count = self.counts.get_mut(&tgt).expect("owned coarse vertex");
            if *count == 0 {
                return Err(ProgramError::DuplicateDelivery {
                    program: self.id,
                    cell,
                });
            }
            *count -= 1;
            if *count == 0 {
                self.ready.push(std::cmp::Reverse(tgt));
            }
        }
        self.stats.times.pack_unpack += span.finish(stream.payload.len() as u64);
        Ok(())
    }

    /// Replays ready clusters back to back until the grain is reached.
    fn compute(&mut self) -> Result<(), ProgramError> {
        self.check_init()?;
        if self.ready.is_empty() {
            return Ok(());
        }
        let cg = Arc::clone(&self.cg);
        let span = self.config.meter.start();
        let mut popped = Vec::new();
        let mut newly_ready = Vec::new();
        let mut decremented = Vec::new();
        let mut cells: Vec<CellId> = Vec::new();
        while let Some(std::cmp::Reverse(cv)) = self.ready.pop() {
            popped.push(cv);
            cells.extend_from_slice(&cg.vertex(cv).vertices);
            for e in cg.out_edges(cv) {
                if let Some(count) = self.counts.get_mut(&e.tgt) {
                    *count -= 1;
                    decremented.push(e.tgt);
                    if *count == 0 {
                        newly_ready.push(e.tgt);
                        self.ready.push(std::cmp::Reverse(e.tgt));
                    }
                }
            }
            if cells.len() >= self.config.grain.0 {
                break;
            }
        }
        let units = (popped.len() + decremented.len()) as u64;
        self.stats.times.graph_op += span.finish(units);

        let span = self.config.meter.start();
        let solved = self.kernel.solve(self.id.task, &cells, &mut self.flux);
        self.stats.times.kernel += span.finish(cells.len() as u64);
        if let Err(source) = solved {
            for cv in decremented {
                *self.counts.get_mut(&cv).expect("owned") += 1;
            }
            self.ready.retain(|r| !newly_ready.contains(&r.0));
            self.ready.extend(
                popped
                    .into_iter()
                    .filter(|cv| !newly_ready.contains(cv))
                    .map(std::cmp::Reverse),
            );
            return Err(ProgramError::Kernel {
                program: self.id,
                source,
            });
        }

        let span = self.config.meter.start();
        let mut records = 0u64;
        for &cv in &popped {
            for e in cg.out_edges(cv) {
                let owner = cg.vertex(e.tgt).owner;
                if owner == self.id {
                    continue;
                }
                let stream = self
                    .outstreams
                    .entry(owner)
                    .or_insert_with(|| Stream::new(self.id, owner));
                for (u, v) in e.pairs() {
                    let li = self.flux.local_index(u).expect("source is local");
                    stream.push(u, v, self.flux.local_value(li));
                    records += 1;
                }
            }
        }
        self.stats.times.pack_unpack += span.finish(records);

        self.computed += cells.len();
        self.stats.schedule_events += popped.len() as u64;
        self.stats.kernel_calls += 1;
        self.stats.computed += cells.len() as u64;
        Ok(())
    }

    fn output(&mut self) -> Option<Stream> {
        self.outstreams.pop_first().map(|(_, s)| s)
    }

    fn vote_to_halt(&self) -> bool {
        self.ready.is_empty()
    }

    fn remaining_work(&self) -> usize {
        self.total - self.computed
    }

    fn take_stats(&mut self) -> ProgramStats {
        std::mem::take(&mut self.stats)
    }
}
