//! The sweep patch-program for one `(patch, angle)` pair.

use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{PatchFlux, PatchProgram, ProgramError, ProgramStats, Stream, SweepKernel};
use crate::clock::Meter;
use crate::ids::{CellId, PatchId, ProgramId};
use crate::sweepgraph::PatchSubgraph;

/// Maximum number of vertices gathered into one kernel invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Grain(pub usize);

impl Grain {
    pub const UNBOUNDED: Grain = Grain(usize::MAX);
    pub const STRUCTURED_DEFAULT: Grain = Grain(1000);
    pub const UNSTRUCTURED_DEFAULT: Grain = Grain(64);

    pub fn new(n: usize) -> Self {
        Grain(n.max(1))
    }
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Grain::UNBOUNDED {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Grain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "INF" | "∞" | "unbounded" => Ok(Grain::UNBOUNDED),
            _ => match s.parse::<usize>() {
                Ok(0) => Err("grain must be ≥ 1".into()),
                Ok(n) => Ok(Grain(n)),
                Err(e) => Err(format!("bad grain {s:?}: {e}")),
            },
        }
    }
}

/// One recorded kernel invocation: the vertices of a cluster in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterRecord {
    pub owner: ProgramId,
    /// Global sequence number across all programs of a run.
    pub seq: u64,
    pub vertices: Vec<CellId>,
}

#[derive(Clone, Copy, Debug)]
pub struct SweepProgramConfig {
    pub grain: Grain,
    /// Break priority ties most-recently-enabled first instead of by ascending cell id.
    pub lifo_ties: bool,
    pub record_trace: bool,
    pub meter: Meter,
}

impl Default for SweepProgramConfig {
    fn default() -> Self {
        Self {
            grain: Grain::UNBOUNDED,
            lifo_ties: false,
            record_trace: false,
            meter: Meter::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Ready {
    priority: i64,
    tie: i64,
    local: u32,
}

/// Local context: upwind counters, the ready queue and outgoing streams.
#[derive(Debug, Default)]
struct SweepContext {
    counts: Vec<u32>,
    ready: BinaryHeap<Ready>,
    enqueued: Vec<bool>,
    outstreams: BTreeMap<ProgramId, Stream>,
    computed_count: usize,
    cluster_trace: Vec<ClusterRecord>,
    enable_seq: i64,
    initialized: bool,
}

pub struct SweepProgram {
    id: ProgramId,
    subgraph: Arc<PatchSubgraph>,
    vertex_priority: Arc<[i64]>,
    kernel: Arc<dyn SweepKernel>,
    config: SweepProgramConfig,
    cluster_seq: Arc<AtomicU64>,
    ctx: SweepContext,
    flux: PatchFlux,
    stats: ProgramStats,
}

impl fmt::Debug for SweepProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SweepProgram")
            .field("id", &self.id)
            .field("computed", &self.ctx.computed_count)
            .field("ready", &self.ctx.ready.len())
            .finish()
    }
}

impl SweepProgram {
    /// `vertex_priority` is indexed by cell id for this program's angle.
    pub fn new(
        subgraph: Arc<PatchSubgraph>,
        vertex_priority: Arc<[i64]>,
        kernel: Arc<dyn SweepKernel>,
        config: SweepProgramConfig,
        cluster_seq: Arc<AtomicU64>,
    ) -> Self {
        let id = ProgramId::new(subgraph.patch, subgraph.angle);
        let flux = PatchFlux::new(subgraph.local_vertices.clone().into());
        Self {
            id,
            subgraph,
            vertex_priority,
            kernel,
            config,
            cluster_seq,
            ctx: SweepContext::default(),
            flux,
            stats: ProgramStats::default(),
        }
    }

    fn enqueue(&mut self, li: usize) {
        debug_assert!(!self.ctx.enqueued[li], "vertex enqueued twice");
        self.ctx.enqueued[li] = true;
        let cell = self.subgraph.local_vertices[li];
        let tie = if self.config.lifo_ties {
            self.ctx.enable_seq += 1;
            self.ctx.enable_seq
        } else {
            -(cell.0 as i64)
        };
        self.ctx.ready.push(Ready {
            priority: self.vertex_priority[cell.index()],
            tie,
            local: li as u32,
        });
    }

    fn check_init(&self) -> Result<(), ProgramError> {
        if self.ctx.initialized {
            Ok(())
        } else {
            Err(ProgramError::NotInitialized(self.id))
        }
    }

    /// Dequeues up to `grain` ready vertices in priority order, solves them as
    /// one cluster and stages their values for downwind programs.
    ///
    /// Local downwind counters are decremented while dequeuing, so vertices
    /// that become ready mid-loop join the same cluster if room remains. The
    /// kernel runs before any payload value is written. On kernel failure the
    /// context is rolled back and the cluster is not marked computed.
    pub fn compute_cluster(&mut self) -> Result<Vec<CellId>, ProgramError> {
        self.check_init()?;
        if self.ctx.ready.is_empty() {
            return Ok(Vec::new());
        }
        let span = self.config.meter.start();
        let mut popped: Vec<Ready> = Vec::new();
        let mut newly_ready: Vec<usize> = Vec::new();
        let mut decremented: Vec<usize> = Vec::new();
        let mut remote: Vec<(usize, CellId, PatchId)> = Vec::new();
        let sub = Arc::clone(&self.subgraph);
        while popped.len() < self.config.grain.0 {
            let Some(entry) = self.ctx.ready.pop() else {
                break;
            };
            popped.push(entry);
            let li = entry.local as usize;
            for &w in sub.local_downwind(li) {
                let w = w as usize;
                self.ctx.counts[w] -= 1;
                decremented.push(w);
                if self.ctx.counts[w] == 0 {
                    newly_ready.push(w);
                    self.enqueue(w);
                }
            }
            for &(w, tgt) in sub.remote_downwind(li) {
                remote.push((li, w, tgt));
            }
        }
        let cluster: Vec<CellId> = popped
            .iter()
            .map(|e| self.subgraph.local_vertices[e.local as usize])
            .collect();
        let graph_units = (popped.len() + decremented.len()) as u64;
        self.stats.times.graph_op += span.finish(graph_units);

        let span = self.config.meter.start();
        let solved = self.kernel.solve(self.id.task, &cluster, &mut self.flux);
        self.stats.times.kernel += span.finish(cluster.len() as u64);
        if let Err(source) = solved {
            for w in decremented {
                self.ctx.counts[w] += 1;
            }
            for &w in &newly_ready {
                self.ctx.enqueued[w] = false;
            }
            self.ctx
                .ready
                .retain(|e| !newly_ready.contains(&(e.local as usize)));
            self.ctx.ready.extend(
                popped
                    .into_iter()
                    .filter(|e| !newly_ready.contains(&(e.local as usize))),
            );
            return Err(ProgramError::Kernel {
                program: self.id,
                source,
            });
        }

        let span = self.config.meter.start();
        for &(li, w, tgt) in &remote {
            let key = ProgramId::new(tgt, self.id.task);
            let value = self.flux.local_value(li);
            self.ctx
                .outstreams
                .entry(key)
                .or_insert_with(|| Stream::new(self.id, key))
                .push(self.subgraph.local_vertices[li], w, value);
        }
        self.stats.times.pack_unpack += span.finish(remote.len() as u64);

        self.ctx.computed_count += cluster.len();
        self.stats.schedule_events += cluster.len() as u64;
        self.stats.kernel_calls += 1;
        self.stats.computed += cluster.len() as u64;
        if self.config.record_trace {
            self.ctx.cluster_trace.push(ClusterRecord {
                owner: self.id,
                seq: self.cluster_seq.fetch_add(1, Ordering::SeqCst),
                vertices: cluster.clone(),
            });
        }
        Ok(cluster)
    }

    pub fn subgraph(&self) -> &PatchSubgraph {
        &self.subgraph
    }

    pub fn computed_count(&self) -> usize {
        self.ctx.computed_count
    }

    /// Current upwind counter of a local cell.
    pub fn count_of(&self, cell: CellId) -> Option<u32> {
        self.subgraph
            .local_index(cell)
            .and_then(|li| self.ctx.counts.get(li).copied())
    }

    /// Cells in the ready queue, ascending.
    pub fn ready_cells(&self) -> Vec<CellId> {
        let mut v: Vec<CellId> = self
            .ctx
            .ready
            .iter()
            .map(|e| self.subgraph.local_vertices[e.local as usize])
            .collect();
        v.sort();
        v
    }

    pub fn pending_outstreams(&self) -> usize {
        self.ctx.outstreams.len()
    }

    pub fn cluster_trace(&self) -> &[ClusterRecord] {
        &self.ctx.cluster_trace
    }

    pub fn take_cluster_trace(&mut self) -> Vec<ClusterRecord> {
        std::mem::take(&mut self.ctx.cluster_trace)
    }

    pub fn flux(&self) -> &PatchFlux {
        &self.flux
    }
}

impl PatchProgram for SweepProgram {
    fn id(&self) -> ProgramId {
        self.id
    }

    /// Counts every vertex's upwind vertices and enqueues the sources.
    fn init(&mut self) -> Result<(), ProgramError> {
        if self.ctx.initialized {
            return Err(ProgramError::AlreadyInitialized(self.id));
        }
        let n = self.subgraph.len();
        self.ctx.counts = self.subgraph.upwind_count.clone();
        self.ctx.enqueued = vec![false; n];
        self.ctx.ready.clear();
        for li in 0..n {
            if self.ctx.counts[li] == 0 {
                self.enqueue(li);
            }
        }
        self.ctx.initialized = true;
        Ok(())
    }

    fn input(&mut self, stream: Stream) -> Result<(), ProgramError> {
        self.check_init()?;
        if stream.tgt != self.id {
            return Err(ProgramError::Misrouted {
                program: self.id,
                tgt: stream.tgt,
            });
        }
        let span = self.config.meter.start();
        let records = stream.payload.len() as u64;
        for rec in stream.payload {
            let li = self
                .subgraph
                .local_index(rec.to)
                .ok_or(ProgramError::NotLocal {
                    program: self.id,
                    cell: rec.to,
                })?;
            if self.ctx.counts[li] == 0 {
                return Err(ProgramError::DuplicateDelivery {
                    program: self.id,
                    cell: rec.to,
                });
            }
            self.flux.set_ghost(rec.from, rec.value);
            self.ctx.counts[li] -= 1;
            if self.ctx.counts[li] == 0 {
                self.enqueue(li);
            }
        }
        self.stats.times.pack_unpack += span.finish(records);
        Ok(())
    }

    fn compute(&mut self) -> Result<(), ProgramError> {
        self.compute_cluster().map(|_| ())
    }

    fn output(&mut self) -> Option<Stream> {
        self.ctx.outstreams.pop_first().map(|(_, s)| s)
    }

    fn vote_to_halt(&self) -> bool {
        self.ctx.ready.is_empty()
    }

    fn remaining_work(&self) -> usize {
        self.subgraph.len() - self.ctx.computed_count
    }

    fn take_stats(&mut self) -> ProgramStats {
        std::mem::take(&mut self.stats)
    }
}
