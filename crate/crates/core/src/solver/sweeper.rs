use std::fmt;
use std::str::FromStr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::iteration::SweepEngine;
use super::{check_directions, AngularFlux, SolverError, StepKernel};
use crate::clock::Meter;
use crate::coarsen::{
    build_coarsened_graph, sweep_fingerprint, verify_acyclic, CgProgram, CgProgramConfig,
    CoarsenedGraph,
};
use crate::ids::{AngleId, PatchId, ProgramId};
use crate::mesh::{Decomposition, DirectionSet, UnstructuredMesh};
use crate::patchprog::{
    ClusterRecord, Grain, PatchFlux, PatchProgram, RecordingKernel, SweepKernel, SweepProgram,
    SweepProgramConfig,
};
use crate::runtime::{
    round_robin_placement, run, RunFailure, RunOutcome, RuntimeConfig, RuntimeMetrics,
    TerminationReport,
};
use crate::sweepgraph::{PatchSubgraph, PriorityAssignment, Strategy, SweepGraphs};

/// Which graph the runtime sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// The fine vertex graph on every sweep.
    #[default]
    Dag,
    /// The fine graph once while recording clusters, then the coarsened graph.
    Cg,
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Dag => "dag",
            SweepMode::Cg => "cg",
        })
    }
}

impl FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dag" => Ok(Self::Dag),
            "cg" => Ok(Self::Cg),
            _ => Err(format!("unknown sweep mode {s:?} (dag|cg)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweeperConfig {
    pub strategy: Strategy,
    pub grain: Grain,
    pub mode: SweepMode,
    pub runtime: RuntimeConfig,
    /// Count kernel invocations and timestamps on every sweep.
    pub audit: bool,
}

impl Default for SweeperConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ldcp,
            grain: Grain::UNBOUNDED,
            mode: SweepMode::Dag,
            runtime: RuntimeConfig::default(),
            audit: false,
        }
    }
}

/// Execution checks of one audited sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SweepAudit {
    /// `(cell, angle)` pairs computed zero or several times.
    pub not_exactly_once: usize,
    /// Graph edges whose target was computed no later than their source.
    pub edge_violations: usize,
}

impl SweepAudit {
    pub fn clean(&self) -> bool {
        self.not_exactly_once == 0 && self.edge_violations == 0
    }
}

/// Sweeps all angles through the patch-program runtime.
pub struct RuntimeSweeper {
    config: SweeperConfig,
    num_cells: usize,
    num_patches: usize,
    graphs: SweepGraphs,
    subgraphs: Vec<Vec<Arc<PatchSubgraph>>>,
    priorities: PriorityAssignment,
    vertex_priority: Vec<Arc<[i64]>>,
    placement: Vec<usize>,
    fingerprint: u64,
    cgs: Option<Vec<Arc<CoarsenedGraph>>>,
    metrics: Vec<RuntimeMetrics>,
    terminations: Vec<TerminationReport>,
    audits: Vec<SweepAudit>,
    cg_build_ns: u64,
}

impl RuntimeSweeper {
    pub fn new(
        mesh: &UnstructuredMesh,
        decomp: &Decomposition,
        dirs: &DirectionSet,
        config: SweeperConfig,
    ) -> Result<Self, SolverError> {
        check_directions(dirs)?;
        config
            .runtime
            .validate()
            .map_err(|e| SolverError::Config(e.to_string()))?;
        let graphs = SweepGraphs::build(mesh, decomp, dirs)?;
        let placement = round_robin_placement(decomp.num_patches(), config.runtime.processes);
        let priorities = PriorityAssignment::build(&graphs, config.strategy, Some(&placement))?;
        let subgraphs = graphs
            .subgraphs
            .iter()
            .map(|per_angle| per_angle.iter().cloned().map(Arc::new).collect())
            .collect();
        let vertex_priority = priorities.vertex.iter().map(|v| v.clone().into()).collect();
        Ok(Self {
            fingerprint: sweep_fingerprint(mesh, decomp, dirs),
            num_cells: mesh.num_cells(),
            num_patches: decomp.num_patches(),
            config,
            graphs,
            subgraphs,
            priorities,
            vertex_priority,
            placement,
            cgs: None,
            metrics: Vec::new(),
            terminations: Vec::new(),
            audits: Vec::new(),
            cg_build_ns: 0,
        })
    }

    pub fn config(&self) -> &SweeperConfig {
        &self.config
    }

    pub fn graphs(&self) -> &SweepGraphs {
        &self.graphs
    }

    pub fn priorities(&self) -> &PriorityAssignment {
        &self.priorities
    }

    /// Home process of each patch.
    pub fn placement(&self) -> &[usize] {
        &self.placement
    }

    /// Coarsened graphs per angle, once recorded.
    pub fn coarsened(&self) -> Option<&[Arc<CoarsenedGraph>]> {
        self.cgs.as_deref()
    }

    /// Runtime metrics of each completed sweep, in order.
    pub fn sweep_metrics(&self) -> &[RuntimeMetrics] {
        &self.metrics
    }

    pub fn total_metrics(&self) -> RuntimeMetrics {
        let mut total = RuntimeMetrics::default();
        for m in &self.metrics {
            total.accumulate(m);
        }
        total
    }

    pub fn terminations(&self) -> &[TerminationReport] {
        &self.terminations
    }

    /// Empty unless auditing is enabled.
    pub fn audits(&self) -> &[SweepAudit] {
        &self.audits
    }

    /// Time spent building coarsened graphs (reported, not bounded).
    pub fn cg_build_ns(&self) -> u64 {
        self.cg_build_ns
    }

    fn program_ids(&self) -> impl Iterator<Item = ProgramId> + '_ {
        let patches = self.num_patches;
        (0..self.graphs.angles.len()).flat_map(move |a| {
            (0..patches).map(move |p| ProgramId::new(PatchId::new(p), AngleId::new(a)))
        })
    }

    fn meter(&self) -> Meter {
        Meter::new(self.config.runtime.clock)
    }

    fn launch<P: PatchProgram + HasFlux>(
        &mut self,
        programs: Vec<P>,
    ) -> Result<RunOutcome<P>, SolverError> {
        let prio = &self.priorities;
        let result = run(
            programs,
            &self.placement,
            |id| prio.combined(id.patch, id.task),
            &self.config.runtime,
        );
        match result {
            Ok(mut outcome) => {
                outcome.metrics.iterations = 1;
                self.metrics.push(outcome.metrics.clone());
                self.terminations.push(outcome.termination.clone());
                Ok(outcome)
            }
            Err(RunFailure { error, partial }) => Err(SolverError::Runtime {
                source: error,
                partial: Box::new(self.collect(&partial.programs)),
            }),
        }
    }

    fn collect<P: PatchProgram + HasFlux>(&self, programs: &[P]) -> AngularFlux {
        let mut psi = AngularFlux::new(self.num_cells, self.graphs.angles.len());
        for p in programs {
            let angle = p.id().task;
            for (c, v) in p.patch_flux().local_values() {
                psi.set(c, angle, v);
            }
        }
        psi
    }

    fn sweep_dag(&mut self, kernel: Arc<dyn SweepKernel>) -> Result<AngularFlux, SolverError> {
        let record = self.config.mode == SweepMode::Cg;
        let seq = Arc::new(AtomicU64::new(0));
        let program_config = SweepProgramConfig {
            grain: self.config.grain,
            lifo_ties: self.config.strategy.lifo_ties(),
            record_trace: record,
            meter: self.meter(),
        };
        let programs: Vec<SweepProgram> = self
            .program_ids()
            .map(|id| {
                SweepProgram::new(
                    Arc::clone(&self.subgraphs[id.task.index()][id.patch.index()]),
                    Arc::clone(&self.vertex_priority[id.task.index()]),
                    Arc::clone(&kernel),
                    program_config,
                    Arc::clone(&seq),
                )
            })
            .collect();
        let mut outcome = self.launch(programs)?;
        if record {
            let start = Instant::now();
            let mut traces: Vec<Vec<ClusterRecord>> = vec![Vec::new(); self.graphs.angles.len()];
            for p in &mut outcome.programs {
                traces[p.id().task.index()].extend(p.take_cluster_trace());
            }
            let cgs = self
                .graphs
                .angles
                .iter()
                .zip(&traces)
                .map(|(g, t)| {
                    let cg = build_coarsened_graph(g, t, self.fingerprint)?;
                    verify_acyclic(&cg)?;
                    Ok(Arc::new(cg))
                })
                .collect::<Result<Vec<_>, SolverError>>()?;
            self.cgs = Some(cgs);
            self.cg_build_ns += start.elapsed().as_nanos() as u64;
        }
        Ok(self.collect(&outcome.programs))
    }

    fn sweep_cg(
        &mut self,
        cgs: &[Arc<CoarsenedGraph>],
        kernel: Arc<dyn SweepKernel>,
    ) -> Result<AngularFlux, SolverError> {
        let program_config = CgProgramConfig {
            grain: self.config.grain,
            meter: self.meter(),
        };
        let programs = self
            .program_ids()
            .map(|id| {
                CgProgram::new(
                    id,
                    Arc::clone(&cgs[id.task.index()]),
                    Arc::clone(&kernel),
                    program_config,
                    self.fingerprint,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = self.launch(programs)?;
        Ok(self.collect(&outcome.programs))
    }
}

impl SweepEngine for RuntimeSweeper {
    fn sweep(&mut self, kernel: &Arc<StepKernel>) -> Result<AngularFlux, SolverError> {
        let recorder = self.config.audit.then(|| {
            Arc::new(RecordingKernel::new(
                Arc::clone(kernel),
                self.num_cells,
                self.graphs.angles.len(),
            ))
        });
        let dyn_kernel: Arc<dyn SweepKernel> = match &recorder {
            Some(r) => r.clone(),
            None => kernel.clone(),
        };
        let psi = match self.cgs.clone() {
            Some(cgs) => self.sweep_cg(&cgs, dyn_kernel),
            None => self.sweep_dag(dyn_kernel),
        };
        if let Some(r) = recorder {
            let edge_violations = self
                .graphs
                .angles
                .iter()
                .map(|g| {
                    g.edges()
                        .filter(|&(u, v)| r.stamp(g.angle(), u) >= r.stamp(g.angle(), v))
                        .count()
                })
                .sum();
            self.audits.push(SweepAudit {
                not_exactly_once: r.not_exactly_once().len(),
                edge_violations,
            });
        }
        psi
    }
}

/// Read access to the local flux of a finished program.
trait HasFlux {
    fn patch_flux(&self) -> &PatchFlux;
}

impl HasFlux for SweepProgram {
    fn patch_flux(&self) -> &PatchFlux {
        self.flux()
    }
}

impl HasFlux for CgProgram {
    fn patch_flux(&self) -> &PatchFlux {
        self.flux()
    }
}
