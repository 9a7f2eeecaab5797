use std::collections::BTreeSet;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ids::PatchId;
use crate::mesh::fixtures::{
    dependency_mesh, random_assignment, random_dag, single_direction, two_patch_zigzag,
};
use crate::patchprog::{
    FluxStore, Grain, PatchProgram, PathCountKernel, RecordingKernel, Stream, SweepKernel,
    SweepProgram, SweepProgramConfig,
};
use crate::sweepgraph::{PriorityAssignment, Strategy, SweepGraphs};
use crate::testutil::{drive_in_order, drive_random};

struct Case {
    mesh: UnstructuredMesh,
    decomp: Decomposition,
    dirs: DirectionSet,
    graphs: SweepGraphs,
    prio: PriorityAssignment,
}

impl Case {
    fn new(mesh: UnstructuredMesh, decomp: Decomposition, dirs: DirectionSet, s: Strategy) -> Self {
        let graphs = SweepGraphs::build(&mesh, &decomp, &dirs).unwrap();
        let prio = PriorityAssignment::build(&graphs, s, None).unwrap();
        Self {
            mesh,
            decomp,
            dirs,
            graphs,
            prio,
        }
    }

    fn fingerprint(&self) -> u64 {
        sweep_fingerprint(&self.mesh, &self.decomp, &self.dirs)
    }

    fn kernel(&self) -> Arc<RecordingKernel<PathCountKernel>> {
        let upwind = self
            .graphs
            .angles
            .iter()
            .map(|g| {
                (0..self.mesh.num_cells())
                    .map(|c| g.upwind(CellId::new(c)).to_vec())
                    .collect()
            })
            .collect();
        Arc::new(RecordingKernel::new(
            PathCountKernel::new(upwind),
            self.mesh.num_cells(),
            self.dirs.len(),
        ))
    }

    fn dag_programs(&self, grain: Grain, kernel: Arc<dyn SweepKernel>) -> Vec<SweepProgram> {
        let seq = Arc::new(AtomicU64::new(0));
        let mut out = Vec::new();
        for a in self.dirs.angles() {
            for p in 0..self.decomp.num_patches() {
                let sub = Arc::new(self.graphs.subgraph(PatchId::new(p), a).clone());
                out.push(SweepProgram::new(
                    sub,
                    self.prio.vertex[a.index()].clone().into(),
                    kernel.clone(),
                    SweepProgramConfig {
                        grain,
                        lifo_ties: self.prio.strategy.lifo_ties(),
                        record_trace: true,
                        ..Default::default()
                    },
                    seq.clone(),
                ));
            }
        }
        out
    }

    fn coarsen(&self, programs: &[SweepProgram]) -> Vec<Arc<CoarsenedGraph>> {
        self.dirs
            .angles()
            .map(|a| {
                let traces = programs
                    .iter()
                    .filter(|p| p.id().task == a)
                    .flat_map(|p| p.cluster_trace());
                let cg = build_coarsened_graph(
                    &self.graphs.angles[a.index()],
                    traces,
                    self.fingerprint(),
                )
                .unwrap();
                verify_acyclic(&cg).unwrap();
                Arc::new(cg)
            })
            .collect()
    }

    fn cg_programs(
        &self,
        cgs: &[Arc<CoarsenedGraph>],
        kernel: Arc<dyn SweepKernel>,
    ) -> Vec<CgProgram> {
        let mut out = Vec::new();
        for a in self.dirs.angles() {
            for p in 0..self.decomp.num_patches() {
                out.push(
                    CgProgram::new(
                        ProgramId::new(PatchId::new(p), a),
                        cgs[a.index()].clone(),
                        kernel.clone(),
                        CgProgramConfig::default(),
                        self.fingerprint(),
                    )
                    .unwrap(),
                );
            }
        }
        out
    }
}

fn values<'a>(fluxes: impl Iterator<Item = &'a crate::patchprog::PatchFlux>, n: usize) -> Vec<u64> {
    let mut out = vec![f64::NAN.to_bits(); n];
    for f in fluxes {
        for (c, v) in f.local_values() {
            out[c.index()] = v.to_bits();
        }
    }
    out
}

fn zigzag_case() -> Case {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    Case::new(mesh, decomp, dirs, Strategy::Ldcp)
}

fn cells(ids: &[u32]) -> Vec<CellId> {
    ids.iter().map(|&c| CellId(c)).collect()
}

#[test]
fn zigzag_trace_yields_the_expected_coarse_vertices_and_edge() {
    let case = zigzag_case();
    let kernel = case.kernel();
    let mut progs = case.dag_programs(Grain::UNBOUNDED, kernel);
    drive_in_order(&mut progs);
    let cg = &case.coarsen(&progs)[0];
    assert_eq!(cg.num_vertices(), 5);
    let down = cg.find_cluster(&cells(&[9, 14, 10])).unwrap();
    assert_eq!(down.vertices, cells(&[9, 14, 10]));
    assert_eq!(down.owner.patch, PatchId(1));
    let up = cg.find_cluster(&cells(&[7, 8, 12, 13, 15])).unwrap();
    assert_eq!(up.vertices, cells(&[7, 8, 12, 13, 15]));
    let e = cg.edge(up.id, down.id).unwrap();
    assert_eq!(e.sources, cells(&[8, 12]));
    assert_eq!(e.targets, cells(&[9, 14]));
    let dot = cg.to_dot();
    assert!(dot.contains("8>9 12>14"));
}

#[test]
fn singleton_clusters_reproduce_the_fine_graph() {
    let edges = random_dag(50, 0.1, 9);
    let mesh = dependency_mesh(50, &edges, [1.0, 0.0, 0.0]).unwrap();
    let decomp = Decomposition::single(&mesh).unwrap();
    let case = Case::new(
        mesh,
        decomp,
        single_direction([1.0, 0.0, 0.0]),
        Strategy::Bfs,
    );
    let mut progs = case.dag_programs(Grain(1), case.kernel());
    drive_in_order(&mut progs);
    let cg = &case.coarsen(&progs)[0];
    assert_eq!(cg.num_vertices(), 50);
    let to_cell = |cv: CoarseVertexId| {
        let v = &cg.vertex(cv).vertices;
        assert_eq!(v.len(), 1);
        v[0]
    };
    let coarse: BTreeSet<(CellId, CellId)> = cg
        .cedges
        .iter()
        .map(|e| (to_cell(e.src), to_cell(e.tgt)))
        .collect();
    let fine: BTreeSet<(CellId, CellId)> = case.graphs.angles[0].edges().collect();
    assert_eq!(coarse, fine);
    assert!(cg.cedges.iter().all(|e| e.sources.len() == 1));
}

#[test]
fn random_legal_executions_coarsen_to_acyclic_conserving_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200u64 {
        let n = rng.gen_range(2..=120);
        let edges = random_dag(n, rng.gen_range(0.02..0.2), trial);
        let mesh = dependency_mesh(n, &edges, [0.0, 1.0, 0.0]).unwrap();
        let patches = rng.gen_range(1..=n.min(6));
        let decomp =
            Decomposition::from_assignment(&mesh, random_assignment(n, patches, trial)).unwrap();
        let strategy = Strategy::ALL[rng.gen_range(0..3)];
        let case = Case::new(mesh, decomp, single_direction([0.0, 1.0, 0.0]), strategy);
        let grain = [Grain(1), Grain(3), Grain(16), Grain::UNBOUNDED][rng.gen_range(0..4)];
        let mut progs = case.dag_programs(grain, case.kernel());
        drive_random(&mut progs, trial);
        let cg = &case.coarsen(&progs)[0];
        let sizes: usize = cg.cvertices.iter().map(|cv| cv.vertices.len()).sum();
        assert_eq!(sizes, n);
        let intra = case.graphs.angles[0]
            .edges()
            .filter(|&(u, v)| cg.cluster_of(u) == cg.cluster_of(v))
            .count();
        let bundled: usize = cg.cedges.iter().map(|e| e.sources.len()).sum();
        assert_eq!(
            intra + bundled,
            case.graphs.angles[0].num_edges(),
            "trial {trial}"
        );
    }
}

#[test]
fn cg_sweep_matches_dag_sweep_bitwise_with_fewer_scheduling_events() {
    for seed in 0..20 {
        let n = 80;
        let edges = random_dag(n, 0.06, 100 + seed);
        let mesh = dependency_mesh(n, &edges, [1.0, 0.0, 0.0]).unwrap();
        let decomp = Decomposition::from_assignment(&mesh, random_assignment(n, 4, seed)).unwrap();
        let case = Case::new(
            mesh,
            decomp,
            single_direction([1.0, 0.0, 0.0]),
            Strategy::Slbd,
        );
        let k1 = case.kernel();
        let mut dag = case.dag_programs(Grain(8), k1.clone());
        drive_random(&mut dag, seed);
        let dag_events: u64 = dag.iter_mut().map(|p| p.take_stats().schedule_events).sum();
        let cgs = case.coarsen(&dag);

        let k2 = case.kernel();
        let mut cgp = case.cg_programs(&cgs, k2.clone());
        drive_random(&mut cgp, seed + 1);
        let cg_events: u64 = cgp.iter_mut().map(|p| p.take_stats().schedule_events).sum();
        assert!(k2.not_exactly_once().is_empty());
        for (u, v) in case.graphs.angles[0].edges() {
            let a = AngleId(0);
            assert!(k2.stamp(a, u) < k2.stamp(a, v));
        }
        assert_eq!(
            values(dag.iter().map(|p| p.flux()), n),
            values(cgp.iter().map(|p| p.flux()), n)
        );
        assert!(cg_events <= dag_events);
        assert!(cgp.iter().all(|p| p.remaining_work() == 0));
    }
}

#[test]
fn zigzag_cg_sweep_runs_five_cluster_executions() {
    let case = zigzag_case();
    let mut dag = case.dag_programs(Grain::UNBOUNDED, case.kernel());
    drive_in_order(&mut dag);
    let dag_events: u64 = dag.iter_mut().map(|p| p.take_stats().schedule_events).sum();
    assert_eq!(dag_events, 16);
    let cgs = case.coarsen(&dag);
    let mut cgp = case.cg_programs(&cgs, case.kernel());
    drive_in_order(&mut cgp);
    let stats: Vec<_> = cgp.iter_mut().map(|p| p.take_stats()).collect();
    let events: u64 = stats.iter().map(|s| s.schedule_events).sum();
    let calls: u64 = stats.iter().map(|s| s.kernel_calls).sum();
    assert_eq!(events, 5);
    assert!(calls <= 5);
    assert_eq!(
        values(dag.iter().map(|p| p.flux()), 16),
        values(cgp.iter().map(|p| p.flux()), 16)
    );
}

#[test]
fn incomplete_duplicate_and_illegal_traces_are_rejected() {
    let mesh = dependency_mesh(3, &[(0, 1), (1, 2)], [1.0, 0.0, 0.0]).unwrap();
    let g = AngleGraph::build(&mesh, AngleId(0), [1.0, 0.0, 0.0]);
    let owner = ProgramId::new(PatchId(0), AngleId(0));
    let rec = |seq, v: &[u32]| ClusterRecord {
        owner,
        seq,
        vertices: cells(v),
    };
    let partial = [rec(0, &[0, 1])];
    assert!(matches!(
        build_coarsened_graph(&g, &partial, 0),
        Err(CoarsenError::IncompleteTrace { missing: 1, .. })
    ));
    let dup = [rec(0, &[0, 1]), rec(1, &[1, 2])];
    assert!(matches!(
        build_coarsened_graph(&g, &dup, 0),
        Err(CoarsenError::DuplicateVertex { .. })
    ));
    // {0, 2} before {1} cannot come from a legal execution.
    let illegal = [rec(0, &[0, 2]), rec(1, &[1])];
    let cg = build_coarsened_graph(&g, &illegal, 0).unwrap();
    match verify_acyclic(&cg) {
        Err(CoarsenError::Cycle { cycle, .. }) => assert_eq!(cycle.len(), 2),
        other => panic!("expected a cycle, got {other:?}"),
    }
}

#[test]
fn stale_graphs_are_refused() {
    let case = zigzag_case();
    let mut dag = case.dag_programs(Grain::UNBOUNDED, case.kernel());
    drive_in_order(&mut dag);
    let cgs = case.coarsen(&dag);
    let err = CgProgram::new(
        ProgramId::new(PatchId(0), AngleId(0)),
        cgs[0].clone(),
        case.kernel(),
        CgProgramConfig::default(),
        case.fingerprint() ^ 1,
    )
    .unwrap_err();
    assert!(matches!(err, CoarsenError::Stale { .. }));
}

struct Nop;

impl SweepKernel for Nop {
    fn solve(
        &self,
        _: AngleId,
        cluster: &[CellId],
        flux: &mut dyn FluxStore,
    ) -> Result<(), crate::patchprog::KernelError> {
        for &c in cluster {
            flux.set(c, 0.0);
        }
        Ok(())
    }
}

#[test]
fn duplicate_coarse_delivery_is_an_error() {
    let case = zigzag_case();
    let mut dag = case.dag_programs(Grain::UNBOUNDED, Arc::new(Nop));
    drive_in_order(&mut dag);
    let cgs = case.coarsen(&dag);
    let mut p1 = CgProgram::new(
        ProgramId::new(PatchId(1), AngleId(0)),
        cgs[0].clone(),
        Arc::new(Nop),
        CgProgramConfig::default(),
        case.fingerprint(),
    )
    .unwrap();
    p1.init().unwrap();
    let mut s = Stream::new(ProgramId::new(PatchId(0), AngleId(0)), p1.id());
    s.push(CellId(8), CellId(9), 0.0);
    s.push(CellId(12), CellId(14), 0.0);
    p1.input(s.clone()).unwrap();
    assert_eq!(p1.ready_units().len(), 2);
    assert!(matches!(
        p1.input(s),
        Err(crate::patchprog::ProgramError::DuplicateDelivery { .. })
    ));
}
