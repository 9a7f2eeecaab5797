use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::clock::Meter;
use crate::ids::{AngleId, CellId, PatchId};
use crate::mesh::fixtures::{
    dependency_mesh, random_assignment, random_dag, single_direction, two_patch_zigzag,
};
use crate::mesh::{Decomposition, Direction, DirectionSet, UnstructuredMesh};
use crate::patchprog::{
    Grain, PathCountKernel, ProgramStats, RecordingKernel, SweepProgram, SweepProgramConfig,
};
use crate::sweepgraph::{PriorityAssignment, Strategy, SweepGraphs};

struct Case {
    mesh: UnstructuredMesh,
    decomp: Decomposition,
    dirs: DirectionSet,
    graphs: SweepGraphs,
}

impl Case {
    fn new(mesh: UnstructuredMesh, decomp: Decomposition, dirs: DirectionSet) -> Self {
        let graphs = SweepGraphs::build(&mesh, &decomp, &dirs).unwrap();
        Self {
            mesh,
            decomp,
            dirs,
            graphs,
        }
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

    fn programs(
        &self,
        prio: &PriorityAssignment,
        grain: Grain,
        kernel: Arc<RecordingKernel<PathCountKernel>>,
        clock: ClockMode,
    ) -> Vec<SweepProgram> {
        let seq = Arc::new(AtomicU64::new(0));
        let mut out = Vec::new();
        for a in self.dirs.angles() {
            for p in 0..self.decomp.num_patches() {
                out.push(SweepProgram::new(
                    Arc::new(self.graphs.subgraph(PatchId::new(p), a).clone()),
                    prio.vertex[a.index()].clone().into(),
                    kernel.clone(),
                    SweepProgramConfig {
                        grain,
                        lifo_ties: prio.strategy.lifo_ties(),
                        meter: Meter::new(clock),
                        ..Default::default()
                    },
                    seq.clone(),
                ));
            }
        }
        out
    }

    /// Runs one sweep and returns per-(angle, cell) value bits and the kernel.
    fn sweep(
        &self,
        strategy: Strategy,
        grain: Grain,
        config: &RuntimeConfig,
    ) -> (
        Vec<u64>,
        Arc<RecordingKernel<PathCountKernel>>,
        RunOutcome<SweepProgram>,
    ) {
        let placement = round_robin_placement(self.decomp.num_patches(), config.processes);
        let prio = PriorityAssignment::build(&self.graphs, strategy, Some(&placement)).unwrap();
        let kernel = self.kernel();
        let programs = self.programs(&prio, grain, kernel.clone(), config.clock);
        let out = run(
            programs,
            &placement,
            |id| prio.combined(id.patch, id.task),
            config,
        )
        .unwrap_or_else(|f| panic!("{}", f.error));
        let n = self.mesh.num_cells();
        let mut values = vec![0u64; n * self.dirs.len()];
        for p in &out.programs {
            for (c, v) in p.flux().local_values() {
                values[p.id().task.index() * n + c.index()] = v.to_bits();
            }
        }
        (values, kernel, out)
    }

    fn check_topological(&self, kernel: &RecordingKernel<PathCountKernel>) {
        assert!(kernel.not_exactly_once().is_empty());
        for g in &self.graphs.angles {
            for (u, v) in g.edges() {
                assert!(kernel.stamp(g.angle(), u) < kernel.stamp(g.angle(), v));
            }
        }
    }
}

fn random_case(n: usize, patches: usize, seed: u64) -> Case {
    let edges = random_dag(n, 0.05, seed);
    let mesh = dependency_mesh(n, &edges, [1.0, 0.0, 0.0]).unwrap();
    let decomp =
        Decomposition::from_assignment(&mesh, random_assignment(n, patches, seed)).unwrap();
    Case::new(mesh, decomp, single_direction([1.0, 0.0, 0.0]))
}

/// Four diagonal directions in the xy plane.
fn four_directions() -> DirectionSet {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DirectionSet::new(
        [[s, s], [-s, s], [-s, -s], [s, -s]]
            .into_iter()
            .map(|[x, y]| Direction {
                omega: [x, y, 0.0],
                weight: 0.25,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn routes_follow_the_patch_placement() {
    let (mesh, _, _) = two_patch_zigzag();
    let assignment: Vec<PatchId> = (0..16).map(|c| PatchId::new(c % 4)).collect();
    let decomp = Decomposition::from_assignment(&mesh, assignment).unwrap();
    let placement = round_robin_placement(4, 2);
    let ids: Vec<ProgramId> = (0..4)
        .flat_map(|p| (0..2).map(move |a| ProgramId::new(PatchId(p), AngleId(a))))
        .collect();
    let table = RouteTable::new(ids.iter().copied(), &placement).unwrap();
    let src = ProgramId::new(PatchId(0), AngleId(0));
    for c in 0..16 {
        let patch = decomp.patch_of(CellId(c));
        for a in 0..2 {
            let stream = Stream::new(src, ProgramId::new(patch, AngleId(a)));
            assert_eq!(table.route(&stream).unwrap(), placement[patch.index()]);
        }
    }
    let unknown = Stream::new(src, ProgramId::new(PatchId(9), AngleId(0)));
    assert!(matches!(
        table.route(&unknown),
        Err(RuntimeError::UnknownProgram(_))
    ));
    // a zig-zag stream between patches on different processes goes remote
    let table = RouteTable::new(
        [0, 1].map(|p| ProgramId::new(PatchId(p), AngleId(0))),
        &round_robin_placement(2, 2),
    )
    .unwrap();
    let s = Stream::new(src, ProgramId::new(PatchId(1), AngleId(0)));
    assert_eq!(table.route(&s).unwrap(), 1);
    assert_eq!(table.programs_of(1).count(), 1);
}

#[test]
fn lightest_worker_minimizes_load_with_low_id_ties() {
    assert_eq!(lightest_worker(&[0, 0, 0]), 0);
    assert_eq!(lightest_worker(&[5, 2, 9]), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut loads = vec![0u64; 4];
    for _ in 0..500 {
        let w = lightest_worker(&loads);
        let min = *loads.iter().min().unwrap();
        assert_eq!(loads[w], min);
        assert!(loads[..w].iter().all(|&l| l > min));
        loads[w] += rng.gen_range(0..20);
        let k = rng.gen_range(0..4);
        loads[k] = loads[k].saturating_sub(rng.gen_range(0..10));
    }
}

#[test]
fn single_worker_run_matches_a_sequential_recurrence() {
    let mesh = dependency_mesh(4, &[(0, 1), (1, 2), (0, 2), (2, 3)], [1.0, 0.0, 0.0]).unwrap();
    let decomp = Decomposition::single(&mesh).unwrap();
    let case = Case::new(mesh, decomp, single_direction([1.0, 0.0, 0.0]));
    let cfg = RuntimeConfig::deterministic(1, 1);
    let (values, kernel, out) = case.sweep(Strategy::Ldcp, Grain::UNBOUNDED, &cfg);
    let v: Vec<f64> = values.iter().map(|&b| f64::from_bits(b)).collect();
    // 1, 1+1, 1+1+2, 1+4
    assert_eq!(v, vec![1.0, 2.0, 4.0, 5.0]);
    case.check_topological(&kernel);
    assert!(out.termination.workload_condition);
    assert_eq!(out.metrics.schedule_events, 4);
}

#[test]
fn higher_combined_priority_runs_first() {
    let mesh = dependency_mesh(2, &[], [1.0, 0.0, 0.0]).unwrap();
    let decomp = Decomposition::from_assignment(&mesh, vec![PatchId(0), PatchId(1)]).unwrap();
    let case = Case::new(mesh, decomp, single_direction([1.0, 0.0, 0.0]));
    let prio = PriorityAssignment::build(&case.graphs, Strategy::Ldcp, None).unwrap();
    for (p0, p1) in [(7, 12), (12, 7)] {
        let kernel = case.kernel();
        let programs = case.programs(&prio, Grain::UNBOUNDED, kernel.clone(), ClockMode::Virtual);
        run(
            programs,
            &[0, 0],
            |id| if id.patch == PatchId(0) { p0 } else { p1 },
            &RuntimeConfig::deterministic(1, 1),
        )
        .unwrap();
        let first_is_1 = kernel.stamp(AngleId(0), CellId(1)) < kernel.stamp(AngleId(0), CellId(0));
        assert_eq!(first_is_1, p1 > p0);
    }
}

#[test]
fn four_directions_on_two_patches_progress_concurrently() {
    let mesh =
        crate::mesh::build_structured_mesh(&crate::mesh::StructuredMeshSpec::unit([4, 4, 1]))
            .unwrap();
    let decomp = crate::mesh::decompose_structured(&mesh, [2, 4, 1]).unwrap();
    assert_eq!(decomp.num_patches(), 2);
    let case = Case::new(mesh, decomp, four_directions());
    let cfg = RuntimeConfig::deterministic(2, 1);
    let (_, kernel, out) = case.sweep(Strategy::Slbd, Grain(2), &cfg);
    assert_eq!(out.programs.len(), 8);
    case.check_topological(&kernel);
    let n = case.mesh.num_cells();
    let span = |a: u32| {
        let stamps: Vec<u64> = (0..n)
            .map(|c| kernel.stamp(AngleId(a), CellId::new(c)))
            .collect();
        (*stamps.iter().min().unwrap(), *stamps.iter().max().unwrap())
    };
    let spans: Vec<(u64, u64)> = (0..4).map(span).collect();
    // angles entering from opposite corners start on different processes,
    // so at least one pair of angle sweeps overlaps in time
    let overlapping = (0..4)
        .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
        .filter(|&(a, b)| spans[a].0 < spans[b].1 && spans[b].0 < spans[a].1)
        .count();
    assert!(overlapping >= 1, "{spans:?}");
}

#[test]
fn fields_are_identical_across_process_and_worker_counts() {
    let case = random_case(150, 6, 77);
    let (reference, _, _) = case.sweep(
        Strategy::Ldcp,
        Grain(8),
        &RuntimeConfig::deterministic(1, 1),
    );
    for procs in [1, 2, 4] {
        for workers in [1, 2, 4] {
            for strategy in Strategy::ALL {
                let cfg = RuntimeConfig {
                    processes: procs,
                    workers,
                    ..RuntimeConfig::default()
                };
                let (values, kernel, out) = case.sweep(strategy, Grain(8), &cfg);
                assert_eq!(values, reference, "{procs}x{workers} {strategy}");
                case.check_topological(&kernel);
                let t = &out.termination;
                assert_eq!(t.streams_sent, t.streams_received);
                assert!(t.workload_condition && t.consensus_condition);
            }
        }
    }
}

#[test]
fn termination_modes_agree_under_latency() {
    let case = random_case(120, 5, 3);
    for latency_seed in 0..5 {
        for execution in [ExecutionMode::Deterministic, ExecutionMode::Threaded] {
            let mut reports = Vec::new();
            for termination in [TerminationMode::Workload, TerminationMode::Consensus] {
                let cfg = RuntimeConfig {
                    processes: 3,
                    workers: 2,
                    termination,
                    execution,
                    seed: latency_seed,
                    max_latency: 6,
                    ..RuntimeConfig::default()
                };
                let (values, kernel, out) = case.sweep(Strategy::Bfs, Grain(4), &cfg);
                case.check_topological(&kernel);
                let t = out.termination;
                assert!(t.workload_condition, "{termination:?}");
                assert!(t.consensus_condition, "{termination:?}");
                assert_eq!(t.ledger_zero_with_inflight, 0);
                if termination == TerminationMode::Consensus {
                    assert!(t.token_waves >= 1);
                }
                reports.push(values);
            }
            assert_eq!(reports[0], reports[1]);
        }
    }
}

#[test]
fn deterministic_runs_are_reproducible() {
    let case = random_case(100, 4, 11);
    let cfg = RuntimeConfig {
        max_latency: 3,
        seed: 9,
        ..RuntimeConfig::deterministic(2, 2)
    };
    let (_, _, a) = case.sweep(Strategy::Slbd, Grain(3), &cfg);
    let (_, _, b) = case.sweep(Strategy::Slbd, Grain(3), &cfg);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.termination, b.termination);
}

#[test]
fn metrics_are_consistent() {
    let case = random_case(200, 4, 5);
    let cfg = RuntimeConfig {
        processes: 2,
        workers: 2,
        ..RuntimeConfig::default()
    };
    let (_, _, out) = case.sweep(Strategy::Ldcp, Grain(4), &cfg);
    let m = &out.metrics;
    assert_eq!(m.per_worker.len(), 4);
    assert_eq!(m.per_master.len(), 2);
    for w in &m.per_worker {
        assert!(w.times.total() <= w.wall_ns, "{w:?}");
        if w.computed > 0 {
            assert!(w.times.kernel > 0);
        }
    }
    assert_eq!(m.per_worker.iter().map(|w| w.computed).sum::<u64>(), 200);
    assert!(m.remote_streams <= m.streams_sent);
    assert!(m.bytes_sent > 0 || m.remote_streams == 0);
    let json = serde_json::to_value(m).unwrap();
    for key in [
        "graph_op_ns",
        "pack_unpack_ns",
        "kernel_ns",
        "comm_ns",
        "idle_ns",
    ] {
        assert!(json["per_worker"][0].get(key).is_some(), "{key}");
    }
}

/// Claims work it never does, to exercise the failure paths.
#[derive(Debug)]
struct Stuck(ProgramId);

impl PatchProgram for Stuck {
    fn id(&self) -> ProgramId {
        self.0
    }
    fn init(&mut self) -> Result<(), crate::patchprog::ProgramError> {
        Ok(())
    }
    fn input(&mut self, _: Stream) -> Result<(), crate::patchprog::ProgramError> {
        Ok(())
    }
    fn compute(&mut self) -> Result<(), crate::patchprog::ProgramError> {
        Ok(())
    }
    fn output(&mut self) -> Option<Stream> {
        None
    }
    fn vote_to_halt(&self) -> bool {
        true
    }
    fn remaining_work(&self) -> usize {
        3
    }
    fn take_stats(&mut self) -> ProgramStats {
        ProgramStats::default()
    }
}

#[test]
fn watchdog_reports_deadlock_with_partial_state() {
    let id = ProgramId::new(PatchId(0), AngleId(0));
    for execution in [ExecutionMode::Deterministic, ExecutionMode::Threaded] {
        let cfg = RuntimeConfig {
            execution,
            watchdog_ticks: 200,
            ..RuntimeConfig::default()
        };
        let failure = run(vec![Stuck(id)], &[0], |_| 0, &cfg).unwrap_err();
        match &failure.error {
            RuntimeError::Deadlock { remaining, .. } => assert_eq!(*remaining, 3),
            other => panic!("{other}"),
        }
        assert_eq!(failure.partial.programs.len(), 1);
        assert!(!failure.partial.termination.workload_condition);
    }
}

#[test]
fn consensus_refuses_to_end_with_work_left() {
    let id = ProgramId::new(PatchId(0), AngleId(0));
    let cfg = RuntimeConfig {
        termination: TerminationMode::Consensus,
        ..RuntimeConfig::deterministic(1, 1)
    };
    let failure = run(vec![Stuck(id)], &[0], |_| 0, &cfg).unwrap_err();
    assert!(matches!(
        failure.error,
        RuntimeError::PrematureTermination { remaining: 3 }
    ));
}

#[test]
fn bad_configurations_are_rejected() {
    let id = ProgramId::new(PatchId(0), AngleId(0));
    let cfg = RuntimeConfig {
        workers: 0,
        ..RuntimeConfig::default()
    };
    assert!(matches!(
        run(vec![Stuck(id)], &[0], |_| 0, &cfg).unwrap_err().error,
        RuntimeError::Config(_)
    ));
    let cfg = RuntimeConfig::deterministic(1, 1);
    assert!(matches!(
        run(vec![Stuck(id)], &[3], |_| 0, &cfg).unwrap_err().error,
        RuntimeError::Config(_)
    ));
}

#[test]
fn empty_processes_and_programs_are_fine() {
    let case = random_case(30, 2, 1);
    let cfg = RuntimeConfig {
        termination: TerminationMode::Consensus,
        ..RuntimeConfig::deterministic(4, 3)
    };
    let (_, kernel, out) = case.sweep(Strategy::Bfs, Grain(1), &cfg);
    case.check_topological(&kernel);
    assert!(out.termination.workload_condition);
}
