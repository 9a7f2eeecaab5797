use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use super::*;
use crate::ids::{AngleId, PatchId};
use crate::mesh::fixtures::{
    dependency_mesh, random_assignment, random_dag, single_direction, two_patch_zigzag,
};
use crate::mesh::{Decomposition, DirectionSet, UnstructuredMesh};
use crate::sweepgraph::{PriorityAssignment, Strategy, SweepGraphs};

struct Setup {
    graphs: SweepGraphs,
    prio: PriorityAssignment,
    kernel: Arc<RecordingKernel<PathCountKernel>>,
    seq: Arc<AtomicU64>,
}

fn setup(
    mesh: &UnstructuredMesh,
    decomp: &Decomposition,
    dirs: &DirectionSet,
    s: Strategy,
) -> Setup {
    let graphs = SweepGraphs::build(mesh, decomp, dirs).unwrap();
    let prio = PriorityAssignment::build(&graphs, s, None).unwrap();
    let upwind = graphs
        .angles
        .iter()
        .map(|g| {
            (0..mesh.num_cells())
                .map(|c| g.upwind(CellId::new(c)).to_vec())
                .collect()
        })
        .collect();
    let kernel = Arc::new(RecordingKernel::new(
        PathCountKernel::new(upwind),
        mesh.num_cells(),
        dirs.len(),
    ));
    Setup {
        graphs,
        prio,
        kernel,
        seq: Arc::new(AtomicU64::new(0)),
    }
}

impl Setup {
    fn program(&self, patch: PatchId, angle: AngleId, grain: Grain) -> SweepProgram {
        let sub = Arc::new(self.graphs.subgraph(patch, angle).clone());
        let prio: Arc<[i64]> = self.prio.vertex[angle.index()].clone().into();
        SweepProgram::new(
            sub,
            prio,
            self.kernel.clone(),
            SweepProgramConfig {
                grain,
                lifo_ties: self.prio.strategy.lifo_ties(),
                record_trace: true,
                ..Default::default()
            },
            self.seq.clone(),
        )
    }
}

fn chain() -> (UnstructuredMesh, Decomposition, DirectionSet) {
    let mesh = dependency_mesh(3, &[(0, 1), (1, 2)], [1.0, 0.0, 0.0]).unwrap();
    let decomp = Decomposition::single(&mesh).unwrap();
    (mesh, decomp, single_direction([1.0, 0.0, 0.0]))
}

/// Sequential driver: activates programs in order of combined priority until
/// every one halts with an empty inbox.
fn drive(programs: &mut [SweepProgram], prio: &PriorityAssignment) -> Vec<Stream> {
    let index: BTreeMap<ProgramId, usize> = programs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id(), i))
        .collect();
    let mut states = vec![ProgramState::default(); programs.len()];
    let mut inbox: Vec<VecDeque<Stream>> = vec![VecDeque::new(); programs.len()];
    let mut sent = Vec::new();
    loop {
        let next = (0..programs.len())
            .filter(|&i| states[i].is_active())
            .max_by_key(|&i| {
                let id = programs[i].id();
                (prio.combined(id.patch, id.task), std::cmp::Reverse(i))
            });
        let Some(i) = next else { break };
        let mut out = Vec::new();
        run_program_once(
            &mut programs[i],
            &mut states[i],
            inbox[i].drain(..).collect::<Vec<_>>(),
            |s| out.push(s),
        )
        .unwrap();
        for s in out {
            let t = index[&s.tgt];
            states[t].on_stream();
            inbox[t].push_back(s.clone());
            sent.push(s);
        }
    }
    sent
}

#[test]
fn init_counts_upwind_and_enqueues_sources() {
    let (mesh, decomp, dirs) = chain();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED);
    p.init().unwrap();
    assert_eq!(p.ready_cells(), vec![CellId(0)]);
    let counts: Vec<u32> = (0..3).map(|c| p.count_of(CellId(c)).unwrap()).collect();
    assert_eq!(counts, vec![0, 1, 1]);
    assert_eq!(p.init(), Err(ProgramError::AlreadyInitialized(p.id())));
}

#[test]
fn zigzag_second_patch_starts_with_both_sources() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(1), AngleId(0), Grain::UNBOUNDED);
    p.init().unwrap();
    assert_eq!(p.ready_cells(), vec![CellId(2), CellId(3)]);
}

#[test]
fn input_enqueues_only_when_count_reaches_zero() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED);
    p.init().unwrap();
    let src = ProgramId::new(PatchId(1), AngleId(0));
    // 13 depends on 12 (local) and 5 (remote): remote input alone is not enough.
    let mut st = Stream::new(src, p.id());
    st.push(CellId(5), CellId(13), 2.0);
    p.input(st).unwrap();
    assert_eq!(p.count_of(CellId(13)), Some(1));
    assert!(!p.ready_cells().contains(&CellId(13)));
    // 7 depends on 1 (local) and 6 (remote); after computing 0 and 1 the
    // remote value makes it ready.
    p.compute().unwrap();
    let mut st = Stream::new(src, p.id());
    st.push(CellId(6), CellId(7), 3.0);
    p.input(st).unwrap();
    assert_eq!(p.ready_cells(), vec![CellId(7)]);
}

#[test]
fn input_rejects_duplicates_and_foreign_cells() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(1), AngleId(0), Grain::UNBOUNDED);
    let src = ProgramId::new(PatchId(0), AngleId(0));
    let mut st = Stream::new(src, p.id());
    st.push(CellId(8), CellId(9), 1.0);
    assert_eq!(
        p.input(st.clone()),
        Err(ProgramError::NotInitialized(p.id()))
    );
    p.init().unwrap();
    p.input(st.clone()).unwrap();
    assert!(matches!(
        p.input(st),
        Err(ProgramError::DuplicateDelivery {
            cell: CellId(9),
            ..
        })
    ));
    let mut foreign = Stream::new(src, p.id());
    foreign.push(CellId(1), CellId(7), 1.0);
    assert!(matches!(
        p.input(foreign),
        Err(ProgramError::NotLocal {
            cell: CellId(7),
            ..
        })
    ));
    let misrouted = Stream::new(src, ProgramId::new(PatchId(0), AngleId(0)));
    assert!(matches!(
        p.input(misrouted),
        Err(ProgramError::Misrouted { .. })
    ));
}

#[test]
fn grain_one_computes_a_topological_order() {
    let edges = random_dag(40, 0.15, 3);
    let mesh = dependency_mesh(40, &edges, [1.0, 0.0, 0.0]).unwrap();
    let decomp = Decomposition::single(&mesh).unwrap();
    let dirs = single_direction([1.0, 0.0, 0.0]);
    let s = setup(&mesh, &decomp, &dirs, Strategy::Bfs);
    let mut p = s.program(PatchId(0), AngleId(0), Grain(1));
    p.init().unwrap();
    let mut order = Vec::new();
    while !p.vote_to_halt() {
        let c = p.compute_cluster().unwrap();
        assert_eq!(c.len(), 1);
        order.extend(c);
    }
    assert_eq!(order.len(), 40);
    let pos: BTreeMap<CellId, usize> = order.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for (u, v) in edges {
        assert!(pos[&CellId::new(u)] < pos[&CellId::new(v)]);
    }
}

#[test]
fn ready_vertices_join_the_running_cluster() {
    let (mesh, decomp, dirs) = chain();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED);
    p.init().unwrap();
    assert_eq!(
        p.compute_cluster().unwrap(),
        vec![CellId(0), CellId(1), CellId(2)]
    );
    assert!(p.vote_to_halt());
    assert_eq!(p.remaining_work(), 0);
}

#[test]
fn cut_edges_from_one_cluster_share_a_stream() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p0 = s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED);
    p0.init().unwrap();
    p0.compute().unwrap();
    assert!(p0.output().is_none());
    let src = ProgramId::new(PatchId(1), AngleId(0));
    let mut st = Stream::new(src, p0.id());
    st.push(CellId(5), CellId(13), 1.0);
    st.push(CellId(6), CellId(7), 1.0);
    p0.input(st).unwrap();
    assert_eq!(
        p0.compute_cluster().unwrap(),
        [7, 8, 12, 13, 15].map(CellId).to_vec()
    );
    let out = p0.output().unwrap();
    assert_eq!(out.tgt, ProgramId::new(PatchId(1), AngleId(0)));
    let pairs: Vec<_> = out.payload.iter().map(|r| (r.from.0, r.to.0)).collect();
    assert_eq!(pairs, vec![(8, 9), (12, 14)]);
    assert!(p0.output().is_none());
}

#[test]
fn vote_to_halt_follows_the_ready_queue() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED);
    p.init().unwrap();
    assert!(!p.vote_to_halt());
    p.compute().unwrap();
    // waiting on remote data with nothing ready
    assert!(p.vote_to_halt());
    assert!(p.remaining_work() > 0);

    let mut q = s.program(PatchId(0), AngleId(0), Grain(1));
    q.init().unwrap();
    q.compute().unwrap();
    // 1 became ready but the grain stopped the cluster
    assert!(!q.vote_to_halt());
}

#[test]
fn run_once_respects_the_state_machine() {
    let (mesh, decomp, dirs) = chain();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut p = s.program(PatchId(0), AngleId(0), Grain(1));
    let mut st = ProgramState::default();
    assert!(st.is_active() && !st.initialized);
    run_program_once(&mut p, &mut st, Vec::new(), |_| {}).unwrap();
    assert!(st.initialized && st.is_active());
    run_program_once(&mut p, &mut st, Vec::new(), |_| {}).unwrap();
    run_program_once(&mut p, &mut st, Vec::new(), |_| {}).unwrap();
    assert_eq!(st.status, Status::Inactive);
    assert_eq!(
        run_program_once(&mut p, &mut st, Vec::new(), |_| {}),
        Err(ProgramError::NotActive(p.id()))
    );
    st.on_stream();
    assert!(st.is_active());
}

#[test]
fn zigzag_cluster_trace_matches_expected_interleaving() {
    let (mesh, decomp, dirs) = two_patch_zigzag();
    let s = setup(&mesh, &decomp, &dirs, Strategy::Ldcp);
    let mut progs = vec![
        s.program(PatchId(0), AngleId(0), Grain::UNBOUNDED),
        s.program(PatchId(1), AngleId(0), Grain::UNBOUNDED),
    ];
    let sent = drive(&mut progs, &s.prio);
    let t0: Vec<Vec<u32>> = progs[0]
        .cluster_trace()
        .iter()
        .map(|r| r.vertices.iter().map(|c| c.0).collect())
        .collect();
    assert_eq!(t0, vec![vec![0, 1], vec![7, 8, 12, 13, 15], vec![11]]);
    let t1: Vec<Vec<u32>> = progs[1]
        .cluster_trace()
        .iter()
        .map(|r| {
            let mut v: Vec<u32> = r.vertices.iter().map(|c| c.0).collect();
            if v.len() == 5 {
                v.sort();
            }
            v
        })
        .collect();
    assert_eq!(t1, vec![vec![2, 3, 4, 5, 6], vec![9, 14, 10]]);
    // 1→0 (6→7, 5→13), 0→1 (8→9, 12→14), 1→0 (10→11)
    assert_eq!(sent.len(), 3);
    assert!(s.kernel.not_exactly_once().is_empty());
}

#[test]
fn random_dags_compute_every_vertex_once_in_dependency_order() {
    for seed in 0..12 {
        let n = 60;
        let edges = random_dag(n, 0.08, seed);
        let mesh = dependency_mesh(n, &edges, [1.0, 0.0, 0.0]).unwrap();
        let decomp = Decomposition::from_assignment(&mesh, random_assignment(n, 3, seed)).unwrap();
        let dirs = single_direction([1.0, 0.0, 0.0]);
        for strategy in Strategy::ALL {
            for grain in [Grain(1), Grain(4), Grain::UNBOUNDED] {
                let s = setup(&mesh, &decomp, &dirs, strategy);
                let mut progs: Vec<_> = (0..3)
                    .map(|p| s.program(PatchId(p), AngleId(0), grain))
                    .collect();
                drive(&mut progs, &s.prio);
                assert!(s.kernel.not_exactly_once().is_empty(), "seed {seed}");
                for &(u, v) in &edges {
                    let a = AngleId(0);
                    assert!(s.kernel.stamp(a, CellId::new(u)) < s.kernel.stamp(a, CellId::new(v)));
                }
                for p in &progs {
                    assert_eq!(p.remaining_work(), 0);
                }
            }
        }
    }
}

struct FailingKernel;

impl SweepKernel for FailingKernel {
    fn solve(&self, _: AngleId, _: &[CellId], _: &mut dyn FluxStore) -> Result<(), KernelError> {
        Err(KernelError::Other("boom".into()))
    }
}

#[test]
fn kernel_failure_rolls_back_the_cluster() {
    let (mesh, decomp, dirs) = chain();
    let graphs = SweepGraphs::build(&mesh, &decomp, &dirs).unwrap();
    let sub = Arc::new(graphs.subgraph(PatchId(0), AngleId(0)).clone());
    let mut p = SweepProgram::new(
        sub,
        vec![0i64; 3].into(),
        Arc::new(FailingKernel),
        SweepProgramConfig::default(),
        Arc::new(AtomicU64::new(0)),
    );
    p.init().unwrap();
    assert!(matches!(p.compute(), Err(ProgramError::Kernel { .. })));
    assert_eq!(p.ready_cells(), vec![CellId(0)]);
    assert_eq!(p.count_of(CellId(1)), Some(1));
    assert_eq!(p.computed_count(), 0);
}

#[test]
fn grain_parses_and_prints() {
    assert_eq!("inf".parse::<Grain>().unwrap(), Grain::UNBOUNDED);
    assert_eq!("64".parse::<Grain>().unwrap(), Grain(64));
    assert!("0".parse::<Grain>().is_err());
    assert_eq!(Grain::UNBOUNDED.to_string(), "inf");
}
