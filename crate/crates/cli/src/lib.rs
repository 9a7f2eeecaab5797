//! Command implementations behind the `patchsweep` binary.
//!
//! Every command is a plain function over a [`RunSpec`], so tests and other
//! programs get exactly what the binary does.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use patchsweep::clock::ClockMode;
use patchsweep::mesh::tetra::{build_tet_mesh, TetMeshSpec};
use patchsweep::mesh::{
    build_structured_mesh, decompose_structured, decompose_unstructured,
    level_symmetric_directions, mesh_from_json, mesh_to_json, Decomposition, DirectionSet,
    StructuredMeshSpec, UnstructuredMesh,
};
use patchsweep::patchprog::Grain;
use patchsweep::runtime::{ExecutionMode, RuntimeConfig, TerminationMode};
use patchsweep::solver::{
    source_iteration, AngularFlux, BoundaryInflux, CrossSections, OracleSweeper, RuntimeSweeper,
    SolutionState, SolverConfig, SolverError, StepGeometry, StepKernel, SweepEngine, SweepMode,
    SweeperConfig,
};
use patchsweep::sweepgraph::Strategy;
use patchsweep::{AngleId, CellId};

/// Largest `(cell, angle)` count `verify` accepts.
pub const VERIFY_VERTEX_LIMIT: usize = 1_000_000;

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|e| format!("{p:?}: {e}"))?);
    }
    out.try_into().map_err(|_| "three values".to_string())
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_extent(s: &str) -> Result<[f64; 3], String> {
    parse_triple(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Priority {
    Ldcp,
    Bfs,
    Slbd,
}

impl From<Priority> for Strategy {
    fn from(p: Priority) -> Self {
        match p {
            Priority::Ldcp => Strategy::Ldcp,
            Priority::Bfs => Strategy::Bfs,
            Priority::Slbd => Strategy::Slbd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Dag,
    Cg,
}

impl From<Mode> for SweepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dag => SweepMode::Dag,
            Mode::Cg => SweepMode::Cg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Term {
    Workload,
    Consensus,
}

impl From<Term> for TerminationMode {
    fn from(t: Term) -> Self {
        match t {
            Term::Workload => TerminationMode::Workload,
            Term::Consensus => TerminationMode::Consensus,
        }
    }
}

/// Everything that defines one solve.
#[derive(Args, Clone, Debug)]
pub struct RunSpec {
    /// Structured mesh cells per axis.
    #[arg(long, value_parser = parse_dims, conflicts_with = "mesh_file")]
    pub dims: Option<[usize; 3]>,
    /// Structured cell edge lengths.
    #[arg(long, value_parser = parse_extent, default_value = "1,1,1")]
    pub extent: [f64; 3],
    /// Unstructured mesh in JSON form (see `patchsweep mesh`).
    #[arg(long)]
    pub mesh_file: Option<PathBuf>,
    /// Structured patch size in cells per axis.
    #[arg(long, value_parser = parse_dims, conflicts_with = "mesh_file")]
    pub patch: Option<[usize; 3]>,
    /// Target cells per patch for unstructured meshes.
    #[arg(long)]
    pub patch_cells: Option<usize>,
    /// Level-symmetric quadrature order (even).
    #[arg(long, default_value_t = 2)]
    pub sn: usize,
    /// Vertices per kernel call, or `inf`.
    #[arg(long)]
    pub grain: Option<Grain>,
    #[arg(long, value_enum, default_value_t = Priority::Slbd)]
    pub priority: Priority,
    #[arg(long, default_value_t = 1)]
    pub procs: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = Mode::Dag)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Term::Workload)]
    pub term: Term,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Seeds the random transport latency.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum random stream delay, in master polls.
    #[arg(long, default_value_t = 0)]
    pub latency: u64,
    /// Idle ticks before a run is declared deadlocked.
    #[arg(long)]
    pub watchdog_ticks: Option<u64>,
    /// Cross sections as JSON; default uniform σ_t=1, σ_s=0.5, q=1.
    #[arg(long)]
    pub xs: Option<PathBuf>,
    /// Uniform boundary influx (default vacuum).
    #[arg(long, default_value_t = 0.0)]
    pub influx: f64,
    #[arg(long)]
    pub fields_out: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Single-threaded reproducible execution with a virtual clock.
    #[arg(long)]
    pub deterministic: bool,
    /// Drop the k-th stream of every sweep (fault-injection builds only).
    #[cfg(feature = "fault-injection")]
    #[arg(long)]
    pub drop_stream: Option<u64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dims: None,
            extent: [1.0; 3],
            mesh_file: None,
            patch: None,
            patch_cells: None,
            sn: 2,
            grain: None,
            priority: Priority::Slbd,
            procs: 1,
            workers: 1,
            mode: Mode::Dag,
            term: Term::Workload,
            tol: 1e-8,
            max_iters: 200,
            seed: 0,
            latency: 0,
            watchdog_ticks: None,
            xs: None,
            influx: 0.0,
            fields_out: None,
            metrics_out: None,
            deterministic: false,
            #[cfg(feature = "fault-injection")]
            drop_stream: None,
        }
    }
}

/// Mesh, decomposition, quadrature and materials of a spec.
pub struct Problem {
    pub mesh: UnstructuredMesh,
    pub decomp: Decomposition,
    pub dirs: DirectionSet,
    pub xs: CrossSections,
    pub geometry: Arc<StepGeometry>,
    pub structured: bool,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.procs >= 1 && self.workers >= 1,
            "--procs and --workers must be ≥ 1"
        );
        ensure!(self.tol > 0.0, "--tol must be positive");
        ensure!(self.max_iters >= 1, "--max-iters must be ≥ 1");
        if self.mesh_file.is_none() && self.patch_cells.is_some() {
            bail!("--patch-cells applies to --mesh-file meshes; use --patch for structured ones");
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        self.validate()?;
        let (mesh, decomp, structured) = match &self.mesh_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let mesh = mesh_from_json(&text)
                    .with_context(|| format!("parsing mesh {}", path.display()))?;
                let target = self.patch_cells.unwrap_or(64);
                let decomp = decompose_unstructured(&mesh, target, self.seed)?;
                (mesh, decomp, false)
            }
            None => {
                let dims = self.dims.unwrap_or([8, 8, 8]);
                let mesh = build_structured_mesh(&StructuredMeshSpec::new(dims, self.extent)?)?;
                let decomp = decompose_structured(&mesh, self.patch.unwrap_or([4, 4, 4]))?;
                (mesh, decomp, true)
            }
        };
        let dirs = level_symmetric_directions(self.sn)?;
        let xs = match &self.xs {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                CrossSections::from_json(&text, mesh.num_cells())?
            }
            None => CrossSections::uniform(mesh.num_cells(), 1.0, 0.5, 1.0)?,
        };
        let influx = if self.influx == 0.0 {
            BoundaryInflux::Vacuum
        } else {
            BoundaryInflux::Uniform(self.influx)
        };
        let geometry = Arc::new(StepGeometry::build(&mesh, &dirs, influx)?);
        Ok(Problem {
            mesh,
            decomp,
            dirs,
            xs,
            geometry,
            structured,
        })
    }

    pub fn grain_for(&self, structured: bool) -> Grain {
        self.grain.unwrap_or(if structured {
            Grain::STRUCTURED_DEFAULT
        } else {
            Grain::UNSTRUCTURED_DEFAULT
        })
    }

    pub fn runtime_config(&self) -> RuntimeConfig {
        let mut config = if self.deterministic {
            RuntimeConfig::deterministic(self.procs, self.workers)
        } else {
            RuntimeConfig {
                processes: self.procs,
                workers: self.workers,
                execution: ExecutionMode::Threaded,
                clock: ClockMode::Monotonic,
                ..RuntimeConfig::default()
            }
        };
        config.termination = self.term.into();
        config.seed = self.seed;
        config.max_latency = self.latency;
        if let Some(t) = self.watchdog_ticks {
            config.watchdog_ticks = t;
        }
        #[cfg(feature = "fault-injection")]
        {
            config.drop_stream = self.drop_stream;
        }
        config
    }

    pub fn sweeper_config(&self, structured: bool) -> SweeperConfig {
        SweeperConfig {
            strategy: self.priority.into(),
            grain: self.grain_for(structured),
            mode: self.mode.into(),
            runtime: self.runtime_config(),
            audit: false,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

/// Result of `run`.
pub struct RunReport {
    pub state: SolutionState,
    pub wall_ns: u64,
    pub metrics: serde_json::Value,
    pub summary: String,
}

pub fn fields_json(state: &SolutionState) -> serde_json::Value {
    json!({
        "iterations": state.iterations,
        "converged": state.converged,
        "residual": state.residual,
        "phi": state.phi,
        "psi": state.psi.to_nested(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs source iteration through the runtime. `tweak` may adjust the runtime
/// configuration after the spec has been applied.
pub fn run_with(spec: &RunSpec, tweak: impl FnOnce(&mut RuntimeConfig)) -> Result<RunReport> {
    let problem = spec.problem()?;
    let mut config = spec.sweeper_config(problem.structured);
    tweak(&mut config.runtime);
    let mut sweeper = RuntimeSweeper::new(&problem.mesh, &problem.decomp, &problem.dirs, config)?;
    let start = Instant::now();
    let state = source_iteration(
        &mut sweeper,
        &problem.geometry,
        &problem.dirs,
        &problem.xs,
        &spec.solver_config(),
    )?;
    let total = sweeper.total_metrics();
    // virtual clock units in deterministic mode, so output files are reproducible
    let (wall_ns, cg_build_ns) = if spec.deterministic {
        let wall = sweeper
            .sweep_metrics()
            .iter()
            .map(|m| {
                let masters = m.per_master.iter().map(|x| x.wall_ns);
                masters
                    .chain(m.per_worker.iter().map(|x| x.wall_ns))
                    .max()
                    .unwrap_or(0)
            })
            .sum();
        (wall, 0)
    } else {
        (start.elapsed().as_nanos() as u64, sweeper.cg_build_ns())
    };
    let metrics = json!({
        "cells": problem.mesh.num_cells(),
        "patches": problem.decomp.num_patches(),
        "angles": problem.dirs.len(),
        "grain": spec.grain_for(problem.structured).to_string(),
        "priority": Strategy::from(spec.priority).to_string(),
        "mode": SweepMode::from(spec.mode).to_string(),
        "processes": spec.procs,
        "workers": spec.workers,
        "iterations": state.iterations,
        "residual": state.residual,
        "converged": state.converged,
        "wall_ns": wall_ns,
        "cg_build_ns": cg_build_ns,
        "total": total,
        "category_totals": total.total_times(),
        "sweeps": sweeper.sweep_metrics(),
        "terminations": sweeper.terminations(),
    });
    let summary = format!(
        "iterations {} residual {:.3e} converged {} wall {:.3} ms streams {}",
        state.iterations,
        state.residual,
        state.converged,
        wall_ns as f64 / 1e6,
        total.streams_sent
    );
    if let Some(path) = &spec.fields_out {
        write_json(path, &fields_json(&state))?;
    }
    if let Some(path) = &spec.metrics_out {
        write_json(path, &metrics)?;
    }
    Ok(RunReport {
        state,
        wall_ns,
        metrics,
        summary,
    })
}

pub fn cmd_run(spec: &RunSpec) -> Result<RunReport> {
    run_with(spec, |_| {})
}

/// The first `(cell, angle)` where the runtime left the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub iteration: usize,
    pub cell: CellId,
    pub angle: AngleId,
    pub runtime: f64,
    pub oracle: f64,
    /// Runtime failure that cut the sweep short, if any.
    pub error: Option<String>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "divergence in iteration {} at cell {} angle {}: runtime {:e} vs oracle {:e}",
            self.iteration, self.cell.0, self.angle.0, self.runtime, self.oracle
        )?;
        if let Some(e) = &self.error {
            write!(f, " (runtime error: {e})")?;
        }
        Ok(())
    }
}

/// Sweeps runtime and oracle side by side and stops at the first mismatch.
struct Lockstep {
    runtime: RuntimeSweeper,
    oracle: OracleSweeper,
    iteration: usize,
    divergence: Option<Divergence>,
}

impl Lockstep {
    fn compare(&mut self, got: &AngularFlux, want: &AngularFlux, error: Option<String>) -> bool {
        match got.first_difference(want) {
            None => true,
            Some((cell, angle)) => {
                self.divergence = Some(Divergence {
                    iteration: self.iteration,
                    cell,
                    angle,
                    runtime: got.get(cell, angle),
                    oracle: want.get(cell, angle),
                    error,
                });
                false
            }
        }
    }
}

impl SweepEngine for Lockstep {
    fn sweep(&mut self, kernel: &Arc<StepKernel>) -> Result<AngularFlux, SolverError> {
        self.iteration += 1;
        let want = self.oracle.sweep(kernel)?;
        match self.runtime.sweep(kernel) {
            Ok(got) => {
                if self.compare(&got, &want, None) {
                    Ok(got)
                } else {
                    Err(SolverError::Config(
                        "runtime diverged from the oracle".into(),
                    ))
                }
            }
            Err(SolverError::Runtime { source, partial }) => {
                let message = source.to_string();
                if self.compare(&partial, &want, Some(message.clone())) {
                    // the run failed yet every value is right; still a failure
                    self.divergence = Some(Divergence {
                        iteration: self.iteration,
                        cell: CellId(0),
                        angle: AngleId(0),
                        runtime: partial.get(CellId(0), AngleId(0)),
                        oracle: want.get(CellId(0), AngleId(0)),
                        error: Some(message),
                    });
                }
                Err(SolverError::Runtime { source, partial })
            }
            Err(e) => Err(e),
        }
    }
}

pub enum VerifyOutcome {
    Match { iterations: usize, vertices: usize },
    Diverged(Divergence),
}

pub fn verify_with(
    spec: &RunSpec,
    tweak: impl FnOnce(&mut RuntimeConfig),
) -> Result<VerifyOutcome> {
    let problem = spec.problem()?;
    let vertices = problem.mesh.num_cells() * problem.dirs.len();
    ensure!(
        vertices <= VERIFY_VERTEX_LIMIT,
        "{vertices} (cell, angle) vertices exceed the verify limit of {VERIFY_VERTEX_LIMIT}"
    );
    let mut config = spec.sweeper_config(problem.structured);
    tweak(&mut config.runtime);
    let mut engine = Lockstep {
        runtime: RuntimeSweeper::new(&problem.mesh, &problem.decomp, &problem.dirs, config)?,
        oracle: OracleSweeper::new(&problem.mesh, &problem.dirs)?,
        iteration: 0,
        divergence: None,
    };
    let result = source_iteration(
        &mut engine,
        &problem.geometry,
        &problem.dirs,
        &problem.xs,
        &spec.solver_config(),
    );
    if let Some(d) = engine.divergence {
        return Ok(VerifyOutcome::Diverged(d));
    }
    let state = result?;
    Ok(VerifyOutcome::Match {
        iterations: state.iterations,
        vertices,
    })
}

pub fn cmd_verify(spec: &RunSpec) -> Result<VerifyOutcome> {
    verify_with(spec, |_| {})
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchAxis {
    Grain,
    PatchSize,
    Strategy,
    Workers,
}

pub const BENCH_HEADER: &str = "axis,value,wall_ns,iterations,graph_op_ns,pack_unpack_ns,kernel_ns,comm_ns,idle_ns,schedule_events,streams_sent";

/// Runs `spec` once per axis value and returns CSV with a header row.
pub fn cmd_bench(spec: &RunSpec, axis: BenchAxis, values: &[String]) -> Result<String> {
    ensure!(!values.is_empty(), "no sweep values given");
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for value in values {
        let mut s = spec.clone();
        s.fields_out = None;
        s.metrics_out = None;
        match axis {
            BenchAxis::Grain => {
                s.grain = Some(value.parse().map_err(anyhow::Error::msg)?);
            }
            BenchAxis::PatchSize => {
                let k: usize = value.parse().context("patch size")?;
                if s.mesh_file.is_some() {
                    s.patch_cells = Some(k);
                } else {
                    s.patch = Some([k; 3]);
                }
            }
            BenchAxis::Strategy => {
                s.priority = Priority::from_str(value, true).map_err(anyhow::Error::msg)?;
            }
            BenchAxis::Workers => {
                s.workers = value.parse().context("worker count")?;
            }
        }
        let report = cmd_run(&s)?;
        let total = &report.metrics["category_totals"];
        let m = &report.metrics["total"];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            axis.to_possible_value().expect("named").get_name(),
            value,
            report.wall_ns,
            report.state.iterations,
            total["graph_op_ns"],
            total["pack_unpack_ns"],
            total["kernel_ns"],
            total["comm_ns"],
            total["idle_ns"],
            m["schedule_events"],
            m["streams_sent"],
        );
    }
    Ok(csv)
}

/// Options of the tetrahedral toy mesh generator.
#[derive(Args, Clone, Debug)]
pub struct MeshSpec {
    /// Cubes per axis; each splits into six tetrahedra.
    #[arg(long, value_parser = parse_dims, default_value = "6,6,5")]
    pub cubes: [usize; 3],
    /// Keep only cells inside the inscribed cylinder.
    #[arg(long)]
    pub cylinder: bool,
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes a tetrahedral toy mesh and returns its cell count.
pub fn cmd_mesh(spec: &MeshSpec) -> Result<usize> {
    let mesh = build_tet_mesh(&TetMeshSpec {
        cubes: spec.cubes,
        jitter: spec.jitter,
        seed: spec.seed,
        cylinder: spec.cylinder,
    })?;
    std::fs::write(&spec.out, mesh_to_json(&mesh))
        .with_context(|| format!("writing {}", spec.out.display()))?;
    Ok(mesh.num_cells())
}
