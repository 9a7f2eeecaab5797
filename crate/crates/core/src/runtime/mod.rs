//! A simulated multi-process runtime for patch-programs.
//!
//! Each simulated process runs one master and `W` workers. Masters own the
//! program slots of their patches, route streams (serializing every stream
//! that leaves the process), bind activated programs to the least loaded
//! worker and take part in global termination detection. Workers execute the
//! highest-priority program they hold.
//!
//! [`ExecutionMode::Threaded`] gives every master and worker its own thread.
//! [`ExecutionMode::Deterministic`] interleaves them round-robin on the
//! calling thread, which makes whole runs reproducible.

mod engine;
mod metrics;
mod safra;
mod transport;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockMode;
use crate::ids::ProgramId;
use crate::patchprog::{PatchProgram, ProgramError, Stream, StreamDecodeError};

pub use metrics::{MasterMetrics, RuntimeMetrics, WorkerMetrics};
pub use safra::{SafraAction, SafraNode, Token};
pub use transport::Transport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationMode {
    /// Global remaining workload is zero and no stream is in flight.
    #[default]
    Workload,
    /// Token-ring consensus.
    Consensus,
}

impl fmt::Display for TerminationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationMode::Workload => "workload",
            TerminationMode::Consensus => "consensus",
        })
    }
}

impl FromStr for TerminationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "workload" => Ok(Self::Workload),
            "consensus" => Ok(Self::Consensus),
            _ => Err(format!(
                "unknown termination mode {s:?} (workload|consensus)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Threaded,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub processes: usize,
    pub workers: usize,
    pub termination: TerminationMode,
    pub execution: ExecutionMode,
    pub clock: ClockMode,
    pub seed: u64,
    /// Upper bound of the random per-stream delay, in target master polls.
    pub max_latency: u64,
    /// Consecutive idle ticks before a run is declared deadlocked.
    pub watchdog_ticks: u64,
    /// Drops the k-th stream (1-based, in send order) instead of routing it.
    #[cfg(feature = "fault-injection")]
    pub drop_stream: Option<u64>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            processes: 1,
            workers: 1,
            termination: TerminationMode::Workload,
            execution: ExecutionMode::Threaded,
            clock: ClockMode::Monotonic,
            seed: 0,
            max_latency: 0,
            watchdog_ticks: 50_000,
            #[cfg(feature = "fault-injection")]
            drop_stream: None,
        }
    }
}

impl RuntimeConfig {
    /// Single-threaded round-robin execution with a virtual clock.
    pub fn deterministic(processes: usize, workers: usize) -> Self {
        Self {
            processes,
            workers,
            execution: ExecutionMode::Deterministic,
            clock: ClockMode::Virtual,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.processes == 0 || self.workers == 0 {
            return Err(RuntimeError::Config(format!(
                "need at least one process and one worker, got {} x {}",
                self.processes, self.workers
            )));
        }
        if self.watchdog_ticks == 0 {
            return Err(RuntimeError::Config(
                "watchdog_ticks must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid runtime configuration: {0}")]
    Config(String),
    #[error("no program {0} in the route table")]
    UnknownProgram(ProgramId),
    #[error("program {0} listed twice")]
    DuplicateProgram(ProgramId),
    #[error("patch {patch} of program {program} has no process")]
    Unplaced { program: ProgramId, patch: usize },
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("stream {0} delivered twice")]
    DuplicateStream(u64),
    #[error("corrupt stream: {0}")]
    Decode(#[from] StreamDecodeError),
    #[error(
        "deadlock: no progress for {idle_ticks} ticks, {remaining} vertices left\n{diagnostic}"
    )]
    Deadlock {
        idle_ticks: u64,
        remaining: u64,
        diagnostic: String,
    },
    #[error("termination announced with {remaining} vertices left")]
    PrematureTermination { remaining: u64 },
    #[error("a runtime thread panicked")]
    Panicked,
}

/// Where a program lives: its home process and, while bound, its worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub process: usize,
    pub worker: Option<usize>,
}

/// Maps `(patch, task)` to `(process, worker)`.
///
/// The home process of a patch never changes. Worker bindings are set and
/// cleared by the master of the home process.
#[derive(Clone, Debug, Default)]
pub struct RouteTable {
    entries: BTreeMap<ProgramId, RouteEntry>,
}

impl RouteTable {
    pub fn new(
        programs: impl IntoIterator<Item = ProgramId>,
        process_of_patch: &[usize],
    ) -> Result<Self, RuntimeError> {
        let mut entries = BTreeMap::new();
        for id in programs {
            let process =
                *process_of_patch
                    .get(id.patch.index())
                    .ok_or(RuntimeError::Unplaced {
                        program: id,
                        patch: id.patch.index(),
                    })?;
            let entry = RouteEntry {
                process,
                worker: None,
            };
            if entries.insert(id, entry).is_some() {
                return Err(RuntimeError::DuplicateProgram(id));
            }
        }
        Ok(Self { entries })
    }

    pub fn lookup(&self, id: ProgramId) -> Option<RouteEntry> {
        self.entries.get(&id).copied()
    }

    /// Home process of the stream's target.
    pub fn route(&self, stream: &Stream) -> Result<usize, RuntimeError> {
        self.lookup(stream.tgt)
            .map(|e| e.process)
            .ok_or(RuntimeError::UnknownProgram(stream.tgt))
    }

    pub fn bind(&mut self, id: ProgramId, worker: usize) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.worker = Some(worker);
        }
    }

    pub fn unbind(&mut self, id: ProgramId) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.worker = None;
        }
    }

    pub fn programs_of(&self, process: usize) -> impl Iterator<Item = ProgramId> + '_ {
        self.entries
            .iter()
            .filter(move |(_, e)| e.process == process)
            .map(|(&id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Patches dealt round-robin to processes.
pub fn round_robin_placement(num_patches: usize, processes: usize) -> Vec<usize> {
    (0..num_patches).map(|p| p % processes.max(1)).collect()
}

/// The worker with the smallest load; ties go to the lowest id.
pub fn lightest_worker(loads: &[u64]) -> usize {
    loads
        .iter()
        .enumerate()
        .min_by_key(|&(i, &l)| (l, i))
        .map(|(i, _)| i)
        .expect("at least one worker")
}

/// How a run ended, with both termination conditions evaluated on the
/// final state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub mode: TerminationMode,
    /// Every ledger is zero and transport counters balance.
    pub workload_condition: bool,
    /// Every program is idle with no pending input and the message counters
    /// of all processes sum to zero.
    pub consensus_condition: bool,
    /// Token waves started by the initiator (consensus mode).
    pub token_waves: u64,
    /// Times the coordinator saw all ledgers at zero while a stream was
    /// still in flight. Always zero for sweeps.
    pub ledger_zero_with_inflight: u64,
    pub streams_sent: u64,
    pub streams_received: u64,
    pub dropped_streams: u64,
}

#[derive(Debug)]
pub struct RunOutcome<P> {
    /// All programs, sorted by id.
    pub programs: Vec<P>,
    pub metrics: RuntimeMetrics,
    pub termination: TerminationReport,
}

/// A failed run together with everything computed before the failure.
#[derive(Debug)]
pub struct RunFailure<P> {
    pub error: RuntimeError,
    pub partial: RunOutcome<P>,
}

impl<P> fmt::Display for RunFailure<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl<P: fmt::Debug> std::error::Error for RunFailure<P> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs `programs` to global termination.
///
/// `process_of_patch` fixes each patch's home process; `priority` gives the
/// combined priority of each program. All programs start active and are
/// dealt round-robin, in `(task, patch)` order, to the workers of their
/// process.
pub fn run<P: PatchProgram>(
    programs: Vec<P>,
    process_of_patch: &[usize],
    priority: impl Fn(ProgramId) -> i64,
    config: &RuntimeConfig,
) -> Result<RunOutcome<P>, RunFailure<P>> {
    engine::run(programs, process_of_patch, &priority, config)
}

#[cfg(test)]
mod tests;
