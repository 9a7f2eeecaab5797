//! Reentrant patch-programs.
//!
//! A patch-program is identified by a `(patch, task)` pair and factored into
//! five functions: `init`, `input`, `compute`, `output` and `vote_to_halt`.
//! [`run_program_once`] drives one activation; [`ProgramState`] is the
//! two-state machine (active / inactive) that the runtime maintains around it.

mod kernel;
mod stream;
mod sweep;

use thiserror::Error;

use crate::clock::CategoryTimes;
use crate::ids::{CellId, ProgramId};

pub use kernel::{
    DenseFlux, FluxStore, KernelError, PatchFlux, PathCountKernel, RecordingKernel, SweepKernel,
};
pub use stream::{Stream, StreamDecodeError, StreamRecord};
pub use sweep::{ClusterRecord, Grain, SweepProgram, SweepProgramConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("program {0} initialized twice")]
    AlreadyInitialized(ProgramId),
    #[error("program {0} used before init")]
    NotInitialized(ProgramId),
    #[error("program {0} is not active")]
    NotActive(ProgramId),
    #[error("stream for {tgt} delivered to {program}")]
    Misrouted { program: ProgramId, tgt: ProgramId },
    #[error("stream record targets {cell}, which is not local to {program}")]
    NotLocal { program: ProgramId, cell: CellId },
    #[error("duplicate delivery to {cell} in {program}: upwind count would drop below zero")]
    DuplicateDelivery { program: ProgramId, cell: CellId },
    #[error("kernel failed in {program}: {source}")]
    Kernel {
        program: ProgramId,
        #[source]
        source: KernelError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Active,
    Inactive,
}

/// Lifecycle of one program. Programs start active and uninitialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProgramState {
    pub status: Status,
    pub initialized: bool,
}

impl Default for ProgramState {
    fn default() -> Self {
        Self {
            status: Status::Active,
            initialized: false,
        }
    }
}

impl ProgramState {
    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// Stream receipt: inactive programs become active.
    pub fn on_stream(&mut self) {
        self.status = Status::Active;
    }

    pub fn halt(&mut self) {
        self.status = Status::Inactive;
    }
}

/// Per-activation counters reported back to the runtime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProgramStats {
    pub times: CategoryTimes,
    /// Units dequeued from ready queues (vertices, or coarse vertices).
    pub schedule_events: u64,
    /// Kernel invocations (non-empty clusters).
    pub kernel_calls: u64,
    /// Fine vertices computed.
    pub computed: u64,
}

impl std::ops::AddAssign for ProgramStats {
    fn add_assign(&mut self, rhs: Self) {
        self.times += rhs.times;
        self.schedule_events += rhs.schedule_events;
        self.kernel_calls += rhs.kernel_calls;
        self.computed += rhs.computed;
    }
}

/// The patch-program interface.
pub trait PatchProgram: Send {
    fn id(&self) -> ProgramId;
    fn init(&mut self) -> Result<(), ProgramError>;
    fn input(&mut self, stream: Stream) -> Result<(), ProgramError>;
    fn compute(&mut self) -> Result<(), ProgramError>;
    /// Removes and returns one completed outgoing stream.
    fn output(&mut self) -> Option<Stream>;
    fn vote_to_halt(&self) -> bool;
    /// Work units (vertices) not yet computed.
    fn remaining_work(&self) -> usize;
    /// Counters accumulated since the previous call.
    fn take_stats(&mut self) -> ProgramStats {
        ProgramStats::default()
    }
}

/// Runs one activation of an active program, in order: `init` (first time
/// only), `input` for every pending stream, `compute`, `output` until empty
/// (each stream handed to `send`, which routes it and activates the target),
/// then `vote_to_halt`, deactivating the program when it votes true.
pub fn run_program_once<P, I, S>(
    program: &mut P,
    state: &mut ProgramState,
    inputs: I,
    mut send: S,
) -> Result<(), ProgramError>
where
    P: PatchProgram + ?Sized,
    I: IntoIterator<Item = Stream>,
    S: FnMut(Stream),
{
    if !state.is_active() {
        return Err(ProgramError::NotActive(program.id()));
    }
    if !state.initialized {
        program.init()?;
        state.initialized = true;
    }
    for s in inputs {
        program.input(s)?;
    }
    program.compute()?;
    while let Some(s) = program.output() {
        send(s);
    }
    if program.vote_to_halt() {
        state.halt();
    }
    Ok(())
}

#[cfg(test)]
mod tests;
