use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    lightest_worker, ExecutionMode, MasterMetrics, RouteTable, RunFailure, RunOutcome,
    RuntimeConfig, RuntimeError, RuntimeMetrics, SafraAction, SafraNode, TerminationMode,
    TerminationReport, Token, Transport, WorkerMetrics,
};
use crate::clock::{ClockMode, Meter};
use crate::ids::ProgramId;
use crate::patchprog::{run_program_once, PatchProgram, ProgramError, ProgramState, Stream};

const WORKER_WAIT: Duration = Duration::from_micros(200);
const MASTER_WAIT: Duration = Duration::from_micros(100);

struct Held<P> {
    program: P,
    state: ProgramState,
    inputs: Vec<Stream>,
    priority: i64,
    /// Deliveries absorbed since the last report.
    absorbed: u32,
}

enum ToWorker<P> {
    Assign(Held<P>),
    Deliver(ProgramId, Stream),
    Stop,
}

enum ToMaster<P> {
    Report {
        worker: usize,
        id: ProgramId,
        streams: Vec<Stream>,
        computed: u64,
        absorbed: u32,
        returned: Option<(P, ProgramState)>,
    },
    Failed(ProgramError),
    Bounce(ProgramId, Stream),
    Final {
        worker: usize,
        held: Vec<Held<P>>,
        metrics: WorkerMetrics,
    },
}

struct Shared<'a> {
    config: &'a RuntimeConfig,
    table: &'a RouteTable,
    transport: Transport,
    ledgers: Vec<AtomicU64>,
    done: AtomicBool,
    failure: Mutex<Option<RuntimeError>>,
    seq: AtomicU64,
    tokens: Vec<Mutex<Option<Token>>>,
    progress: AtomicU64,
    ledger_zero_with_inflight: AtomicU64,
}

impl Shared<'_> {
    fn fail(&self, error: RuntimeError) {
        let mut slot = self.failure.lock().expect("failure lock");
        if slot.is_none() {
            *slot = Some(error);
        }
        self.done.store(true, Ordering::SeqCst);
    }

    fn done(&self) -> bool {
        self.done.load(Ordering::SeqCst)
    }

    fn remaining(&self) -> u64 {
        self.ledgers.iter().map(|l| l.load(Ordering::SeqCst)).sum()
    }

    fn diagnostic(&self) -> String {
        let mut s = String::new();
        for (p, l) in self.ledgers.iter().enumerate() {
            let _ = writeln!(
                s,
                "  process {p}: remaining {}, sent {}, received {}",
                l.load(Ordering::SeqCst),
                self.transport.sent(p),
                self.transport.received(p)
            );
        }
        s
    }
}

struct Worker<P> {
    process: usize,
    index: usize,
    held: BTreeMap<ProgramId, Held<P>>,
    order: BTreeSet<(i64, Reverse<ProgramId>)>,
    parked: Vec<Held<P>>,
    inbox: Receiver<ToWorker<P>>,
    outbox: Sender<ToMaster<P>>,
    meter: Meter,
    metrics: WorkerMetrics,
    stopped: bool,
}

impl<P: PatchProgram> Worker<P> {
    fn handle(&mut self, msg: ToWorker<P>) {
        match msg {
            ToWorker::Assign(h) => {
                let id = h.program.id();
                self.order.insert((h.priority, Reverse(id)));
                self.held.insert(id, h);
            }
            ToWorker::Deliver(id, s) => match self.held.get_mut(&id) {
                Some(h) => {
                    h.inputs.push(s);
                    h.absorbed += 1;
                    h.state.on_stream();
                }
                None => {
                    let _ = self.outbox.send(ToMaster::Bounce(id, s));
                }
            },
            ToWorker::Stop => {
                self.stopped = true;
                self.order.clear();
                let mut held: Vec<Held<P>> = std::mem::take(&mut self.held).into_values().collect();
                held.append(&mut self.parked);
                self.metrics.wall_ns = match self.meter.mode() {
                    ClockMode::Monotonic => self.meter.since_origin(),
                    ClockMode::Virtual => self.metrics.times.total(),
                };
                let _ = self.outbox.send(ToMaster::Final {
                    worker: self.index,
                    held,
                    metrics: self.metrics,
                });
            }
        }
    }

    /// Drains the mailbox, then runs the highest-priority held program.
    fn step(&mut self, shared: &Shared<'_>, wait: Option<Duration>) -> bool {
        if self.stopped {
            return false;
        }
        let mut progressed = false;
        while let Ok(msg) = self.inbox.try_recv() {
            self.handle(msg);
            progressed = true;
            if self.stopped {
                return true;
            }
        }
        let Some(&(_, Reverse(id))) = self.order.last() else {
            if !progressed {
                let span = self.meter.start();
                if let Some(d) = wait {
                    match self.inbox.recv_timeout(d) {
                        Ok(msg) => {
                            self.handle(msg);
                            progressed = true;
                        }
                        Err(RecvTimeoutError::Disconnected) => self.stopped = true,
                        Err(RecvTimeoutError::Timeout) => {}
                    }
                }
                self.metrics.times.idle += span.finish(1);
            }
            return progressed;
        };
        let mut h = self.held.remove(&id).expect("ordered program is held");
        self.order.remove(&(h.priority, Reverse(id)));
        let before = h.program.remaining_work();
        let inputs = std::mem::take(&mut h.inputs);
        let mut streams = Vec::new();
        let result = run_program_once(&mut h.program, &mut h.state, inputs, |s| streams.push(s));
        let stats = h.program.take_stats();
        let computed = (before - h.program.remaining_work()) as u64;
        shared.ledgers[self.process].fetch_sub(computed, Ordering::SeqCst);
        self.metrics.times += stats.times;
        self.metrics.runs += 1;
        self.metrics.schedule_events += stats.schedule_events;
        self.metrics.kernel_calls += stats.kernel_calls;
        self.metrics.computed += stats.computed;
        let span = self.meter.start();
        match result {
            Err(e) => {
                self.parked.push(h);
                let _ = self.outbox.send(ToMaster::Failed(e));
            }
            Ok(()) => {
                let absorbed = std::mem::take(&mut h.absorbed);
                let returned = if h.state.is_active() {
                    self.order.insert((h.priority, Reverse(id)));
                    self.held.insert(id, h);
                    None
                } else {
                    Some((h.program, h.state))
                };
                let _ = self.outbox.send(ToMaster::Report {
                    worker: self.index,
                    id,
                    streams,
                    computed,
                    absorbed,
                    returned,
                });
            }
        }
        self.metrics.times.comm += span.finish(1);
        true
    }

    fn run_loop(mut self, shared: &Shared<'_>) {
        while !self.stopped {
            if self.step(shared, Some(WORKER_WAIT)) {
                shared.progress.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}

struct Slot<P> {
    /// Present while the program is unbound and parked at the master.
    program: Option<(P, ProgramState)>,
    pending: Vec<Stream>,
    remaining: u64,
    delivers_out: u32,
    priority: i64,
}

struct Master<P> {
    rank: usize,
    slots: BTreeMap<ProgramId, Slot<P>>,
    table: RouteTable,
    loads: Vec<u64>,
    to_workers: Vec<Sender<ToWorker<P>>>,
    inbox: Receiver<ToMaster<P>>,
    stash: VecDeque<ToMaster<P>>,
    safra: SafraNode,
    meter: Meter,
    metrics: MasterMetrics,
    rng: ChaCha8Rng,
    seen: HashSet<u64>,
    streams_sent: u64,
    remote_streams: u64,
    activations: u64,
    dropped: u64,
    stopping: bool,
    finals_pending: usize,
    worker_metrics: Vec<WorkerMetrics>,
}

impl<P: PatchProgram> Master<P> {
    fn deliver(&mut self, stream: Stream, shared: &Shared<'_>) -> Result<(), RuntimeError> {
        if !self.seen.insert(stream.seq) {
            return Err(RuntimeError::DuplicateStream(stream.seq));
        }
        self.deliver_to_slot(stream, shared)
    }

    fn deliver_to_slot(&mut self, stream: Stream, shared: &Shared<'_>) -> Result<(), RuntimeError> {
        let id = stream.tgt;
        let entry = self
            .table
            .lookup(id)
            .filter(|e| e.process == self.rank)
            .ok_or(RuntimeError::UnknownProgram(id))?;
        let slot = self.slots.get_mut(&id).expect("local program has a slot");
        if self.stopping {
            slot.pending.push(stream);
            return Ok(());
        }
        match entry.worker {
            Some(w) => {
                slot.delivers_out += 1;
                let _ = self.to_workers[w].send(ToWorker::Deliver(id, stream));
            }
            None => {
                slot.pending.push(stream);
                self.activate(id, shared);
            }
        }
        Ok(())
    }

    /// Wakes an unbound program and binds it to the lightest worker.
    fn activate(&mut self, id: ProgramId, _shared: &Shared<'_>) {
        let slot = self.slots.get_mut(&id).expect("local program has a slot");
        let (program, mut state) = slot.program.take().expect("unbound program is parked");
        if !state.is_active() {
            state.on_stream();
            self.activations += 1;
        }
        let w = lightest_worker(&self.loads);
        self.loads[w] += slot.remaining;
        self.table.bind(id, w);
        let held = Held {
            program,
            state,
            inputs: std::mem::take(&mut slot.pending),
            priority: slot.priority,
            absorbed: 0,
        };
        let _ = self.to_workers[w].send(ToWorker::Assign(held));
    }

    fn send(&mut self, mut stream: Stream, shared: &Shared<'_>) -> Result<(), RuntimeError> {
        let span = self.meter.start();
        stream.seq = shared.seq.fetch_add(1, Ordering::SeqCst) + 1;
        self.streams_sent += 1;
        #[cfg(feature = "fault-injection")]
        if shared.config.drop_stream == Some(stream.seq) {
            self.dropped += 1;
            return Ok(());
        }
        let home = shared.table.route(&stream)?;
        if home == self.rank {
            self.metrics.times.comm += span.finish(1);
            return self.deliver(stream, shared);
        }
        let bytes = stream.encode();
        let delay = match shared.config.max_latency {
            0 => 0,
            max => self.rng.gen_range(0..=max),
        };
        let len = bytes.len() as u64;
        shared.transport.send(self.rank, home, bytes, delay);
        self.safra.on_send();
        self.remote_streams += 1;
        self.metrics.times.comm += span.finish(len);
        Ok(())
    }

    fn handle(&mut self, msg: ToMaster<P>, shared: &Shared<'_>) -> Result<(), RuntimeError> {
        match msg {
            ToMaster::Report {
                worker,
                id,
                streams,
                computed,
                absorbed,
                returned,
            } => {
                let slot = self
                    .slots
                    .get_mut(&id)
                    .expect("reported program has a slot");
                slot.remaining -= computed;
                slot.delivers_out -= absorbed;
                self.loads[worker] = self.loads[worker].saturating_sub(computed);
                for s in streams {
                    self.send(s, shared)?;
                }
                if let Some(parked) = returned {
                    let slot = self
                        .slots
                        .get_mut(&id)
                        .expect("reported program has a slot");
                    self.loads[worker] = self.loads[worker].saturating_sub(slot.remaining);
                    slot.program = Some(parked);
                    self.table.unbind(id);
                    if !slot.pending.is_empty() && !self.stopping {
                        self.activate(id, shared);
                    }
                }
            }
            ToMaster::Failed(e) => return Err(e.into()),
            ToMaster::Bounce(id, stream) => {
                let slot = self.slots.get_mut(&id).expect("bounced program has a slot");
                slot.delivers_out -= 1;
                self.deliver_to_slot(stream, shared)?;
            }
            ToMaster::Final {
                worker,
                held,
                metrics,
            } => {
                self.worker_metrics[worker] = metrics;
                self.finals_pending -= 1;
                for h in held {
                    let id = h.program.id();
                    let slot = self.slots.get_mut(&id).expect("held program has a slot");
                    slot.delivers_out -= h.absorbed;
                    slot.pending.extend(h.inputs);
                    slot.program = Some((h.program, h.state));
                    self.table.unbind(id);
                }
            }
        }
        Ok(())
    }

    fn passive(&self) -> bool {
        self.stash.is_empty()
            && self
                .slots
                .values()
                .all(|s| s.program.is_some() && s.pending.is_empty() && s.delivers_out == 0)
    }

    fn finished(&self) -> bool {
        self.stopping && self.finals_pending == 0
    }

    fn step(&mut self, shared: &Shared<'_>) -> Result<bool, RuntimeError> {
        let mut progressed = false;
        while let Some(msg) = self
            .stash
            .pop_front()
            .or_else(|| self.inbox.try_recv().ok())
        {
            progressed = true;
            self.handle(msg, shared)?;
        }
        if shared.done() {
            if !self.stopping {
                self.stopping = true;
                for tx in &self.to_workers {
                    let _ = tx.send(ToWorker::Stop);
                }
                progressed = true;
            }
            return Ok(progressed);
        }
        let span = self.meter.start();
        let arrived = shared.transport.poll(self.rank);
        self.metrics.polls += 1;
        let count = arrived.len() as u64;
        for (_, bytes) in arrived {
            let stream = Stream::decode(&bytes)?;
            self.safra.on_receive();
            self.deliver(stream, shared)?;
        }
        if count > 0 {
            self.metrics.times.comm += span.finish(count);
            progressed = true;
        }
        Ok(self.detect_termination(shared)? || progressed)
    }

    fn detect_termination(&mut self, shared: &Shared<'_>) -> Result<bool, RuntimeError> {
        match shared.config.termination {
            TerminationMode::Workload => {
                if self.rank == 0 && shared.remaining() == 0 {
                    if shared.transport.balanced() {
                        shared.done.store(true, Ordering::SeqCst);
                        return Ok(true);
                    }
                    shared
                        .ledger_zero_with_inflight
                        .fetch_add(1, Ordering::SeqCst);
                }
                Ok(false)
            }
            TerminationMode::Consensus => {
                if let Some(t) = shared.tokens[self.rank].lock().expect("token lock").take() {
                    self.safra.receive_token(t);
                }
                match self.safra.step(self.passive()) {
                    SafraAction::Hold => Ok(false),
                    SafraAction::Forward { to, token } => {
                        *shared.tokens[to].lock().expect("token lock") = Some(token);
                        Ok(true)
                    }
                    SafraAction::Terminate => {
                        let remaining = shared.remaining();
                        if remaining > 0 {
                            return Err(RuntimeError::PrematureTermination { remaining });
                        }
                        shared.done.store(true, Ordering::SeqCst);
                        Ok(true)
                    }
                }
            }
        }
    }

    fn run_loop(mut self, shared: &Shared<'_>) -> Self {
        let watchdog = self.rank == 0;
        let mut idle_ticks = 0u64;
        let mut last = shared.progress.load(Ordering::SeqCst);
        loop {
            let progressed = match self.step(shared) {
                Ok(p) => p,
                Err(e) => {
                    shared.fail(e);
                    true
                }
            };
            if self.finished() {
                break;
            }
            if progressed {
                shared.progress.fetch_add(1, Ordering::SeqCst);
                continue;
            }
            let span = self.meter.start();
            match self.inbox.recv_timeout(MASTER_WAIT) {
                Ok(msg) => self.stash.push_back(msg),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    shared.fail(RuntimeError::Panicked);
                    break;
                }
            }
            self.metrics.times.idle += span.finish(1);
            if watchdog && !self.stopping {
                let now = shared.progress.load(Ordering::SeqCst);
                if now == last {
                    idle_ticks += 1;
                    if idle_ticks >= shared.config.watchdog_ticks {
                        shared.fail(RuntimeError::Deadlock {
                            idle_ticks,
                            remaining: shared.remaining(),
                            diagnostic: shared.diagnostic(),
                        });
                    }
                } else {
                    last = now;
                    idle_ticks = 0;
                }
            }
        }
        self
    }
}

pub(super) fn run<P: PatchProgram>(
    programs: Vec<P>,
    process_of_patch: &[usize],
    priority: &dyn Fn(ProgramId) -> i64,
    config: &RuntimeConfig,
) -> Result<RunOutcome<P>, RunFailure<P>> {
    let fail_early = |error, mut programs: Vec<P>| {
        programs.sort_by_key(|p| p.id());
        Err(RunFailure {
            error,
            partial: RunOutcome {
                programs,
                metrics: RuntimeMetrics::default(),
                termination: TerminationReport::default(),
            },
        })
    };
    if let Err(e) = config.validate() {
        return fail_early(e, programs);
    }
    if let Some(&p) = process_of_patch.iter().find(|&&p| p >= config.processes) {
        let e = RuntimeError::Config(format!(
            "patch placed on process {p}, but only {} processes exist",
            config.processes
        ));
        return fail_early(e, programs);
    }
    let table = match RouteTable::new(programs.iter().map(|p| p.id()), process_of_patch) {
        Ok(t) => t,
        Err(e) => return fail_early(e, programs),
    };

    let procs = config.processes;
    let nw = config.workers;
    let shared = Shared {
        config,
        table: &table,
        transport: Transport::new(procs),
        ledgers: (0..procs).map(|_| AtomicU64::new(0)).collect(),
        done: AtomicBool::new(false),
        failure: Mutex::new(None),
        seq: AtomicU64::new(0),
        tokens: (0..procs).map(|_| Mutex::new(None)).collect(),
        progress: AtomicU64::new(0),
        ledger_zero_with_inflight: AtomicU64::new(0),
    };

    let mut by_process: Vec<Vec<P>> = (0..procs).map(|_| Vec::new()).collect();
    for p in programs {
        let home = table.lookup(p.id()).expect("routed").process;
        by_process[home].push(p);
    }

    let mut masters = Vec::with_capacity(procs);
    let mut workers = Vec::with_capacity(procs * nw);
    for (rank, mut local) in by_process.into_iter().enumerate() {
        let (to_master, inbox) = unbounded();
        let mut to_workers = Vec::with_capacity(nw);
        for index in 0..nw {
            let (tx, rx) = unbounded();
            to_workers.push(tx);
            workers.push(Worker {
                process: rank,
                index,
                held: BTreeMap::new(),
                order: BTreeSet::new(),
                parked: Vec::new(),
                inbox: rx,
                outbox: to_master.clone(),
                meter: Meter::new(config.clock),
                metrics: WorkerMetrics::default(),
                stopped: false,
            });
        }
        local.sort_by_key(|p| (p.id().task, p.id().patch));
        let mut master = Master {
            rank,
            slots: BTreeMap::new(),
            table: table.clone(),
            loads: vec![0; nw],
            to_workers,
            inbox,
            stash: VecDeque::new(),
            safra: SafraNode::new(rank, procs),
            meter: Meter::new(config.clock),
            metrics: MasterMetrics::default(),
            rng: ChaCha8Rng::seed_from_u64(
                config.seed ^ (rank as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ),
            seen: HashSet::new(),
            streams_sent: 0,
            remote_streams: 0,
            activations: 0,
            dropped: 0,
            stopping: false,
            finals_pending: nw,
            worker_metrics: vec![WorkerMetrics::default(); nw],
        };
        let mut ledger = 0u64;
        for (k, program) in local.into_iter().enumerate() {
            let id = program.id();
            let remaining = program.remaining_work() as u64;
            ledger += remaining;
            let w = k % nw;
            master.loads[w] += remaining;
            master.table.bind(id, w);
            let prio = priority(id);
            master.slots.insert(
                id,
                Slot {
                    program: None,
                    pending: Vec::new(),
                    remaining,
                    delivers_out: 0,
                    priority: prio,
                },
            );
            let _ = master.to_workers[w].send(ToWorker::Assign(Held {
                program,
                state: ProgramState::default(),
                inputs: Vec::new(),
                priority: prio,
                absorbed: 0,
            }));
        }
        shared.ledgers[rank].store(ledger, Ordering::SeqCst);
        masters.push(master);
    }

    let masters = match config.execution {
        ExecutionMode::Deterministic => run_deterministic(masters, workers, &shared),
        ExecutionMode::Threaded => run_threaded(masters, workers, &shared),
    };
    finish(masters, &shared)
}

fn run_deterministic<P: PatchProgram>(
    mut masters: Vec<Master<P>>,
    mut workers: Vec<Worker<P>>,
    shared: &Shared<'_>,
) -> Vec<Master<P>> {
    let mut idle_rounds = 0u64;
    loop {
        let mut progressed = false;
        for m in masters.iter_mut() {
            match m.step(shared) {
                Ok(p) => progressed |= p,
                Err(e) => {
                    shared.fail(e);
                    progressed = true;
                }
            }
        }
        for w in workers.iter_mut() {
            progressed |= w.step(shared, None);
        }
        if masters.iter().all(|m| m.finished()) {
            break;
        }
        if progressed {
            idle_rounds = 0;
            continue;
        }
        idle_rounds += 1;
        for m in masters.iter_mut() {
            m.metrics.times.idle += m.meter.start().finish(1);
        }
        if idle_rounds >= shared.config.watchdog_ticks && !shared.done() {
            shared.fail(RuntimeError::Deadlock {
                idle_ticks: idle_rounds,
                remaining: shared.remaining(),
                diagnostic: shared.diagnostic(),
            });
        }
    }
    masters
}

fn run_threaded<P: PatchProgram>(
    masters: Vec<Master<P>>,
    workers: Vec<Worker<P>>,
    shared: &Shared<'_>,
) -> Vec<Master<P>> {
    std::thread::scope(|scope| {
        for w in workers {
            scope.spawn(move || w.run_loop(shared));
        }
        let handles: Vec<_> = masters
            .into_iter()
            .map(|m| scope.spawn(move || m.run_loop(shared)))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            match h.join() {
                Ok(m) => out.push(m),
                Err(_) => shared.fail(RuntimeError::Panicked),
            }
        }
        out
    })
}

fn finish<P: PatchProgram>(
    masters: Vec<Master<P>>,
    shared: &Shared<'_>,
) -> Result<RunOutcome<P>, RunFailure<P>> {
    let mut metrics = RuntimeMetrics::default();
    let mut programs = Vec::new();
    let mut consensus_condition = true;
    let mut counter_sum = 0i64;
    let mut dropped = 0;
    let mut token_waves = 0;
    for m in masters {
        counter_sum += m.safra.counter();
        dropped += m.dropped;
        if m.rank == 0 {
            token_waves = m.safra.waves();
        }
        metrics.streams_sent += m.streams_sent;
        metrics.remote_streams += m.remote_streams;
        metrics.activations += m.activations;
        let mut master_metrics = m.metrics;
        master_metrics.wall_ns = match m.meter.mode() {
            ClockMode::Monotonic => m.meter.since_origin(),
            ClockMode::Virtual => master_metrics.times.total(),
        };
        metrics.per_master.push(master_metrics);
        for w in &m.worker_metrics {
            metrics.schedule_events += w.schedule_events;
            metrics.kernel_calls += w.kernel_calls;
        }
        metrics.per_worker.extend(m.worker_metrics.iter().copied());
        for (_, slot) in m.slots {
            match slot.program {
                Some((program, _)) => {
                    consensus_condition &= slot.pending.is_empty() && program.vote_to_halt();
                    programs.push(program);
                }
                None => consensus_condition = false,
            }
        }
    }
    programs.sort_by_key(|p| p.id());
    metrics.bytes_sent = shared.transport.bytes_sent();
    let termination = TerminationReport {
        mode: shared.config.termination,
        workload_condition: shared.remaining() == 0 && shared.transport.balanced(),
        consensus_condition: consensus_condition && counter_sum == 0,
        token_waves,
        ledger_zero_with_inflight: shared.ledger_zero_with_inflight.load(Ordering::SeqCst),
        streams_sent: shared.transport.total_sent(),
        streams_received: shared.transport.total_received(),
        dropped_streams: dropped,
    };
    let outcome = RunOutcome {
        programs,
        metrics,
        termination,
    };
    match shared.failure.lock().expect("failure lock").take() {
        Some(error) => Err(RunFailure {
            error,
            partial: outcome,
        }),
        None => Ok(outcome),
    }
}
