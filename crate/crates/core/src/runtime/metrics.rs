use serde::{Deserialize, Serialize};

use crate::clock::CategoryTimes;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerMetrics {
    #[serde(flatten)]
    pub times: CategoryTimes,
    pub wall_ns: u64,
    /// Program activations executed by this worker.
    pub runs: u64,
    pub schedule_events: u64,
    pub kernel_calls: u64,
    pub computed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterMetrics {
    #[serde(flatten)]
    pub times: CategoryTimes,
    pub wall_ns: u64,
    pub polls: u64,
}

/// Counters of one or more runtime runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeMetrics {
    pub per_worker: Vec<WorkerMetrics>,
    pub per_master: Vec<MasterMetrics>,
    /// Every stream handed to a master, local or remote.
    pub streams_sent: u64,
    /// Streams that crossed a process boundary.
    pub remote_streams: u64,
    pub bytes_sent: u64,
    /// Inactive programs woken up by an arriving stream.
    pub activations: u64,
    pub schedule_events: u64,
    pub kernel_calls: u64,
    pub iterations: u64,
}

impl RuntimeMetrics {
    /// Adds the counters of another run, worker by worker.
    pub fn accumulate(&mut self, other: &RuntimeMetrics) {
        merge(&mut self.per_worker, &other.per_worker, |a, b| {
            a.times += b.times;
            a.wall_ns += b.wall_ns;
            a.runs += b.runs;
            a.schedule_events += b.schedule_events;
            a.kernel_calls += b.kernel_calls;
            a.computed += b.computed;
        });
        merge(&mut self.per_master, &other.per_master, |a, b| {
            a.times += b.times;
            a.wall_ns += b.wall_ns;
            a.polls += b.polls;
        });
        self.streams_sent += other.streams_sent;
        self.remote_streams += other.remote_streams;
        self.bytes_sent += other.bytes_sent;
        self.activations += other.activations;
        self.schedule_events += other.schedule_events;
        self.kernel_calls += other.kernel_calls;
        self.iterations += other.iterations;
    }

    pub fn total_times(&self) -> CategoryTimes {
        let mut t = CategoryTimes::default();
        for w in &self.per_worker {
            t += w.times;
        }
        for m in &self.per_master {
            t += m.times;
        }
        t
    }
}

fn merge<T: Default + Clone>(into: &mut Vec<T>, from: &[T], add: impl Fn(&mut T, &T)) {
    if into.len() < from.len() {
        into.resize(from.len(), T::default());
    }
    for (a, b) in into.iter_mut().zip(from) {
        add(a, b);
    }
}
