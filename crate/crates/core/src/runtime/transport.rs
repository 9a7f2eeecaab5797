use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Debug)]
struct Envelope {
    bytes: Vec<u8>,
    ready_at: u64,
}

/// Per-process inboxes of serialized streams.
///
/// Every `(source, target)` pair is a FIFO channel. Latency is measured in
/// polls of the target process: a message sent with delay `d` becomes visible
/// `d` polls later, but never before an earlier message on its channel.
#[derive(Debug)]
pub struct Transport {
    /// `inbox[target][source]`.
    inbox: Vec<Vec<Mutex<VecDeque<Envelope>>>>,
    polls: Vec<AtomicU64>,
    sent: Vec<AtomicU64>,
    received: Vec<AtomicU64>,
    bytes: AtomicU64,
}

impl Transport {
    pub fn new(processes: usize) -> Self {
        Self {
            inbox: (0..processes)
                .map(|_| {
                    (0..processes)
                        .map(|_| Mutex::new(VecDeque::new()))
                        .collect()
                })
                .collect(),
            polls: (0..processes).map(|_| AtomicU64::new(0)).collect(),
            sent: (0..processes).map(|_| AtomicU64::new(0)).collect(),
            received: (0..processes).map(|_| AtomicU64::new(0)).collect(),
            bytes: AtomicU64::new(0),
        }
    }

    pub fn processes(&self) -> usize {
        self.polls.len()
    }

    pub fn send(&self, from: usize, to: usize, bytes: Vec<u8>, delay: u64) {
        self.sent[from].fetch_add(1, Ordering::SeqCst);
        self.bytes.fetch_add(bytes.len() as u64, Ordering::SeqCst);
        let mut q = self.inbox[to][from].lock().expect("transport lock");
        let earliest = self.polls[to].load(Ordering::SeqCst) + delay;
        let ready_at = q.back().map_or(earliest, |e| e.ready_at.max(earliest));
        q.push_back(Envelope { bytes, ready_at });
    }

    /// Advances the poll clock of `process` and removes every message that is
    /// due, as `(source, bytes)` in source order.
    pub fn poll(&self, process: usize) -> Vec<(usize, Vec<u8>)> {
        let now = self.polls[process].fetch_add(1, Ordering::SeqCst) + 1;
        let mut out = Vec::new();
        for (src, channel) in self.inbox[process].iter().enumerate() {
            let mut q = channel.lock().expect("transport lock");
            while q.front().is_some_and(|e| e.ready_at <= now) {
                out.push((src, q.pop_front().expect("front exists").bytes));
            }
        }
        self.received[process].fetch_add(out.len() as u64, Ordering::SeqCst);
        out
    }

    pub fn sent(&self, process: usize) -> u64 {
        self.sent[process].load(Ordering::SeqCst)
    }

    pub fn received(&self, process: usize) -> u64 {
        self.received[process].load(Ordering::SeqCst)
    }

    pub fn total_sent(&self) -> u64 {
        (0..self.processes()).map(|p| self.sent(p)).sum()
    }

    pub fn total_received(&self) -> u64 {
        (0..self.processes()).map(|p| self.received(p)).sum()
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes.load(Ordering::SeqCst)
    }

    /// No message is in flight.
    pub fn balanced(&self) -> bool {
        self.total_sent() == self.total_received()
    }
}
