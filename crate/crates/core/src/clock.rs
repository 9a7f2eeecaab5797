//! Time accounting for runtime metrics.
//!
//! [`ClockMode::Monotonic`] measures nanoseconds. [`ClockMode::Virtual`]
//! charges each measured section a caller-supplied number of operation units
//! instead, which makes metrics reproducible in deterministic runs.

use std::ops::AddAssign;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Monotonic,
    Virtual,
}

#[derive(Clone, Copy, Debug)]
pub struct Meter {
    mode: ClockMode,
    origin: Instant,
}

impl Meter {
    pub fn new(mode: ClockMode) -> Self {
        Self {
            mode,
            origin: Instant::now(),
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn start(&self) -> Span {
        Span {
            mode: self.mode,
            at: Instant::now(),
        }
    }

    /// Elapsed since the meter was created; always 0 in virtual mode.
    pub fn since_origin(&self) -> u64 {
        match self.mode {
            ClockMode::Monotonic => self.origin.elapsed().as_nanos() as u64,
            ClockMode::Virtual => 0,
        }
    }
}

impl Default for Meter {
    fn default() -> Self {
        Self::new(ClockMode::Monotonic)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Span {
    mode: ClockMode,
    at: Instant,
}

impl Span {
    /// Cost of the section: nanoseconds (at least 1 when `units > 0`) or `units`.
    pub fn finish(self, units: u64) -> u64 {
        match self.mode {
            ClockMode::Monotonic => {
                let ns = self.at.elapsed().as_nanos() as u64;
                if units > 0 {
                    ns.max(1)
                } else {
                    ns
                }
            }
            ClockMode::Virtual => units,
        }
    }
}

/// Accumulated time per overhead category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTimes {
    #[serde(rename = "graph_op_ns")]
    pub graph_op: u64,
    #[serde(rename = "pack_unpack_ns")]
    pub pack_unpack: u64,
    #[serde(rename = "kernel_ns")]
    pub kernel: u64,
    #[serde(rename = "comm_ns")]
    pub comm: u64,
    #[serde(rename = "idle_ns")]
    pub idle: u64,
}

impl CategoryTimes {
    pub fn total(&self) -> u64 {
        self.graph_op + self.pack_unpack + self.kernel + self.comm + self.idle
    }
}

impl AddAssign for CategoryTimes {
    fn add_assign(&mut self, rhs: Self) {
        self.graph_op += rhs.graph_op;
        self.pack_unpack += rhs.pack_unpack;
        self.kernel += rhs.kernel;
        self.comm += rhs.comm;
        self.idle += rhs.idle;
    }
}
