//! Experiment harness around `sovi-core`: plain-text experiment configs,
//! dataset CSV ingestion, run orchestration with trace/summary CSV export and
//! a JSON run manifest, plus a registered invariant check suite.

pub mod checks;
pub mod config;
pub mod dataio;
pub mod experiment;
pub mod report;

use std::time::Instant;

/// Millisecond wallclock backed by a monotonic instant.
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl sovi_core::optimizer::Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Process exit codes used by the binary.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG_ERROR: i32 = 1;
    pub const RUNTIME_ABORT: i32 = 2;
    pub const CHECK_FAILURE: i32 = 3;
}
