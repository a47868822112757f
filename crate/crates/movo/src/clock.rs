//! Virtual simulation clock.
//!
//! All timestamps in the system are milliseconds on this clock, never wall
//! time. A 60-second scenario therefore completes in however long the actual
//! computation takes, and two runs with the same inputs see identical
//! timestamps. Handles are cheap to clone and share one underlying counter.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Shared millisecond clock. Cloning yields a handle to the same instant.
#[derive(Clone, Debug, Default)]
pub struct SimClock {
    now_ms: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(ms: u64) -> Self {
        Self {
            now_ms: Arc::new(AtomicU64::new(ms)),
        }
    }

    /// Current virtual time in milliseconds.
    pub fn now_ms(&self) -> u64 {
        self.now_ms.load(Ordering::Acquire)
    }

    /// Move the clock forward by `ms`.
    pub fn advance_ms(&self, ms: u64) {
        self.now_ms.fetch_add(ms, Ordering::AcqRel);
    }

    /// Move the clock forward to an absolute time. The clock never runs
    /// backwards; an earlier target is ignored.
    pub fn advance_to_ms(&self, target_ms: u64) {
        self.now_ms.fetch_max(target_ms, Ordering::AcqRel);
    }
}
