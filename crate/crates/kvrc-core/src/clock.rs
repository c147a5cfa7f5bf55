//! Time source abstraction.
//!
//! The core is freestanding and cannot read a wall clock itself; callers
//! inject one. The companion crate provides a monotonic implementation.

/// A monotonic clock reporting seconds from an arbitrary fixed origin.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Clock that always reads zero, for callers that do not need latency.
pub struct NullClock;

impl Clock for NullClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}
