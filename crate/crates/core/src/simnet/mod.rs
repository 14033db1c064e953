//! Deterministic discrete-event simulation: scheduler, transport delays, and
//! metrics.

mod delay;
mod engine;
mod metrics;

pub use delay::{DelayModel, EndpointClass, Latency, LinkOverride};
pub use engine::{Actor, Context, Endpoint, LogEntry, Payload, RunOutcome, Simulation};
pub use metrics::{counter, Metrics, Milestone, SEGMENTS};

/// Simulated time in nanoseconds.
pub type Time = u64;

pub const MICROS: Time = 1_000;
pub const MILLIS: Time = 1_000_000;
pub const SECONDS: Time = 1_000_000_000;

/// Converts milliseconds to simulated nanoseconds, rounding to the nearest.
pub fn ms(v: f64) -> Time {
    (v * MILLIS as f64).round().max(0.0) as Time
}
