//! Scheduling policies, run driving, and bounded-exhaustive exploration.

pub mod explore;
pub mod policy;
pub mod run;

pub use explore::{explore, CanonicalDigest, ExplorationReport};
pub use policy::SchedulePolicy;
pub use run::{run, run_observed, RunOutcome, RunStatus, TraceStep};
