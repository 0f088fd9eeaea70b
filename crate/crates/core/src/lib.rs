//! Reference interpreter and schedule explorer for the SCOOP concurrent
//! object-oriented programming model.
//!
//! The pipeline: [`frontend`] turns source text into a lowered program
//! ([`frontend::ir::ProgramIR`]), [`typing`] answers the static judgments the
//! runtime consumes, [`state`] holds the persistent runtime state (regions,
//! heap, store), [`runtime`] rewrites configurations one inference rule at a
//! time, and [`scheduler`] drives runs and bounded-exhaustive exploration.

pub mod frontend;
pub mod runtime;
pub mod scheduler;
pub mod state;
pub mod typing;

pub use frontend::ir::ProgramIR;
pub use runtime::{Configuration, Engine};
pub use scheduler::{explore, run, ExplorationReport, RunOutcome, RunStatus, SchedulePolicy};
