//! Execution: configurations, statements, channels, and one transition per
//! inference rule, plus the initial configuration and termination.

pub mod builtins;
pub mod config;
pub mod invariants;
pub mod rules;
pub mod statement;

pub use config::Configuration;
pub use rules::{BlockReason, Engine, RuleId, RuleToggles, StepResult, StuckError};
pub use statement::{Channel, Operand, Statement};
