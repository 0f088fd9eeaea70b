//! State command failures.

use thiserror::Error;

/// A violated command precondition or state consistency clause. These are
/// hard errors when raised directly; the runtime treats them as enabling
/// conditions where an inference rule uses them that way.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("precondition of {command} violated: {detail}")]
    Precondition {
        command: &'static str,
        detail: String,
    },
    #[error("state consistency clause {clause} violated: {detail}")]
    Consistency { clause: u8, detail: String },
}

impl StateError {
    pub fn pre(command: &'static str, detail: impl Into<String>) -> StateError {
        StateError::Precondition {
            command,
            detail: detail.into(),
        }
    }
}

pub type StateResult<T> = Result<T, StateError>;
