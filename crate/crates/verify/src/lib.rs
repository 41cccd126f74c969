//! Operation histories and a brute-force linearizability checker.
//!
//! A [`History`] is a totally ordered list of invocation and response events.
//! [`check_linearizable`] looks for a sequential order that extends the real-time
//! order of the operations and replays on a [`Spec`]. The search is a depth-first
//! walk over (linearized set, abstract state) pairs with memoization of dead ends;
//! it is exponential, so histories above a cap are refused.

mod check;
pub mod gen;
mod history;
pub mod oracle;
mod spec;

pub use check::{check_linearizable, check_with_cap, find_linearization, replay, CheckResult, DEFAULT_CAP};
pub use history::{History, HistoryEvent, Kind, Operation, Val};
pub use spec::{Capacity, DequeSpec, QueueSpec, RegisterSpec, SetSpec, Spec, StackSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("malformed history: {0}")]
    Malformed(String),
    #[error("history has {ops} operations, above the checker cap of {cap}")]
    TooLarge { ops: usize, cap: usize },
    #[error("operation {op:?} is not part of the {spec} specification")]
    UnknownOp { spec: &'static str, op: String },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Checks a history against a specification chosen by name
/// (`stack`, `queue`, `deque`, `set`, `register`) with unbounded capacity.
pub fn check_named(history: &History, spec: &str, cap: usize) -> Result<CheckResult, VerifyError> {
    match spec {
        "stack" => check_with_cap(history, &StackSpec::default(), cap),
        "queue" => check_with_cap(history, &QueueSpec::default(), cap),
        "deque" => check_with_cap(history, &DequeSpec::default(), cap),
        "set" => check_with_cap(history, &SetSpec::default(), cap),
        "register" => check_with_cap(history, &RegisterSpec, cap),
        _ => Err(VerifyError::Parse(format!("unknown specification {spec:?}"))),
    }
}
