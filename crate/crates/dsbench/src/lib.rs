//! Workload driver for the distributed data structures: scenario construction, client
//! scripts, event-log audits and scalability metrics.

pub mod audit;
pub mod metrics;
pub mod scenario;
pub mod workload;

pub use metrics::{append_csv, measure, scalability_factor, Metrics};
pub use scenario::{check_history, placement, run, Algo, Call, Family, Outcome, Setup};
