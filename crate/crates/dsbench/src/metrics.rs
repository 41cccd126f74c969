use std::fs::OpenOptions;
use std::path::Path;

use anyhow::{Context, Result};

use crate::scenario::{Outcome, Setup};

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub algo: String,
    pub m: usize,
    pub c: usize,
    pub n: usize,
    pub w: u64,
    pub seed: u64,
    /// Envelopes delivered anywhere in the machine.
    pub total_msgs: u64,
    pub max_server_msgs: u64,
    /// Completed operations per scheduler step.
    pub throughput: f64,
    pub sf: f64,
    /// Envelopes delivered to each server, in placement order.
    pub server_msgs: Vec<u64>,
    pub steps: u64,
    pub max_mailbox_depth: usize,
}

pub const CSV_HEADER: [&str; 10] = ["algo", "m", "c", "N", "W", "seed", "total_msgs", "max_server_msgs", "throughput", "sf"];

/// Per-server scalability factors `msg_s / ops`; zero when no operation completed.
pub fn server_factors(server_msgs: &[u64], ops: usize) -> Vec<f64> {
    server_msgs.iter().map(|&m| if ops == 0 { 0.0 } else { m as f64 / ops as f64 }).collect()
}

/// Maximum per-server factor.
pub fn scalability_factor(server_msgs: &[u64], ops: usize) -> f64 {
    server_factors(server_msgs, ops).into_iter().fold(0.0, f64::max)
}

pub fn measure(setup: &Setup, out: &Outcome) -> Metrics {
    let st = &out.report.stats;
    let server_msgs: Vec<u64> = out.servers.iter().map(|&s| st.delivered.get(s).copied().unwrap_or(0)).collect();
    let steps = out.report.steps;
    Metrics {
        algo: setup.algo.name(),
        m: setup.islands,
        c: setup.cores,
        n: out.ops,
        w: setup.work,
        seed: setup.seed,
        total_msgs: st.delivered.iter().sum(),
        max_server_msgs: server_msgs.iter().copied().max().unwrap_or(0),
        throughput: if steps == 0 { 0.0 } else { out.ops as f64 / steps as f64 },
        sf: scalability_factor(&server_msgs, out.ops),
        server_msgs,
        steps,
        max_mailbox_depth: st.max_mailbox_depth,
    }
}

impl Metrics {
    pub fn record(&self) -> [String; 10] {
        [
            self.algo.clone(),
            self.m.to_string(),
            self.c.to_string(),
            self.n.to_string(),
            self.w.to_string(),
            self.seed.to_string(),
            self.total_msgs.to_string(),
            self.max_server_msgs.to_string(),
            format!("{:.6}", self.throughput),
            format!("{:.6}", self.sf),
        ]
    }
}

/// Appends rows to `path`, writing the header first when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[Metrics]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::Writer::from_writer(f);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
