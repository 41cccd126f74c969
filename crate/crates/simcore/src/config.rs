use crate::SimError;

/// Core identifier. Cores are numbered `0..islands * cores_per_island`.
pub type CoreId = usize;

/// Machine shape: `islands` groups of `cores_per_island` cores each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub islands: usize,
    pub cores_per_island: usize,
}

impl Topology {
    pub fn new(islands: usize, cores_per_island: usize) -> Result<Self, SimError> {
        if islands == 0 || cores_per_island == 0 {
            return Err(SimError::Topology(format!(
                "need at least one island and one core per island, got {islands}x{cores_per_island}"
            )));
        }
        Ok(Topology { islands, cores_per_island })
    }

    pub fn total(&self) -> usize {
        self.islands * self.cores_per_island
    }

    pub fn island_of(&self, core: CoreId) -> usize {
        core / self.cores_per_island
    }

    /// Cores belonging to `island`, in id order.
    pub fn cores_of(&self, island: usize) -> std::ops::Range<CoreId> {
        let lo = island * self.cores_per_island;
        lo..lo + self.cores_per_island
    }

    pub fn check(&self, core: CoreId) -> Result<(), SimError> {
        if core < self.total() {
            Ok(())
        } else {
            Err(SimError::InvalidCore { core, total: self.total() })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedMode {
    /// Every runnable process runs once per step, in id order; delivery delay is one step.
    RoundRobin,
    /// Seeded random order with occasional skips and delivery delay drawn from `[1, max_delay]`.
    RandomFair,
}

/// Cost parameters. They feed metrics only and never steer control flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Costs {
    /// Maximum message size in abstract units.
    pub mms: u32,
    /// Cost of one message transfer.
    pub c_m: f64,
    /// Cost of one DMA transfer.
    pub c_d: f64,
}

impl Default for Costs {
    fn default() -> Self {
        Costs { mms: 2, c_m: 1.0, c_d: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogLevel {
    /// Nothing recorded.
    Off,
    /// Only `note` events emitted by processes (used by audits).
    Notes,
    /// Every send, receive, DMA, cell and note event.
    Full,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub topology: Topology,
    pub seed: u64,
    pub mode: SchedMode,
    pub max_steps: u64,
    /// Upper bound D of the random delivery delay.
    pub max_delay: u64,
    /// Bytes moved by the DMA engine per step.
    pub dma_burst: usize,
    /// Local memory per core in bytes.
    pub mem_bytes: usize,
    /// Optional mailbox bound; exceeding it only bumps an overflow counter.
    pub mailbox_bound: Option<usize>,
    pub costs: Costs,
    pub log: LogLevel,
}

impl SimConfig {
    pub fn new(topology: Topology, seed: u64) -> Self {
        SimConfig {
            topology,
            seed,
            mode: SchedMode::RandomFair,
            max_steps: 5_000_000,
            max_delay: 3,
            dma_burst: 64,
            mem_bytes: 64 * 1024,
            mailbox_bound: None,
            costs: Costs::default(),
            log: LogLevel::Full,
        }
    }

    pub fn round_robin(mut self) -> Self {
        self.mode = SchedMode::RoundRobin;
        self
    }

    pub fn with_log(mut self, log: LogLevel) -> Self {
        self.log = log;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }
}
