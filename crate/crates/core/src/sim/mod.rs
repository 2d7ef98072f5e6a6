//! Discrete-event simulator for multi-tier services that writes per-node
//! activity logs plus the ground truth needed to score a correlator.

mod config;
mod disturb;
mod generate;
mod scenario;
mod truth;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    DisturbanceConfig, Fault, RequestClass, SimConfig, SizeRange, TierSpec, Timing, TopologyConfig, WorkerModel,
    WorkloadConfig,
};
pub use disturb::{composition, inject_noise, split_message, NoiseHost, NoiseSpec, NoiseTarget};
pub use scenario::concurrency_interleaving;
pub use truth::{GroundTruth, Label, RequestTruth};

use crate::correlate::CorrelatorConfig;
use crate::error::ConfigError;
use crate::model::{serialize_activity, Activity, BoundaryRule};

/// True-time origin of every simulation, so negative clock skews stay representable.
pub const ORIGIN_NS: u64 = 1_000_000_000_000;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulation {
    /// Per-node logs in local-timestamp order, `seq` already assigned.
    pub logs: BTreeMap<String, Vec<Activity>>,
    pub ground_truth: GroundTruth,
    pub hosts: BTreeMap<String, Ipv4Addr>,
    pub entry_port: u16,
}

impl Simulation {
    pub fn activity_count(&self) -> usize {
        self.logs.values().map(Vec::len).sum()
    }

    pub fn request_count(&self) -> usize {
        self.ground_truth.requests.len()
    }

    pub fn node_logs(&self) -> Vec<(String, Vec<Activity>)> {
        self.logs.iter().map(|(n, l)| (n.clone(), l.clone())).collect()
    }

    pub fn boundary(&self) -> BoundaryRule {
        BoundaryRule::new([self.entry_port], self.hosts.values().copied())
    }

    /// Default correlator settings with the boundary rule this simulation implies.
    pub fn correlator_config(&self) -> CorrelatorConfig {
        CorrelatorConfig { boundary: self.boundary(), ..CorrelatorConfig::default() }
    }

    /// Writes `<node>.log` per node and the ground-truth sidecar.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (node, acts) in &self.logs {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{node}.log")))?);
            for a in acts {
                writeln!(w, "{}", serialize_activity(a))?;
            }
            w.flush()?;
        }
        fs::write(dir.join(GROUND_TRUTH_FILE), self.ground_truth.to_sidecar())
    }
}

/// Run the workload described by `config`.
pub fn generate(config: &SimConfig) -> Result<Simulation, ConfigError> {
    config.validate()?;
    if config.disturbance.concurrency_interleave {
        return Ok(concurrency_interleaving(true));
    }
    generate::Generator::new(config).finish()
}

/// What `generate` wrote, for reproducing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub generator: String,
    pub seed: u64,
    pub config: SimConfig,
    pub activities: BTreeMap<String, usize>,
    pub requests: usize,
    pub noise_activities: usize,
    pub dropped_activities: u64,
}

impl SimManifest {
    pub fn new(config: &SimConfig, sim: &Simulation) -> Self {
        SimManifest {
            generator: format!("cagtrace {}", env!("CARGO_PKG_VERSION")),
            seed: config.workload.seed,
            config: config.clone(),
            activities: sim.logs.iter().map(|(n, l)| (n.clone(), l.len())).collect(),
            requests: sim.request_count(),
            noise_activities: sim.ground_truth.noise_count(),
            dropped_activities: sim.ground_truth.dropped_total(),
        }
    }
}

/// Three tiers (front end, application server, database) on three hosts.
pub fn three_tier_config(num_clients: usize, requests_per_client: usize, seed: u64) -> SimConfig {
    let tier = |h: &str, ip: [u8; 4], prog: &str, model, pool| TierSpec {
        hostname: h.into(),
        ip: ip.into(),
        program: prog.into(),
        worker_model: model,
        pool_size: pool,
        pid: None,
    };
    SimConfig {
        topology: TopologyConfig {
            tiers: vec![
                tier("web", [10, 0, 0, 1], "httpd", WorkerModel::ProcessPool, 16),
                tier("app", [10, 0, 0, 2], "java", WorkerModel::ThreadPool, 12),
                tier("db", [10, 0, 0, 3], "mysqld", WorkerModel::ThreadPool, 8),
            ],
            entry_port: 80,
            inter_tier_ports: vec![8009, 3306],
        },
        workload: WorkloadConfig {
            num_clients,
            requests_per_client,
            think_time: Timing { base_ns: 2_000_000, jitter_ns: 6_000_000 },
            service: vec![
                Timing { base_ns: 200_000, jitter_ns: 100_000 },
                Timing { base_ns: 600_000, jitter_ns: 300_000 },
                Timing { base_ns: 300_000, jitter_ns: 200_000 },
            ],
            network: Timing { base_ns: 80_000, jitter_ns: 40_000 },
            request_size: SizeRange { min: 200, max: 1_500 },
            reply_size: SizeRange { min: 500, max: 20_000 },
            classes: Vec::new(),
            start_spread_ns: 5_000_000,
            seed,
        },
        disturbance: DisturbanceConfig::default(),
    }
}
