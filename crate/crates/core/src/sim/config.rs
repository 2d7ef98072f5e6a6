use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkerModel {
    /// One process serving requests one at a time.
    Iterative,
    /// A fixed set of single-threaded processes.
    ProcessPool,
    /// One process with a fixed set of recycled threads.
    ThreadPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierSpec {
    pub hostname: String,
    pub ip: Ipv4Addr,
    pub program: String,
    pub worker_model: WorkerModel,
    #[serde(default = "one")]
    pub pool_size: usize,
    /// Base process id; defaults to `1000 * (tier + 1)`.
    #[serde(default)]
    pub pid: Option<u32>,
}

impl TierSpec {
    pub fn workers(&self) -> usize {
        match self.worker_model {
            WorkerModel::Iterative => 1,
            _ => self.pool_size,
        }
    }
}

fn one() -> usize {
    1
}

fn entry_port() -> u16 {
    80
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub tiers: Vec<TierSpec>,
    #[serde(default = "entry_port")]
    pub entry_port: u16,
    /// Listening port of tier `i + 1`.
    #[serde(default)]
    pub inter_tier_ports: Vec<u16>,
}

impl TopologyConfig {
    pub fn listen_port(&self, tier: usize) -> u16 {
        if tier == 0 {
            self.entry_port
        } else {
            self.inter_tier_ports[tier - 1]
        }
    }

    pub fn internal_ips(&self) -> BTreeSet<Ipv4Addr> {
        self.tiers.iter().map(|t| t.ip).collect()
    }
}

/// `base_ns` plus a uniform draw from `[0, jitter_ns]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub base_ns: u64,
    #[serde(default)]
    pub jitter_ns: u64,
}

impl Timing {
    pub const fn fixed(base_ns: u64) -> Self {
        Timing { base_ns, jitter_ns: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestClass {
    pub name: String,
    #[serde(default = "weight")]
    pub weight: u32,
    /// Number of tiers the request travels through.
    pub depth: usize,
}

fn weight() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub num_clients: usize,
    pub requests_per_client: usize,
    pub think_time: Timing,
    /// One entry per tier.
    pub service: Vec<Timing>,
    pub network: Timing,
    pub request_size: SizeRange,
    pub reply_size: SizeRange,
    /// Empty means a single class that visits every tier.
    #[serde(default)]
    pub classes: Vec<RequestClass>,
    /// Clients start uniformly within this span.
    #[serde(default)]
    pub start_spread_ns: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fault {
    /// Extra processing time in a tier before it calls downstream
    /// (or before it replies, for the last tier).
    ProcessingDelay { tier: usize, added_ns: u64 },
    /// A tier-wide lock held for the processing time plus `hold_ns`.
    LockDelay { tier: usize, hold_ns: u64 },
    /// Extra latency on every message between `upper_tier` and `upper_tier + 1`.
    LinkDelay { upper_tier: usize, added_ns: u64 },
}

fn noise_programs() -> Vec<String> {
    vec!["sshd".into(), "rlogin".into()]
}

fn half() -> f64 {
    0.5
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceConfig {
    /// Constant offset added to every local timestamp of a host.
    #[serde(default)]
    pub clock_skew_ns: BTreeMap<String, i64>,
    #[serde(default)]
    pub noise_activity_count: usize,
    /// Programs used for noise that attribute filters can catch.
    #[serde(default = "noise_programs")]
    pub noise_program_names: Vec<String>,
    /// Share of noise that uses the last tier's own program and port; none
    /// when that port is the entry port.
    #[serde(default = "half")]
    pub shared_noise_fraction: f64,
    #[serde(default)]
    pub message_split_probability: f64,
    #[serde(default = "three")]
    pub max_split_parts: usize,
    /// Chance that a request loses one of its logged activities.
    #[serde(default)]
    pub request_drop_probability: f64,
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// Emit the two-node, two-CPU timestamp inversion scenario instead of the workload.
    #[serde(default)]
    pub concurrency_interleave: bool,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig {
            clock_skew_ns: BTreeMap::new(),
            noise_activity_count: 0,
            noise_program_names: noise_programs(),
            shared_noise_fraction: half(),
            message_split_probability: 0.0,
            max_split_parts: three(),
            request_drop_probability: 0.0,
            faults: Vec::new(),
            concurrency_interleave: false,
        }
    }
}

/// Everything `generate` needs, as read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let topo = &self.topology;
        let work = &self.workload;
        let dist = &self.disturbance;
        if topo.tiers.is_empty() {
            return bad("topology needs at least one tier".into());
        }
        if topo.inter_tier_ports.len() + 1 != topo.tiers.len() {
            return bad(format!(
                "{} tiers need {} inter-tier ports, found {}",
                topo.tiers.len(),
                topo.tiers.len() - 1,
                topo.inter_tier_ports.len()
            ));
        }
        let mut host_ip: BTreeMap<&str, Ipv4Addr> = BTreeMap::new();
        for (i, t) in topo.tiers.iter().enumerate() {
            if t.pool_size == 0 || t.pool_size >= 1000 {
                return bad(format!("tier {i}: pool size must be in 1..1000"));
            }
            if t.hostname.is_empty() || t.program.is_empty() || t.hostname.contains([' ', ':']) || t.program.contains(' ') {
                return bad(format!("tier {i}: hostname/program must be non-empty single tokens"));
            }
            if let Some(prev) = host_ip.insert(&t.hostname, t.ip) {
                if prev != t.ip {
                    return bad(format!("host {} has two IPs", t.hostname));
                }
            }
            if t.ip.octets()[0] == 172 || t.ip.octets()[0] == 198 {
                return bad(format!("tier {i}: 172.x and 198.x are reserved for simulated clients and noise"));
            }
        }
        if work.num_clients == 0 || work.requests_per_client == 0 {
            return bad("need at least one client and one request per client".into());
        }
        if work.num_clients > 50_000 {
            return bad("at most 50000 clients".into());
        }
        if work.service.len() != topo.tiers.len() {
            return bad(format!("need {} service timings, found {}", topo.tiers.len(), work.service.len()));
        }
        if work.network.base_ns == 0 {
            return bad("network latency must be at least 1ns".into());
        }
        for r in [work.request_size, work.reply_size] {
            if r.min == 0 || r.min > r.max {
                return bad("message sizes need 0 < min <= max".into());
            }
        }
        for c in &work.classes {
            if c.depth == 0 || c.depth > topo.tiers.len() {
                return bad(format!("class {}: depth must be in 1..={}", c.name, topo.tiers.len()));
            }
        }
        if !work.classes.is_empty() && work.classes.iter().all(|c| c.weight == 0) {
            return bad("class weights are all zero".into());
        }
        for p in [dist.shared_noise_fraction, dist.message_split_probability, dist.request_drop_probability] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if dist.max_split_parts == 0 {
            return bad("max_split_parts must be at least 1".into());
        }
        let no_shared = topo.listen_port(topo.tiers.len() - 1) == topo.entry_port;
        if dist.noise_activity_count > 0
            && (dist.shared_noise_fraction < 1.0 || no_shared)
            && dist.noise_program_names.is_empty()
        {
            return bad("filterable noise needs at least one program name".into());
        }
        for f in &dist.faults {
            let tier = match f {
                Fault::ProcessingDelay { tier, .. } | Fault::LockDelay { tier, .. } => *tier,
                Fault::LinkDelay { upper_tier, .. } => upper_tier + 1,
            };
            if tier >= topo.tiers.len() {
                return bad(format!("fault {f:?} refers to a missing tier"));
            }
        }
        for host in dist.clock_skew_ns.keys() {
            if !host_ip.contains_key(host.as_str()) {
                return bad(format!("clock skew for unknown host {host}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [topology]
        inter_tier_ports = []
        [[topology.tiers]]
        hostname = "web"
        ip = "10.0.0.1"
        program = "httpd"
        worker_model = "iterative"

        [workload]
        num_clients = 1
        requests_per_client = 1
        think_time = { base_ns = 1000 }
        service = [{ base_ns = 5000 }]
        network = { base_ns = 100 }
        request_size = { min = 100, max = 100 }
        reply_size = { min = 900, max = 900 }
        seed = 7
    "#;

    #[test]
    fn parses_minimal_toml() {
        let cfg = SimConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.topology.entry_port, 80);
        assert_eq!(cfg.topology.tiers[0].workers(), 1);
        assert_eq!(cfg.disturbance, DisturbanceConfig::default());
    }

    #[test]
    fn rejects_zero_tiers() {
        let mut cfg = SimConfig::from_toml(MINIMAL).unwrap();
        cfg.topology.tiers.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_probability() {
        let mut cfg = SimConfig::from_toml(MINIMAL).unwrap();
        cfg.disturbance.message_split_probability = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn faults_parse_from_toml() {
        let text = format!("{MINIMAL}\n[[disturbance.faults]]\nkind = \"processing-delay\"\ntier = 0\nadded_ns = 10\n");
        let cfg = SimConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.disturbance.faults, vec![Fault::ProcessingDelay { tier: 0, added_ns: 10 }]);
    }
}
