use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Fault, SimConfig, SizeRange, Timing, WorkerModel};
use super::disturb::{composition, inject_noise, NoiseHost, NoiseSpec, NoiseTarget};
use super::truth::{GroundTruth, Label};
use super::{Simulation, ORIGIN_NS};
use crate::error::ConfigError;
use crate::model::{Activity, ActivityRef, ActivityType, ContextId, Endpoint, MessageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    ClientIssue { client: usize },
    Arrive { tier: usize, req: usize },
    Reply { tier: usize, req: usize },
    WorkerFree { tier: usize, worker: usize },
}

struct Tier {
    idle: VecDeque<usize>,
    waiting: VecDeque<usize>,
    lock_free: u64,
    contexts: Vec<ContextId>,
    ip: Ipv4Addr,
    port: u16,
}

struct Request {
    client: usize,
    depth: usize,
    workers: Vec<usize>,
    post: Vec<u64>,
    client_ep: Endpoint,
    /// Receive-side parts of the message currently in flight.
    in_flight: Vec<u64>,
    sender: Endpoint,
}

struct Raw {
    node: String,
    act: Activity,
    label: Label,
}

pub(super) struct Generator<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    pushed: u64,
    tiers: Vec<Tier>,
    reqs: Vec<Request>,
    issued: Vec<usize>,
    raw: Vec<Raw>,
    classes: Vec<(String, usize)>,
    class_pick: Option<WeightedIndex<u32>>,
    req_class: Vec<usize>,
}

fn sample(t: Timing, rng: &mut ChaCha8Rng) -> u64 {
    t.base_ns + if t.jitter_ns > 0 { rng.gen_range(0..=t.jitter_ns) } else { 0 }
}

fn sample_size(r: SizeRange, rng: &mut ChaCha8Rng) -> u64 {
    rng.gen_range(r.min..=r.max)
}

fn upstream_port(tier: usize, worker: usize) -> u16 {
    (20_000 + 1_000 * tier + worker) as u16
}

fn client_endpoint(client: usize, n: usize) -> Endpoint {
    let c = client as u32;
    Endpoint::new(
        Ipv4Addr::new(172, 16 + (c / 50_000) as u8, ((c / 250) % 200) as u8, (c % 250 + 1) as u8),
        (32_768 + n % 28_000) as u16,
    )
}

impl<'a> Generator<'a> {
    pub(super) fn new(cfg: &'a SimConfig) -> Self {
        let topo = &cfg.topology;
        let tiers = topo
            .tiers
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let pid = t.pid.unwrap_or(1_000 * (i as u32 + 1));
                let contexts = (0..t.workers() as u32)
                    .map(|w| {
                        let (pid, tid) = match t.worker_model {
                            WorkerModel::Iterative => (pid, pid),
                            WorkerModel::ProcessPool => (pid + w, pid + w),
                            WorkerModel::ThreadPool => (pid, pid + 1 + w),
                        };
                        ContextId::new(&t.hostname, &t.program, pid, tid)
                    })
                    .collect::<Vec<_>>();
                Tier {
                    idle: (0..contexts.len()).collect(),
                    waiting: VecDeque::new(),
                    lock_free: 0,
                    contexts,
                    ip: t.ip,
                    port: topo.listen_port(i),
                }
            })
            .collect();
        let classes: Vec<(String, usize)> = if cfg.workload.classes.is_empty() {
            vec![("default".into(), topo.tiers.len())]
        } else {
            cfg.workload.classes.iter().map(|c| (c.name.clone(), c.depth)).collect()
        };
        let class_pick = (classes.len() > 1)
            .then(|| WeightedIndex::new(cfg.workload.classes.iter().map(|c| c.weight)).expect("validated weights"));
        Generator {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.workload.seed),
            heap: BinaryHeap::new(),
            pushed: 0,
            tiers,
            reqs: Vec::new(),
            issued: vec![0; cfg.workload.num_clients],
            raw: Vec::new(),
            classes,
            class_pick,
            req_class: Vec::new(),
        }
    }

    fn schedule(&mut self, t: u64, ev: Ev) {
        self.pushed += 1;
        self.heap.push(Reverse((t, self.pushed, ev)));
    }

    fn net(&mut self, upper: Option<usize>) -> u64 {
        let mut d = sample(self.cfg.workload.network, &mut self.rng);
        if let Some(k) = upper {
            for f in &self.cfg.disturbance.faults {
                if let Fault::LinkDelay { upper_tier, added_ns } = f {
                    if *upper_tier == k {
                        d += added_ns;
                    }
                }
            }
        }
        d
    }

    fn log(&mut self, tier: usize, worker: usize, req: usize, kind: ActivityType, ts: u64, message: MessageId) {
        let t = &self.tiers[tier];
        self.raw.push(Raw {
            node: self.cfg.topology.tiers[tier].hostname.clone(),
            act: Activity { kind, timestamp: ts, context: t.contexts[worker].clone(), message, seq: 0 },
            label: Label::Request(req as u64),
        });
    }

    /// Logs the SEND parts of a message starting at `t` and remembers the
    /// receive-side split. Returns the timestamp of the last part.
    fn send(&mut self, tier: usize, req: usize, sender: Endpoint, receiver: Endpoint, size: u64, t: u64, splittable: bool) -> u64 {
        let dist = &self.cfg.disturbance;
        let max = dist.max_split_parts.min(size as usize);
        let (sends, recvs) = if splittable && max > 1 && self.rng.gen_bool(dist.message_split_probability) {
            let s = self.rng.gen_range(1..=max);
            let r = self.rng.gen_range(1..=max);
            (
                composition(size, s, &mut self.rng).expect("parts <= size"),
                composition(size, r, &mut self.rng).expect("parts <= size"),
            )
        } else {
            (vec![size], vec![size])
        };
        let worker = self.reqs[req].workers[tier];
        for (i, &part) in sends.iter().enumerate() {
            self.log(tier, worker, req, ActivityType::Send, t + i as u64, MessageId { sender, receiver, size: part });
        }
        let r = &mut self.reqs[req];
        r.in_flight = recvs;
        r.sender = sender;
        t + sends.len() as u64 - 1
    }

    /// Logs the receive parts of the request's in-flight message.
    fn receive(&mut self, tier: usize, req: usize, receiver: Endpoint, start: u64) -> u64 {
        let parts = std::mem::take(&mut self.reqs[req].in_flight);
        let sender = self.reqs[req].sender;
        let worker = self.reqs[req].workers[tier];
        for (i, &part) in parts.iter().enumerate() {
            self.log(tier, worker, req, ActivityType::Receive, start + i as u64, MessageId { sender, receiver, size: part });
        }
        start + parts.len() as u64 - 1
    }

    fn listen(&self, tier: usize) -> Endpoint {
        Endpoint::new(self.tiers[tier].ip, self.tiers[tier].port)
    }

    fn upstream(&self, tier: usize, req: usize) -> Endpoint {
        Endpoint::new(self.tiers[tier].ip, upstream_port(tier, self.reqs[req].workers[tier]))
    }

    fn issue(&mut self, client: usize, t: u64) {
        let n = self.issued[client];
        if n >= self.cfg.workload.requests_per_client {
            return;
        }
        self.issued[client] += 1;
        let class = match &self.class_pick {
            Some(w) => w.sample(&mut self.rng),
            None => 0,
        };
        let depth = self.classes[class].1;
        let client_ep = client_endpoint(client, n);
        let size = sample_size(self.cfg.workload.request_size, &mut self.rng);
        let req = self.reqs.len();
        self.reqs.push(Request {
            client,
            depth,
            workers: vec![usize::MAX; depth],
            post: vec![0; depth],
            client_ep,
            in_flight: vec![size],
            sender: client_ep,
        });
        self.req_class.push(class);
        let arrival = t + self.net(None);
        self.schedule(arrival, Ev::Arrive { tier: 0, req });
    }

    fn dispatch(&mut self, tier: usize, t: u64) {
        while !self.tiers[tier].idle.is_empty() && !self.tiers[tier].waiting.is_empty() {
            let w = self.tiers[tier].idle.pop_front().expect("non-empty");
            let req = self.tiers[tier].waiting.pop_front().expect("non-empty");
            self.start_job(tier, w, req, t);
        }
    }

    fn start_job(&mut self, tier: usize, worker: usize, req: usize, t: u64) {
        self.reqs[req].workers[tier] = worker;
        let local = self.listen(tier);
        let got = self.receive(tier, req, local, t);
        let service = sample(self.cfg.workload.service[tier], &mut self.rng);
        let leaf = tier + 1 >= self.reqs[req].depth;
        let (mut pre, post) = if leaf { (service, 0) } else { (service / 2, service - service / 2) };
        let mut begin = got;
        for f in &self.cfg.disturbance.faults {
            match *f {
                Fault::ProcessingDelay { tier: k, added_ns } if k == tier => pre += added_ns,
                Fault::LockDelay { tier: k, hold_ns } if k == tier => {
                    begin = begin.max(self.tiers[tier].lock_free);
                    pre += hold_ns;
                    self.tiers[tier].lock_free = begin + pre;
                }
                _ => {}
            }
        }
        let ready = begin + pre.max(1);
        self.reqs[req].post[tier] = post;
        if leaf {
            self.reply(tier, req, ready);
        } else {
            let size = sample_size(self.cfg.workload.request_size, &mut self.rng);
            let (from, to) = (self.upstream(tier, req), self.listen(tier + 1));
            let last = self.send(tier, req, from, to, size, ready, true);
            let arrival = last + self.net(Some(tier));
            self.schedule(arrival, Ev::Arrive { tier: tier + 1, req });
        }
    }

    fn reply(&mut self, tier: usize, req: usize, t: u64) {
        let size = sample_size(self.cfg.workload.reply_size, &mut self.rng);
        let local = self.listen(tier);
        let last = if tier == 0 {
            let client = self.reqs[req].client;
            let client_ep = self.reqs[req].client_ep;
            let last = self.send(tier, req, local, client_ep, size, t, false);
            let back = last + self.net(None) + sample(self.cfg.workload.think_time, &mut self.rng);
            self.schedule(back, Ev::ClientIssue { client });
            last
        } else {
            let up = self.upstream(tier - 1, req);
            let last = self.send(tier, req, local, up, size, t, true);
            let arrival = last + self.net(Some(tier - 1));
            self.schedule(arrival, Ev::Reply { tier: tier - 1, req });
            last
        };
        let worker = self.reqs[req].workers[tier];
        self.schedule(last + 1, Ev::WorkerFree { tier, worker });
    }

    fn run(&mut self) {
        let spread = self.cfg.workload.start_spread_ns;
        for c in 0..self.cfg.workload.num_clients {
            let t = ORIGIN_NS + if spread > 0 { self.rng.gen_range(0..spread) } else { 0 };
            self.schedule(t, Ev::ClientIssue { client: c });
        }
        while let Some(Reverse((t, _, ev))) = self.heap.pop() {
            match ev {
                Ev::ClientIssue { client } => self.issue(client, t),
                Ev::Arrive { tier, req } => {
                    self.tiers[tier].waiting.push_back(req);
                    self.dispatch(tier, t);
                }
                Ev::Reply { tier, req } => {
                    let local = self.upstream(tier, req);
                    let got = self.receive(tier, req, local, t);
                    let post = self.reqs[req].post[tier].max(1);
                    self.reply(tier, req, got + post);
                }
                Ev::WorkerFree { tier, worker } => {
                    self.tiers[tier].idle.push_back(worker);
                    self.dispatch(tier, t);
                }
            }
        }
    }

    pub(super) fn finish(mut self) -> Result<Simulation, ConfigError> {
        self.run();
        let cfg = self.cfg;
        let dist = &cfg.disturbance;
        let mut dropped = vec![0u32; self.reqs.len()];
        if dist.request_drop_probability > 0.0 {
            let mut by_req: Vec<Vec<usize>> = vec![Vec::new(); self.reqs.len()];
            for (i, r) in self.raw.iter().enumerate() {
                if let Label::Request(id) = r.label {
                    by_req[id as usize].push(i);
                }
            }
            let mut gone = vec![false; self.raw.len()];
            for (id, idxs) in by_req.iter().enumerate() {
                if self.rng.gen_bool(dist.request_drop_probability) {
                    gone[idxs[self.rng.gen_range(0..idxs.len())]] = true;
                    dropped[id] += 1;
                }
            }
            let mut keep = gone.iter().map(|g| !g);
            self.raw.retain(|_| keep.next().expect("same length"));
        }
        if dist.noise_activity_count > 0 {
            let lo = self.raw.iter().map(|r| r.act.timestamp).min().unwrap_or(ORIGIN_NS);
            let hi = self.raw.iter().map(|r| r.act.timestamp).max().unwrap_or(ORIGIN_NS);
            let mut hosts: Vec<NoiseHost> = Vec::new();
            for t in &cfg.topology.tiers {
                if !hosts.iter().any(|h| h.hostname == t.hostname) {
                    hosts.push(NoiseHost { hostname: t.hostname.clone(), ip: t.ip });
                }
            }
            let last = cfg.topology.tiers.len() - 1;
            let spec_tier = &cfg.topology.tiers[last];
            let target = NoiseTarget {
                hostname: spec_tier.hostname.clone(),
                program: spec_tier.program.clone(),
                pid: self.tiers[last].contexts[0].pid,
                endpoint: self.listen(last),
            };
            let spec = NoiseSpec {
                count: dist.noise_activity_count,
                programs: &dist.noise_program_names,
                shared_fraction: dist.shared_noise_fraction,
                hosts: &hosts,
                // Outside traffic to the entry port would be a real request.
                shared: (dist.shared_noise_fraction > 0.0 && target.endpoint.port != cfg.topology.entry_port)
                    .then_some(&target),
                span: (lo, hi),
            };
            for (node, act) in inject_noise(&spec, &mut self.rng) {
                self.raw.push(Raw { node, act, label: Label::Noise });
            }
        }

        let mut per_node: BTreeMap<String, Vec<(Activity, Label)>> = BTreeMap::new();
        for t in &cfg.topology.tiers {
            per_node.entry(t.hostname.clone()).or_default();
        }
        for r in self.raw {
            let skew = dist.clock_skew_ns.get(&r.node).copied().unwrap_or(0);
            let local = i128::from(r.act.timestamp) + i128::from(skew);
            let local = u64::try_from(local)
                .map_err(|_| ConfigError::Invalid(format!("clock skew {skew} makes {} timestamps negative", r.node)))?;
            let mut act = r.act;
            act.timestamp = local;
            per_node.entry(r.node).or_default().push((act, r.label));
        }

        let mut truth = GroundTruth::default();
        for (id, class) in self.req_class.iter().enumerate() {
            let entry = truth.requests.entry(id as u64).or_default();
            entry.class = self.classes[*class].0.clone();
            entry.dropped = dropped[id];
        }
        let mut logs = BTreeMap::new();
        for (node, mut acts) in per_node {
            // Stable sort keeps generation order for equal timestamps.
            acts.sort_by_key(|(a, _)| a.timestamp);
            let node_name: std::sync::Arc<str> = node.as_str().into();
            let mut out = Vec::with_capacity(acts.len());
            for (seq, (mut act, label)) in acts.into_iter().enumerate() {
                act.seq = seq as u64;
                truth.insert(ActivityRef::new(node_name.clone(), seq as u64), label);
                out.push(act);
            }
            logs.insert(node, out);
        }
        let hosts = cfg.topology.tiers.iter().map(|t| (t.hostname.clone(), t.ip)).collect();
        Ok(Simulation { logs, ground_truth: truth, hosts, entry_port: cfg.topology.entry_port })
    }
}
