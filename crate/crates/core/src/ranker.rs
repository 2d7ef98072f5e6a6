//! Chooses the next activity to hand to the engine.
//!
//! Activities from each node are buffered in one FIFO queue per node (every
//! queue is ordered by a single local clock) as long as their timestamps fall
//! inside a sliding window that starts at the smallest pending timestamp.
//! Only queue heads are compared:
//!
//! 1. a head RECEIVE whose SEND is already in the message map goes first;
//! 2. otherwise the head with the lowest type priority
//!    (`BEGIN < SEND < END < RECEIVE`) goes.
//!
//! When every head is a RECEIVE still waiting for its SEND the ranker is
//! stalled. It then loads empty queues, tries the head swap that untangles
//! multi-CPU timestamp inversions, and finally discards heads whose SEND
//! exists nowhere (noise).

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::iter::Peekable;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::MessageView;
use crate::model::{Activity, ActivityType, Channel, NodeActivity};

pub type ActivityStream = Box<dyn Iterator<Item = Activity>>;

/// Drops activities by attribute before they reach the queues.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttributeFilter {
    Program(String),
    Ip(Ipv4Addr),
    Port(u16),
}

impl AttributeFilter {
    pub fn matches(&self, a: &Activity) -> bool {
        let m = &a.message;
        match self {
            AttributeFilter::Program(p) => a.context.program == *p,
            AttributeFilter::Ip(ip) => m.sender.ip == *ip || m.receiver.ip == *ip,
            AttributeFilter::Port(port) => m.sender.port == *port || m.receiver.port == *port,
        }
    }
}

impl FromStr for AttributeFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, value) = s.split_once('=').ok_or_else(|| format!("filter {s:?} is not key=value"))?;
        match key.trim() {
            "program" => Ok(AttributeFilter::Program(value.trim().to_string())),
            "ip" => value.trim().parse().map(AttributeFilter::Ip).map_err(|e| format!("filter {s:?}: {e}")),
            "port" => value.trim().parse().map(AttributeFilter::Port).map_err(|e| format!("filter {s:?}: {e}")),
            other => Err(format!("unknown filter attribute {other:?}")),
        }
    }
}

impl fmt::Display for AttributeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeFilter::Program(p) => write!(f, "program={p}"),
            AttributeFilter::Ip(ip) => write!(f, "ip={ip}"),
            AttributeFilter::Port(port) => write!(f, "port={port}"),
        }
    }
}

impl Serialize for AttributeFilter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttributeFilter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How Rule 2 picks among heads of equal priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Earliest local timestamp, then lowest queue index.
    #[default]
    Timestamp,
    /// Lowest queue index only.
    QueueIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub window_ns: u64,
    pub filters: Vec<AttributeFilter>,
    pub lookahead: usize,
    pub tie_break: TieBreak,
    pub resolve_stalls: bool,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            window_ns: 10_000_000,
            filters: Vec::new(),
            lookahead: 1,
            tie_break: TieBreak::Timestamp,
            resolve_stalls: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerStats {
    pub fetched: u64,
    pub filtered: u64,
    pub enqueued: u64,
    pub delivered: u64,
    pub noise_discarded: u64,
    /// RECEIVEs from a traced node whose SEND never showed up.
    pub dangling_receives: u64,
    pub stalls: u64,
    pub swaps: u64,
    /// Stalls no rule could resolve; the head RECEIVE was passed on unmatched.
    pub forced_receives: u64,
}

impl RankerStats {
    pub fn discarded(&self) -> u64 {
        self.noise_discarded + self.dangling_receives
    }
}

struct Source {
    name: Arc<str>,
    stream: Peekable<ActivityStream>,
    queue: VecDeque<Activity>,
}

impl Source {
    fn next_timestamp(&mut self) -> Option<u64> {
        match self.queue.front() {
            Some(a) => Some(a.timestamp),
            None => self.stream.peek().map(|a| a.timestamp),
        }
    }
}

pub struct Ranker {
    config: RankerConfig,
    sources: Vec<Source>,
    window_start: Option<u64>,
    buffered_sends: HashMap<Channel, usize>,
    ip_owner: HashMap<Ipv4Addr, usize>,
    stats: RankerStats,
}

impl Ranker {
    pub fn new<N: Into<Arc<str>>>(config: RankerConfig, streams: Vec<(N, ActivityStream)>) -> Self {
        assert!(config.window_ns > 0, "window must be positive");
        let mut ranker = Ranker {
            config,
            sources: Vec::with_capacity(streams.len()),
            window_start: None,
            buffered_sends: HashMap::new(),
            ip_owner: HashMap::new(),
            stats: RankerStats::default(),
        };
        for (name, stream) in streams {
            let mut stream = stream.peekable();
            let idx = ranker.sources.len();
            if let Some(first) = stream.peek() {
                ranker.ip_owner.entry(first.local_ip()).or_insert(idx);
            }
            ranker.sources.push(Source {
                name: name.into(),
                stream,
                queue: VecDeque::new(),
            });
        }
        ranker
    }

    /// Convenience constructor over in-memory per-node logs.
    pub fn from_logs<N: Into<Arc<str>>>(config: RankerConfig, logs: Vec<(N, Vec<Activity>)>) -> Self {
        let streams = logs
            .into_iter()
            .map(|(n, v)| (n, Box::new(v.into_iter()) as ActivityStream))
            .collect();
        Self::new(config, streams)
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn stats(&self) -> &RankerStats {
        &self.stats
    }

    pub fn window_start(&self) -> Option<u64> {
        self.window_start
    }

    pub fn queue(&self, idx: usize) -> &VecDeque<Activity> {
        &self.sources[idx].queue
    }

    pub fn source_name(&self, idx: usize) -> &str {
        &self.sources[idx].name
    }

    /// Total activities currently buffered.
    pub fn buffered(&self) -> usize {
        self.sources.iter().map(|s| s.queue.len()).sum()
    }

    fn pull(&mut self, idx: usize) -> Option<bool> {
        let a = self.sources[idx].stream.next()?;
        self.stats.fetched += 1;
        if self.config.filters.iter().any(|f| f.matches(&a)) {
            self.stats.filtered += 1;
            return Some(false);
        }
        self.ip_owner.entry(a.local_ip()).or_insert(idx);
        if a.kind.is_send_like() {
            *self.buffered_sends.entry(a.channel()).or_default() += 1;
        }
        self.stats.enqueued += 1;
        self.sources[idx].queue.push_back(a);
        Some(true)
    }

    fn pop(&mut self, idx: usize) -> Activity {
        let a = self.sources[idx].queue.pop_front().expect("non-empty queue");
        if a.kind.is_send_like() {
            let ch = a.channel();
            if let Some(n) = self.buffered_sends.get_mut(&ch) {
                *n -= 1;
                if *n == 0 {
                    self.buffered_sends.remove(&ch);
                }
            }
        }
        a
    }

    /// Move the window to the smallest pending timestamp and buffer every
    /// activity that falls inside it.
    pub fn fetch_window(&mut self) {
        let start = self.sources.iter_mut().filter_map(Source::next_timestamp).min();
        let Some(start) = start else { return };
        self.window_start = Some(start);
        let limit = start.saturating_add(self.config.window_ns);
        for idx in 0..self.sources.len() {
            while self.sources[idx].stream.peek().is_some_and(|a| a.timestamp <= limit) {
                self.pull(idx);
            }
        }
    }

    /// Queue indices with a head, in Rule 2 tie-break order.
    fn heads(&self) -> Vec<usize> {
        let mut heads: Vec<usize> = (0..self.sources.len())
            .filter(|&i| !self.sources[i].queue.is_empty())
            .collect();
        if self.config.tie_break == TieBreak::Timestamp {
            heads.sort_by_key(|&i| (self.sources[i].queue[0].timestamp, i));
        }
        heads
    }

    fn receive_ready(a: &Activity, view: &impl MessageView) -> bool {
        a.kind == ActivityType::Receive && view.outstanding(&a.channel()).is_some_and(|left| left >= a.message.size)
    }

    /// Fig. 5: a RECEIVE is noise when no SEND for it is in flight and none
    /// is waiting anywhere in the buffer.
    pub fn is_noise(&self, a: &Activity, view: &impl MessageView) -> bool {
        let ch = a.channel();
        a.kind == ActivityType::Receive && view.outstanding(&ch).is_none() && !self.buffered_sends.contains_key(&ch)
    }

    fn is_stalled(&self, view: &impl MessageView) -> bool {
        let mut any = false;
        for s in &self.sources {
            if let Some(h) = s.queue.front() {
                any = true;
                if h.kind != ActivityType::Receive || Self::receive_ready(h, view) {
                    return false;
                }
            }
        }
        any
    }

    /// Pull a SEND that a stalled head is waiting for to the front of its
    /// queue, jumping over at most `lookahead` activities of other contexts.
    /// Returns whether anything moved.
    pub fn resolve_stall(&mut self, view: &impl MessageView) -> bool {
        if !self.is_stalled(view) {
            return false;
        }
        let wanted: HashSet<Channel> = self
            .sources
            .iter()
            .filter_map(|s| s.queue.front().map(Activity::channel))
            .collect();
        let mut swapped = false;
        for s in &mut self.sources {
            let depth = self.config.lookahead.min(s.queue.len().saturating_sub(1));
            for pos in 1..=depth {
                let cand = &s.queue[pos];
                if cand.kind == ActivityType::Send
                    && wanted.contains(&cand.channel())
                    && s.queue.iter().take(pos).all(|a| a.context != cand.context)
                {
                    let send = s.queue.remove(pos).expect("in range");
                    s.queue.push_front(send);
                    self.stats.swaps += 1;
                    swapped = true;
                    break;
                }
            }
        }
        swapped
    }

    /// Buffer more of the sender's log until a SEND for `a` is buffered or
    /// that log runs out, so that the noise test sees everything it could.
    fn fetch_sender_of(&mut self, a: &Activity) -> Option<usize> {
        let owner = *self.ip_owner.get(&a.message.sender.ip)?;
        let ch = a.channel();
        while !self.buffered_sends.contains_key(&ch) {
            if self.pull(owner).is_none() {
                break;
            }
        }
        Some(owner)
    }

    fn deliver(&mut self, idx: usize) -> NodeActivity {
        let activity = self.pop(idx);
        self.stats.delivered += 1;
        NodeActivity {
            node: self.sources[idx].name.clone(),
            activity,
        }
    }

    /// Next candidate for the engine, or `None` once every log is drained.
    pub fn rank(&mut self, view: &impl MessageView) -> Option<NodeActivity> {
        loop {
            self.fetch_window();
            let heads = self.heads();
            if heads.is_empty() {
                return None;
            }

            // Rule 1
            if let Some(&i) = heads.iter().find(|&&i| Self::receive_ready(&self.sources[i].queue[0], view)) {
                return Some(self.deliver(i));
            }
            // Rule 2; `heads` is already in tie-break order.
            let best = heads
                .iter()
                .copied()
                .filter(|&i| self.sources[i].queue[0].kind != ActivityType::Receive)
                .min_by_key(|&i| self.sources[i].queue[0].kind);
            if let Some(i) = best {
                return Some(self.deliver(i));
            }

            // Stalled: every head is a RECEIVE without its SEND.
            self.stats.stalls += 1;
            if self.load_empty_queues() {
                continue;
            }
            if self.config.resolve_stalls && self.resolve_stall(view) {
                continue;
            }
            let mut discarded = false;
            for &i in &heads {
                let head = self.sources[i].queue[0].clone();
                let owner = self.fetch_sender_of(&head);
                if self.is_noise(&head, view) {
                    self.pop(i);
                    if owner.is_some() {
                        self.stats.dangling_receives += 1;
                    } else {
                        self.stats.noise_discarded += 1;
                    }
                    discarded = true;
                    break;
                }
            }
            if discarded {
                continue;
            }
            if self.config.resolve_stalls && self.resolve_stall(view) {
                continue;
            }
            self.stats.forced_receives += 1;
            return Some(self.deliver(heads[0]));
        }
    }

    /// Give every drained queue whose log still has data one head.
    fn load_empty_queues(&mut self) -> bool {
        let mut loaded = false;
        for idx in 0..self.sources.len() {
            if !self.sources[idx].queue.is_empty() {
                continue;
            }
            while let Some(enqueued) = self.pull(idx) {
                if enqueued {
                    loaded = true;
                    break;
                }
            }
        }
        loaded
    }
}
