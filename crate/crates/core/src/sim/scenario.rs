use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::truth::{GroundTruth, Label};
use super::{Simulation, ORIGIN_NS};
use crate::model::{Activity, ActivityRef, ActivityType, ContextId, Endpoint, MessageId};

const US: u64 = 1_000;
/// How far the clock of CPU 0 trails CPU 1 on both nodes.
const CPU0_LAG: u64 = 150 * US;

/// Two nodes, each running a front end (CPU 1) and a back end (CPU 0).
/// Request A enters node n1 and calls the back end on n2; request B enters
/// n2 and calls the back end on n1. With `interleave` the CPU 0 clocks lag,
/// so the back-end RECEIVE of each request is logged before the front-end
/// SEND of that node, and both queue heads wait on each other.
pub fn concurrency_interleaving(interleave: bool) -> Simulation {
    let ip = |n: u8| Ipv4Addr::new(10, 0, 1, n);
    let hosts: BTreeMap<String, Ipv4Addr> = [("n1".to_string(), ip(1)), ("n2".to_string(), ip(2))].into();
    let lag = if interleave { CPU0_LAG } else { 0 };

    struct Step {
        node: &'static str,
        front: bool,
        kind: ActivityType,
        at: u64,
        from: Endpoint,
        to: Endpoint,
        size: u64,
    }

    let mut steps: Vec<(u64, Step)> = Vec::new();
    for (req, (home, away, client, upstream, offset)) in [
        (0u64, (1u8, 2u8, Endpoint::new(Ipv4Addr::new(172, 16, 9, 1), 5001), 20_001u16, 0u64)),
        (1, (2, 1, Endpoint::new(Ipv4Addr::new(172, 16, 9, 2), 5002), 20_002, 10 * US)),
    ] {
        let front = Endpoint::new(ip(home), 80);
        let up = Endpoint::new(ip(home), upstream);
        let back = Endpoint::new(ip(away), 8080);
        let h = if home == 1 { "n1" } else { "n2" };
        let a = if away == 1 { "n1" } else { "n2" };
        let t = |x: u64| ORIGIN_NS + x * US + offset;
        let mut push = |node, front, kind, at, from, to, size| {
            steps.push((req, Step { node, front, kind, at, from, to, size }));
        };
        push(h, true, ActivityType::Receive, t(100), client, front, 120);
        push(h, true, ActivityType::Send, t(200), up, back, 300);
        push(a, false, ActivityType::Receive, t(300), up, back, 300);
        push(a, false, ActivityType::Send, t(400), back, up, 800);
        push(h, true, ActivityType::Receive, t(500), back, up, 800);
        push(h, true, ActivityType::Send, t(600), front, client, 2_000);
    }

    let mut per_node: BTreeMap<&str, Vec<(Activity, u64)>> = BTreeMap::new();
    for (req, s) in steps {
        let n = if s.node == "n1" { 1 } else { 2 };
        let context = if s.front {
            ContextId::new(s.node, "web", 100 * n + 1, 100 * n + 1)
        } else {
            ContextId::new(s.node, "app", 100 * (5 - n) + 1, 100 * (5 - n) + 1)
        };
        let timestamp = if s.front { s.at } else { s.at - lag };
        let act = Activity {
            kind: s.kind,
            timestamp,
            context,
            message: MessageId { sender: s.from, receiver: s.to, size: s.size },
            seq: 0,
        };
        per_node.entry(s.node).or_default().push((act, req));
    }

    let mut truth = GroundTruth::default();
    for id in 0..2 {
        truth.requests.entry(id).or_default().class = "interleave".into();
    }
    let mut logs = BTreeMap::new();
    for (node, mut acts) in per_node {
        acts.sort_by_key(|(a, _)| a.timestamp);
        for (seq, (a, req)) in acts.iter_mut().enumerate() {
            a.seq = seq as u64;
            truth.insert(ActivityRef::new(node, seq as u64), Label::Request(*req));
        }
        logs.insert(node.to_string(), acts.into_iter().map(|(a, _)| a).collect());
    }
    Simulation { logs, ground_truth: truth, hosts, entry_port: 80 }
}
