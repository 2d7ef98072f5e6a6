//! Component activity graphs: one DAG of activities per request.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::model::{ActivityRef, ActivityType, Channel, ContextId, Endpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CagStatus {
    InProgress,
    Complete,
    IncompleteAtFlush,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Context,
    Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: usize,
    pub to: usize,
}

/// A CAG vertex. Split messages collapse into one vertex whose `parts`
/// lists every log line it covers and whose `size` is the merged byte count.
///
/// `timestamp` is when the vertex takes effect: the first part for a SEND,
/// the last part for a RECEIVE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    #[serde(rename = "type")]
    pub kind: ActivityType,
    pub timestamp: u64,
    pub first_timestamp: u64,
    pub context: ContextId,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub size: u64,
    pub parts: Vec<ActivityRef>,
}

impl Vertex {
    pub fn channel(&self) -> Channel {
        Channel {
            sender: self.sender,
            receiver: self.receiver,
        }
    }

    pub fn node(&self) -> &str {
        &self.parts[0].node
    }

    pub fn label(&self) -> String {
        format!("{} {}/{}", self.kind, self.context.hostname, self.context.program)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cag {
    /// Log reference of the root BEGIN, e.g. `web:17`.
    pub id: String,
    pub status: CagStatus,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RootCount(usize),
    EndCount(usize),
    Cycle,
    TooManyParents(usize),
    DualParentNotReceive(usize),
    DualParentSameKind(usize),
    Unreachable(usize),
    ClockOrder(usize, usize),
    MessageEdgeShape(usize, usize),
    ByteImbalance(usize, usize),
    ContextEdgeShape(usize, usize),
    EdgeOutOfRange(usize, usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl Cag {
    pub fn root(&self) -> Option<usize> {
        self.vertices.iter().position(|v| v.kind == ActivityType::Begin)
    }

    pub fn end(&self) -> Option<usize> {
        self.vertices.iter().position(|v| v.kind == ActivityType::End)
    }

    pub fn is_complete(&self) -> bool {
        self.status == CagStatus::Complete
    }

    pub fn context_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Context)
    }

    pub fn message_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Message)
    }

    pub fn parents(&self, v: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == v)
    }

    pub fn children(&self, v: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == v)
    }

    /// Every log line covered by this CAG.
    pub fn activity_refs(&self) -> impl Iterator<Item = &ActivityRef> {
        self.vertices.iter().flat_map(|v| v.parts.iter())
    }

    /// End-to-end latency on the entry node's clock.
    pub fn span(&self) -> Option<u64> {
        let begin = &self.vertices[self.root()?];
        let end = &self.vertices[self.end()?];
        end.timestamp.checked_sub(begin.timestamp)
    }

    /// Sort vertices by their first log reference and renumber edges, so that
    /// equal graphs serialize identically regardless of construction order.
    pub fn canonicalize(&mut self) {
        let mut order: Vec<usize> = (0..self.vertices.len()).collect();
        order.sort_by(|&a, &b| self.vertices[a].parts[0].cmp(&self.vertices[b].parts[0]));
        let mut new_index = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let mut vertices: Vec<Option<Vertex>> = std::mem::take(&mut self.vertices).into_iter().map(Some).collect();
        self.vertices = order.iter().map(|&old| vertices[old].take().unwrap()).collect();
        for e in &mut self.edges {
            e.from = new_index[e.from];
            e.to = new_index[e.to];
        }
        self.edges.sort();
        self.edges.dedup();
    }

    /// Clock-free rendering of the graph: identical for two runs that
    /// correlated the same log lines the same way, whatever the node clocks.
    pub fn structural_key(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let parts: Vec<String> = v.parts.iter().map(|p| p.to_string()).collect();
            let _ = write!(
                out,
                "{} {} {}-{} {} [{}];",
                v.kind,
                v.context,
                v.sender,
                v.receiver,
                v.size,
                parts.join(",")
            );
        }
        for e in &self.edges {
            let _ = write!(out, "{:?}{}>{};", e.kind, e.from, e.to);
        }
        out
    }

    /// Topological order, or `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.vertices.len();
        let mut indegree = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            if e.from >= n || e.to >= n {
                return None;
            }
            indegree[e.to] += 1;
            out[e.from].push(e.to);
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_front() {
            order.push(v);
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push_back(w);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Check the structural invariants every CAG must satisfy.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut bad = Vec::new();
        let n = self.vertices.len();
        for e in &self.edges {
            if e.from >= n || e.to >= n {
                bad.push(Violation::EdgeOutOfRange(e.from, e.to));
            }
        }
        if !bad.is_empty() {
            return Err(bad);
        }

        let roots = self.vertices.iter().filter(|v| v.kind == ActivityType::Begin).count();
        if roots != 1 {
            bad.push(Violation::RootCount(roots));
        }
        let ends = self.vertices.iter().filter(|v| v.kind == ActivityType::End).count();
        if ends > 1 || (self.is_complete() && ends != 1) {
            bad.push(Violation::EndCount(ends));
        }
        if self.topological_order().is_none() {
            bad.push(Violation::Cycle);
        }

        let mut parents: Vec<Vec<&Edge>> = vec![Vec::new(); n];
        for e in &self.edges {
            parents[e.to].push(e);
        }
        for (v, ps) in parents.iter().enumerate() {
            match ps.len() {
                0 | 1 => {}
                2 => {
                    if self.vertices[v].kind != ActivityType::Receive {
                        bad.push(Violation::DualParentNotReceive(v));
                    }
                    if ps[0].kind == ps[1].kind {
                        bad.push(Violation::DualParentSameKind(v));
                    }
                }
                _ => bad.push(Violation::TooManyParents(v)),
            }
        }

        for e in &self.edges {
            let (p, c) = (&self.vertices[e.from], &self.vertices[e.to]);
            if p.node() == c.node() && p.timestamp > c.timestamp {
                bad.push(Violation::ClockOrder(e.from, e.to));
            }
            match e.kind {
                EdgeKind::Message => {
                    if !p.kind.is_send_like() || !c.kind.is_receive_like() || p.channel() != c.channel() {
                        bad.push(Violation::MessageEdgeShape(e.from, e.to));
                    } else if p.size != c.size {
                        bad.push(Violation::ByteImbalance(e.from, e.to));
                    }
                }
                EdgeKind::Context => {
                    if p.context != c.context {
                        bad.push(Violation::ContextEdgeShape(e.from, e.to));
                    }
                }
            }
        }

        if let Some(root) = self.root() {
            let mut seen = vec![false; n];
            let mut stack = vec![root];
            seen[root] = true;
            while let Some(v) = stack.pop() {
                for e in self.children(v) {
                    if !seen[e.to] {
                        seen[e.to] = true;
                        stack.push(e.to);
                    }
                }
            }
            bad.extend(seen.iter().enumerate().filter(|(_, s)| !**s).map(|(v, _)| Violation::Unreachable(v)));
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    /// Shape problems typical of lost activities: missing END, vertices that
    /// lead nowhere, SENDs nobody received, RECEIVEs with no sender.
    pub fn is_shape_anomalous(&self) -> bool {
        if !self.is_complete() || self.validate().is_err() {
            return true;
        }
        self.vertices.iter().enumerate().any(|(i, v)| {
            let has_child = self.children(i).next().is_some();
            let sent = self.children(i).any(|e| e.kind == EdgeKind::Message);
            let received = self.parents(i).any(|e| e.kind == EdgeKind::Message);
            (v.kind != ActivityType::End && !has_child)
                || (v.kind == ActivityType::Send && !sent)
                || (v.kind == ActivityType::Receive && !received)
        })
    }

    /// Graphviz rendering; context edges solid, message edges dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", self.id);
        let _ = writeln!(out, "  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];");
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(
                out,
                "  v{i} [label=\"{}\\n{}\\n{} {}B\"];",
                v.kind, v.context, v.timestamp, v.size
            );
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Context => "solid, color=red",
                EdgeKind::Message => "dashed, color=blue",
            };
            let _ = writeln!(out, "  v{} -> v{} [style={style}];", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }
}

/// Anything the correlator could not place into a CAG, by class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyCounts {
    pub overlapped_requests: u64,
    pub orphan_ends: u64,
    pub orphan_sends: u64,
    pub unmatched_receives: u64,
    pub byte_accounting_violations: u64,
    /// Receive parts still waiting on bytes when the stream ended.
    pub pending_receive_parts: u64,
}

impl AnomalyCounts {
    /// Activities dropped because of these anomalies.
    pub fn dropped_activities(&self) -> u64 {
        self.orphan_ends
            + self.orphan_sends
            + self.unmatched_receives
            + self.byte_accounting_violations
            + self.pending_receive_parts
    }
}
