use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::signature::{canonical_form, pattern_id, CanonicalForm};
use crate::cag::{Cag, EdgeKind};
use crate::error::AnalysisError;
use crate::model::ActivityType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Patterns rarer than this share of all CAGs are candidates for "deformed".
    pub deformed_frequency: f64,
    /// Also require a shape anomaly (missing END, dangling SEND, ...).
    pub require_shape_anomaly: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { deformed_frequency: 0.01, require_shape_anomaly: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub id: String,
    pub signature: String,
    /// Indices into the classified slice.
    pub members: Vec<usize>,
    pub frequency: f64,
    pub deformed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub total: usize,
    /// Most frequent first.
    pub patterns: Vec<Pattern>,
}

impl Classification {
    pub fn normal(&self) -> impl Iterator<Item = &Pattern> {
        self.patterns.iter().filter(|p| !p.deformed)
    }

    pub fn deformed(&self) -> impl Iterator<Item = &Pattern> {
        self.patterns.iter().filter(|p| p.deformed)
    }
}

/// Group CAGs by isomorphism class and flag the rare, malformed ones.
pub fn classify(cags: &[Cag], config: &ClassifyConfig) -> Classification {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, cag) in cags.iter().enumerate() {
        groups.entry(canonical_form(cag).encoding).or_default().push(i);
    }
    let total = cags.len();
    let mut patterns: Vec<Pattern> = groups
        .into_iter()
        .map(|(signature, members)| {
            let frequency = members.len() as f64 / total as f64;
            let anomalous = cags[members[0]].is_shape_anomalous();
            let deformed = frequency < config.deformed_frequency && (anomalous || !config.require_shape_anomaly);
            Pattern { id: pattern_id(&signature), signature, members, frequency, deformed }
        })
        .collect();
    patterns.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then_with(|| a.signature.cmp(&b.signature)));
    Classification { total, patterns }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathVertex {
    pub kind: ActivityType,
    pub hostname: String,
    pub program: String,
}

/// Latency statistics of one edge across every member of a pattern, in ns.
/// Message edges between hosts include the clock offset of the two hosts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub kind: EdgeKind,
    pub from: usize,
    pub to: usize,
    pub mean_ns: f64,
    pub min_ns: i64,
    pub max_ns: i64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragePath {
    pub id: String,
    pub signature: String,
    pub members: usize,
    /// In canonical order.
    pub vertices: Vec<PathVertex>,
    pub edges: Vec<EdgeStats>,
}

/// Average every edge latency over isomorphic CAGs, aligned by canonical position.
pub fn average_path(members: &[&Cag]) -> Result<AveragePath, AnalysisError> {
    let first = members.first().ok_or(AnalysisError::EmptyPattern)?;
    let base = canonical_form(first);
    let forms: Vec<CanonicalForm> = members
        .iter()
        .map(|c| {
            let f = canonical_form(c);
            if f.encoding == base.encoding {
                Ok(f)
            } else {
                Err(AnalysisError::NonIsomorphicMember { cag: c.id.clone(), signature: base.id() })
            }
        })
        .collect::<Result<_, _>>()?;

    let mut pos = vec![0; base.order.len()];
    for (i, &v) in base.order.iter().enumerate() {
        pos[v] = i;
    }
    let mut edges: Vec<(EdgeKind, usize, usize)> =
        first.edges.iter().map(|e| (e.kind, pos[e.from], pos[e.to])).collect();
    edges.sort_unstable();
    let stats = edges
        .into_iter()
        .map(|(kind, from, to)| {
            let samples: Vec<i64> = members
                .iter()
                .zip(&forms)
                .map(|(c, f)| {
                    let a = c.vertices[f.order[from]].timestamp as i64;
                    let b = c.vertices[f.order[to]].timestamp as i64;
                    b - a
                })
                .collect();
            EdgeStats {
                kind,
                from,
                to,
                mean_ns: samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64,
                min_ns: *samples.iter().min().expect("non-empty"),
                max_ns: *samples.iter().max().expect("non-empty"),
                count: samples.len(),
            }
        })
        .collect();
    let vertices = base
        .order
        .iter()
        .map(|&v| {
            let x = &first.vertices[v];
            PathVertex { kind: x.kind, hostname: x.context.hostname.clone(), program: x.context.program.clone() }
        })
        .collect();
    Ok(AveragePath { id: base.id(), signature: base.encoding, members: members.len(), vertices, edges: stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// `<from program>2<to program>`.
    pub label: String,
    pub kind: EdgeKind,
    pub from: usize,
    pub to: usize,
    pub mean_ns: f64,
    pub percent: f64,
    /// A message edge between two hosts: its latency carries their clock offset.
    pub skew_afflicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub id: String,
    pub total_ns: f64,
    /// Along the BEGIN-to-END path with the most hops.
    pub segments: Vec<Segment>,
    /// Percent per segment label.
    pub components: BTreeMap<String, f64>,
}

/// Split the end-to-end latency of an average path into per-edge shares.
pub fn latency_breakdown(path: &AveragePath) -> Result<LatencyBreakdown, AnalysisError> {
    let n = path.vertices.len();
    let root = path.vertices.iter().position(|v| v.kind == ActivityType::Begin);
    let end = path.vertices.iter().position(|v| v.kind == ActivityType::End);
    let (Some(root), Some(end)) = (root, end) else {
        return Err(AnalysisError::IncompletePath(path.id.clone()));
    };
    // Canonical order is topological, so one forward pass finds the longest path.
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut hops: Vec<Option<usize>> = vec![None; n];
    hops[root] = Some(0);
    let mut by_from: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in path.edges.iter().enumerate() {
        by_from[e.from].push(i);
    }
    for v in 0..n {
        let Some(h) = hops[v] else { continue };
        for &i in &by_from[v] {
            let to = path.edges[i].to;
            if hops[to].is_none_or(|old| h + 1 > old) {
                hops[to] = Some(h + 1);
                best[to] = Some((v, i));
            }
        }
    }
    if hops[end].is_none() {
        return Err(AnalysisError::IncompletePath(path.id.clone()));
    }
    let mut chain = Vec::new();
    let mut at = end;
    while let Some((prev, edge)) = best[at] {
        chain.push(edge);
        at = prev;
    }
    chain.reverse();

    let total_ns: f64 = chain.iter().map(|&i| path.edges[i].mean_ns).sum();
    let mut components: BTreeMap<String, f64> = BTreeMap::new();
    let segments: Vec<Segment> = chain
        .iter()
        .map(|&i| {
            let e = &path.edges[i];
            let (a, b) = (&path.vertices[e.from], &path.vertices[e.to]);
            let percent = if total_ns == 0.0 { 0.0 } else { e.mean_ns / total_ns * 100.0 };
            let label = format!("{}2{}", a.program, b.program);
            *components.entry(label.clone()).or_default() += percent;
            Segment {
                label,
                kind: e.kind,
                from: e.from,
                to: e.to,
                mean_ns: e.mean_ns,
                percent,
                skew_afflicted: e.kind == EdgeKind::Message && a.hostname != b.hostname,
            }
        })
        .collect();
    Ok(LatencyBreakdown { id: path.id.clone(), total_ns, segments, components })
}
