//! Canonical form of a CAG up to isomorphism.
//!
//! Vertices are labelled by activity type, host and program; edges by kind.
//! Two CAGs get the same encoding exactly when a label- and kind-preserving
//! isomorphism exists between them. Colours start from (longest-path depth,
//! label) and are refined by neighbourhood; ties left after refinement are
//! broken by individualising each candidate in turn and keeping the smallest
//! encoding.

use crate::cag::{Cag, EdgeKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalForm {
    pub encoding: String,
    /// `order[i]` is the vertex placed at canonical position `i`.
    pub order: Vec<usize>,
}

impl CanonicalForm {
    /// Short stable identifier derived from the encoding (64-bit FNV-1a).
    pub fn id(&self) -> String {
        pattern_id(&self.encoding)
    }
}

pub fn pattern_id(encoding: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in encoding.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

struct Graph<'a> {
    labels: Vec<String>,
    adj: Vec<Vec<(u8, u8, usize)>>,
    cag: &'a Cag,
}

fn kind_code(k: EdgeKind) -> u8 {
    match k {
        EdgeKind::Context => 0,
        EdgeKind::Message => 1,
    }
}

fn depths(cag: &Cag) -> Vec<usize> {
    let n = cag.vertices.len();
    let mut depth = vec![0; n];
    if let Some(order) = cag.topological_order() {
        for v in order {
            for e in cag.children(v) {
                depth[e.to] = depth[e.to].max(depth[v] + 1);
            }
        }
    }
    depth
}

/// Dense ranks of `keys`, preserving their order.
fn rank<K: Ord + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    let ranks = keys.iter().map(|k| sorted.binary_search(k).expect("present")).collect();
    (ranks, sorted.len())
}

impl Graph<'_> {
    fn refine(&self, mut col: Vec<usize>) -> (Vec<usize>, usize) {
        let mut classes = rank(&col).1;
        loop {
            let keys: Vec<(usize, Vec<(u8, u8, usize)>)> = (0..col.len())
                .map(|v| {
                    let mut nb: Vec<(u8, u8, usize)> = self.adj[v].iter().map(|&(d, k, u)| (d, k, col[u])).collect();
                    nb.sort_unstable();
                    (col[v], nb)
                })
                .collect();
            let (next, count) = rank(&keys);
            col = next;
            if count == classes {
                return (col, count);
            }
            classes = count;
        }
    }

    fn encode(&self, col: &[usize]) -> CanonicalForm {
        let n = col.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&v| col[v]);
        let mut pos = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        let mut edges: Vec<(usize, usize, char)> = self
            .cag
            .edges
            .iter()
            .map(|e| (pos[e.from], pos[e.to], if e.kind == EdgeKind::Context { 'c' } else { 'm' }))
            .collect();
        edges.sort_unstable();
        let mut encoding = order.iter().map(|&v| self.labels[v].as_str()).collect::<Vec<_>>().join(";");
        encoding.push('|');
        let edges: Vec<String> = edges.iter().map(|(a, b, k)| format!("{k}{a}>{b}")).collect();
        encoding.push_str(&edges.join(","));
        CanonicalForm { encoding, order }
    }

    fn search(&self, col: Vec<usize>) -> CanonicalForm {
        let n = col.len();
        let (col, classes) = self.refine(col);
        if classes == n {
            return self.encode(&col);
        }
        let mut counts = vec![0usize; classes];
        for &c in &col {
            counts[c] += 1;
        }
        let target = counts.iter().position(|&k| k > 1).expect("not discrete");
        let mut best: Option<CanonicalForm> = None;
        for v in (0..n).filter(|&v| col[v] == target) {
            let split: Vec<usize> = (0..n).map(|u| 2 * col[u] + usize::from(u != v)).collect();
            let cand = self.search(split);
            if best.as_ref().is_none_or(|b| cand.encoding < b.encoding) {
                best = Some(cand);
            }
        }
        best.expect("class has members")
    }
}

pub fn canonical_form(cag: &Cag) -> CanonicalForm {
    let n = cag.vertices.len();
    let labels: Vec<String> = cag.vertices.iter().map(|v| v.label()).collect();
    let mut adj = vec![Vec::new(); n];
    for e in &cag.edges {
        if e.from < n && e.to < n {
            adj[e.from].push((0, kind_code(e.kind), e.to));
            adj[e.to].push((1, kind_code(e.kind), e.from));
        }
    }
    let g = Graph { labels, adj, cag };
    let depth = depths(cag);
    let keys: Vec<(usize, &str)> = (0..n).map(|v| (depth[v], g.labels[v].as_str())).collect();
    let (col, _) = rank(&keys);
    g.search(col)
}

pub fn signature(cag: &Cag) -> String {
    canonical_form(cag).encoding
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cag::{CagStatus, Edge, Vertex};
    use crate::model::{ActivityRef, ActivityType, ContextId, Endpoint};

    fn v(kind: ActivityType, host: &str, seq: u64) -> Vertex {
        let ep = Endpoint::new([10, 0, 0, 1].into(), 1);
        Vertex {
            kind,
            timestamp: seq,
            first_timestamp: seq,
            context: ContextId::new(host, "p", 1, 1),
            sender: ep,
            receiver: ep,
            size: 1,
            parts: vec![ActivityRef::new(host, seq)],
        }
    }

    fn e(kind: EdgeKind, from: usize, to: usize) -> Edge {
        Edge { kind, from, to }
    }

    fn chain() -> Cag {
        use ActivityType::*;
        Cag {
            id: "a:0".into(),
            status: CagStatus::Complete,
            vertices: vec![v(Begin, "a", 0), v(Send, "a", 1), v(Receive, "b", 0), v(Send, "b", 1), v(Receive, "a", 2), v(End, "a", 3)],
            edges: vec![
                e(EdgeKind::Context, 0, 1),
                e(EdgeKind::Message, 1, 2),
                e(EdgeKind::Context, 2, 3),
                e(EdgeKind::Message, 3, 4),
                e(EdgeKind::Context, 1, 4),
                e(EdgeKind::Context, 4, 5),
            ],
        }
    }

    #[test]
    fn permutation_invariant() {
        let a = chain();
        let mut b = a.clone();
        let perm = [3usize, 5, 0, 1, 4, 2];
        let mut vs = vec![None; 6];
        for (old, &new) in perm.iter().enumerate() {
            vs[new] = Some(a.vertices[old].clone());
        }
        b.vertices = vs.into_iter().map(Option::unwrap).collect();
        b.edges = a.edges.iter().map(|x| e(x.kind, perm[x.from], perm[x.to])).collect();
        assert_eq!(signature(&a), signature(&b));
        let (fa, fb) = (canonical_form(&a), canonical_form(&b));
        for i in 0..6 {
            assert_eq!(perm[fa.order[i]], fb.order[i]);
        }
    }

    #[test]
    fn edge_kind_matters() {
        let a = chain();
        let mut b = a.clone();
        b.edges[4].kind = EdgeKind::Message;
        assert_ne!(signature(&a), signature(&b));
    }

    #[test]
    fn encoding_is_topological() {
        let f = canonical_form(&chain());
        assert!(f.encoding.starts_with("BEGIN a/p;SEND a/p;RECEIVE b/p"));
        assert_eq!(f.id().len(), 16);
    }

    #[test]
    fn symmetric_graph_terminates() {
        use ActivityType::*;
        let vs = vec![v(Begin, "a", 0), v(Send, "a", 1), v(Send, "a", 2), v(Send, "a", 3)];
        let cag = Cag {
            id: "a:0".into(),
            status: CagStatus::InProgress,
            vertices: vs,
            edges: vec![e(EdgeKind::Context, 0, 1), e(EdgeKind::Context, 0, 2), e(EdgeKind::Context, 0, 3)],
        };
        assert_eq!(signature(&cag), "BEGIN a/p;SEND a/p;SEND a/p;SEND a/p|c0>1,c0>2,c0>3");
    }
}
