//! Builds CAGs from ranked activities.
//!
//! Two index maps drive construction. The message map (`mmap`) holds, per
//! channel, the SEND vertex whose bytes are still in flight together with an
//! outstanding byte count; the context map (`cmap`) holds the latest vertex
//! seen in each execution context.

use std::collections::HashMap;

use crate::cag::{AnomalyCounts, Cag, CagStatus, Edge, EdgeKind, Vertex};
use crate::model::{ActivityRef, ActivityType, Channel, ContextId, NodeActivity};

/// Read access to the message map, as needed by the ranker.
pub trait MessageView {
    /// Bytes still expected on `channel`, if a SEND on it is in flight.
    fn outstanding(&self, channel: &Channel) -> Option<u64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct VertexRef {
    cag: u64,
    idx: usize,
}

#[derive(Debug)]
struct Builder {
    id: String,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    /// For SEND vertices, the RECEIVE vertex that consumed them.
    matched: HashMap<usize, usize>,
    channels: Vec<Channel>,
}

impl Builder {
    fn push(&mut self, v: Vertex) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    fn into_cag(self, status: CagStatus) -> Cag {
        let mut cag = Cag {
            id: self.id,
            status,
            vertices: self.vertices,
            edges: self.edges,
        };
        cag.canonicalize();
        cag
    }
}

#[derive(Debug)]
struct InFlight {
    send: VertexRef,
    outstanding: u64,
    pending: Vec<ActivityRef>,
    pending_bytes: u64,
    pending_first_ts: u64,
    /// RECEIVE vertex created for an earlier portion of the same message.
    receive: Option<VertexRef>,
}

fn vertex_from(c: &NodeActivity) -> Vertex {
    let a = &c.activity;
    Vertex {
        kind: a.kind,
        timestamp: a.timestamp,
        first_timestamp: a.timestamp,
        context: a.context.clone(),
        sender: a.message.sender,
        receiver: a.message.receiver,
        size: a.message.size,
        parts: vec![c.reference()],
    }
}

#[derive(Debug, Default)]
pub struct Engine {
    cags: HashMap<u64, Builder>,
    next_id: u64,
    cmap: HashMap<ContextId, VertexRef>,
    mmap: HashMap<Channel, InFlight>,
    anomalies: AnomalyCounts,
    absorbed: u64,
}

impl MessageView for Engine {
    fn outstanding(&self, channel: &Channel) -> Option<u64> {
        self.mmap.get(channel).map(|e| e.outstanding)
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn anomalies(&self) -> &AnomalyCounts {
        &self.anomalies
    }

    /// Activities that ended up inside some CAG vertex.
    pub fn absorbed(&self) -> u64 {
        self.absorbed
    }

    pub fn in_progress(&self) -> usize {
        self.cags.len()
    }

    /// Feed one candidate. Returns the CAG it completed, if any.
    pub fn process(&mut self, current: NodeActivity) -> Option<Cag> {
        match current.activity.kind {
            ActivityType::Begin => {
                self.handle_begin(current);
                None
            }
            ActivityType::End => self.handle_end(current),
            ActivityType::Send => {
                self.handle_send(current);
                None
            }
            ActivityType::Receive => {
                self.handle_receive(current);
                None
            }
        }
    }

    /// End of stream: hand back every unfinished CAG, marked incomplete.
    pub fn flush(&mut self) -> Vec<Cag> {
        for entry in self.mmap.values() {
            self.anomalies.pending_receive_parts += entry.pending.len() as u64;
        }
        self.mmap.clear();
        self.cmap.clear();
        let mut out: Vec<Cag> = self
            .cags
            .drain()
            .map(|(_, b)| b.into_cag(CagStatus::IncompleteAtFlush))
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// cmap entry for `ctx`, if it still points into an unfinished CAG.
    fn live_parent(&self, ctx: &ContextId) -> Option<VertexRef> {
        self.cmap.get(ctx).copied().filter(|v| self.cags.contains_key(&v.cag))
    }

    fn vertex(&self, v: VertexRef) -> &Vertex {
        &self.cags[&v.cag].vertices[v.idx]
    }

    fn handle_begin(&mut self, current: NodeActivity) {
        let ctx = current.activity.context.clone();
        if self.live_parent(&ctx).is_some() {
            self.anomalies.overlapped_requests += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        let builder = Builder {
            id: current.reference().to_string(),
            vertices: vec![vertex_from(&current)],
            edges: Vec::new(),
            matched: HashMap::new(),
            channels: Vec::new(),
        };
        self.cags.insert(id, builder);
        self.cmap.insert(ctx, VertexRef { cag: id, idx: 0 });
        self.absorbed += 1;
    }

    fn handle_end(&mut self, current: NodeActivity) -> Option<Cag> {
        let ctx = current.activity.context.clone();
        let Some(parent) = self.live_parent(&ctx) else {
            self.anomalies.orphan_ends += 1;
            return None;
        };
        let mut builder = self.cags.remove(&parent.cag).expect("live parent");
        let idx = builder.push(vertex_from(&current));
        builder.edges.push(Edge {
            kind: EdgeKind::Context,
            from: parent.idx,
            to: idx,
        });
        self.absorbed += 1;
        self.cmap.remove(&ctx);
        for ch in &builder.channels {
            if self.mmap.get(ch).is_some_and(|e| e.send.cag == parent.cag) {
                let stale = self.mmap.remove(ch).expect("present");
                self.anomalies.pending_receive_parts += stale.pending.len() as u64;
            }
        }
        Some(builder.into_cag(CagStatus::Complete))
    }

    fn handle_send(&mut self, current: NodeActivity) {
        let ctx = current.activity.context.clone();
        let channel = current.activity.channel();
        let size = current.activity.message.size;
        let Some(parent) = self.live_parent(&ctx) else {
            self.anomalies.orphan_sends += 1;
            return;
        };
        self.absorbed += 1;

        let p = self.vertex(parent);
        if p.kind == ActivityType::Send && p.channel() == channel {
            // Another part of the same outgoing message.
            let builder = self.cags.get_mut(&parent.cag).expect("live parent");
            let v = &mut builder.vertices[parent.idx];
            v.size += size;
            v.parts.push(current.reference());
            let earlier_receive = builder.matched.get(&parent.idx).map(|&idx| VertexRef { cag: parent.cag, idx });
            match self.mmap.get_mut(&channel) {
                Some(entry) if entry.send == parent => entry.outstanding += size,
                _ => {
                    self.mmap.insert(
                        channel,
                        InFlight {
                            send: parent,
                            outstanding: size,
                            pending: Vec::new(),
                            pending_bytes: 0,
                            pending_first_ts: 0,
                            receive: earlier_receive,
                        },
                    );
                }
            }
            return;
        }

        let builder = self.cags.get_mut(&parent.cag).expect("live parent");
        let idx = builder.push(vertex_from(&current));
        builder.edges.push(Edge {
            kind: EdgeKind::Context,
            from: parent.idx,
            to: idx,
        });
        builder.channels.push(channel);
        let send = VertexRef { cag: parent.cag, idx };
        if let Some(stale) = self.mmap.insert(
            channel,
            InFlight {
                send,
                outstanding: size,
                pending: Vec::new(),
                pending_bytes: 0,
                pending_first_ts: 0,
                receive: None,
            },
        ) {
            self.anomalies.pending_receive_parts += stale.pending.len() as u64;
        }
        self.cmap.insert(ctx, send);
    }

    fn handle_receive(&mut self, current: NodeActivity) {
        let ctx = current.activity.context.clone();
        let channel = current.activity.channel();
        let size = current.activity.message.size;
        let Some(entry) = self.mmap.get_mut(&channel) else {
            self.anomalies.unmatched_receives += 1;
            return;
        };
        if size > entry.outstanding {
            let entry = self.mmap.remove(&channel).expect("present");
            self.anomalies.byte_accounting_violations += 1 + entry.pending.len() as u64;
            return;
        }
        entry.outstanding -= size;
        if entry.pending.is_empty() {
            entry.pending_first_ts = current.activity.timestamp;
        }
        entry.pending.push(current.reference());
        entry.pending_bytes += size;
        if entry.outstanding > 0 {
            return;
        }

        let entry = self.mmap.remove(&channel).expect("present");
        if !self.cags.contains_key(&entry.send.cag) {
            self.anomalies.unmatched_receives += entry.pending.len() as u64;
            return;
        }
        self.absorbed += entry.pending.len() as u64;
        let ts = current.activity.timestamp;

        // The sender appended to a message we already built a RECEIVE for.
        if let Some(rv) = entry.receive.filter(|rv| self.cmap.get(&ctx) == Some(rv)) {
            let v = &mut self.cags.get_mut(&rv.cag).expect("live").vertices[rv.idx];
            v.size += entry.pending_bytes;
            v.timestamp = ts;
            v.parts.extend(entry.pending);
            return;
        }

        let parent_ctx = self.live_parent(&ctx);
        let mut v = vertex_from(&current);
        v.first_timestamp = entry.pending_first_ts;
        v.size = entry.pending_bytes;
        v.parts = entry.pending;
        let builder = self.cags.get_mut(&entry.send.cag).expect("live");
        let idx = builder.push(v);
        builder.edges.push(Edge {
            kind: EdgeKind::Message,
            from: entry.send.idx,
            to: idx,
        });
        builder.matched.insert(entry.send.idx, idx);
        // A recycled thread's previous vertex belongs to another request.
        if let Some(pc) = parent_ctx.filter(|pc| pc.cag == entry.send.cag) {
            builder.edges.push(Edge {
                kind: EdgeKind::Context,
                from: pc.idx,
                to: idx,
            });
        }
        self.cmap.insert(ctx, VertexRef { cag: entry.send.cag, idx });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activity, Endpoint, MessageId};
    use std::net::Ipv4Addr;

    struct Trace {
        next_seq: HashMap<String, u64>,
    }

    impl Trace {
        fn new() -> Self {
            Trace { next_seq: HashMap::new() }
        }

        fn act(&mut self, kind: ActivityType, ts: u64, ctx: &ContextId, ch: Channel, size: u64) -> NodeActivity {
            let seq = self.next_seq.entry(ctx.hostname.clone()).or_default();
            let a = Activity {
                kind,
                timestamp: ts,
                context: ctx.clone(),
                message: MessageId { sender: ch.sender, receiver: ch.receiver, size },
                seq: *seq,
            };
            *seq += 1;
            NodeActivity { node: ctx.hostname.as_str().into(), activity: a }
        }
    }

    fn ep(a: u8, b: u8, port: u16) -> Endpoint {
        Endpoint::new(Ipv4Addr::new(10, 0, a, b), port)
    }

    fn contexts() -> (ContextId, ContextId) {
        (ContextId::new("web", "httpd", 100, 100), ContextId::new("app", "java", 200, 201))
    }

    fn client_channel() -> Channel {
        Channel { sender: Endpoint::new(Ipv4Addr::new(172, 16, 0, 1), 5000), receiver: ep(0, 1, 80) }
    }

    fn down() -> Channel {
        Channel { sender: ep(0, 1, 40000), receiver: ep(0, 2, 8080) }
    }

    #[test]
    fn empty_engine_flushes_nothing() {
        let mut e = Engine::new();
        assert!(e.flush().is_empty());
        assert_eq!(e.anomalies(), &AnomalyCounts::default());
    }

    #[test]
    fn minimal_request_emits_two_vertex_cag() {
        let (web, _) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        assert!(e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10)).is_none());
        assert_eq!(e.in_progress(), 1);
        let cag = e.process(t.act(ActivityType::End, 5, &web, client_channel().reversed(), 99)).unwrap();
        assert_eq!(cag.vertices.len(), 2);
        assert_eq!(cag.edges, vec![Edge { kind: EdgeKind::Context, from: 0, to: 1 }]);
        assert!(cag.is_complete());
        assert_eq!(cag.validate(), Ok(()));
    }

    #[test]
    fn end_without_begin_is_orphan() {
        let (web, _) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        assert!(e.process(t.act(ActivityType::End, 5, &web, client_channel().reversed(), 99)).is_none());
        assert_eq!(e.anomalies().orphan_ends, 1);
    }

    #[test]
    fn send_without_context_is_orphan() {
        let (web, _) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Send, 5, &web, down(), 99));
        assert_eq!(e.anomalies().orphan_sends, 1);
        assert_eq!(e.outstanding(&down()), None);
    }

    #[test]
    fn receive_without_send_is_unmatched() {
        let (_, app) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Receive, 5, &app, down(), 99));
        assert_eq!(e.anomalies().unmatched_receives, 1);
    }

    #[test]
    fn two_begins_in_different_contexts_are_two_cags() {
        let (web, _) = contexts();
        let other = ContextId { tid: 101, ..web.clone() };
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Begin, 2, &other, client_channel(), 10));
        assert_eq!(e.in_progress(), 2);
        assert_eq!(e.anomalies().overlapped_requests, 0);
        e.process(t.act(ActivityType::Begin, 3, &web, client_channel(), 10));
        assert_eq!(e.anomalies().overlapped_requests, 1);
    }

    #[test]
    fn split_sends_merge_and_receives_complete_at_zero() {
        let (web, app) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 300));
        e.process(t.act(ActivityType::Send, 3, &web, down(), 212));
        assert_eq!(e.outstanding(&down()), Some(512));
        e.process(t.act(ActivityType::Receive, 10, &app, down(), 200));
        assert_eq!(e.outstanding(&down()), Some(312));
        e.process(t.act(ActivityType::Receive, 11, &app, down(), 200));
        assert_eq!(e.outstanding(&down()), Some(112));
        e.process(t.act(ActivityType::Receive, 12, &app, down(), 112));
        assert_eq!(e.outstanding(&down()), None);
        e.process(t.act(ActivityType::Send, 13, &app, down().reversed(), 40));
        e.process(t.act(ActivityType::Receive, 20, &web, down().reversed(), 40));
        let cag = e.process(t.act(ActivityType::End, 21, &web, client_channel().reversed(), 99)).unwrap();
        assert_eq!(cag.validate(), Ok(()));
        let sends: Vec<_> = cag.vertices.iter().filter(|v| v.channel() == down()).collect();
        assert_eq!(sends.len(), 2);
        assert!(sends.iter().all(|v| v.size == 512));
        let recv = sends.iter().find(|v| v.kind == ActivityType::Receive).unwrap();
        assert_eq!(recv.parts.len(), 3);
        assert_eq!(recv.timestamp, 12);
        assert_eq!(recv.first_timestamp, 10);
        assert_eq!(cag.message_edges().count(), 2);
        // BEGIN->SEND, SEND->RECEIVE(reply), RECEIVE->END, RECEIVE(app)->SEND(app)
        assert_eq!(cag.context_edges().count(), 4);
        assert_eq!(e.absorbed(), 9);
    }

    #[test]
    fn receive_that_completes_early_absorbs_late_send_parts() {
        let (web, app) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 300));
        e.process(t.act(ActivityType::Receive, 10, &app, down(), 300));
        e.process(t.act(ActivityType::Send, 3, &web, down(), 212));
        e.process(t.act(ActivityType::Receive, 11, &app, down(), 212));
        e.process(t.act(ActivityType::Send, 13, &app, down().reversed(), 40));
        e.process(t.act(ActivityType::Receive, 20, &web, down().reversed(), 40));
        let cag = e.process(t.act(ActivityType::End, 21, &web, client_channel().reversed(), 99)).unwrap();
        assert_eq!(cag.validate(), Ok(()));
        assert_eq!(cag.vertices.len(), 6);
        let recv = cag.vertices.iter().find(|v| v.kind == ActivityType::Receive && v.channel() == down()).unwrap();
        assert_eq!(recv.size, 512);
        assert_eq!(recv.parts.len(), 2);
    }

    #[test]
    fn oversized_receive_is_accounting_violation() {
        let (web, app) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 100));
        e.process(t.act(ActivityType::Receive, 10, &app, down(), 101));
        assert_eq!(e.anomalies().byte_accounting_violations, 1);
        assert_eq!(e.outstanding(&down()), None);
    }

    #[test]
    fn recycled_thread_gets_message_edge_only() {
        let (web, app) = contexts();
        let web2 = ContextId { tid: 101, ..web.clone() };
        let down2 = Channel { sender: ep(0, 1, 40001), receiver: ep(0, 2, 8080) };
        let mut t = Trace::new();
        let mut e = Engine::new();
        // Request 1 goes through the app thread...
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 10));
        e.process(t.act(ActivityType::Receive, 3, &app, down(), 10));
        e.process(t.act(ActivityType::Send, 4, &app, down().reversed(), 10));
        // ...then request 2 reuses it before request 1 finished upstream.
        e.process(t.act(ActivityType::Begin, 5, &web2, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 6, &web2, down2, 10));
        e.process(t.act(ActivityType::Receive, 7, &app, down2, 10));
        e.process(t.act(ActivityType::Send, 8, &app, down2.reversed(), 10));
        e.process(t.act(ActivityType::Receive, 9, &web, down().reversed(), 10));
        let c1 = e.process(t.act(ActivityType::End, 10, &web, client_channel().reversed(), 9)).unwrap();
        e.process(t.act(ActivityType::Receive, 11, &web2, down2.reversed(), 10));
        let c2 = e.process(t.act(ActivityType::End, 12, &web2, client_channel().reversed(), 9)).unwrap();
        for c in [&c1, &c2] {
            assert_eq!(c.validate(), Ok(()));
            assert_eq!(c.vertices.len(), 6);
        }
        let app_recv = c2.vertices.iter().position(|v| v.kind == ActivityType::Receive && v.context == app).unwrap();
        let parents: Vec<_> = c2.parents(app_recv).collect();
        assert_eq!(parents.len(), 1);
        assert_eq!(parents[0].kind, EdgeKind::Message);
    }

    #[test]
    fn end_whose_parent_is_receive() {
        let (web, app) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 10));
        e.process(t.act(ActivityType::Receive, 3, &app, down(), 10));
        e.process(t.act(ActivityType::Send, 4, &app, down().reversed(), 10));
        e.process(t.act(ActivityType::Receive, 5, &web, down().reversed(), 10));
        let cag = e.process(t.act(ActivityType::End, 6, &web, client_channel().reversed(), 9)).unwrap();
        let end = cag.end().unwrap();
        let parent = cag.parents(end).next().unwrap();
        assert_eq!(cag.vertices[parent.from].kind, ActivityType::Receive);
    }

    #[test]
    fn unfinished_cags_flush_incomplete() {
        let (web, _) = contexts();
        let mut t = Trace::new();
        let mut e = Engine::new();
        e.process(t.act(ActivityType::Begin, 1, &web, client_channel(), 10));
        e.process(t.act(ActivityType::Send, 2, &web, down(), 10));
        let out = e.flush();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].status, CagStatus::IncompleteAtFlush);
        assert!(out[0].is_shape_anomalous());
    }
}
