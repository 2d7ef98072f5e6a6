//! Activity records and the one-line-per-activity log format.
//!
//! A log line looks like
//!
//! ```text
//! 1000 node1 httpd 2001 2001 SEND 10.0.0.1:45000-10.0.0.2:80 512
//! ```
//!
//! i.e. `timestamp hostname program pid tid SEND|RECEIVE sender-receiver size`.
//! BEGIN and END never appear in a log; they are derived from RECEIVE and
//! SEND by [`BoundaryRule::classify`].

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;

/// Kind of a logged interaction.
///
/// The declaration order is the ranking priority: `Begin < Send < End < Receive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActivityType {
    Begin,
    Send,
    End,
    Receive,
}

impl ActivityType {
    /// Token used on the wire. BEGIN/END are correlator-side views of
    /// RECEIVE/SEND and are written as such.
    pub fn wire_token(self) -> &'static str {
        match self {
            ActivityType::Begin | ActivityType::Receive => "RECEIVE",
            ActivityType::Send | ActivityType::End => "SEND",
        }
    }

    pub fn is_receive_like(self) -> bool {
        matches!(self, ActivityType::Begin | ActivityType::Receive)
    }

    pub fn is_send_like(self) -> bool {
        matches!(self, ActivityType::Send | ActivityType::End)
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivityType::Begin => "BEGIN",
            ActivityType::Send => "SEND",
            ActivityType::End => "END",
            ActivityType::Receive => "RECEIVE",
        })
    }
}

/// Execution entity that produced an activity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextId {
    pub hostname: String,
    pub program: String,
    pub pid: u32,
    pub tid: u32,
}

impl ContextId {
    pub fn new(hostname: impl Into<String>, program: impl Into<String>, pid: u32, tid: u32) -> Self {
        ContextId {
            hostname: hostname.into(),
            program: program.into(),
            pid,
            tid,
        }
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}[{}:{}]", self.hostname, self.program, self.pid, self.tid)
    }
}

/// One side of a TCP connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ip, port) = s.rsplit_once(':').ok_or_else(|| format!("missing ':' in endpoint {s:?}"))?;
        let ip = ip.parse::<Ipv4Addr>().map_err(|e| format!("bad ip {ip:?}: {e}"))?;
        let port = port.parse::<u16>().map_err(|e| format!("bad port {port:?}: {e}"))?;
        Ok(Endpoint { ip, port })
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Directed connection 4-tuple, sender first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel {
    pub sender: Endpoint,
    pub receiver: Endpoint,
}

impl Channel {
    pub fn reversed(self) -> Channel {
        Channel {
            sender: self.receiver,
            receiver: self.sender,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.sender, self.receiver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub size: u64,
}

impl MessageId {
    pub fn channel(&self) -> Channel {
        Channel {
            sender: self.sender,
            receiver: self.receiver,
        }
    }

    pub fn reverse_channel(&self) -> Channel {
        self.channel().reversed()
    }
}

/// A single logged kernel interaction.
///
/// `seq` is the zero-based line number within the node's log; together with
/// the node name it identifies the activity uniquely.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Activity {
    #[serde(rename = "type")]
    pub kind: ActivityType,
    pub timestamp: u64,
    pub context: ContextId,
    pub message: MessageId,
    pub seq: u64,
}

impl Activity {
    pub fn channel(&self) -> Channel {
        self.message.channel()
    }

    /// IP of the node that logged this activity.
    pub fn local_ip(&self) -> Ipv4Addr {
        if self.kind.is_send_like() {
            self.message.sender.ip
        } else {
            self.message.receiver.ip
        }
    }
}

/// Parse one log line. The returned activity has `seq == 0`; callers assign
/// the line number.
pub fn parse_activity(line: &str) -> Result<Activity, ParseError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 8 {
        return Err(ParseError::malformed(format!("expected 8 fields, found {}", fields.len())));
    }
    let num = |idx: usize, what: &str| -> Result<u64, ParseError> {
        fields[idx]
            .parse::<u64>()
            .map_err(|_| ParseError::malformed(format!("non-numeric {what} {:?}", fields[idx])))
    };
    let timestamp = num(0, "timestamp")?;
    let pid = u32::try_from(num(3, "pid")?).map_err(|_| ParseError::malformed("pid out of range"))?;
    let tid = u32::try_from(num(4, "tid")?).map_err(|_| ParseError::malformed("tid out of range"))?;
    let kind = match fields[5] {
        "SEND" => ActivityType::Send,
        "RECEIVE" => ActivityType::Receive,
        other => return Err(ParseError::malformed(format!("unknown activity type {other:?}"))),
    };
    let (src, dst) = fields[6]
        .split_once('-')
        .ok_or_else(|| ParseError::malformed("channel must be sender-receiver"))?;
    let sender: Endpoint = src.parse().map_err(ParseError::malformed)?;
    let receiver: Endpoint = dst.parse().map_err(ParseError::malformed)?;
    let size = num(7, "message size")?;
    if size == 0 {
        return Err(ParseError::malformed("message size must be positive"));
    }
    if fields[1].is_empty() || fields[2].is_empty() {
        return Err(ParseError::malformed("empty hostname or program name"));
    }
    Ok(Activity {
        kind,
        timestamp,
        context: ContextId::new(fields[1], fields[2], pid, tid),
        message: MessageId { sender, receiver, size },
        seq: 0,
    })
}

pub fn serialize_activity(a: &Activity) -> String {
    format!(
        "{} {} {} {} {} {} {}-{} {}",
        a.timestamp,
        a.context.hostname,
        a.context.program,
        a.context.pid,
        a.context.tid,
        a.kind.wire_token(),
        a.message.sender,
        a.message.receiver,
        a.message.size
    )
}

/// Decides which activities mark the start and stop of a request.
///
/// A RECEIVE arriving on an entry port from outside the data center is a
/// BEGIN; the SEND going back out on that connection is an END.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryRule {
    pub entry_ports: BTreeSet<u16>,
    pub internal_hosts: BTreeSet<Ipv4Addr>,
}

impl BoundaryRule {
    pub fn new(entry_ports: impl IntoIterator<Item = u16>, internal_hosts: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        BoundaryRule {
            entry_ports: entry_ports.into_iter().collect(),
            internal_hosts: internal_hosts.into_iter().collect(),
        }
    }

    pub fn classify(&self, mut a: Activity) -> Activity {
        let msg = &a.message;
        match a.kind {
            ActivityType::Receive
                if self.entry_ports.contains(&msg.receiver.port) && !self.internal_hosts.contains(&msg.sender.ip) =>
            {
                a.kind = ActivityType::Begin;
            }
            ActivityType::Send
                if self.entry_ports.contains(&msg.sender.port) && !self.internal_hosts.contains(&msg.receiver.ip) =>
            {
                a.kind = ActivityType::End;
            }
            _ => {}
        }
        a
    }
}

/// Identifies one log line across all nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivityRef {
    pub node: Arc<str>,
    pub seq: u64,
}

impl ActivityRef {
    pub fn new(node: impl Into<Arc<str>>, seq: u64) -> Self {
        ActivityRef { node: node.into(), seq }
    }
}

impl fmt::Display for ActivityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.seq)
    }
}

impl FromStr for ActivityRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, seq) = s.rsplit_once(':').ok_or_else(|| format!("bad activity ref {s:?}"))?;
        let seq = seq.parse().map_err(|_| format!("bad sequence number in {s:?}"))?;
        Ok(ActivityRef::new(node, seq))
    }
}

impl Serialize for ActivityRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivityRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An activity tagged with the log it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeActivity {
    pub node: Arc<str>,
    pub activity: Activity,
}

impl NodeActivity {
    pub fn reference(&self) -> ActivityRef {
        ActivityRef {
            node: self.node.clone(),
            seq: self.activity.seq,
        }
    }
}
