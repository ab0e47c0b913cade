//! In-memory message substrate. Nodes exchange serialized bytes only.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use hfltn_core::{ClientId, CommunityId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelKind {
    MelsecSim,
    Tls13Sim,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::MelsecSim => "MELSEC_SIM",
            ChannelKind::Tls13Sim => "TLS13_SIM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Ev(ClientId),
    Derms(CommunityId),
    Epdc,
}

impl NodeId {
    pub fn tier(self) -> &'static str {
        match self {
            NodeId::Ev(_) => "ev",
            NodeId::Derms(_) => "derms",
            NodeId::Epdc => "epdc",
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Ev(i) => write!(f, "ev{i}"),
            NodeId::Derms(c) => write!(f, "derms{c}"),
            NodeId::Epdc => f.write_str("epdc"),
        }
    }
}

/// Channel a pair of nodes must use, if they may talk at all.
pub fn channel_for(a: NodeId, b: NodeId) -> Option<ChannelKind> {
    use NodeId::*;
    match (a, b) {
        (Ev(x), Ev(y)) if x != y => Some(ChannelKind::MelsecSim),
        (Ev(_), Derms(_)) | (Derms(_), Ev(_)) => Some(ChannelKind::MelsecSim),
        (Derms(_), Epdc) | (Epdc, Derms(_)) => Some(ChannelKind::Tls13Sim),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub channel_kind: ChannelKind,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: Vec<u8>,
    pub sim_timestamp: u64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("no channel between {0} and {1}")]
    NoRoute(NodeId, NodeId),
}

/// Message counts and bytes keyed by `(channel, sender tier, receiver tier, msg type)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    pub messages: BTreeMap<(ChannelKind, &'static str, &'static str, u8), (u64, u64)>,
}

impl Census {
    pub fn count(&self, channel: ChannelKind, from: &str, to: &str, msg_type: u8) -> u64 {
        self.messages
            .iter()
            .filter(|((c, f, t, m), _)| *c == channel && *f == from && *t == to && *m == msg_type)
            .map(|(_, v)| v.0)
            .sum()
    }

    pub fn merge(&mut self, other: &Census) {
        for (k, v) in &other.messages {
            let e = self.messages.entry(*k).or_default();
            e.0 += v.0;
            e.1 += v.1;
        }
    }
}

#[derive(Debug, Default)]
pub struct Network {
    queues: BTreeMap<NodeId, VecDeque<Envelope>>,
    sent_bytes: BTreeMap<NodeId, u64>,
    recv_bytes: BTreeMap<NodeId, u64>,
    census: Census,
    now: u64,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_time(&mut self, ms: u64) {
        self.now = ms;
    }

    pub fn send(&mut self, sender: NodeId, receiver: NodeId, payload: Vec<u8>) -> Result<(), NetError> {
        let channel_kind = channel_for(sender, receiver).ok_or(NetError::NoRoute(sender, receiver))?;
        let n = payload.len() as u64;
        *self.sent_bytes.entry(sender).or_default() += n;
        *self.recv_bytes.entry(receiver).or_default() += n;
        let msg_type = hfltn_core::wire::peek_type(&payload).unwrap_or(u8::MAX);
        let e = self.census.messages.entry((channel_kind, sender.tier(), receiver.tier(), msg_type)).or_default();
        e.0 += 1;
        e.1 += n;
        self.queues.entry(receiver).or_default().push_back(Envelope {
            channel_kind,
            sender,
            receiver,
            payload,
            sim_timestamp: self.now,
        });
        Ok(())
    }

    /// Removes and returns everything queued for `node`, in send order.
    pub fn drain(&mut self, node: NodeId) -> Vec<Envelope> {
        self.queues.remove(&node).map(Vec::from).unwrap_or_default()
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn sent_bytes(&self, node: NodeId) -> u64 {
        self.sent_bytes.get(&node).copied().unwrap_or(0)
    }

    pub fn recv_bytes(&self, node: NodeId) -> u64 {
        self.recv_bytes.get(&node).copied().unwrap_or(0)
    }

    /// Returns the per-round byte counters and census, then clears them.
    pub fn take_accounting(&mut self) -> (BTreeMap<NodeId, u64>, BTreeMap<NodeId, u64>, Census) {
        (
            std::mem::take(&mut self.sent_bytes),
            std::mem::take(&mut self.recv_bytes),
            std::mem::take(&mut self.census),
        )
    }
}
