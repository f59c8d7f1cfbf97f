//! Simulated data transport.
//!
//! A deterministic discrete-event model of a pub/sub fabric over a network of
//! peers, clients and routers joined by links with latency, bandwidth, loss and
//! up/down schedules. Two discovery regimes are modeled:
//!
//! * [`Mode::FullMesh`]: every participant announces each endpoint to every
//!   other participant and publishers unicast one copy per subscribing node.
//! * [`Mode::Routed`]: declarations travel one hop to adjacent nodes; routers
//!   aggregate interest by key, forward it along a spanning forest of the router
//!   graph, and fan samples out once per downstream branch. Publishers with no
//!   matching interest put nothing on the wire.

mod engine;
mod metrics;
mod topology;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use engine::{Delivery, DeliveryRecord, Network, PublishRecord, TraceEvent};
pub use metrics::{FabricMetrics, GlobalMetrics, LinkMetrics, NodeMetrics, RecoveryMetric};
pub use topology::{
    LinkSpec, LinkState, Mode, NodeSpec, Role, ScheduledLinkEvent, TopologySpec, TopologyWarning,
};

use crate::keyspace::KeyExpr;

/// Simulated time with microsecond resolution.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1000)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1000.0).round().max(0.0) as u64)
    }

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_millis_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Subscriber,
    Publisher,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("link {link} references unknown node `{node}`")]
    DanglingLink { link: String, node: String },
    #[error("invalid topology: {0}")]
    InvalidSpec(String),
    #[error("topology parse error: {0}")]
    Parse(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(EndpointId),
    #[error("endpoint {0:?} is not a publisher")]
    NotAPublisher(EndpointId),
    #[error("unknown link {0:?}")]
    UnknownLink(LinkId),
    #[error("event time {requested} is before current time {now}")]
    TimeInPast { requested: SimTime, now: SimTime },
    #[error("publisher key `{0}` must be concrete")]
    WildcardPublisher(KeyExpr),
}

/// Declared interest in one node's routing state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RoutingTable {
    pub node: String,
    pub entries: std::collections::BTreeMap<String, std::collections::BTreeSet<String>>,
}

impl RoutingTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn entry_name(kind: EndpointKind, key: &KeyExpr) -> String {
        match kind {
            EndpointKind::Subscriber => format!("sub:{key}"),
            EndpointKind::Publisher => format!("pub:{key}"),
        }
    }
}
