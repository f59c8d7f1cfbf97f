use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::topology::{ms_to_time, LinkState, Mode, Role, TopologySpec, TopologyWarning};
use super::{EndpointId, EndpointKind, FabricError, FabricMetrics, LinkId, RoutingTable, SimTime};
use crate::keyspace::{KeyExpr, Sample, SampleKind};

/// Fixed per-message framing overhead in bytes.
pub(crate) const HEADER_BYTES: usize = 16;
/// Endpoint identity carried by a full-mesh endpoint announcement.
const ENDPOINT_INFO_BYTES: usize = 16;
/// Per-entry overhead of an interest declaration or summary entry.
const INTEREST_ENTRY_BYTES: usize = 4;
/// Source and sequence number carried with each sample.
const SAMPLE_META_BYTES: usize = 12;
/// Extra wait after the expected acknowledgement time before a lost control
/// message is sent again.
const RETRANSMIT_SLACK: SimTime = SimTime(50_000);
pub(crate) const WINDOW: u64 = 100_000;

#[derive(Debug, Clone)]
enum Body {
    /// Full mesh: endpoint announcement addressed to one participant.
    Announce {
        ep: EndpointId,
        owner: usize,
        kind: EndpointKind,
        key: KeyExpr,
    },
    Retract {
        ep: EndpointId,
    },
    /// Routed: hop-by-hop interest.
    Declare {
        kind: EndpointKind,
        key: KeyExpr,
    },
    Undeclare {
        kind: EndpointKind,
        key: KeyExpr,
    },
    Summary {
        entries: Vec<(EndpointKind, KeyExpr)>,
    },
    Data {
        id: u64,
        src: usize,
        sample: Arc<Sample>,
    },
}

impl Body {
    fn is_control(&self) -> bool {
        !matches!(self, Body::Data { .. })
    }

    fn size(&self) -> usize {
        HEADER_BYTES
            + match self {
                Body::Announce { key, .. } => ENDPOINT_INFO_BYTES + key.encoded_len(),
                Body::Retract { .. } => ENDPOINT_INFO_BYTES,
                Body::Declare { key, .. } | Body::Undeclare { key, .. } => {
                    INTEREST_ENTRY_BYTES + key.encoded_len()
                }
                Body::Summary { entries } => entries
                    .iter()
                    .map(|(_, k)| INTEREST_ENTRY_BYTES + k.encoded_len())
                    .sum::<usize>(),
                Body::Data { sample, .. } => {
                    SAMPLE_META_BYTES + sample.key.encoded_len() + sample.payload.len()
                }
            }
    }
}

#[derive(Debug, Clone)]
struct Packet {
    body: Body,
    /// Full mesh unicast destination.
    dst: Option<usize>,
    size: usize,
}

impl Packet {
    fn new(body: Body, dst: Option<usize>) -> Self {
        let size = body.size();
        Packet { body, dst, size }
    }
}

#[derive(Debug)]
enum EventKind {
    Arrive {
        link: usize,
        to: usize,
        epoch: u64,
        ctrl_seq: Option<u64>,
        packet: Packet,
    },
    LinkChange {
        link: usize,
        state: LinkState,
    },
    Retransmit {
        link: usize,
        from: usize,
        epoch: u64,
        ctrl_seq: u64,
        packet: Packet,
    },
}

#[derive(Debug)]
struct Event {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// One processed engine event, kept for determinism audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub at: SimTime,
    pub code: u8,
    pub link: u32,
    pub node: u32,
    pub bytes: u32,
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub sample: Arc<Sample>,
    pub delivered_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct DeliveryRecord {
    pub sample_id: u64,
    pub source: usize,
    pub sink: usize,
    pub endpoint: EndpointId,
    pub sample: Arc<Sample>,
    pub published_at: SimTime,
    pub delivered_at: SimTime,
    pub remote: bool,
}

impl DeliveryRecord {
    pub fn latency(&self) -> SimTime {
        self.delivered_at.saturating_sub(self.published_at)
    }
}

#[derive(Debug, Clone)]
pub struct PublishRecord {
    pub id: u64,
    pub node: usize,
    pub key: KeyExpr,
    pub at: SimTime,
    pub payload_len: usize,
    /// Live subscriber endpoints whose key intersects the sample key.
    pub expected: u32,
    pub delivered: u32,
}

#[derive(Debug)]
struct EndpointRt {
    node: usize,
    kind: EndpointKind,
    key: KeyExpr,
    live: bool,
    inbox: Vec<Delivery>,
}

#[derive(Debug, Default)]
struct Face {
    link: usize,
    neighbor: usize,
    active: bool,
    /// Link is down and the face keeps what it had learned for drop accounting.
    stale: bool,
    learned_subs: BTreeSet<KeyExpr>,
    learned_pubs: BTreeSet<KeyExpr>,
    advertised: BTreeSet<(EndpointKind, KeyExpr)>,
}

#[derive(Debug)]
struct NodeRt {
    name: String,
    role: Role,
    endpoints: Vec<EndpointId>,
    local_subs: BTreeMap<KeyExpr, usize>,
    local_pubs: BTreeMap<KeyExpr, usize>,
    faces: Vec<Face>,
    /// Full mesh: remote endpoints learned through announcements.
    discovered: BTreeMap<EndpointId, (usize, EndpointKind, KeyExpr)>,
    match_cache: HashMap<KeyExpr, Vec<usize>>,
    seen: HashSet<u64>,
    first_declared: Option<SimTime>,
    first_delivery: Option<SimTime>,
    bytes_sent: u64,
    bytes_received: u64,
    startup_bytes: u64,
}

#[derive(Debug)]
struct Channel {
    next_send: u64,
    next_expected: u64,
    reorder: BTreeMap<u64, Packet>,
}

#[derive(Debug)]
struct LinkRt {
    ends: [usize; 2],
    up: bool,
    epoch: u64,
    latency: SimTime,
    bandwidth_kbps: f64,
    loss: f64,
    medium: Option<usize>,
    busy_until: SimTime,
    channels: [Channel; 2],
    bytes: u64,
    control_bytes: u64,
    data_bytes: u64,
    startup_control_bytes: u64,
    dropped: u64,
    windows: BTreeMap<u64, f64>,
}

impl LinkRt {
    fn dir(&self, from: usize) -> usize {
        if self.ends[0] == from {
            0
        } else {
            1
        }
    }

    fn other(&self, node: usize) -> usize {
        if self.ends[0] == node {
            self.ends[1]
        } else {
            self.ends[0]
        }
    }
}

/// A simulated network instance.
pub struct Network {
    spec: TopologySpec,
    warnings: Vec<TopologyWarning>,
    nodes: Vec<NodeRt>,
    links: Vec<LinkRt>,
    media_busy: Vec<SimTime>,
    now: SimTime,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    rng: ChaCha8Rng,
    endpoints: Vec<EndpointRt>,
    next_sample: u64,
    stream_seq: HashMap<(usize, KeyExpr), u64>,
    expected_cache: HashMap<KeyExpr, u32>,
    publishes: Vec<PublishRecord>,
    deliveries: Vec<DeliveryRecord>,
    toward: HashMap<usize, Vec<Option<(usize, usize)>>>,
    startup_phase_end: Option<SimTime>,
    link_history: Vec<(usize, SimTime, LinkState)>,
    trace: Vec<TraceEvent>,
}

impl Network {
    /// Builds a network at time zero. Link schedule entries at time zero are
    /// applied immediately, later ones are queued.
    pub fn new(spec: TopologySpec) -> Result<Self, FabricError> {
        let warnings = spec.validate()?;
        let index = spec.node_index();
        let mut nodes: Vec<NodeRt> = spec
            .nodes
            .iter()
            .map(|n| NodeRt {
                name: n.name.clone(),
                role: n.role,
                endpoints: Vec::new(),
                local_subs: BTreeMap::new(),
                local_pubs: BTreeMap::new(),
                faces: Vec::new(),
                discovered: BTreeMap::new(),
                match_cache: HashMap::new(),
                seen: HashSet::new(),
                first_declared: None,
                first_delivery: None,
                bytes_sent: 0,
                bytes_received: 0,
                startup_bytes: 0,
            })
            .collect();
        let mut media: BTreeMap<&str, usize> = BTreeMap::new();
        for l in &spec.links {
            if let Some(m) = &l.medium {
                let n = media.len();
                media.entry(m.as_str()).or_insert(n);
            }
        }
        let mut links = Vec::with_capacity(spec.links.len());
        let mut initial = Vec::new();
        for (i, l) in spec.links.iter().enumerate() {
            let a = index[l.endpoints[0].as_str()];
            let b = index[l.endpoints[1].as_str()];
            let mut up = true;
            for ev in &l.schedule {
                if ev.at_ms <= 0.0 {
                    up = ev.state == LinkState::Up;
                } else {
                    initial.push((ms_to_time(ev.at_ms), i, ev.state));
                }
            }
            links.push(LinkRt {
                ends: [a, b],
                up,
                epoch: 0,
                latency: ms_to_time(l.latency_ms),
                bandwidth_kbps: l.bandwidth_kbps,
                loss: l.loss,
                medium: l.medium.as_deref().map(|m| media[m]),
                busy_until: SimTime::ZERO,
                channels: [Channel::new(), Channel::new()],
                bytes: 0,
                control_bytes: 0,
                data_bytes: 0,
                startup_control_bytes: 0,
                dropped: 0,
                windows: BTreeMap::new(),
            });
            nodes[a].faces.push(Face {
                link: i,
                neighbor: b,
                ..Face::default()
            });
            nodes[b].faces.push(Face {
                link: i,
                neighbor: a,
                ..Face::default()
            });
        }
        let mut net = Network {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            media_busy: vec![SimTime::ZERO; media.len()],
            spec,
            warnings,
            nodes,
            links,
            now: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            endpoints: Vec::new(),
            next_sample: 0,
            stream_seq: HashMap::new(),
            expected_cache: HashMap::new(),
            publishes: Vec::new(),
            deliveries: Vec::new(),
            toward: HashMap::new(),
            startup_phase_end: None,
            link_history: Vec::new(),
            trace: Vec::new(),
        };
        initial.sort_by_key(|&(t, i, _)| (t, i));
        for (t, link, state) in initial {
            net.push(t, EventKind::LinkChange { link, state });
        }
        if net.spec.mode == Mode::Routed {
            net.refresh_active_faces(false);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    pub fn warnings(&self) -> &[TopologyWarning] {
        &self.warnings
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_name(&self, idx: usize) -> &str {
        &self.nodes[idx].name
    }

    pub fn node_idx(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link_id(&self, a: &str, b: &str) -> Option<LinkId> {
        let (a, b) = (self.node_idx(a)?, self.node_idx(b)?);
        self.links
            .iter()
            .position(|l| l.ends == [a, b] || l.ends == [b, a])
            .map(LinkId)
    }

    pub fn link_is_up(&self, link: LinkId) -> bool {
        self.links[link.0].up
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn publishes(&self) -> &[PublishRecord] {
        &self.publishes
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn endpoint_node(&self, ep: EndpointId) -> Option<&str> {
        self.endpoints
            .get(ep.0 as usize)
            .map(|e| self.nodes[e.node].name.as_str())
    }

    pub fn endpoint_key(&self, ep: EndpointId) -> Option<&KeyExpr> {
        self.endpoints.get(ep.0 as usize).map(|e| &e.key)
    }

    /// Per 100 ms window bytes for one link, split proportionally over each
    /// transmission interval.
    pub fn link_windows(&self, link: LinkId) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.links[link.0].windows.iter().map(|(k, v)| (*k, *v))
    }

    pub fn link_bandwidth_kbps(&self, link: LinkId) -> f64 {
        self.links[link.0].bandwidth_kbps
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.at)
    }

    fn push(&mut self, at: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { at, seq, kind }));
    }

    // ----------------------------------------------------------------- API

    pub fn declare_endpoint(
        &mut self,
        node: &str,
        kind: EndpointKind,
        key: KeyExpr,
    ) -> Result<EndpointId, FabricError> {
        let n = self
            .node_idx(node)
            .ok_or_else(|| FabricError::UnknownNode(node.to_owned()))?;
        if kind == EndpointKind::Publisher && !key.is_concrete() {
            return Err(FabricError::WildcardPublisher(key));
        }
        let ep = EndpointId(self.endpoints.len() as u64);
        self.endpoints.push(EndpointRt {
            node: n,
            kind,
            key: key.clone(),
            live: true,
            inbox: Vec::new(),
        });
        self.expected_cache.clear();
        let node_rt = &mut self.nodes[n];
        node_rt.endpoints.push(ep);
        let joining = node_rt.first_declared.is_none();
        node_rt.first_declared.get_or_insert(self.now);
        node_rt.match_cache.clear();
        match kind {
            EndpointKind::Subscriber => *node_rt.local_subs.entry(key.clone()).or_default() += 1,
            EndpointKind::Publisher => *node_rt.local_pubs.entry(key.clone()).or_default() += 1,
        }
        match self.spec.mode {
            Mode::FullMesh => {
                if joining {
                    // late joiner: every participant sends it what it has
                    for src in self.participants() {
                        if src != n {
                            self.announce_all(src, &[n]);
                        }
                    }
                }
                for dst in self.participants() {
                    if dst != n {
                        let body = Body::Announce {
                            ep,
                            owner: n,
                            kind,
                            key: key.clone(),
                        };
                        self.route_unicast(n, Packet::new(body, Some(dst)));
                    }
                }
            }
            Mode::Routed => self.reconcile_key(n, kind, &key),
        }
        Ok(ep)
    }

    pub fn undeclare_endpoint(&mut self, ep: EndpointId) -> Result<(), FabricError> {
        let rt = self
            .endpoints
            .get_mut(ep.0 as usize)
            .ok_or(FabricError::UnknownEndpoint(ep))?;
        if !rt.live {
            return Ok(());
        }
        rt.live = false;
        rt.inbox.clear();
        let (n, kind, key) = (rt.node, rt.kind, rt.key.clone());
        self.expected_cache.clear();
        let node_rt = &mut self.nodes[n];
        node_rt.match_cache.clear();
        let table = match kind {
            EndpointKind::Subscriber => &mut node_rt.local_subs,
            EndpointKind::Publisher => &mut node_rt.local_pubs,
        };
        if let Some(c) = table.get_mut(&key) {
            *c -= 1;
            if *c == 0 {
                table.remove(&key);
            }
        }
        match self.spec.mode {
            Mode::FullMesh => {
                for dst in self.participants() {
                    if dst != n {
                        self.route_unicast(n, Packet::new(Body::Retract { ep }, Some(dst)));
                    }
                }
            }
            Mode::Routed => self.reconcile_key(n, kind, &key),
        }
        Ok(())
    }

    pub fn is_live(&self, ep: EndpointId) -> bool {
        self.endpoints.get(ep.0 as usize).is_some_and(|e| e.live)
    }

    pub fn publish(&mut self, ep: EndpointId, payload: Vec<u8>) -> Result<u64, FabricError> {
        self.publish_kind(ep, payload, SampleKind::Put)
    }

    pub fn publish_kind(
        &mut self,
        ep: EndpointId,
        payload: Vec<u8>,
        kind: SampleKind,
    ) -> Result<u64, FabricError> {
        let rt = self
            .endpoints
            .get(ep.0 as usize)
            .ok_or(FabricError::UnknownEndpoint(ep))?;
        if !rt.live {
            return Err(FabricError::UnknownEndpoint(ep));
        }
        if rt.kind != EndpointKind::Publisher {
            return Err(FabricError::NotAPublisher(ep));
        }
        let (n, key) = (rt.node, rt.key.clone());
        let seq = self.stream_seq.entry((n, key.clone())).or_insert(0);
        *seq += 1;
        let sample = Arc::new(Sample {
            key: key.clone(),
            payload,
            kind,
            source: self.nodes[n].name.clone(),
            sequence: *seq,
            timestamp: self.now.as_millis_f64(),
        });
        let id = self.next_sample;
        self.next_sample += 1;
        let expected = self.expected_recipients(&key);
        self.publishes.push(PublishRecord {
            id,
            node: n,
            key: key.clone(),
            at: self.now,
            payload_len: sample.payload.len(),
            expected,
            delivered: 0,
        });
        self.nodes[n].seen.insert(id);
        self.deliver_local(n, id, &sample, n);
        match self.spec.mode {
            Mode::FullMesh => {
                let targets = self.full_mesh_targets(n, &key);
                for dst in targets {
                    let body = Body::Data {
                        id,
                        src: n,
                        sample: sample.clone(),
                    };
                    self.route_unicast(n, Packet::new(body, Some(dst)));
                }
            }
            Mode::Routed => self.forward_routed(n, None, id, n, &sample),
        }
        Ok(id)
    }

    /// Removes and returns samples delivered to a subscriber endpoint.
    pub fn drain(&mut self, ep: EndpointId) -> Vec<Delivery> {
        match self.endpoints.get_mut(ep.0 as usize) {
            Some(rt) => std::mem::take(&mut rt.inbox),
            None => Vec::new(),
        }
    }

    pub fn schedule_link_event(
        &mut self,
        link: LinkId,
        at: SimTime,
        state: LinkState,
    ) -> Result<(), FabricError> {
        if link.0 >= self.links.len() {
            return Err(FabricError::UnknownLink(link));
        }
        if at < self.now {
            return Err(FabricError::TimeInPast {
                requested: at,
                now: self.now,
            });
        }
        self.push(
            at,
            EventKind::LinkChange {
                link: link.0,
                state,
            },
        );
        Ok(())
    }

    /// Processes every event with timestamp <= `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.at > t {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.now = ev.at;
            self.process(ev.kind);
        }
        if t > self.now {
            self.now = t;
        }
    }

    pub fn run_until(&mut self, t: SimTime) -> FabricMetrics {
        self.advance_to(t);
        self.metrics()
    }

    pub fn metrics(&self) -> FabricMetrics {
        super::metrics::collect(self)
    }

    pub fn routing_table(&self, node: &str) -> Option<RoutingTable> {
        let n = self.node_idx(node)?;
        let rt = &self.nodes[n];
        let mut table = RoutingTable {
            node: rt.name.clone(),
            ..RoutingTable::default()
        };
        match self.spec.mode {
            Mode::Routed => {
                for face in rt
                    .faces
                    .iter()
                    .filter(|f| f.active && self.links[f.link].up)
                {
                    let hop = self.nodes[face.neighbor].name.clone();
                    for k in &face.learned_subs {
                        table
                            .entries
                            .entry(RoutingTable::entry_name(EndpointKind::Subscriber, k))
                            .or_default()
                            .insert(hop.clone());
                    }
                    for k in &face.learned_pubs {
                        table
                            .entries
                            .entry(RoutingTable::entry_name(EndpointKind::Publisher, k))
                            .or_default()
                            .insert(hop.clone());
                    }
                }
            }
            Mode::FullMesh => {
                for (owner, kind, key) in rt.discovered.values() {
                    if let Some((link, next)) = self.next_hop_up(n, *owner) {
                        if self.links[link].up {
                            table
                                .entries
                                .entry(RoutingTable::entry_name(*kind, key))
                                .or_default()
                                .insert(self.nodes[next].name.clone());
                        }
                    }
                }
            }
        }
        Some(table)
    }

    // ------------------------------------------------------------ internals

    /// Full mesh: non-router nodes that have declared at least once.
    fn participants(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                self.nodes[i].role != Role::Router && self.nodes[i].first_declared.is_some()
            })
            .collect()
    }

    /// Unicasts every live endpoint of `src` to each node in `dsts`.
    fn announce_all(&mut self, src: usize, dsts: &[usize]) {
        let eps: Vec<EndpointId> = self.nodes[src].endpoints.clone();
        for ep in eps {
            let rt = &self.endpoints[ep.0 as usize];
            if !rt.live {
                continue;
            }
            let (kind, key) = (rt.kind, rt.key.clone());
            for &dst in dsts {
                let body = Body::Announce {
                    ep,
                    owner: src,
                    kind,
                    key: key.clone(),
                };
                self.route_unicast(src, Packet::new(body, Some(dst)));
            }
        }
    }

    fn expected_recipients(&mut self, key: &KeyExpr) -> u32 {
        if let Some(&c) = self.expected_cache.get(key) {
            return c;
        }
        let c = self
            .endpoints
            .iter()
            .filter(|e| e.live && e.kind == EndpointKind::Subscriber && e.key.intersects(key))
            .count() as u32;
        self.expected_cache.insert(key.clone(), c);
        c
    }

    fn deliver_local(&mut self, node: usize, id: u64, sample: &Arc<Sample>, source: usize) {
        let published_at = SimTime::from_millis_f64(sample.timestamp);
        let remote = node != source;
        let eps: Vec<EndpointId> = self.nodes[node].endpoints.clone();
        let mut delivered = 0;
        for ep in eps {
            let rt = &mut self.endpoints[ep.0 as usize];
            if rt.live && rt.kind == EndpointKind::Subscriber && rt.key.matches(&sample.key) {
                rt.inbox.push(Delivery {
                    sample: sample.clone(),
                    delivered_at: self.now,
                });
                self.deliveries.push(DeliveryRecord {
                    sample_id: id,
                    source,
                    sink: node,
                    endpoint: ep,
                    sample: sample.clone(),
                    published_at,
                    delivered_at: self.now,
                    remote,
                });
                delivered += 1;
            }
        }
        if delivered > 0 {
            if let Some(rec) = self.publishes.get_mut(id as usize) {
                rec.delivered += delivered;
            }
            if remote {
                self.nodes[node].first_delivery.get_or_insert(self.now);
                self.nodes[source].first_delivery.get_or_insert(self.now);
            }
        }
    }

    fn process(&mut self, kind: EventKind) {
        match kind {
            EventKind::Arrive {
                link,
                to,
                epoch,
                ctrl_seq,
                packet,
            } => {
                self.trace.push(TraceEvent {
                    at: self.now,
                    code: 1,
                    link: link as u32,
                    node: to as u32,
                    bytes: packet.size as u32,
                });
                if self.links[link].epoch != epoch || !self.links[link].up {
                    if !packet.body.is_control() {
                        self.links[link].dropped += 1;
                    }
                    return;
                }
                match ctrl_seq {
                    None => self.receive(to, link, packet),
                    Some(seq) => {
                        let from = self.links[link].other(to);
                        let dir = self.links[link].dir(from);
                        let ch = &mut self.links[link].channels[dir];
                        if seq < ch.next_expected {
                            return;
                        }
                        ch.reorder.insert(seq, packet);
                        let mut ready = Vec::new();
                        while let Some(p) = ch.reorder.remove(&ch.next_expected) {
                            ready.push(p);
                            ch.next_expected += 1;
                        }
                        for p in ready {
                            self.receive(to, link, p);
                        }
                    }
                }
            }
            EventKind::Retransmit {
                link,
                from,
                epoch,
                ctrl_seq,
                packet,
            } => {
                if self.links[link].epoch == epoch && self.links[link].up {
                    self.transmit(link, from, packet, Some(ctrl_seq));
                }
            }
            EventKind::LinkChange { link, state } => {
                self.trace.push(TraceEvent {
                    at: self.now,
                    code: 2,
                    link: link as u32,
                    node: u32::MAX,
                    bytes: (state == LinkState::Up) as u32,
                });
                self.change_link(link, state);
            }
        }
    }

    fn change_link(&mut self, link: usize, state: LinkState) {
        let up = state == LinkState::Up;
        if self.links[link].up == up {
            return;
        }
        self.startup_phase_end.get_or_insert(self.now);
        self.link_history.push((link, self.now, state));
        let l = &mut self.links[link];
        l.up = up;
        l.epoch += 1;
        l.busy_until = self.now;
        l.channels = [Channel::new(), Channel::new()];
        self.toward.clear();
        match self.spec.mode {
            Mode::FullMesh => {
                if up {
                    // every participant re-announces all of its endpoints
                    let all = self.participants();
                    for &n in &all {
                        let others: Vec<usize> = all.iter().copied().filter(|&d| d != n).collect();
                        self.announce_all(n, &others);
                    }
                }
            }
            Mode::Routed => self.refresh_active_faces(true),
        }
    }

    /// Recomputes which faces carry routed traffic: every up link with a
    /// non-router end, plus a spanning forest of the up router-to-router links.
    fn refresh_active_faces(&mut self, announce: bool) {
        let n = self.nodes.len();
        let mut active = vec![false; self.links.len()];
        let mut comp: Vec<usize> = (0..n).collect();
        fn find(comp: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while comp[r] != r {
                r = comp[r];
            }
            let mut y = x;
            while comp[y] != r {
                let next = comp[y];
                comp[y] = r;
                y = next;
            }
            r
        }
        let mut order: Vec<usize> = (0..self.links.len()).collect();
        order.sort_by(|&x, &y| {
            let lx = &self.links[x];
            let ly = &self.links[y];
            (lx.latency, x).cmp(&(ly.latency, y))
        });
        for i in order {
            let l = &self.links[i];
            if !l.up {
                continue;
            }
            let [a, b] = l.ends;
            if self.nodes[a].role != Role::Router || self.nodes[b].role != Role::Router {
                active[i] = true;
                continue;
            }
            let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
            if ra != rb {
                comp[ra] = rb;
                active[i] = true;
            }
        }
        let mut opened = Vec::new();
        for node in 0..n {
            for fi in 0..self.nodes[node].faces.len() {
                let link = self.nodes[node].faces[fi].link;
                let now_active = active[link];
                let link_up = self.links[link].up;
                let face = &mut self.nodes[node].faces[fi];
                if face.active == now_active {
                    continue;
                }
                face.active = now_active;
                face.advertised.clear();
                if now_active {
                    face.learned_subs.clear();
                    face.learned_pubs.clear();
                    face.stale = false;
                    opened.push((node, fi));
                } else if link_up {
                    face.learned_subs.clear();
                    face.learned_pubs.clear();
                    face.stale = false;
                } else {
                    face.stale = true;
                }
            }
        }
        if !announce {
            return;
        }
        for &(node, fi) in &opened {
            let desired = self.desired_adverts(node, fi);
            let link = self.nodes[node].faces[fi].link;
            self.nodes[node].faces[fi].advertised = desired.clone();
            let entries: Vec<_> = desired.into_iter().collect();
            self.transmit_control(link, node, Packet::new(Body::Summary { entries }, None));
        }
        for node in 0..n {
            for fi in 0..self.nodes[node].faces.len() {
                self.reconcile_face(node, fi);
            }
        }
    }

    fn face_index(&self, node: usize, link: usize) -> usize {
        self.nodes[node]
            .faces
            .iter()
            .position(|f| f.link == link)
            .expect("face for incident link")
    }

    fn receive(&mut self, to: usize, link: usize, packet: Packet) {
        self.nodes[to].bytes_received += packet.size as u64;
        if let Some(dst) = packet.dst {
            if dst != to {
                self.route_unicast(to, packet);
                return;
            }
        }
        match packet.body {
            Body::Announce {
                ep,
                owner,
                kind,
                key,
            } => {
                let node = &mut self.nodes[to];
                node.discovered.insert(ep, (owner, kind, key));
                node.match_cache.clear();
            }
            Body::Retract { ep } => {
                let node = &mut self.nodes[to];
                node.discovered.remove(&ep);
                node.match_cache.clear();
            }
            Body::Declare { kind, key } => {
                let fi = self.face_index(to, link);
                let face = &mut self.nodes[to].faces[fi];
                if !face.active {
                    return;
                }
                match kind {
                    EndpointKind::Subscriber => {
                        face.learned_subs.insert(key.clone());
                        if self.nodes[to].role == Role::Router {
                            self.reconcile_key(to, kind, &key);
                        }
                    }
                    EndpointKind::Publisher => {
                        face.learned_pubs.insert(key);
                        self.reconcile_face(to, fi);
                    }
                }
            }
            Body::Undeclare { kind, key } => {
                let fi = self.face_index(to, link);
                let face = &mut self.nodes[to].faces[fi];
                if !face.active {
                    return;
                }
                match kind {
                    EndpointKind::Subscriber => {
                        face.learned_subs.remove(&key);
                        if self.nodes[to].role == Role::Router {
                            self.reconcile_key(to, kind, &key);
                        }
                    }
                    EndpointKind::Publisher => {
                        face.learned_pubs.remove(&key);
                        self.reconcile_face(to, fi);
                    }
                }
            }
            Body::Summary { entries } => {
                let fi = self.face_index(to, link);
                let face = &mut self.nodes[to].faces[fi];
                if !face.active {
                    return;
                }
                face.learned_subs.clear();
                face.learned_pubs.clear();
                for (kind, key) in entries {
                    match kind {
                        EndpointKind::Subscriber => face.learned_subs.insert(key),
                        EndpointKind::Publisher => face.learned_pubs.insert(key),
                    };
                }
                for f in 0..self.nodes[to].faces.len() {
                    self.reconcile_face(to, f);
                }
            }
            Body::Data { id, src, sample } => {
                if !self.nodes[to].seen.insert(id) {
                    return;
                }
                self.deliver_local(to, id, &sample, src);
                if self.spec.mode == Mode::Routed && self.nodes[to].role == Role::Router {
                    self.forward_routed(to, Some(link), id, src, &sample);
                }
            }
        }
    }

    // -------------------------------------------------------- routed logic

    /// Subscriber keys a node can offer towards face `except`.
    fn available_subs(&self, node: usize, except: usize) -> BTreeSet<KeyExpr> {
        let rt = &self.nodes[node];
        let mut out: BTreeSet<KeyExpr> = rt.local_subs.keys().cloned().collect();
        if rt.role == Role::Router {
            for (i, f) in rt.faces.iter().enumerate() {
                // stale faces keep pulling samples so losses show up as drops
                if i != except && (f.active || f.stale) {
                    out.extend(f.learned_subs.iter().cloned());
                }
            }
        }
        out
    }

    fn sub_available(&self, node: usize, except: usize, key: &KeyExpr) -> bool {
        let rt = &self.nodes[node];
        if rt.local_subs.contains_key(key) {
            return true;
        }
        rt.role == Role::Router
            && rt
                .faces
                .iter()
                .enumerate()
                .any(|(i, f)| i != except && (f.active || f.stale) && f.learned_subs.contains(key))
    }

    fn wants_sub(&self, node: usize, fi: usize, key: &KeyExpr) -> bool {
        let face = &self.nodes[node].faces[fi];
        self.nodes[face.neighbor].role == Role::Router
            || face.learned_pubs.iter().any(|p| p.intersects(key))
    }

    fn desired_adverts(&self, node: usize, fi: usize) -> BTreeSet<(EndpointKind, KeyExpr)> {
        let mut out = BTreeSet::new();
        for k in self.available_subs(node, fi) {
            if self.wants_sub(node, fi, &k) {
                out.insert((EndpointKind::Subscriber, k));
            }
        }
        for k in self.nodes[node].local_pubs.keys() {
            out.insert((EndpointKind::Publisher, k.clone()));
        }
        out
    }

    fn reconcile_face(&mut self, node: usize, fi: usize) {
        let face = &self.nodes[node].faces[fi];
        if !face.active || !self.links[face.link].up {
            return;
        }
        let desired = self.desired_adverts(node, fi);
        let face = &self.nodes[node].faces[fi];
        let add: Vec<_> = desired.difference(&face.advertised).cloned().collect();
        let remove: Vec<_> = face.advertised.difference(&desired).cloned().collect();
        let link = face.link;
        self.nodes[node].faces[fi].advertised = desired;
        for (kind, key) in remove {
            self.transmit_control(link, node, Packet::new(Body::Undeclare { kind, key }, None));
        }
        for (kind, key) in add {
            self.transmit_control(link, node, Packet::new(Body::Declare { kind, key }, None));
        }
    }

    fn reconcile_key(&mut self, node: usize, kind: EndpointKind, key: &KeyExpr) {
        for fi in 0..self.nodes[node].faces.len() {
            let face = &self.nodes[node].faces[fi];
            if !face.active || !self.links[face.link].up {
                continue;
            }
            let want = match kind {
                EndpointKind::Subscriber => {
                    self.sub_available(node, fi, key) && self.wants_sub(node, fi, key)
                }
                EndpointKind::Publisher => self.nodes[node].local_pubs.contains_key(key),
            };
            let entry = (kind, key.clone());
            let face = &mut self.nodes[node].faces[fi];
            let has = face.advertised.contains(&entry);
            let link = face.link;
            if want && !has {
                face.advertised.insert(entry);
                self.transmit_control(
                    link,
                    node,
                    Packet::new(
                        Body::Declare {
                            kind,
                            key: key.clone(),
                        },
                        None,
                    ),
                );
            } else if !want && has {
                face.advertised.remove(&entry);
                self.transmit_control(
                    link,
                    node,
                    Packet::new(
                        Body::Undeclare {
                            kind,
                            key: key.clone(),
                        },
                        None,
                    ),
                );
            }
        }
    }

    fn forward_routed(
        &mut self,
        node: usize,
        from_link: Option<usize>,
        id: u64,
        src: usize,
        sample: &Arc<Sample>,
    ) {
        let mut sends = Vec::new();
        let mut drops = Vec::new();
        for face in &self.nodes[node].faces {
            if Some(face.link) == from_link {
                continue;
            }
            let interested = face.learned_subs.iter().any(|k| k.matches(&sample.key));
            if !interested {
                continue;
            }
            if face.active && self.links[face.link].up {
                sends.push(face.link);
            } else if face.stale {
                drops.push(face.link);
            }
        }
        for link in drops {
            self.links[link].dropped += 1;
        }
        for link in sends {
            let body = Body::Data {
                id,
                src,
                sample: sample.clone(),
            };
            self.transmit(link, node, Packet::new(body, None), None);
        }
    }

    // ----------------------------------------------------- full mesh logic

    fn full_mesh_targets(&mut self, node: usize, key: &KeyExpr) -> Vec<usize> {
        if let Some(t) = self.nodes[node].match_cache.get(key) {
            return t.clone();
        }
        let targets: BTreeSet<usize> = self.nodes[node]
            .discovered
            .values()
            .filter(|(owner, kind, k)| {
                *kind == EndpointKind::Subscriber && *owner != node && k.intersects(key)
            })
            .map(|(owner, _, _)| *owner)
            .collect();
        let targets: Vec<usize> = targets.into_iter().collect();
        self.nodes[node]
            .match_cache
            .insert(key.clone(), targets.clone());
        targets
    }

    /// Shortest-path tree towards `dst`, over up links when possible and over
    /// all declared links otherwise.
    fn tree_toward(&mut self, dst: usize) -> &Vec<Option<(usize, usize)>> {
        if !self.toward.contains_key(&dst) {
            let up = self.shortest_tree(dst, true);
            let all = self.shortest_tree(dst, false);
            let merged = up.into_iter().zip(all).map(|(u, a)| u.or(a)).collect();
            self.toward.insert(dst, merged);
        }
        &self.toward[&dst]
    }

    fn shortest_tree(&self, dst: usize, only_up: bool) -> Vec<Option<(usize, usize)>> {
        let n = self.nodes.len();
        let mut dist: Vec<Option<(u64, u32)>> = vec![None; n];
        let mut next: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[dst] = Some((0, 0));
        heap.push(Reverse((0u64, 0u32, dst)));
        while let Some(Reverse((d, h, u))) = heap.pop() {
            if dist[u] != Some((d, h)) {
                continue;
            }
            for face in &self.nodes[u].faces {
                let l = &self.links[face.link];
                if only_up && !l.up {
                    continue;
                }
                let v = face.neighbor;
                let cand = (d + l.latency.0 + 1, h + 1);
                if dist[v].is_none_or(|cur| cand < cur) {
                    dist[v] = Some(cand);
                    next[v] = Some((face.link, u));
                    heap.push(Reverse((cand.0, cand.1, v)));
                }
            }
        }
        next
    }

    fn next_hop_up(&self, from: usize, dst: usize) -> Option<(usize, usize)> {
        self.shortest_tree(dst, true)[from]
    }

    fn route_unicast(&mut self, at: usize, packet: Packet) {
        let dst = packet.dst.expect("unicast destination");
        if dst == at {
            return;
        }
        let Some((link, _next)) = self.tree_toward(dst)[at] else {
            if !packet.body.is_control() {
                if let Some(face) = self.nodes[at].faces.first() {
                    self.links[face.link].dropped += 1;
                }
            }
            return;
        };
        if packet.body.is_control() {
            self.transmit_control(link, at, packet);
        } else {
            self.transmit(link, at, packet, None);
        }
    }

    // ------------------------------------------------------------ transport

    fn transmit_control(&mut self, link: usize, from: usize, packet: Packet) {
        if !self.links[link].up {
            return;
        }
        let dir = self.links[link].dir(from);
        let ch = &mut self.links[link].channels[dir];
        let seq = ch.next_send;
        ch.next_send += 1;
        self.transmit(link, from, packet, Some(seq));
    }

    fn transmit(&mut self, link: usize, from: usize, packet: Packet, ctrl_seq: Option<u64>) {
        let now = self.now;
        let in_startup = self.startup_phase_end.is_none();
        let l = &mut self.links[link];
        if !l.up {
            if !packet.body.is_control() {
                l.dropped += 1;
            }
            return;
        }
        let to = l.other(from);
        let bits = packet.size as u64 * 8;
        // serialization time in microseconds: bits / (kbit/s) * 1000
        let duration = ((bits as f64) * 1000.0 / l.bandwidth_kbps).ceil() as u64;
        let busy = match l.medium {
            Some(m) => &mut self.media_busy[m],
            None => &mut l.busy_until,
        };
        let start = (*busy).max(now);
        let end = SimTime(start.0 + duration.max(1));
        *busy = end;
        let arrival = end + l.latency;
        l.bytes += packet.size as u64;
        if packet.body.is_control() {
            l.control_bytes += packet.size as u64;
            if in_startup {
                l.startup_control_bytes += packet.size as u64;
            }
        } else {
            l.data_bytes += packet.size as u64;
        }
        add_to_windows(&mut l.windows, start.0, end.0, packet.size as f64);
        let epoch = l.epoch;
        let lost = l.loss > 0.0 && self.rng.gen::<f64>() < l.loss;
        let latency = l.latency;
        self.nodes[from].bytes_sent += packet.size as u64;
        if packet.body.is_control() && in_startup {
            self.nodes[from].startup_bytes += packet.size as u64;
            self.nodes[to].startup_bytes += packet.size as u64;
        }
        if lost {
            match ctrl_seq {
                Some(seq) => {
                    let retry = arrival + latency + RETRANSMIT_SLACK;
                    self.push(
                        retry,
                        EventKind::Retransmit {
                            link,
                            from,
                            epoch,
                            ctrl_seq: seq,
                            packet,
                        },
                    );
                }
                None => self.links[link].dropped += 1,
            }
            return;
        }
        self.push(
            arrival,
            EventKind::Arrive {
                link,
                to,
                epoch,
                ctrl_seq,
                packet,
            },
        );
    }

    // ------------------------------------------------------------ metrics

    pub(crate) fn link_history(&self) -> &[(usize, SimTime, LinkState)] {
        &self.link_history
    }

    pub(crate) fn node_view(&self, idx: usize) -> NodeView<'_> {
        let n = &self.nodes[idx];
        NodeView {
            name: &n.name,
            declared: !n.endpoints.is_empty(),
            first_declared: n.first_declared,
            first_delivery: n.first_delivery,
            bytes_sent: n.bytes_sent,
            bytes_received: n.bytes_received,
            startup_bytes: n.startup_bytes,
        }
    }

    pub(crate) fn link_view(&self, idx: usize) -> LinkView<'_> {
        let l = &self.links[idx];
        LinkView {
            name: self.spec.links[idx].name(),
            bytes: l.bytes,
            control_bytes: l.control_bytes,
            data_bytes: l.data_bytes,
            startup_control_bytes: l.startup_control_bytes,
            dropped: l.dropped,
            windows: &l.windows,
        }
    }
}

pub(crate) struct NodeView<'a> {
    pub name: &'a str,
    pub declared: bool,
    pub first_declared: Option<SimTime>,
    pub first_delivery: Option<SimTime>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub startup_bytes: u64,
}

pub(crate) struct LinkView<'a> {
    pub name: String,
    pub bytes: u64,
    pub control_bytes: u64,
    pub data_bytes: u64,
    pub startup_control_bytes: u64,
    pub dropped: u64,
    pub windows: &'a BTreeMap<u64, f64>,
}

impl Channel {
    fn new() -> Self {
        Channel {
            next_send: 0,
            next_expected: 0,
            reorder: BTreeMap::new(),
        }
    }
}

fn add_to_windows(windows: &mut BTreeMap<u64, f64>, start: u64, end: u64, bytes: f64) {
    let span = (end - start) as f64;
    let mut t = start;
    while t < end {
        let w = t / WINDOW;
        let w_end = ((w + 1) * WINDOW).min(end);
        *windows.entry(w).or_default() += bytes * (w_end - t) as f64 / span;
        t = w_end;
    }
}
