//! Scenario bench: fleets of assemblies and ground-control services on a
//! simulated network, run under both discovery regimes and compared.

mod compare;
mod stability;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    derive_host_configs, derive_kinematics, AssemblyError, AssemblySpec, HostConfig,
    ModuleRegistry, RobotDescription,
};
use crate::fabric::{
    EndpointId, EndpointKind, FabricError, FabricMetrics, LinkSpec, LinkState, Mode, Network,
    NodeSpec, Role, SimTime, TopologySpec,
};
use crate::keyspace::KeyExpr;
use crate::launcher::{plan_from_configs, LaunchOptions, ServiceAssignment};
use crate::runtime::{ComponentId, ComponentSpec, ComponentTrace, Registry, Runtime};

pub use compare::{
    compare, compare_modes, median, ComparisonReport, ModeRun, RatioCheck, RATIO_METRICS,
    TIME_FLOOR_MS,
};
pub use stability::{
    capacity_sweep, max_stable_count, stability, CapacityPoint, Stability, STABLE_STUTTER_MS,
    STEADY_WINDOW_MS,
};

/// Name of the shared radio medium in generated fleet topologies.
pub const WIFI: &str = "wifi";
/// Base-station router in generated fleet topologies.
pub const BASE_STATION: &str = "base";
/// Robot components start at seeded offsets within this window of their
/// robot's start time.
pub const LAUNCH_SPREAD_MS: u64 = 1_000;
/// Key every pose lands on when transforms are aggregated.
pub const AGGREGATE_TF_KEY: &str = "tf/all";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("scenario `{scenario}`: {message}")]
    Resolve { scenario: String, message: String },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

/// Star network generated around the scenario's robots: one router per robot
/// on a shared radio medium to the base station, robot computers and
/// ground-control hosts wired to their router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    #[serde(default = "FleetSpec::default_wifi_kbps")]
    pub wifi_kbps: f64,
    #[serde(default = "FleetSpec::default_wifi_latency")]
    pub wifi_latency_ms: f64,
    #[serde(default)]
    pub wifi_loss: f64,
    #[serde(default = "FleetSpec::default_lan_kbps")]
    pub lan_kbps: f64,
    #[serde(default = "FleetSpec::default_lan_latency")]
    pub lan_latency_ms: f64,
}

impl FleetSpec {
    fn default_wifi_kbps() -> f64 {
        2_000.0
    }
    fn default_wifi_latency() -> f64 {
        2.0
    }
    fn default_lan_kbps() -> f64 {
        100_000.0
    }
    fn default_lan_latency() -> f64 {
        0.2
    }
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            wifi_kbps: Self::default_wifi_kbps(),
            wifi_latency_ms: Self::default_wifi_latency(),
            wifi_loss: 0.0,
            lan_kbps: Self::default_lan_kbps(),
            lan_latency_ms: Self::default_lan_latency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TopologySource {
    File { path: String },
    Inline { spec: TopologySpec },
    Fleet(FleetSpec),
}

impl Default for TopologySource {
    fn default() -> Self {
        TopologySource::Fleet(FleetSpec::default())
    }
}

/// One assembly deployed as one robot (or `count` identical robots named
/// `<as>1..<as>count`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRef {
    pub assembly: String,
    #[serde(rename = "as")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub start_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// Every pose on its own `tf/<parent>/<frame>` key.
    #[default]
    Scoped,
    /// Every pose on one shared key.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptEvent {
    Link {
        at_ms: u64,
        a: String,
        b: String,
        state: LinkState,
    },
    /// Stops one component, or with a trailing `*` every component whose
    /// name starts with the rest.
    Stop { at_ms: u64, component: String },
    /// Raw publisher on `node`: `count` samples of `bytes` bytes every `period_ms`.
    Stream {
        at_ms: u64,
        node: String,
        key: String,
        bytes: usize,
        period_ms: u64,
        count: u64,
    },
}

impl ScriptEvent {
    pub fn at_ms(&self) -> u64 {
        match self {
            ScriptEvent::Link { at_ms, .. }
            | ScriptEvent::Stop { at_ms, .. }
            | ScriptEvent::Stream { at_ms, .. } => *at_ms,
        }
    }
}

/// Lower bound on ratio thresholds checked by [`compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub ratio: String,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub topology: TopologySource,
    /// Module descriptor directory, relative to the scenario document.
    #[serde(default = "ScenarioSpec::default_modules")]
    pub modules: String,
    #[serde(default)]
    pub robots: Vec<RobotRef>,
    #[serde(default)]
    pub services: Vec<ServiceAssignment>,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    pub duration_ms: u64,
    #[serde(default)]
    pub metrics_of_interest: Vec<String>,
    #[serde(default)]
    pub transforms: TransformMode,
    #[serde(default)]
    pub expect: Vec<Expectation>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioSpec {
    fn default_modules() -> String {
        "../modules".to_owned()
    }

    pub fn empty(name: &str, duration_ms: u64) -> Self {
        ScenarioSpec {
            name: name.to_owned(),
            topology: TopologySource::default(),
            modules: Self::default_modules(),
            robots: Vec::new(),
            services: Vec::new(),
            events: Vec::new(),
            duration_ms,
            metrics_of_interest: Vec::new(),
            transforms: TransformMode::Scoped,
            expect: Vec::new(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    /// Reads a scenario document; relative references resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = read(path)?;
        let mut spec: ScenarioSpec =
            serde_json::from_str(&text).map_err(|e| BenchError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    /// Same scenario with the first robot entry replicated `n` times.
    pub fn with_robot_count(&self, n: usize) -> Self {
        let mut s = self.clone();
        if let Some(r) = s.robots.first_mut() {
            r.count = Some(n);
        }
        s.robots.truncate(1);
        s
    }

    pub fn with_wifi_kbps(&self, kbps: f64) -> Self {
        let mut s = self.clone();
        if let TopologySource::Fleet(f) = &mut s.topology {
            f.wifi_kbps = kbps;
        }
        s
    }

    fn path(&self, rel: &str) -> PathBuf {
        match &self.base_dir {
            Some(d) => d.join(rel),
            None => PathBuf::from(rel),
        }
    }

    fn err(&self, message: impl Into<String>) -> BenchError {
        BenchError::Resolve {
            scenario: self.name.clone(),
            message: message.into(),
        }
    }

    /// Loads every reference and checks the script; nothing is simulated.
    pub fn resolve(&self) -> Result<Resolved, BenchError> {
        let mut robots = Vec::new();
        if !self.robots.is_empty() {
            let registry = ModuleRegistry::load_dir(&self.path(&self.modules))?;
            for r in &self.robots {
                let path = self.path(&r.assembly);
                let text = read(&path)?;
                let template = AssemblySpec::from_json(&text).map_err(|e| BenchError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                let names: Vec<String> = match r.count {
                    Some(n) => (1..=n).map(|i| format!("{}{i}", r.name)).collect(),
                    None => vec![r.name.clone()],
                };
                for name in names {
                    let assembly = template.namespaced(&name, &registry);
                    let description = derive_kinematics(&assembly, &registry)?;
                    let configs = derive_host_configs(&assembly, &registry)?;
                    robots.push(ResolvedRobot {
                        name,
                        assembly,
                        description,
                        configs,
                        start_ms: r.start_ms,
                    });
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &robots {
            if !seen.insert(r.name.as_str()) {
                return Err(self.err(format!("duplicate robot `{}`", r.name)));
            }
        }
        let topology = match &self.topology {
            TopologySource::File { path } => {
                let p = self.path(path);
                TopologySpec::from_json(&read(&p)?)?
            }
            TopologySource::Inline { spec } => spec.clone(),
            TopologySource::Fleet(f) => fleet_topology(f, &robots, &self.services),
        };
        topology.validate()?;
        let nodes: std::collections::BTreeSet<&str> =
            topology.nodes.iter().map(|n| n.name.as_str()).collect();
        for r in &robots {
            for c in &r.configs {
                if !nodes.contains(c.host.as_str()) {
                    return Err(self.err(format!(
                        "host `{}` of robot `{}` is not in the topology",
                        c.host, r.name
                    )));
                }
            }
        }
        for s in &self.services {
            if !nodes.contains(s.host.as_str()) {
                return Err(self.err(format!("service host `{}` is not in the topology", s.host)));
            }
        }
        for e in &self.events {
            if e.at_ms() > self.duration_ms {
                return Err(self.err(format!(
                    "event at {} ms is past the {} ms duration",
                    e.at_ms(),
                    self.duration_ms
                )));
            }
            match e {
                ScriptEvent::Link { a, b, .. } => {
                    if !topology.links.iter().any(|l| {
                        (l.endpoints[0] == *a && l.endpoints[1] == *b)
                            || (l.endpoints[0] == *b && l.endpoints[1] == *a)
                    }) {
                        return Err(self.err(format!("no link `{a}`--`{b}`")));
                    }
                }
                ScriptEvent::Stream { node, key, .. } => {
                    if !nodes.contains(node.as_str()) {
                        return Err(self.err(format!("unknown node `{node}`")));
                    }
                    let k = KeyExpr::parse(key).map_err(|e| self.err(e.to_string()))?;
                    if !k.is_concrete() {
                        return Err(self.err(format!("stream key `{key}` is not concrete")));
                    }
                }
                ScriptEvent::Stop { .. } => {}
            }
        }
        Ok(Resolved {
            spec: self.clone(),
            topology,
            robots,
        })
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn fleet_topology(
    f: &FleetSpec,
    robots: &[ResolvedRobot],
    services: &[ServiceAssignment],
) -> TopologySpec {
    let mut nodes = vec![NodeSpec::new(BASE_STATION, Role::Router)];
    let mut links = Vec::new();
    let lan = |a: &str, b: &str| LinkSpec::new(a, b, f.lan_latency_ms, f.lan_kbps);
    let mut gc_hosts: Vec<&str> = services.iter().map(|s| s.host.as_str()).collect();
    gc_hosts.sort_unstable();
    gc_hosts.dedup();
    for h in gc_hosts {
        nodes.push(NodeSpec::new(h, Role::Peer));
        links.push(lan(BASE_STATION, h));
    }
    for r in robots {
        nodes.push(NodeSpec::new(r.name.clone(), Role::Router));
        links.push(
            LinkSpec::new(BASE_STATION, r.name.clone(), f.wifi_latency_ms, f.wifi_kbps)
                .with_loss(f.wifi_loss)
                .on_medium(WIFI),
        );
        for c in &r.configs {
            nodes.push(NodeSpec::new(c.host.clone(), Role::Peer));
            links.push(lan(&r.name, &c.host));
        }
    }
    TopologySpec {
        nodes,
        links,
        mode: Mode::Routed,
        seed: 0,
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedRobot {
    pub name: String,
    pub assembly: AssemblySpec,
    pub description: RobotDescription,
    pub configs: Vec<HostConfig>,
    pub start_ms: u64,
}

/// A scenario with every reference loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ScenarioSpec,
    pub topology: TopologySpec,
    pub robots: Vec<ResolvedRobot>,
}

/// A spawned component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Spawned {
    pub name: String,
    pub core: String,
    pub host: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioRun {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_ms: u64,
    pub components: Vec<Spawned>,
    pub metrics: FabricMetrics,
    /// Payload bytes delivered to each component's subscriptions.
    pub received_bytes: BTreeMap<String, u64>,
    /// Payload bytes published per key.
    pub published_bytes: BTreeMap<String, u64>,
    /// Per-robot heartbeat bookkeeping over the steady window.
    pub steady: SteadyState,
    #[serde(skip)]
    pub traces: Vec<ComponentTrace>,
}

impl ScenarioRun {
    /// Number of spawned components per core.
    pub fn roster(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.components {
            *out.entry(c.core.clone()).or_default() += 1;
        }
        out
    }
}

/// Delivery statistics over the last [`STEADY_WINDOW_MS`] of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SteadyState {
    pub window_start_ms: f64,
    pub window_end_ms: f64,
    pub median_latency_ms: f64,
    pub heartbeats_published: u64,
    /// Heartbeat publishes that reached fewer subscribers than expected.
    pub heartbeats_dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub traces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { traces: true }
    }
}

enum Action {
    Start(Box<ComponentSpec>, String),
    Services,
    Stop(String),
    Stream(usize),
}

/// Runs `spec` under `mode`. Deterministic in (spec, mode, seed).
pub fn run_scenario(spec: &ScenarioSpec, mode: Mode, seed: u64) -> Result<ScenarioRun, BenchError> {
    run_resolved(&spec.resolve()?, mode, seed, RunOptions::default())
}

pub fn run_resolved(
    res: &Resolved,
    mode: Mode,
    seed: u64,
    opts: RunOptions,
) -> Result<ScenarioRun, BenchError> {
    let spec = &res.spec;
    let mut topology = res.topology.clone();
    topology.mode = mode;
    topology.seed = seed;
    let net = Network::new(topology)?;
    let mut rt = Runtime::new(net, Registry::builtin());
    if !opts.traces {
        rt = rt.without_traces();
    }
    for r in &res.robots {
        rt.add_description(r.description.clone());
    }

    let mut timeline: Vec<(u64, usize, Action)> = Vec::new();
    if !spec.services.is_empty() {
        timeline.push((0, timeline.len(), Action::Services));
    }
    let mut jitter = ChaCha8Rng::seed_from_u64(seed);
    for r in &res.robots {
        for c in &r.configs {
            let plan = plan_from_configs(&r.configs, &c.host, &LaunchOptions::simulated())
                .expect("robot host has a config");
            for e in plan.entries {
                let mut cs = e.component;
                cs.parameters = e.parameters;
                let at = r.start_ms + jitter.gen_range(0..LAUNCH_SPREAD_MS);
                timeline.push((
                    at,
                    timeline.len(),
                    Action::Start(Box::new(cs), c.host.clone()),
                ));
            }
        }
    }
    for (i, e) in spec.events.iter().enumerate() {
        match e {
            ScriptEvent::Link { at_ms, a, b, state } => {
                let link = rt.network().link_id(a, b).expect("resolved link");
                rt.network_mut()
                    .schedule_link_event(link, SimTime::from_millis(*at_ms), *state)?;
            }
            ScriptEvent::Stop { at_ms, component } => {
                timeline.push((*at_ms, timeline.len(), Action::Stop(component.clone())))
            }
            ScriptEvent::Stream { at_ms, .. } => {
                timeline.push((*at_ms, timeline.len(), Action::Stream(i)))
            }
        }
    }
    timeline.sort_by_key(|(t, order, _)| (*t, *order));

    let mut spawned = Vec::new();
    let mut ids: Vec<ComponentId> = Vec::new();
    let mut streams: Vec<(u64, EndpointId, usize, u64, u64)> = Vec::new();
    let mut sub_eps: BTreeMap<EndpointId, String> = BTreeMap::new();
    let mut start =
        |rt: &mut Runtime, spec_c: ComponentSpec, host: &str| -> Result<(), BenchError> {
            let spec_c = match spec.transforms {
                TransformMode::Scoped => spec_c,
                TransformMode::Aggregate => aggregate(spec_c),
            };
            let core = spec_c.core.clone();
            let id = rt.start(&spec_c, host).map_err(|e| BenchError::Resolve {
                scenario: spec.name.clone(),
                message: e.to_string(),
            })?;
            for (_, ep) in rt.subscriptions(id) {
                sub_eps.insert(*ep, spec_c.name.clone());
            }
            spawned.push(Spawned {
                name: spec_c.name,
                core,
                host: host.to_owned(),
            });
            ids.push(id);
            Ok(())
        };

    let end = SimTime::from_millis(spec.duration_ms);
    for (at, _, action) in timeline {
        advance_streams(&mut rt, &mut streams, SimTime::from_millis(at));
        rt.run_until(SimTime::from_millis(at));
        match action {
            Action::Start(cs, host) => start(&mut rt, *cs, &host)?,
            Action::Services => {
                for s in &spec.services {
                    start(&mut rt, s.component.clone(), &s.host)?;
                }
            }
            Action::Stop(pattern) => {
                let targets: Vec<ComponentId> = rt
                    .component_ids()
                    .filter(|&id| stop_matches(&pattern, rt.name(id)))
                    .collect();
                for id in targets {
                    rt.stop(id).map_err(|e| BenchError::Resolve {
                        scenario: spec.name.clone(),
                        message: e.to_string(),
                    })?;
                }
            }
            Action::Stream(i) => {
                let ScriptEvent::Stream {
                    node,
                    key,
                    bytes,
                    period_ms,
                    count,
                    ..
                } = &spec.events[i]
                else {
                    unreachable!("stream action")
                };
                let key = KeyExpr::parse(key).expect("resolved key");
                let ep = rt
                    .network_mut()
                    .declare_endpoint(node, EndpointKind::Publisher, key)?;
                if *count > 0 {
                    streams.push((at * 1000, ep, *bytes, (*period_ms).max(1) * 1000, *count));
                }
            }
        }
    }
    advance_streams(&mut rt, &mut streams, end);
    rt.run_until(end);

    let net = rt.network();
    let metrics = net.metrics();
    let mut received_bytes: BTreeMap<String, u64> =
        spawned.iter().map(|c| (c.name.clone(), 0)).collect();
    for d in net.deliveries() {
        if let Some(name) = sub_eps.get(&d.endpoint) {
            *received_bytes.entry(name.clone()).or_default() += d.sample.payload.len() as u64;
        }
    }
    let mut published_bytes: BTreeMap<String, u64> = BTreeMap::new();
    for p in net.publishes() {
        *published_bytes.entry(p.key.to_string()).or_default() += p.payload_len as u64;
    }
    let steady = steady_state(net, spec.duration_ms);
    let traces = if opts.traces {
        ids.iter().map(|&id| rt.trace(id).clone()).collect()
    } else {
        Vec::new()
    };
    Ok(ScenarioRun {
        scenario: spec.name.clone(),
        mode,
        seed,
        duration_ms: spec.duration_ms,
        components: spawned,
        metrics,
        received_bytes,
        published_bytes,
        steady,
        traces,
    })
}

/// Publishes every due stream sample up to `t`, in time order.
fn advance_streams(
    rt: &mut Runtime,
    streams: &mut [(u64, EndpointId, usize, u64, u64)],
    t: SimTime,
) {
    loop {
        let next = streams
            .iter()
            .enumerate()
            .filter(|(_, s)| s.4 > 0 && s.0 <= t.0)
            .min_by_key(|(i, s)| (s.0, *i));
        let Some((i, _)) = next else { break };
        let (at, ep, bytes, period, _) = streams[i];
        rt.run_until(SimTime(at));
        let _ = rt.network_mut().publish(ep, vec![0u8; bytes]);
        streams[i].0 += period;
        streams[i].4 -= 1;
    }
}

/// Pose publishers put every transform on one shared key; transform
/// subscriptions on a concrete key follow it there.
fn aggregate(mut spec: ComponentSpec) -> ComponentSpec {
    let shared = KeyExpr::parse(AGGREGATE_TF_KEY).expect("aggregate key");
    let is_pose_core = matches!(
        spec.core.as_str(),
        "kinematics_manager" | "location_publisher"
    );
    if is_pose_core {
        for point in ["pose", "world_pose"] {
            if let Some(k) = spec.bindings.get_mut(point) {
                *k = shared.clone();
            }
        }
        spec.overrides.push("aggregate_tf".to_owned());
    } else {
        for k in spec.bindings.values_mut() {
            if k.is_concrete() && k.to_string().starts_with("tf/") {
                *k = shared.clone();
            }
        }
    }
    spec
}

fn steady_state(net: &Network, duration_ms: u64) -> SteadyState {
    // samples published in the final second may still be in flight
    let end = SimTime::from_millis(duration_ms.saturating_sub(1_000));
    let start = SimTime::from_millis(duration_ms.saturating_sub(STEADY_WINDOW_MS));
    let in_window = |t: SimTime| t >= start && t < end;
    let mut latencies: Vec<u64> = net
        .deliveries()
        .iter()
        .filter(|d| d.remote && in_window(d.published_at))
        .map(|d| d.latency().0)
        .collect();
    let median_latency_ms = compare::median_u64(&mut latencies).map_or(0.0, |m| m as f64 / 1000.0);
    let mut published = 0;
    let mut dropped = 0;
    for p in net
        .publishes()
        .iter()
        .filter(|p| in_window(p.at) && is_heartbeat(&p.key))
    {
        published += 1;
        if p.delivered < p.expected {
            dropped += 1;
        }
    }
    SteadyState {
        window_start_ms: start.as_millis_f64(),
        window_end_ms: end.as_millis_f64(),
        median_latency_ms,
        heartbeats_published: published,
        heartbeats_dropped: dropped,
    }
}

fn stop_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => name == pattern,
    }
}

fn is_heartbeat(key: &KeyExpr) -> bool {
    let s = key.to_string();
    s.starts_with("health/") && s.ends_with("/alive")
}
