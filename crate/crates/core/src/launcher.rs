//! Component launcher: per-host launch plans, virtual hardware substitution
//! off-robot, and in-process start/stop on the simulated fabric.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assembly::{
    derive_host_configs, AssemblyError, AssemblySpec, HostConfig, ModuleRegistry,
};
use crate::fabric::{LinkSpec, Mode, NodeSpec, Role, TopologySpec};
use crate::runtime::{ComponentId, ComponentSpec, ComponentStatus, HealthReport, Runtime};

/// Environment variable naming the local host.
pub const HOST_ENV: &str = "MODSTACK_HOST";

/// The local host identity: `MODSTACK_HOST`, else the system hostname.
pub fn default_host() -> String {
    if let Ok(h) = std::env::var(HOST_ENV) {
        if !h.is_empty() {
            return h;
        }
    }
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "localhost".to_owned())
}

/// Software stand-in for a hardware-facing core.
pub fn virtual_counterpart(core: &str) -> Option<&'static str> {
    match core {
        "motor_interface" => Some("motor_interface_virtual"),
        _ => None,
    }
}

/// A host-agnostic component pinned to a host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceAssignment {
    pub host: String,
    pub component: ComponentSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaunchOptions {
    /// Hosts that drive real hardware.
    pub robot_computers: BTreeSet<String>,
    pub services: Vec<ServiceAssignment>,
}

impl LaunchOptions {
    /// Every host owning a module is a robot computer.
    pub fn on_robots(configs: &[HostConfig]) -> Self {
        LaunchOptions {
            robot_computers: configs.iter().map(|c| c.host.clone()).collect(),
            services: Vec::new(),
        }
    }

    /// No robot computers: everything runs against virtual hardware.
    pub fn simulated() -> Self {
        Self::default()
    }

    pub fn with_services(mut self, services: Vec<ServiceAssignment>) -> Self {
        self.services = services;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchEntry {
    pub component: ComponentSpec,
    /// Component parameters plus the owning instance's host parameters.
    pub parameters: BTreeMap<String, Value>,
    pub virtual_substitution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchPlan {
    pub host: String,
    pub entries: Vec<LaunchEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("host `{0}` owns no module and no service")]
    UnknownHost(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Components to run on `host`, from already derived host configurations.
pub fn plan_from_configs(
    configs: &[HostConfig],
    host: &str,
    opts: &LaunchOptions,
) -> Result<LaunchPlan, LaunchError> {
    let config = configs.iter().find(|c| c.host == host);
    let services: Vec<&ServiceAssignment> =
        opts.services.iter().filter(|s| s.host == host).collect();
    if config.is_none() && services.is_empty() {
        return Err(LaunchError::UnknownHost(host.to_owned()));
    }
    let virtualize = !opts.robot_computers.contains(host);
    let mut entries = Vec::new();
    for c in config.map(|c| c.components.as_slice()).unwrap_or_default() {
        let mut component = c.clone();
        if virtualize {
            if let Some(v) = virtual_counterpart(&component.core) {
                component.core = v.to_owned();
            }
        }
        let instance = component.name.split('/').next().unwrap_or_default();
        let mut parameters: BTreeMap<String, Value> = config
            .into_iter()
            .flat_map(|cfg| &cfg.parameters)
            .filter_map(|(k, v)| {
                Some((
                    k.strip_prefix(instance)?.strip_prefix('.')?.to_owned(),
                    v.clone(),
                ))
            })
            .collect();
        parameters.extend(component.parameters.clone());
        entries.push(LaunchEntry {
            component,
            parameters,
            virtual_substitution: virtualize,
        });
    }
    for s in services {
        entries.push(LaunchEntry {
            component: s.component.clone(),
            parameters: s.component.parameters.clone(),
            virtual_substitution: virtualize,
        });
    }
    Ok(LaunchPlan {
        host: host.to_owned(),
        entries,
    })
}

/// Pure: derives host configurations, then plans `host`.
pub fn plan_launch(
    spec: &AssemblySpec,
    registry: &ModuleRegistry,
    host: &str,
    opts: &LaunchOptions,
) -> Result<LaunchPlan, LaunchError> {
    plan_from_configs(&derive_host_configs(spec, registry)?, host, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchState {
    Pending,
    Running,
    Quarantined,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStatus {
    pub name: String,
    pub state: LaunchState,
    pub started_ms: Option<f64>,
    pub stopped_ms: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub component: Option<ComponentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchStatus {
    pub host: String,
    pub entries: Vec<EntryStatus>,
}

impl LaunchStatus {
    pub fn count(&self, state: LaunchState) -> usize {
        self.entries.iter().filter(|e| e.state == state).count()
    }

    /// Pulls quarantines raised since start from the runtime.
    pub fn refresh(&mut self, rt: &Runtime) {
        for e in &mut self.entries {
            if let (Some(id), LaunchState::Running) = (e.component, e.state) {
                if rt.status(id) == ComponentStatus::Quarantined {
                    e.state = LaunchState::Quarantined;
                    e.error = rt.fault(id).map(str::to_owned);
                }
            }
        }
    }
}

/// Starts every entry on fabric node `node`. A composition failure
/// quarantines that entry only.
pub fn start(plan: &LaunchPlan, rt: &mut Runtime, node: &str) -> LaunchStatus {
    let mut entries = Vec::with_capacity(plan.entries.len());
    for entry in &plan.entries {
        let mut spec = entry.component.clone();
        spec.parameters = entry.parameters.clone();
        let now = rt.now().as_millis_f64();
        let mut status = EntryStatus {
            name: spec.name.clone(),
            state: LaunchState::Pending,
            started_ms: None,
            stopped_ms: None,
            error: None,
            component: None,
        };
        match rt.start(&spec, node) {
            Ok(id) => {
                status.component = Some(id);
                status.started_ms = Some(now);
                status.state = match rt.status(id) {
                    ComponentStatus::Running => LaunchState::Running,
                    _ => LaunchState::Quarantined,
                };
                status.error = rt.fault(id).map(str::to_owned);
            }
            Err(e) => {
                status.state = LaunchState::Quarantined;
                status.error = Some(e.to_string());
            }
        }
        entries.push(status);
    }
    LaunchStatus {
        host: plan.host.clone(),
        entries,
    }
}

/// Stops every started entry and withdraws its fabric declarations.
pub fn stop(mut status: LaunchStatus, rt: &mut Runtime) -> LaunchStatus {
    status.refresh(rt);
    let now = rt.now().as_millis_f64();
    for e in &mut status.entries {
        if let Some(id) = e.component {
            if rt.status(id) != ComponentStatus::Stopped {
                if let Err(err) = rt.stop(id) {
                    e.error.get_or_insert(err.to_string());
                }
            }
            if e.state == LaunchState::Running {
                e.state = LaunchState::Stopped;
            }
            e.stopped_ms = Some(now);
        }
    }
    status
}

/// Star network with one router and every host as a peer on a fast LAN.
pub fn lan_topology(hosts: &[String], mode: Mode, seed: u64) -> TopologySpec {
    let mut nodes = vec![NodeSpec::new("lan", Role::Router)];
    let mut links = Vec::new();
    for h in hosts {
        nodes.push(NodeSpec::new(h.clone(), Role::Peer));
        links.push(LinkSpec::new("lan", h.clone(), 1.0, 100_000.0));
    }
    TopologySpec {
        nodes,
        links,
        mode,
        seed,
    }
}

/// Liveness as seen by every health monitor: all components some monitor
/// has heard from, and any component some monitor declared dead.
pub fn liveness(reports: &[HealthReport]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut latest: BTreeMap<&str, &HealthReport> = BTreeMap::new();
    for r in reports {
        latest.insert(&r.monitor, r);
    }
    let mut alive = BTreeSet::new();
    let mut dead = BTreeSet::new();
    for r in latest.values() {
        alive.extend(r.alive.iter().cloned());
        dead.extend(r.dead.iter().cloned());
    }
    (alive, dead)
}
