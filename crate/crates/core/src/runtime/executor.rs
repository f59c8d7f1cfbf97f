use std::any::Any;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::compose::{compose, ComposedComponent, Event, Registry, ON_INIT, ON_SHUTDOWN, ON_TICK};
use super::context::Ctx;
use super::{ComponentSpec, ExecutorPolicy, RuntimeError};
use crate::assembly::RobotDescription;
use crate::fabric::{EndpointId, EndpointKind, Network, SimTime};
use crate::keyspace::{KeyExpr, Sample};

/// Every component announces itself on `health/<name>/alive` at this period.
pub const HEARTBEAT_PERIOD: SimTime = SimTime(1_000_000);

/// Nested `Ctx::call` chains deeper than this are treated as a handler fault.
const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentStatus {
    Running,
    Quarantined,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub at: SimTime,
    pub point: String,
    pub origin: String,
}

/// Every handler invocation of one component, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ComponentTrace {
    pub component: String,
    pub entries: Vec<TraceEntry>,
}

impl ComponentTrace {
    pub fn count(&self, point: &str) -> usize {
        self.entries.iter().filter(|e| e.point == point).count()
    }

    /// One line per event: `<ms> <component> <point> <origin>`.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:.3} {} {} {}",
                e.at.as_millis_f64(),
                self.component,
                e.point,
                e.origin
            );
        }
        out
    }
}

struct Running {
    composed: ComposedComponent,
    node: String,
    status: ComponentStatus,
    state: Box<dyn Any + Send>,
    vars: BTreeMap<String, Value>,
    subs: Vec<(String, EndpointId)>,
    pubs: BTreeMap<KeyExpr, EndpointId>,
    heartbeat: EndpointId,
    heartbeat_seq: u64,
    next_tick: Option<SimTime>,
    next_heartbeat: Option<SimTime>,
    /// Quarantined: publish one final "dead" heartbeat at this time.
    dead_notice: Option<SimTime>,
    trace: ComponentTrace,
    fault: Option<String>,
}

/// Drives components over one simulated network.
pub struct Runtime {
    net: Network,
    registry: Arc<Registry>,
    descriptions: BTreeMap<String, RobotDescription>,
    comps: Vec<Running>,
    by_name: BTreeMap<String, ComponentId>,
    record_trace: bool,
}

impl Runtime {
    pub fn new(net: Network, registry: impl Into<Arc<Registry>>) -> Self {
        Runtime {
            net,
            registry: registry.into(),
            descriptions: BTreeMap::new(),
            comps: Vec::new(),
            by_name: BTreeMap::new(),
            record_trace: true,
        }
    }

    /// Skips trace recording, for long benchmark runs.
    pub fn without_traces(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn now(&self) -> SimTime {
        self.net.now()
    }

    pub fn add_description(&mut self, description: RobotDescription) {
        self.descriptions
            .insert(description.name.clone(), description);
    }

    pub fn component(&self, name: &str) -> Option<ComponentId> {
        self.by_name.get(name).copied()
    }

    pub fn component_ids(&self) -> impl Iterator<Item = ComponentId> {
        (0..self.comps.len()).map(ComponentId)
    }

    pub fn name(&self, id: ComponentId) -> &str {
        &self.comps[id.0].composed.spec.name
    }

    pub fn spec(&self, id: ComponentId) -> &ComponentSpec {
        &self.comps[id.0].composed.spec
    }

    pub fn status(&self, id: ComponentId) -> ComponentStatus {
        self.comps[id.0].status
    }

    pub fn fault(&self, id: ComponentId) -> Option<&str> {
        self.comps[id.0].fault.as_deref()
    }

    pub fn trace(&self, id: ComponentId) -> &ComponentTrace {
        &self.comps[id.0].trace
    }

    /// Composes `spec` and starts it on fabric node `node`.
    pub fn start(&mut self, spec: &ComponentSpec, node: &str) -> Result<ComponentId, RuntimeError> {
        let composed = compose(spec, &self.registry)?;
        self.start_composed(composed, node)
    }

    /// Declares the component's subscriptions, concrete publications and
    /// heartbeat, then runs its `on_init` slot at the current time.
    pub fn start_composed(
        &mut self,
        composed: ComposedComponent,
        node: &str,
    ) -> Result<ComponentId, RuntimeError> {
        let name = composed.spec.name.clone();
        if self.by_name.contains_key(&name) {
            return Err(RuntimeError::DuplicateComponent(name));
        }
        let mut subs = Vec::new();
        for (point, key) in composed.subscriptions() {
            subs.push((
                point.to_owned(),
                self.net
                    .declare_endpoint(node, EndpointKind::Subscriber, key.clone())?,
            ));
        }
        let mut pubs = BTreeMap::new();
        for (_, key) in composed.concrete_publications() {
            if !pubs.contains_key(key) {
                pubs.insert(
                    key.clone(),
                    self.net
                        .declare_endpoint(node, EndpointKind::Publisher, key.clone())?,
                );
            }
        }
        let hb_key = KeyExpr::parse(&format!("health/{name}/alive")).expect("heartbeat key");
        let heartbeat = self
            .net
            .declare_endpoint(node, EndpointKind::Publisher, hb_key)?;
        let now = self.net.now();
        let next_tick = match composed.spec.executor {
            ExecutorPolicy::Periodic { period_ms } if period_ms > 0 => {
                Some(now + SimTime::from_millis(period_ms))
            }
            _ => None,
        };
        let state = (composed.core.make_state)(&composed.spec);
        let id = ComponentId(self.comps.len());
        self.comps.push(Running {
            trace: ComponentTrace {
                component: name.clone(),
                entries: Vec::new(),
            },
            composed,
            node: node.to_owned(),
            status: ComponentStatus::Running,
            state,
            vars: BTreeMap::new(),
            subs,
            pubs,
            heartbeat,
            heartbeat_seq: 0,
            next_tick,
            next_heartbeat: Some(now),
            dead_notice: None,
            fault: None,
        });
        self.by_name.insert(name, id);
        self.invoke(id, ON_INIT, &Event::Init);
        Ok(id)
    }

    /// Runs `on_shutdown` and withdraws every fabric declaration.
    pub fn stop(&mut self, id: ComponentId) -> Result<(), RuntimeError> {
        if self.comps[id.0].status == ComponentStatus::Running {
            self.invoke(id, ON_SHUTDOWN, &Event::Shutdown);
        }
        let c = &mut self.comps[id.0];
        c.status = ComponentStatus::Stopped;
        c.next_tick = None;
        c.next_heartbeat = None;
        c.dead_notice = None;
        let eps: Vec<EndpointId> = c
            .subs
            .drain(..)
            .map(|(_, e)| e)
            .chain(std::mem::take(&mut c.pubs).into_values())
            .chain([c.heartbeat])
            .collect();
        for ep in eps {
            if self.net.is_live(ep) {
                self.net.undeclare_endpoint(ep)?;
            }
        }
        Ok(())
    }

    /// Live subscriber endpoints of a component, by extension point.
    pub fn subscriptions(&self, id: ComponentId) -> &[(String, EndpointId)] {
        &self.comps[id.0].subs
    }

    pub fn node_of(&self, id: ComponentId) -> &str {
        &self.comps[id.0].node
    }

    /// Processes fabric events and component timers up to `t` inclusive.
    pub fn run_until(&mut self, t: SimTime) {
        loop {
            self.dispatch_inboxes();
            let next_timer = self.comps.iter().filter_map(next_timer).min();
            let next = match (next_timer, self.net.next_event_time()) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            match next {
                Some(n) if n <= t => {
                    self.net.advance_to(n);
                    self.fire_timers(n);
                }
                _ => break,
            }
        }
        self.net.advance_to(t);
        self.dispatch_inboxes();
    }

    fn fire_timers(&mut self, now: SimTime) {
        for i in 0..self.comps.len() {
            let id = ComponentId(i);
            if self.comps[i].dead_notice == Some(now) {
                self.comps[i].dead_notice = None;
                self.send_heartbeat(id, false);
            }
            if self.comps[i].status != ComponentStatus::Running {
                continue;
            }
            if self.comps[i].next_heartbeat == Some(now) {
                self.comps[i].next_heartbeat = Some(now + HEARTBEAT_PERIOD);
                self.send_heartbeat(id, true);
            }
            if self.comps[i].next_tick == Some(now) {
                if let ExecutorPolicy::Periodic { period_ms } = self.comps[i].composed.spec.executor
                {
                    self.comps[i].next_tick = Some(now + SimTime::from_millis(period_ms));
                }
                self.invoke(id, ON_TICK, &Event::Tick);
            }
        }
    }

    fn send_heartbeat(&mut self, id: ComponentId, alive: bool) {
        let c = &mut self.comps[id.0];
        c.heartbeat_seq += 1;
        let payload =
            json!({ "component": c.composed.spec.name, "alive": alive, "seq": c.heartbeat_seq });
        let ep = c.heartbeat;
        let _ = self.net.publish(
            ep,
            serde_json::to_vec(&payload).expect("heartbeat serializes"),
        );
    }

    fn dispatch_inboxes(&mut self) {
        for i in 0..self.comps.len() {
            if self.comps[i].status != ComponentStatus::Running {
                continue;
            }
            let mut batch: Vec<(SimTime, u64, usize, Arc<Sample>)> = Vec::new();
            for (pi, (_, ep)) in self.comps[i].subs.clone().iter().enumerate() {
                for d in self.net.drain(*ep) {
                    batch.push((d.delivered_at, d.sample.sequence, pi, d.sample));
                }
            }
            batch.sort_by_key(|a| (a.0, a.2, a.1));
            for (_, _, pi, sample) in batch {
                if self.comps[i].status != ComponentStatus::Running {
                    break;
                }
                let point = self.comps[i].subs[pi].0.clone();
                self.invoke(ComponentId(i), &point, &Event::Sample(sample));
            }
        }
    }

    /// Runs the slot for `point`, then any slots it called, publishing
    /// whatever the handlers emitted.
    fn invoke(&mut self, id: ComponentId, point: &str, event: &Event) {
        let mut queue = vec![(point.to_owned(), event.clone())];
        let mut depth = 0;
        while let Some((point, event)) = queue.pop() {
            depth += 1;
            if depth > MAX_CALL_DEPTH {
                self.quarantine(id, &point, "call depth exceeded".to_owned());
                return;
            }
            let now = self.net.now();
            let handlers = self.comps[id.0].composed.slot(&point).to_vec();
            let mut outbox = Vec::new();
            let mut calls = Vec::new();
            for h in handlers {
                let c = &mut self.comps[id.0];
                if self.record_trace {
                    c.trace.entries.push(TraceEntry {
                        at: now,
                        point: point.clone(),
                        origin: h.origin.clone(),
                    });
                }
                let mut ctx = Ctx {
                    spec: &c.composed.spec,
                    now,
                    state: c.state.as_mut(),
                    vars: &mut c.vars,
                    outbox: &mut outbox,
                    calls: &mut calls,
                    descriptions: &self.descriptions,
                };
                let result = catch_unwind(AssertUnwindSafe(|| (h.f)(&mut ctx, &event)));
                let failure = match result {
                    Ok(Ok(())) => None,
                    Ok(Err(msg)) => Some(msg),
                    Err(panic) => Some(
                        panic
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panic".to_owned()),
                    ),
                };
                if let Some(msg) = failure {
                    self.flush(id, outbox);
                    self.quarantine(id, &point, msg);
                    return;
                }
            }
            self.flush(id, outbox);
            // calls made by this slot run in the order they were made
            for (p, data) in calls.into_iter().rev() {
                queue.push((p, Event::Call(data)));
            }
        }
    }

    fn flush(&mut self, id: ComponentId, outbox: Vec<(KeyExpr, Vec<u8>)>) {
        for (key, payload) in outbox {
            let ep = match self.comps[id.0].pubs.get(&key) {
                Some(ep) => *ep,
                None => {
                    let node = self.comps[id.0].node.clone();
                    let ep = self
                        .net
                        .declare_endpoint(&node, EndpointKind::Publisher, key.clone())
                        .expect("component node exists");
                    self.comps[id.0].pubs.insert(key, ep);
                    ep
                }
            };
            let _ = self.net.publish(ep, payload);
        }
    }

    /// Stops the component's handlers; its next expected heartbeat goes out
    /// as a death notice.
    fn quarantine(&mut self, id: ComponentId, point: &str, message: String) {
        let now = self.net.now();
        let c = &mut self.comps[id.0];
        if c.status != ComponentStatus::Running {
            return;
        }
        c.status = ComponentStatus::Quarantined;
        c.fault = Some(format!("{point}: {message}"));
        c.dead_notice = c.next_heartbeat.or(Some(now));
        c.next_tick = None;
        c.next_heartbeat = None;
        if self.record_trace {
            c.trace.entries.push(TraceEntry {
                at: now,
                point: point.to_owned(),
                origin: "quarantined".to_owned(),
            });
        }
        let subs: Vec<EndpointId> = c.subs.drain(..).map(|(_, e)| e).collect();
        for ep in subs {
            let _ = self.net.undeclare_endpoint(ep);
        }
    }
}

fn next_timer(c: &Running) -> Option<SimTime> {
    [c.next_tick, c.next_heartbeat, c.dead_notice]
        .into_iter()
        .flatten()
        .min()
}
