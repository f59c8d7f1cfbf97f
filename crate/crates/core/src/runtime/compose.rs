use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use super::context::Ctx;
use super::{ComponentSpec, RuntimeError};
use crate::keyspace::Sample;

pub const ON_INIT: &str = "on_init";
pub const ON_TICK: &str = "on_tick";
pub const ON_SHUTDOWN: &str = "on_shutdown";

/// What a handler is invoked with.
#[derive(Debug, Clone)]
pub enum Event {
    Init,
    Tick,
    Shutdown,
    /// A sample arrived on a bound subscription point.
    Sample(Arc<Sample>),
    /// Raised by another handler of the same component through [`Ctx::call`].
    Call(Value),
}

pub type HandlerFn = dyn Fn(&mut Ctx<'_>, &Event) -> Result<(), String> + Send + Sync;

#[derive(Clone)]
pub struct Handler {
    /// `core:<id>`, `injection:<id>` or `override:<id>`.
    pub origin: String,
    pub f: Arc<HandlerFn>,
}

impl Handler {
    pub fn new(
        origin: impl Into<String>,
        f: impl Fn(&mut Ctx<'_>, &Event) -> Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        Handler {
            origin: origin.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.origin)
    }
}

impl PartialEq for Handler {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin && Arc::ptr_eq(&self.f, &other.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    /// Bound to a subscription; samples invoke the slot.
    Subscribe,
    /// Bound to a publication key (or key pattern).
    Publish,
    /// Internal slot, reachable only through [`Ctx::call`].
    Internal,
}

pub type StateFactory = fn(&ComponentSpec) -> Box<dyn Any + Send>;

pub struct CoreDef {
    pub id: String,
    pub points: BTreeMap<String, PointKind>,
    pub defaults: BTreeMap<String, Vec<Handler>>,
    pub make_state: StateFactory,
}

impl CoreDef {
    pub fn new(id: &str, make_state: StateFactory) -> Self {
        CoreDef {
            id: id.to_owned(),
            points: BTreeMap::new(),
            defaults: BTreeMap::new(),
            make_state,
        }
    }

    pub fn point(mut self, name: &str, kind: PointKind) -> Self {
        self.points.insert(name.to_owned(), kind);
        self
    }

    pub fn on(
        mut self,
        point: &str,
        f: impl Fn(&mut Ctx<'_>, &Event) -> Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        let h = Handler::new(format!("core:{}", self.id), f);
        self.defaults.entry(point.to_owned()).or_default().push(h);
        self
    }

    /// Extension points: lifecycle slots plus declared points.
    pub fn has_point(&self, name: &str) -> bool {
        matches!(name, ON_INIT | ON_TICK | ON_SHUTDOWN) || self.points.contains_key(name)
    }
}

pub struct InjectionDef {
    pub id: String,
    pub handlers: Vec<(String, Handler)>,
}

pub struct OverrideDef {
    pub id: String,
    pub point: String,
    pub handler: Handler,
}

#[derive(Default)]
pub struct Registry {
    pub(crate) cores: BTreeMap<String, Arc<CoreDef>>,
    pub(crate) injections: BTreeMap<String, InjectionDef>,
    pub(crate) overrides: BTreeMap<String, OverrideDef>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn add_core(&mut self, core: CoreDef) {
        self.cores.insert(core.id.clone(), Arc::new(core));
    }

    pub fn add_injection(
        &mut self,
        id: &str,
        point: &str,
        f: impl Fn(&mut Ctx<'_>, &Event) -> Result<(), String> + Send + Sync + 'static,
    ) {
        let h = Handler::new(format!("injection:{id}"), f);
        self.injections
            .entry(id.to_owned())
            .or_insert_with(|| InjectionDef {
                id: id.to_owned(),
                handlers: Vec::new(),
            })
            .handlers
            .push((point.to_owned(), h));
    }

    pub fn add_override(
        &mut self,
        id: &str,
        point: &str,
        f: impl Fn(&mut Ctx<'_>, &Event) -> Result<(), String> + Send + Sync + 'static,
    ) {
        let handler = Handler::new(format!("override:{id}"), f);
        self.overrides.insert(
            id.to_owned(),
            OverrideDef {
                id: id.to_owned(),
                point: point.to_owned(),
                handler,
            },
        );
    }

    pub fn core(&self, id: &str) -> Option<&CoreDef> {
        self.cores.get(id).map(Arc::as_ref)
    }

    pub fn injection(&self, id: &str) -> Option<&InjectionDef> {
        self.injections.get(id)
    }

    pub fn override_def(&self, id: &str) -> Option<&OverrideDef> {
        self.overrides.get(id)
    }

    pub fn core_ids(&self) -> impl Iterator<Item = &str> {
        self.cores.keys().map(String::as_str)
    }

    pub fn injection_ids(&self) -> impl Iterator<Item = &str> {
        self.injections.keys().map(String::as_str)
    }

    pub fn override_ids(&self) -> impl Iterator<Item = &str> {
        self.overrides.keys().map(String::as_str)
    }
}

/// A component with its handler slots resolved.
pub struct ComposedComponent {
    pub spec: ComponentSpec,
    pub(crate) core: Arc<CoreDef>,
    pub slots: BTreeMap<String, Vec<Handler>>,
}

impl fmt::Debug for ComposedComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComposedComponent")
            .field("name", &self.spec.name)
            .field("slots", &self.slots)
            .finish()
    }
}

impl ComposedComponent {
    pub fn slot(&self, point: &str) -> &[Handler] {
        self.slots.get(point).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn point_kind(&self, point: &str) -> Option<PointKind> {
        self.core.points.get(point).copied()
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = (&str, &crate::keyspace::KeyExpr)> {
        self.spec
            .bindings
            .iter()
            .filter(|(p, _)| self.point_kind(p) == Some(PointKind::Subscribe))
            .map(|(p, k)| (p.as_str(), k))
    }

    /// Publish points bound to a single concrete key.
    pub fn concrete_publications(&self) -> impl Iterator<Item = (&str, &crate::keyspace::KeyExpr)> {
        self.spec
            .bindings
            .iter()
            .filter(|(p, k)| self.point_kind(p) == Some(PointKind::Publish) && k.is_concrete())
            .map(|(p, k)| (p.as_str(), k))
    }
}

/// Core defaults, then injections appended in list order, then each
/// override replacing the whole slot it targets.
pub fn compose(
    spec: &ComponentSpec,
    registry: &Registry,
) -> Result<ComposedComponent, RuntimeError> {
    let core = registry
        .cores
        .get(&spec.core)
        .ok_or_else(|| RuntimeError::UnknownCore(spec.core.clone()))?
        .clone();
    for point in spec.bindings.keys() {
        if core
            .points
            .get(point)
            .is_none_or(|k| *k == PointKind::Internal)
        {
            return Err(RuntimeError::UnknownPoint {
                component: spec.name.clone(),
                point: point.clone(),
            });
        }
    }
    let mut slots = core.defaults.clone();
    for id in &spec.injections {
        let inj = registry
            .injections
            .get(id)
            .ok_or_else(|| RuntimeError::UnknownInjection(id.clone()))?;
        for (point, h) in &inj.handlers {
            if !core.has_point(point) {
                return Err(RuntimeError::UnknownPoint {
                    component: spec.name.clone(),
                    point: point.clone(),
                });
            }
            slots.entry(point.clone()).or_default().push(h.clone());
        }
    }
    let mut claimed: BTreeMap<&str, &str> = BTreeMap::new();
    for id in &spec.overrides {
        let ov = registry
            .overrides
            .get(id)
            .ok_or_else(|| RuntimeError::UnknownOverride(id.clone()))?;
        if !core.has_point(&ov.point) {
            return Err(RuntimeError::UnknownPoint {
                component: spec.name.clone(),
                point: ov.point.clone(),
            });
        }
        if let Some(first) = claimed.insert(&ov.point, &ov.id) {
            return Err(RuntimeError::OverrideConflict {
                point: ov.point.clone(),
                overrides: vec![first.to_owned(), ov.id.clone()],
            });
        }
        slots.insert(ov.point.clone(), vec![ov.handler.clone()]);
    }
    Ok(ComposedComponent {
        spec: spec.clone(),
        core,
        slots,
    })
}
