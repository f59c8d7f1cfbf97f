use std::any::Any;
use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use super::motion::Transform;
use super::{ComponentSpec, RuntimeError};
use crate::assembly::RobotDescription;
use crate::fabric::SimTime;
use crate::keyspace::KeyExpr;

/// Everything a handler may touch: its own component's state, its bindings,
/// and read-only robot descriptions. There is no path to other components.
pub struct Ctx<'a> {
    pub(crate) spec: &'a ComponentSpec,
    pub(crate) now: SimTime,
    pub(crate) state: &'a mut (dyn Any + Send),
    pub(crate) vars: &'a mut BTreeMap<String, Value>,
    pub(crate) outbox: &'a mut Vec<(KeyExpr, Vec<u8>)>,
    pub(crate) calls: &'a mut Vec<(String, Value)>,
    pub(crate) descriptions: &'a BTreeMap<String, RobotDescription>,
}

impl<'a> Ctx<'a> {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ComponentSpec {
        self.spec
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn now_ms(&self) -> f64 {
        self.now.as_millis_f64()
    }

    /// The core's own state.
    ///
    /// # Panics
    ///
    /// If `T` is not the type the core's state factory produced.
    pub fn state<T: 'static>(&mut self) -> &mut T {
        self.state
            .downcast_mut::<T>()
            .expect("component state type")
    }

    /// Free-form storage for injections and overrides.
    pub fn vars(&mut self) -> &mut BTreeMap<String, Value> {
        self.vars
    }

    pub fn binding(&self, point: &str) -> Option<&KeyExpr> {
        self.spec.bindings.get(point)
    }

    pub fn description(&self, name: &str) -> Option<&RobotDescription> {
        self.descriptions.get(name)
    }

    /// Publishes on a concrete key covered by `point`'s binding.
    pub fn publish(
        &mut self,
        point: &str,
        key: &str,
        payload: Vec<u8>,
    ) -> Result<(), RuntimeError> {
        let bound = self
            .binding(point)
            .ok_or_else(|| RuntimeError::UnboundPoint {
                component: self.spec.name.clone(),
                point: point.to_owned(),
            })?;
        let key = KeyExpr::parse(key).map_err(|_| self.outside(point, key))?;
        if !key.is_concrete() || !bound.includes(&key) {
            return Err(self.outside(point, &key.to_string()));
        }
        self.outbox.push((key, payload));
        Ok(())
    }

    /// Publishes on `point`'s binding itself, which must be concrete.
    pub fn publish_bound(&mut self, point: &str, payload: Vec<u8>) -> Result<(), RuntimeError> {
        let key = self
            .binding(point)
            .ok_or_else(|| RuntimeError::UnboundPoint {
                component: self.spec.name.clone(),
                point: point.to_owned(),
            })?
            .to_string();
        self.publish(point, &key, payload)
    }

    pub fn publish_json<T: Serialize>(
        &mut self,
        point: &str,
        key: &str,
        value: &T,
    ) -> Result<(), RuntimeError> {
        self.publish(
            point,
            key,
            serde_json::to_vec(value).expect("payload serializes"),
        )
    }

    /// Publishes `tf` on its scoped key `tf/<parent>/<frame>`.
    pub fn publish_transform(&mut self, point: &str, tf: &Transform) -> Result<(), RuntimeError> {
        self.publish_json(point, &tf.key(), tf)
    }

    /// Invokes every handler in the component's `point` slot after the
    /// current handler returns.
    pub fn call(&mut self, point: &str, data: Value) {
        self.calls.push((point.to_owned(), data));
    }

    fn outside(&self, point: &str, key: &str) -> RuntimeError {
        RuntimeError::KeyOutsideBinding {
            component: self.spec.name.clone(),
            point: point.to_owned(),
            key: key.to_owned(),
        }
    }
}
