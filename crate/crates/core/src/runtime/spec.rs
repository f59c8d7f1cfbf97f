use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::keyspace::KeyExpr;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ExecutorPolicy {
    #[default]
    EventDriven,
    Periodic {
        period_ms: u64,
    },
}

/// One deployable component: a core, its injections and overrides, and the
/// keys its extension points are bound to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub core: String,
    #[serde(default)]
    pub injections: Vec<String>,
    #[serde(default)]
    pub overrides: Vec<String>,
    #[serde(default)]
    pub bindings: BTreeMap<String, KeyExpr>,
    #[serde(default)]
    pub executor: ExecutorPolicy,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

impl ComponentSpec {
    pub fn new(name: impl Into<String>, core: impl Into<String>) -> Self {
        ComponentSpec {
            name: name.into(),
            core: core.into(),
            injections: Vec::new(),
            overrides: Vec::new(),
            bindings: BTreeMap::new(),
            executor: ExecutorPolicy::EventDriven,
            parameters: BTreeMap::new(),
        }
    }

    pub fn bind(mut self, point: &str, key: &str) -> Self {
        self.bindings
            .insert(point.to_owned(), KeyExpr::parse(key).expect("binding key"));
        self
    }

    pub fn periodic(mut self, period_ms: u64) -> Self {
        self.executor = ExecutorPolicy::Periodic { period_ms };
        self
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_owned(), value.into());
        self
    }

    pub fn inject(mut self, id: &str) -> Self {
        self.injections.push(id.to_owned());
        self
    }

    pub fn override_with(mut self, id: &str) -> Self {
        self.overrides.push(id.to_owned());
        self
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.parameters.get(key).and_then(Value::as_f64)
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.parameters.get(key).and_then(Value::as_str)
    }

    pub fn param_strings(&self, key: &str) -> Vec<String> {
        self.parameters
            .get(key)
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str().map(str::to_owned))
                    .collect()
            })
            .unwrap_or_default()
    }
}
