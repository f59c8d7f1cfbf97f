//! Beginner-facing motion API.
//!
//! Knows the key templates for one module instance and wraps
//! [`sync_targets`]. Nothing here goes beyond bindings and synchronization.

use std::collections::BTreeMap;

use super::motion::{sync_targets, JointState, JointTarget};
use super::{ComponentSpec, RuntimeError};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionApi {
    instance: String,
    max_step: f64,
}

impl MotionApi {
    pub fn new(instance: impl Into<String>) -> Self {
        MotionApi {
            instance: instance.into(),
            max_step: 0.05,
        }
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn instance(&self) -> &str {
        &self.instance
    }

    /// Global name of a local joint.
    pub fn joint(&self, local: &str) -> String {
        format!("{}/{local}", self.instance)
    }

    pub fn goal_key(&self, local: &str) -> String {
        format!("goal/{}", self.joint(local))
    }

    pub fn state_key(&self, local: &str) -> String {
        format!("joints/{}/state", self.joint(local))
    }

    pub fn target_key(&self, local: &str) -> String {
        format!("joints/{}/target", self.joint(local))
    }

    /// One synchronized step toward `goals` (local joint name to radians).
    pub fn step(
        &self,
        goals: &BTreeMap<String, f64>,
        states: &BTreeMap<String, JointState>,
    ) -> Result<Vec<JointTarget>, RuntimeError> {
        let targets: Vec<JointTarget> = goals
            .iter()
            .map(|(j, p)| JointTarget::at(self.joint(j), *p))
            .collect();
        sync_targets(&targets, states, self.max_step)
    }

    /// A periodic component whose `goal` point publishes into this
    /// instance's goal keys.
    pub fn component(&self, name: &str, core: &str, period_ms: u64) -> ComponentSpec {
        ComponentSpec::new(name, core)
            .bind("goal", &format!("goal/{}/*", self.instance))
            .periodic(period_ms)
    }
}
