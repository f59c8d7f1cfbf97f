//! Component runtime.
//!
//! A component is a core (main logic) extended by injections and altered by
//! overrides, with extension points bound to key expressions. Components never
//! reference each other; they exchange samples over the fabric only.

mod api;
mod compose;
mod context;
mod cores;
mod executor;
mod motion;
mod spec;

pub use api::MotionApi;
pub use compose::{
    compose, ComposedComponent, CoreDef, Event, Handler, PointKind, Registry, ON_INIT, ON_SHUTDOWN,
    ON_TICK,
};
pub use context::Ctx;
pub use cores::HealthReport;
pub use executor::{
    ComponentId, ComponentStatus, ComponentTrace, Runtime, TraceEntry, HEARTBEAT_PERIOD,
};
pub use motion::{
    axis_angle, forward_kinematics, quat_mul, relative_pose, rotate, sync_targets, JointState,
    JointTarget, Quat, Transform, IDENTITY,
};
pub use spec::{ComponentSpec, ExecutorPolicy};

use crate::fabric::FabricError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown core `{0}`")]
    UnknownCore(String),
    #[error("unknown injection `{0}`")]
    UnknownInjection(String),
    #[error("unknown override `{0}`")]
    UnknownOverride(String),
    #[error("component `{component}` has no extension point `{point}`")]
    UnknownPoint { component: String, point: String },
    #[error("overrides {overrides:?} all target `{point}`")]
    OverrideConflict {
        point: String,
        overrides: Vec<String>,
    },
    #[error("component `{component}` has no binding for `{point}`")]
    UnboundPoint { component: String, point: String },
    #[error("component `{component}`: key `{key}` is outside the binding of `{point}`")]
    KeyOutsideBinding {
        component: String,
        point: String,
        key: String,
    },
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("no state for joint `{0}`")]
    MissingJointState(String),
    #[error("handler for `{point}` in `{component}` failed: {message}")]
    HandlerPanic {
        component: String,
        point: String,
        message: String,
    },
    #[error("duplicate component `{0}`")]
    DuplicateComponent(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

impl From<RuntimeError> for String {
    fn from(e: RuntimeError) -> String {
        e.to_string()
    }
}
