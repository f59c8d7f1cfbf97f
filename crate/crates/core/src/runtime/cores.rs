//! Builtin cores, injections and overrides.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::compose::{CoreDef, Event, PointKind, Registry, ON_INIT, ON_TICK};
use super::context::Ctx;
use super::motion::{relative_pose, sync_targets, JointState, JointTarget, Transform, IDENTITY};
use super::{ComponentSpec, RuntimeError};
use crate::assembly::frame_of;
use crate::fabric::SimTime;

impl Registry {
    /// Every core, injection and override shipped with the stack.
    pub fn builtin() -> Registry {
        let mut r = Registry::empty();
        r.add_core(motor_interface("motor_interface"));
        r.add_core(motor_interface("motor_interface_virtual"));
        r.add_core(joint_manager());
        r.add_core(kinematics_manager());
        r.add_core(location_publisher());
        r.add_core(health_monitor());
        r.add_core(operator("human_operator"));
        r.add_core(operator("autonomous_operator"));
        r.add_core(data_monitor());
        r.add_core(archiver());

        r.add_injection("telemetry", "dispatch", |ctx, ev| {
            let Event::Call(targets) = ev else {
                return Ok(());
            };
            let n = ctx
                .vars()
                .entry("dispatched".into())
                .or_insert(Value::from(0u64));
            *n = Value::from(n.as_u64().unwrap_or(0) + 1);
            let count = n.clone();
            if ctx.binding("telemetry").is_some() {
                let sent = targets.as_array().map_or(0, Vec::len);
                ctx.publish_bound(
                    "telemetry",
                    serde_json::to_vec(&json!({ "dispatches": count, "targets": sent })).unwrap(),
                )?;
            }
            Ok(())
        });
        r.add_override("broken_joint", "dispatch", |ctx, ev| {
            let Event::Call(targets) = ev else {
                return Ok(());
            };
            let broken: BTreeSet<String> = ctx
                .spec()
                .param_strings("broken_joints")
                .into_iter()
                .collect();
            let targets: Vec<JointTarget> =
                serde_json::from_value(targets.clone()).map_err(|e| e.to_string())?;
            for t in targets.iter().filter(|t| !broken.contains(&t.joint)) {
                ctx.publish_json("target", &format!("joints/{}/target", t.joint), t)?;
            }
            Ok(())
        });
        r.add_override("hold_position", "dispatch", |_, _| Ok(()));
        // every transform on the point's own (concrete) binding, e.g. one shared `tf/all` stream
        r.add_override("aggregate_tf", "emit", |ctx, ev| {
            if let Some((point, tf)) = emit_args(ev)? {
                ctx.publish_bound(
                    &point,
                    serde_json::to_vec(&tf).expect("transform serializes"),
                )?;
            }
            Ok(())
        });
        r
    }
}

fn param_joints(spec: &ComponentSpec) -> Vec<String> {
    spec.param_strings("joints")
}

/// `joints/<instance>/<joint>/state` -> `<instance>/<joint>`
fn joint_of(key: &str, prefix: &str, suffix: &str) -> Option<String> {
    key.strip_prefix(prefix)
        .and_then(|k| k.strip_suffix(suffix))
        .map(str::to_owned)
}

fn parse<T: for<'de> Deserialize<'de>>(payload: &[u8]) -> Result<T, String> {
    serde_json::from_slice(payload).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- motor

struct Motor {
    positions: BTreeMap<String, f64>,
    targets: BTreeMap<String, f64>,
    rate: f64,
    last: Option<SimTime>,
}

/// First-order actuator: position tracks the latest target at `tracking_rate`
/// per second. The hardware core and its virtual counterpart share the model;
/// the launcher picks which one runs.
fn motor_interface(id: &str) -> CoreDef {
    CoreDef::new(id, |spec| {
        let joints = param_joints(spec);
        Box::new(Motor {
            positions: joints.iter().map(|j| (j.clone(), 0.0)).collect(),
            targets: joints.iter().map(|j| (j.clone(), 0.0)).collect(),
            rate: spec.param_f64("tracking_rate").unwrap_or(8.0),
            last: None,
        })
    })
    .point("target", PointKind::Subscribe)
    .point("state", PointKind::Publish)
    .on(ON_INIT, |ctx, _| {
        let now = ctx.now();
        ctx.state::<Motor>().last = Some(now);
        Ok(())
    })
    .on("target", |ctx, ev| {
        let Event::Sample(s) = ev else { return Ok(()) };
        let t: JointTarget = parse(&s.payload)?;
        let m = ctx.state::<Motor>();
        if let Some(target) = m.targets.get_mut(&t.joint) {
            *target = t.position;
        }
        Ok(())
    })
    .on(ON_TICK, |ctx, _| {
        let now = ctx.now();
        let stamp = ctx.now_ms();
        let m = ctx.state::<Motor>();
        let dt = now.saturating_sub(m.last.unwrap_or(now)).as_millis_f64() / 1000.0;
        m.last = Some(now);
        let gain = (m.rate * dt).min(1.0);
        let mut out = Vec::new();
        for (j, p) in m.positions.iter_mut() {
            *p += (m.targets[j] - *p) * gain;
            out.push(JointState {
                joint: j.clone(),
                position: *p,
                velocity: None,
                effort: None,
                stamp,
            });
        }
        for s in out {
            ctx.publish_json("state", &format!("joints/{}/state", s.joint), &s)?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------- joint manager

struct JointManager {
    goals: BTreeMap<String, f64>,
    states: BTreeMap<String, JointState>,
}

fn joint_manager() -> CoreDef {
    CoreDef::new("joint_manager", |_| {
        Box::new(JointManager {
            goals: BTreeMap::new(),
            states: BTreeMap::new(),
        })
    })
    .point("goal", PointKind::Subscribe)
    .point("state", PointKind::Subscribe)
    .point("target", PointKind::Publish)
    .point("telemetry", PointKind::Publish)
    .point("dispatch", PointKind::Internal)
    .on("goal", |ctx, ev| {
        let Event::Sample(s) = ev else { return Ok(()) };
        let Some(joint) = joint_of(&s.key.to_string(), "goal/", "") else {
            return Ok(());
        };
        let goal: JointTarget = parse(&s.payload)?;
        if param_joints(ctx.spec()).contains(&joint) {
            ctx.state::<JointManager>()
                .goals
                .insert(joint, goal.position);
        }
        Ok(())
    })
    .on("state", |ctx, ev| {
        let Event::Sample(s) = ev else { return Ok(()) };
        let st: JointState = parse(&s.payload)?;
        ctx.state::<JointManager>()
            .states
            .insert(st.joint.clone(), st);
        Ok(())
    })
    .on(ON_TICK, |ctx, _| {
        let max_step = ctx.spec().param_f64("max_step").unwrap_or(0.05);
        let stamp = ctx.now_ms();
        let jm = ctx.state::<JointManager>();
        if jm.goals.is_empty() || !jm.goals.keys().all(|j| jm.states.contains_key(j)) {
            return Ok(());
        }
        let goals: Vec<JointTarget> = jm
            .goals
            .iter()
            .map(|(j, p)| JointTarget {
                joint: j.clone(),
                position: *p,
                velocity: None,
                stamp,
            })
            .collect();
        let step = sync_targets(&goals, &jm.states, max_step)?;
        ctx.call(
            "dispatch",
            serde_json::to_value(step).expect("targets serialize"),
        );
        Ok(())
    })
    .on("dispatch", |ctx, ev| {
        let Event::Call(targets) = ev else {
            return Ok(());
        };
        let targets: Vec<JointTarget> =
            serde_json::from_value(targets.clone()).map_err(|e| e.to_string())?;
        for t in &targets {
            ctx.publish_json("target", &format!("joints/{}/target", t.joint), t)?;
        }
        Ok(())
    })
}

// ------------------------------------------------------- pose publishers

#[derive(Default)]
struct Poses {
    positions: BTreeMap<String, f64>,
}

fn on_joint_state(ctx: &mut Ctx<'_>, ev: &Event) -> Result<(), String> {
    let Event::Sample(s) = ev else { return Ok(()) };
    let st: JointState = parse(&s.payload)?;
    ctx.state::<Poses>().positions.insert(st.joint, st.position);
    Ok(())
}

/// Pose of parameter `frame` relative to parameter `base`, published on
/// `tf/<base frame>/<child>`.
fn publish_chain_pose(ctx: &mut Ctx<'_>, child: &str) -> Result<(), String> {
    let spec = ctx.spec();
    let (Some(desc_name), Some(base), Some(frame)) = (
        spec.param_str("description"),
        spec.param_str("base"),
        spec.param_str("frame"),
    ) else {
        return Ok(());
    };
    let (desc_name, base, frame) = (desc_name.to_owned(), base.to_owned(), frame.to_owned());
    let positions = ctx.state::<Poses>().positions.clone();
    let Some(desc) = ctx.description(&desc_name) else {
        return Ok(());
    };
    let mut tf = match relative_pose(desc, &positions, &base, &frame) {
        Ok(tf) => tf,
        // joint states not heard yet
        Err(RuntimeError::MissingJointState(_)) => return Ok(()),
        Err(e) => return Err(e.to_string()),
    };
    tf.parent = frame_of(&base);
    tf.frame = child.to_owned();
    tf.stamp = ctx.now_ms();
    emit(ctx, "pose", &tf);
    Ok(())
}

/// Hands a transform to the `emit` slot, which publishes it on `point`.
fn emit(ctx: &mut Ctx<'_>, point: &str, tf: &Transform) {
    ctx.call("emit", json!({ "point": point, "tf": tf }));
}

fn emit_args(ev: &Event) -> Result<Option<(String, Transform)>, String> {
    let Event::Call(v) = ev else { return Ok(None) };
    let point = v["point"].as_str().ok_or("emit without point")?.to_owned();
    let tf: Transform = serde_json::from_value(v["tf"].clone()).map_err(|e| e.to_string())?;
    Ok(Some((point, tf)))
}

fn emit_scoped(ctx: &mut Ctx<'_>, ev: &Event) -> Result<(), String> {
    if let Some((point, tf)) = emit_args(ev)? {
        ctx.publish_transform(&point, &tf)?;
    }
    Ok(())
}

fn kinematics_manager() -> CoreDef {
    CoreDef::new("kinematics_manager", |_| Box::new(Poses::default()))
        .point("state", PointKind::Subscribe)
        .point("pose", PointKind::Publish)
        .point("emit", PointKind::Internal)
        .on("state", on_joint_state)
        .on("emit", emit_scoped)
        .on(ON_TICK, |ctx, _| {
            let child = tf_child(ctx, "pose")?;
            publish_chain_pose(ctx, &child)
        })
}

/// Last chunk of a concrete `tf/<parent>/<frame>` binding.
fn tf_child(ctx: &Ctx<'_>, point: &str) -> Result<String, String> {
    let key = ctx
        .binding(point)
        .ok_or_else(|| format!("`{point}` is unbound"))?
        .to_string();
    key.rsplit('/')
        .next()
        .map(str::to_owned)
        .ok_or_else(|| "empty key".to_owned())
}

fn location_publisher() -> CoreDef {
    CoreDef::new("location_publisher", |_| Box::new(Poses::default()))
        .point("state", PointKind::Subscribe)
        .point("pose", PointKind::Publish)
        .point("world_pose", PointKind::Publish)
        .point("emit", PointKind::Internal)
        .on("state", on_joint_state)
        .on("emit", emit_scoped)
        .on(ON_TICK, |ctx, _| {
            let child = tf_child(ctx, "pose")?;
            if ctx.spec().param_str("description").is_some() {
                publish_chain_pose(ctx, &child)?;
            } else {
                let spec = ctx.spec();
                let parent = spec.param_str("parent").unwrap_or("world").to_owned();
                let translation = vec3_param(spec, "translation");
                let tf = Transform {
                    frame: child,
                    parent,
                    translation,
                    rotation: IDENTITY,
                    stamp: ctx.now_ms(),
                };
                emit(ctx, "pose", &tf);
            }
            if let Some(root) = ctx.spec().param_str("world_frame").map(str::to_owned) {
                let translation = vec3_param(ctx.spec(), "world_translation");
                let tf = Transform {
                    frame: root,
                    parent: "world".into(),
                    translation,
                    rotation: IDENTITY,
                    stamp: ctx.now_ms(),
                };
                emit(ctx, "world_pose", &tf);
            }
            Ok(())
        })
}

fn vec3_param(spec: &ComponentSpec, key: &str) -> [f64; 3] {
    let v: Vec<f64> = spec
        .parameters
        .get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    [
        v.first().copied().unwrap_or(0.0),
        v.get(1).copied().unwrap_or(0.0),
        v.get(2).copied().unwrap_or(0.0),
    ]
}

// --------------------------------------------------------- health monitor

/// What a health monitor publishes on its report point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub monitor: String,
    pub stamp: f64,
    pub alive: Vec<String>,
    pub dead: Vec<String>,
}

#[derive(Deserialize)]
struct Heartbeat {
    component: String,
    alive: bool,
}

struct Health {
    last_seen: BTreeMap<String, SimTime>,
    dead: BTreeSet<String>,
    period: SimTime,
}

/// Declares a component dead once it has missed three consecutive
/// heartbeats, or immediately when it announces its own quarantine.
fn health_monitor() -> CoreDef {
    CoreDef::new("health_monitor", |spec| {
        let ms = spec.param_f64("heartbeat_ms").unwrap_or(1000.0);
        Box::new(Health {
            last_seen: BTreeMap::new(),
            dead: BTreeSet::new(),
            period: SimTime::from_millis_f64(ms),
        })
    })
    .point("alive", PointKind::Subscribe)
    .point("report", PointKind::Publish)
    .on("alive", |ctx, ev| {
        let Event::Sample(s) = ev else { return Ok(()) };
        let Ok(hb) = serde_json::from_slice::<Heartbeat>(&s.payload) else {
            return Ok(());
        };
        let now = ctx.now();
        let h = ctx.state::<Health>();
        h.last_seen.insert(hb.component.clone(), now);
        if hb.alive {
            h.dead.remove(&hb.component);
            Ok(())
        } else {
            h.dead.insert(hb.component);
            report(ctx)
        }
    })
    .on(ON_TICK, |ctx, _| {
        let now = ctx.now();
        let h = ctx.state::<Health>();
        let limit = SimTime(h.period.0 * 3);
        let newly: Vec<String> = h
            .last_seen
            .iter()
            .filter(|(c, t)| now.saturating_sub(**t) > limit && !h.dead.contains(*c))
            .map(|(c, _)| c.clone())
            .collect();
        h.dead.extend(newly);
        report(ctx)
    })
}

fn report(ctx: &mut Ctx<'_>) -> Result<(), String> {
    let monitor = ctx.name().to_owned();
    let stamp = ctx.now_ms();
    let h = ctx.state::<Health>();
    let r = HealthReport {
        monitor,
        stamp,
        alive: h
            .last_seen
            .keys()
            .filter(|c| !h.dead.contains(*c))
            .cloned()
            .collect(),
        dead: h.dead.iter().cloned().collect(),
    };
    if ctx.binding("report").is_some() {
        ctx.publish_bound("report", serde_json::to_vec(&r).expect("report serializes"))?;
    }
    Ok(())
}

// --------------------------------------------------------- ground control

/// Scripted operator: on every tick, sends a sinusoidal goal to each joint in
/// parameter `joints` on `goal/<joint>`.
fn operator(id: &str) -> CoreDef {
    CoreDef::new(id, |_| Box::new(()))
        .point("goal", PointKind::Publish)
        .on(ON_TICK, |ctx, _| {
            let amplitude = ctx.spec().param_f64("amplitude").unwrap_or(0.5);
            let cycle_ms = ctx.spec().param_f64("cycle_ms").unwrap_or(8000.0);
            let phase = ctx.spec().param_f64("phase").unwrap_or(0.0);
            let t = ctx.now_ms();
            let position = amplitude * (std::f64::consts::TAU * t / cycle_ms + phase).sin();
            for j in param_joints(ctx.spec()) {
                let goal = JointTarget {
                    joint: j.clone(),
                    position,
                    velocity: None,
                    stamp: t,
                };
                ctx.publish_json("goal", &format!("goal/{j}"), &goal)?;
            }
            Ok(())
        })
}

#[derive(Default)]
struct Counter {
    samples: u64,
    bytes: u64,
}

fn count(ctx: &mut Ctx<'_>, ev: &Event) -> Result<(), String> {
    if let Event::Sample(s) = ev {
        let c = ctx.state::<Counter>();
        c.samples += 1;
        c.bytes += s.payload.len() as u64;
    }
    Ok(())
}

fn data_monitor() -> CoreDef {
    CoreDef::new("data_monitor", |_| Box::new(Counter::default()))
        .point("watch", PointKind::Subscribe)
        .point("summary", PointKind::Publish)
        .on("watch", count)
        .on(ON_TICK, |ctx, _| {
            let c = ctx.state::<Counter>();
            let summary = json!({ "samples": c.samples, "bytes": c.bytes });
            if ctx.binding("summary").is_some() {
                ctx.publish_bound("summary", serde_json::to_vec(&summary).unwrap())?;
            }
            Ok(())
        })
}

fn archiver() -> CoreDef {
    CoreDef::new("archiver", |_| Box::new(Counter::default()))
        .point("archive", PointKind::Subscribe)
        .on("archive", count)
}
