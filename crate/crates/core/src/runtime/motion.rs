use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RuntimeError;
use crate::assembly::{JointType, RobotDescription, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub joint: String,
    pub position: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort: Option<f64>,
    pub stamp: f64,
}

impl JointState {
    pub fn at(joint: impl Into<String>, position: f64) -> Self {
        JointState {
            joint: joint.into(),
            position,
            velocity: None,
            effort: None,
            stamp: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTarget {
    pub joint: String,
    pub position: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(default)]
    pub stamp: f64,
}

impl JointTarget {
    pub fn at(joint: impl Into<String>, position: f64) -> Self {
        JointTarget {
            joint: joint.into(),
            position,
            velocity: None,
            stamp: 0.0,
        }
    }
}

/// Unit quaternion `[w, x, y, z]`.
pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_conj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn axis_angle(axis: Vec3, angle: f64) -> Quat {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if n == 0.0 {
        return IDENTITY;
    }
    let (s, c) = (angle / 2.0).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

pub fn rotate(q: Quat, v: Vec3) -> Vec3 {
    // t = 2 q_v x v ; v' = v + w t + q_v x t
    let u = [q[1], q[2], q[3]];
    let cross = |a: Vec3, b: Vec3| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let t = cross(u, v).map(|c| 2.0 * c);
    let ut = cross(u, t);
    [
        v[0] + q[0] * t[0] + ut[0],
        v[1] + q[0] * t[1] + ut[1],
        v[2] + q[0] * t[2] + ut[2],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub frame: String,
    pub parent: String,
    pub translation: Vec3,
    pub rotation: Quat,
    pub stamp: f64,
}

impl Transform {
    pub fn identity(parent: impl Into<String>, frame: impl Into<String>) -> Self {
        Transform {
            frame: frame.into(),
            parent: parent.into(),
            translation: [0.0; 3],
            rotation: IDENTITY,
            stamp: 0.0,
        }
    }

    /// `self` followed by `child` (child expressed in `self.frame`).
    pub fn then(&self, child: &Transform) -> Transform {
        let r = rotate(self.rotation, child.translation);
        Transform {
            frame: child.frame.clone(),
            parent: self.parent.clone(),
            translation: [
                self.translation[0] + r[0],
                self.translation[1] + r[1],
                self.translation[2] + r[2],
            ],
            rotation: quat_normalize(quat_mul(self.rotation, child.rotation)),
            stamp: self.stamp.max(child.stamp),
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv = quat_conj(self.rotation);
        let t = rotate(inv, self.translation);
        Transform {
            frame: self.parent.clone(),
            parent: self.frame.clone(),
            translation: [-t[0], -t[1], -t[2]],
            rotation: inv,
            stamp: self.stamp,
        }
    }

    /// Scoped key this transform is published on.
    pub fn key(&self) -> String {
        format!("tf/{}/{}", self.parent, self.frame)
    }

    pub fn rotation_norm(&self) -> f64 {
        self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Pose of `frame` in the description's root frame.
pub fn forward_kinematics(
    description: &RobotDescription,
    positions: &BTreeMap<String, f64>,
    frame: &str,
) -> Result<Transform, RuntimeError> {
    relative_pose(description, positions, &description.root, frame)
}

/// Pose of `frame` in the frame of its ancestor link `base`. Only joints
/// between the two need positions.
pub fn relative_pose(
    description: &RobotDescription,
    positions: &BTreeMap<String, f64>,
    base: &str,
    frame: &str,
) -> Result<Transform, RuntimeError> {
    let path = description
        .path_to(frame)
        .ok_or_else(|| RuntimeError::UnknownFrame(frame.to_owned()))?;
    let start = path
        .iter()
        .position(|l| l.name == base)
        .ok_or_else(|| RuntimeError::UnknownFrame(base.to_owned()))?;
    let mut pose = Transform::identity(base, base);
    for link in &path[start + 1..] {
        let p = link.parent.as_ref().expect("non-root link has a parent");
        let angle = match p.joint_type {
            JointType::Fixed => 0.0,
            JointType::Revolute => *positions
                .get(&p.joint)
                .ok_or_else(|| RuntimeError::MissingJointState(p.joint.clone()))?,
        };
        let step = Transform {
            frame: link.name.clone(),
            parent: p.link.clone(),
            translation: p.offset,
            rotation: axis_angle(p.axis, angle),
            stamp: 0.0,
        };
        pose = pose.then(&step);
    }
    pose.frame = frame.to_owned();
    Ok(pose)
}

/// One synchronized interpolation step.
///
/// Each joint moves toward its goal by a step proportional to its remaining
/// distance, scaled so the farthest joint moves `min(max_step, its distance)`.
/// Iterating therefore brings every joint to its goal on the same cycle.
pub fn sync_targets(
    targets: &[JointTarget],
    states: &BTreeMap<String, JointState>,
    max_step: f64,
) -> Result<Vec<JointTarget>, RuntimeError> {
    if max_step.is_nan() || max_step <= 0.0 {
        return Err(RuntimeError::NonPositiveStep(max_step));
    }
    let mut current = Vec::with_capacity(targets.len());
    for t in targets {
        let s = states
            .get(&t.joint)
            .ok_or_else(|| RuntimeError::UnknownJoint(t.joint.clone()))?;
        current.push(s.position);
    }
    let far = targets
        .iter()
        .zip(&current)
        .map(|(t, c)| (t.position - c).abs())
        .fold(0.0, f64::max);
    if far == 0.0 {
        return Ok(targets
            .iter()
            .zip(&current)
            .map(|(t, c)| JointTarget {
                position: *c,
                ..t.clone()
            })
            .collect());
    }
    let step = max_step.min(far);
    let arriving = step >= far;
    Ok(targets
        .iter()
        .zip(&current)
        .map(|(t, c)| {
            let position = if arriving {
                t.position
            } else {
                c + (t.position - c) / far * step
            };
            JointTarget {
                position,
                ..t.clone()
            }
        })
        .collect())
}
