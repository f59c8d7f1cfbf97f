use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    joint_name, link_name, AssemblySpec, Instance, ModuleDescriptor, ModuleKind, RobotDescription,
    BASE_LINK,
};
use crate::runtime::ComponentSpec;

/// Component roles, robot side and ground control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MotorInterface,
    JointManager,
    KinematicsManager,
    HealthMonitor,
    LocationPublisher,
    HumanOperator,
    AutonomousOperator,
    DataMonitor,
    Archiver,
}

impl Role {
    pub const ALL: [Role; 9] = [
        Role::MotorInterface,
        Role::JointManager,
        Role::KinematicsManager,
        Role::HealthMonitor,
        Role::LocationPublisher,
        Role::HumanOperator,
        Role::AutonomousOperator,
        Role::DataMonitor,
        Role::Archiver,
    ];

    pub fn core(self) -> &'static str {
        match self {
            Role::MotorInterface => "motor_interface",
            Role::JointManager => "joint_manager",
            Role::KinematicsManager => "kinematics_manager",
            Role::HealthMonitor => "health_monitor",
            Role::LocationPublisher => "location_publisher",
            Role::HumanOperator => "human_operator",
            Role::AutonomousOperator => "autonomous_operator",
            Role::DataMonitor => "data_monitor",
            Role::Archiver => "archiver",
        }
    }

    /// Role of a core id, virtual counterparts included.
    pub fn of_core(core: &str) -> Option<Role> {
        let core = core.strip_suffix("_virtual").unwrap_or(core);
        Role::ALL.into_iter().find(|r| r.core() == core)
    }
}

/// tf frame of a description link: `<inst>` for a module base, `<inst>_<joint>_link` otherwise.
pub fn frame_of(link: &str) -> String {
    match link.strip_suffix(&format!("/{BASE_LINK}")) {
        Some(inst) => inst.to_owned(),
        None => link.replace('/', "_"),
    }
}

pub const WORLD_FRAME: &str = "world";

/// Components run for one module instance.
///
/// Every actuated module gets a motor interface, a joint manager, a health
/// monitor and two location publishers (mount pose and tip pose); limbs also
/// get a kinematics manager. Passive modules get nothing.
pub fn module_roster(
    spec: &AssemblySpec,
    inst: &Instance,
    module: &ModuleDescriptor,
    description: &RobotDescription,
    publishes_world: bool,
) -> Vec<ComponentSpec> {
    if !module.is_active() {
        return Vec::new();
    }
    let i = inst.id.as_str();
    let joints: Vec<Value> = module
        .joints
        .iter()
        .map(|j| Value::from(joint_name(i, &j.name)))
        .collect();
    let calib = |k: &str, default: f64| {
        module
            .calibration
            .get(k)
            .and_then(Value::as_f64)
            .unwrap_or(default)
    };
    let state = format!("joints/{i}/*/state");
    let target = format!("joints/{i}/*/target");
    let tip_link = module
        .joints
        .last()
        .map(|j| link_name(i, &j.name))
        .unwrap_or_else(|| link_name(i, BASE_LINK));

    let mut out = vec![
        ComponentSpec::new(format!("{i}/motor_interface"), Role::MotorInterface.core())
            .bind("target", &target)
            .bind("state", &state)
            .periodic(50)
            .param("joints", joints.clone())
            .param("tracking_rate", calib("tracking_rate", 8.0)),
        {
            let mut jm =
                ComponentSpec::new(format!("{i}/joint_manager"), Role::JointManager.core())
                    .bind("goal", &format!("goal/{i}/*"))
                    .bind("state", &state)
                    .bind("target", &target)
                    .periodic(50)
                    .param("joints", joints.clone())
                    .param("max_step", calib("max_step", 0.05));
            if let Some(broken) = module
                .calibration
                .get("broken_joints")
                .and_then(Value::as_array)
            {
                let names: Vec<Value> = broken
                    .iter()
                    .filter_map(Value::as_str)
                    .map(|j| Value::from(joint_name(i, j)))
                    .collect();
                jm = jm.param("broken_joints", names);
            }
            jm.injections = module.injections.clone();
            jm.overrides = module.overrides.clone();
            jm
        },
    ];
    if module.kind == ModuleKind::Limb {
        out.push(
            ComponentSpec::new(
                format!("{i}/kinematics_manager"),
                Role::KinematicsManager.core(),
            )
            .bind("state", &state)
            .bind("pose", &format!("tf/{i}/{i}_ee"))
            .periodic(100)
            .param("description", spec.name.clone())
            .param("base", link_name(i, BASE_LINK))
            .param("frame", tip_link.clone()),
        );
    }
    out.push(
        ComponentSpec::new(format!("{i}/health_monitor"), Role::HealthMonitor.core())
            .bind("alive", &format!("health/{i}/**"))
            .bind("report", &format!("status/{i}/health"))
            .periodic(1000)
            .param("heartbeat_ms", 1000),
    );

    let base = description
        .link(&link_name(i, BASE_LINK))
        .expect("module base link");
    let (parent_frame, offset) = match &base.parent {
        Some(p) => (frame_of(&p.link), p.offset),
        None => (WORLD_FRAME.to_owned(), [0.0; 3]),
    };
    let mut mount = ComponentSpec::new(
        format!("{i}/location_mount"),
        Role::LocationPublisher.core(),
    )
    .bind("pose", &format!("tf/{parent_frame}/{i}"))
    .periodic(100)
    .param("parent", parent_frame)
    .param("translation", offset.to_vec());
    if publishes_world && base.parent.is_some() {
        let root = frame_of(&description.root);
        mount = mount
            .bind("world_pose", &format!("tf/{WORLD_FRAME}/{root}"))
            .param("world_frame", root);
    }
    out.push(mount);
    out.push(
        ComponentSpec::new(format!("{i}/location_tip"), Role::LocationPublisher.core())
            .bind("state", &state)
            .bind("pose", &format!("tf/{i}/{}", frame_of(&tip_link)))
            .periodic(100)
            .param("description", spec.name.clone())
            .param("base", link_name(i, BASE_LINK))
            .param("frame", tip_link),
    );
    out
}
