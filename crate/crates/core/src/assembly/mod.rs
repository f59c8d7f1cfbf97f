//! Robot assembler.
//!
//! Heterogeneous module descriptors are attached port-to-port into a tree. From
//! that tree the assembler derives a [`RobotDescription`] (the composed
//! kinematic tree) and one [`HostConfig`] per computer.

mod derive;
mod roster;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use derive::{derive_host_configs, derive_kinematics, module_chain};
pub use roster::{frame_of, module_roster, Role as ComponentRole, WORLD_FRAME};
pub use validate::{validate_assembly, ValidationReport, Violation};

pub type Vec3 = [f64; 3];

/// Name of the link every module chain starts from.
pub const BASE_LINK: &str = "base";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Limb,
    Wheel,
    Gripper,
    Base,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDesc {
    pub name: String,
    pub axis: Vec3,
    /// Offset from the previous link's frame to this joint, in meters.
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    /// `base` or the name of the joint whose child link carries the port.
    #[serde(default = "base_link")]
    pub link: String,
    #[serde(default)]
    pub offset: Vec3,
}

fn base_link() -> String {
    BASE_LINK.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDescriptor {
    pub id: String,
    pub family: String,
    pub revision: String,
    pub kind: ModuleKind,
    pub dof: usize,
    #[serde(default)]
    pub joints: Vec<JointDesc>,
    /// Computer running this module. Passive modules have none.
    #[serde(default)]
    pub host: Option<String>,
    #[serde(default)]
    pub ports: Vec<Port>,
    #[serde(default)]
    pub calibration: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub injections: Vec<String>,
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl ModuleDescriptor {
    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    /// Carries actuators, hence software components.
    pub fn is_active(&self) -> bool {
        self.dof > 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModuleRegistry {
    modules: BTreeMap<String, ModuleDescriptor>,
}

#[derive(Debug, thiserror::Error)]
pub enum AssemblyError {
    #[error("invalid assembly: {0}")]
    InvalidAssembly(ValidationReport),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate module id `{0}`")]
    DuplicateModule(String),
}

impl ModuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, module: ModuleDescriptor) -> Option<ModuleDescriptor> {
        self.modules.insert(module.id.clone(), module)
    }

    pub fn get(&self, id: &str) -> Option<&ModuleDescriptor> {
        self.modules.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModuleDescriptor> {
        self.modules.values()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Loads every `*.json` document in `dir`, one module each.
    pub fn load_dir(dir: &Path) -> Result<Self, AssemblyError> {
        let io = |e| AssemblyError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut reg = Self::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| AssemblyError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let module: ModuleDescriptor =
                serde_json::from_str(&text).map_err(|e| AssemblyError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            if let Some(prev) = reg.insert(module) {
                return Err(AssemblyError::DuplicateModule(prev.id));
            }
        }
        Ok(reg)
    }
}

impl FromIterator<ModuleDescriptor> for ModuleRegistry {
    fn from_iter<I: IntoIterator<Item = ModuleDescriptor>>(iter: I) -> Self {
        let mut reg = Self::new();
        for m in iter {
            reg.insert(m);
        }
        reg
    }
}

/// `instance.port`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub instance: String,
    pub port: String,
}

impl PortRef {
    pub fn new(instance: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            instance: instance.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.port)
    }
}

impl FromStr for PortRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('.') {
            Some((i, p)) if !i.is_empty() && !p.is_empty() => Ok(PortRef::new(i, p)),
            _ => Err(format!("expected `instance.port`, got `{s}`")),
        }
    }
}

impl Serialize for PortRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub module: String,
    /// Overrides the descriptor's host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySpec {
    pub name: String,
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub attachments: Vec<(PortRef, PortRef)>,
    pub root: String,
}

impl AssemblySpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Host owning `inst`, if any.
    pub fn host_of<'a>(
        &'a self,
        inst: &'a Instance,
        registry: &'a ModuleRegistry,
    ) -> Option<&'a str> {
        inst.host
            .as_deref()
            .or_else(|| registry.get(&inst.module).and_then(|m| m.host.as_deref()))
    }

    /// Renames the assembly and prefixes every instance id (and host) with
    /// `name_`, so several copies can share one network.
    pub fn namespaced(&self, name: &str, registry: &ModuleRegistry) -> AssemblySpec {
        let rename = |id: &str| format!("{name}_{id}");
        AssemblySpec {
            name: name.to_owned(),
            instances: self
                .instances
                .iter()
                .map(|i| Instance {
                    id: rename(&i.id),
                    module: i.module.clone(),
                    host: self.host_of(i, registry).map(rename),
                })
                .collect(),
            attachments: self
                .attachments
                .iter()
                .map(|(a, b)| {
                    (
                        PortRef::new(rename(&a.instance), &a.port),
                        PortRef::new(rename(&b.instance), &b.port),
                    )
                })
                .collect(),
            root: rename(&self.root),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParent {
    pub link: String,
    pub joint: String,
    pub joint_type: JointType,
    pub axis: Vec3,
    /// Translation from the parent link frame to the joint frame.
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkNode {
    pub name: String,
    pub parent: Option<LinkParent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotDescription {
    pub name: String,
    pub root: String,
    /// Depth-first order from the root; parents precede children.
    pub links: Vec<LinkNode>,
    /// Actuated joints, globally named `<instance>/<joint>`.
    pub joints: Vec<String>,
}

impl RobotDescription {
    pub fn link(&self, name: &str) -> Option<&LinkNode> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn children<'a>(&'a self, link: &'a str) -> impl Iterator<Item = &'a LinkNode> + 'a {
        self.links
            .iter()
            .filter(move |l| l.parent.as_ref().is_some_and(|p| p.link == link))
    }

    /// Links from the root to `frame`, root first.
    pub fn path_to(&self, frame: &str) -> Option<Vec<&LinkNode>> {
        let mut out = vec![self.link(frame)?];
        while let Some(p) = &out.last().unwrap().parent {
            out.push(self.link(&p.link)?);
            if out.len() > self.links.len() {
                return None;
            }
        }
        out.reverse();
        Some(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("description serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostConfig {
    pub host: String,
    pub components: Vec<crate::runtime::ComponentSpec>,
    pub joints_under_control: Vec<String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl HostConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("host config serializes")
    }
}

/// Writes `description.json` and `hosts/<host>.json` under `dir`, returning
/// the written paths.
pub fn emit_generated(
    spec: &AssemblySpec,
    registry: &ModuleRegistry,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>, AssemblyError> {
    let description = derive_kinematics(spec, registry)?;
    let hosts = derive_host_configs(spec, registry)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |e| AssemblyError::Io { path, source: e }
    };
    let host_dir = dir.join("hosts");
    std::fs::create_dir_all(&host_dir).map_err(io(&host_dir))?;
    let mut written = vec![dir.join("description.json")];
    std::fs::write(&written[0], description.to_json()).map_err(io(&written[0]))?;
    for h in hosts {
        let path = host_dir.join(format!("{}.json", h.host));
        std::fs::write(&path, h.to_json()).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub(crate) fn link_name(instance: &str, link: &str) -> String {
    if link == BASE_LINK {
        format!("{instance}/{BASE_LINK}")
    } else {
        format!("{instance}/{link}_link")
    }
}

pub(crate) fn joint_name(instance: &str, joint: &str) -> String {
    format!("{instance}/{joint}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_ref_round_trips() {
        let p: PortRef = "limb.a.mount".parse().unwrap();
        assert_eq!(p, PortRef::new("limb.a", "mount"));
        assert_eq!(p.to_string(), "limb.a.mount");
        assert!("nodot".parse::<PortRef>().is_err());
    }

    #[test]
    fn namespacing_prefixes_ids_and_hosts() {
        let reg: ModuleRegistry = [ModuleDescriptor {
            id: "w".into(),
            family: "H".into(),
            revision: "V1".into(),
            kind: ModuleKind::Wheel,
            dof: 0,
            joints: vec![],
            host: Some("pc".into()),
            ports: vec![],
            calibration: Default::default(),
            injections: vec![],
            overrides: vec![],
        }]
        .into_iter()
        .collect();
        let spec = AssemblySpec {
            name: "x".into(),
            instances: vec![Instance {
                id: "a".into(),
                module: "w".into(),
                host: None,
            }],
            attachments: vec![],
            root: "a".into(),
        };
        let ns = spec.namespaced("robot2", &reg);
        assert_eq!(ns.root, "robot2_a");
        assert_eq!(ns.instances[0].host.as_deref(), Some("robot2_pc"));
    }
}
