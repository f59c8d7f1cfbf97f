use std::collections::BTreeMap;

use serde_json::Value;

use super::roster::module_roster;
use super::{
    joint_name, link_name, AssemblyError, AssemblySpec, HostConfig, JointType, LinkNode,
    LinkParent, ModuleDescriptor, ModuleRegistry, PortRef, RobotDescription, BASE_LINK,
};

/// The serial chain contributed by one module instance, base link first.
pub fn module_chain(instance: &str, module: &ModuleDescriptor) -> Vec<LinkNode> {
    let mut out = vec![LinkNode {
        name: link_name(instance, BASE_LINK),
        parent: None,
    }];
    for j in &module.joints {
        let parent = out.last().unwrap().name.clone();
        out.push(LinkNode {
            name: link_name(instance, &j.name),
            parent: Some(LinkParent {
                link: parent,
                joint: joint_name(instance, &j.name),
                joint_type: JointType::Revolute,
                axis: j.axis,
                offset: j.offset,
            }),
        });
    }
    out
}

fn check(spec: &AssemblySpec, registry: &ModuleRegistry) -> Result<(), AssemblyError> {
    let report = super::validate_assembly(spec, registry);
    if report.is_valid() {
        Ok(())
    } else {
        Err(AssemblyError::InvalidAssembly(report))
    }
}

/// Instances in depth-first order from the root, each with the attachment
/// that connects it to its parent (`parent side`, `child side`).
pub(crate) fn walk<'a>(
    spec: &'a AssemblySpec,
    registry: &'a ModuleRegistry,
) -> Vec<(&'a str, Option<(&'a PortRef, &'a PortRef)>)> {
    let mut out = Vec::new();
    let mut stack = vec![(spec.root.as_str(), None)];
    while let Some((inst, via)) = stack.pop() {
        out.push((inst, via));
        let module = spec.instance(inst).and_then(|i| registry.get(&i.module));
        let port_rank = |p: &str| {
            module
                .and_then(|m| m.ports.iter().position(|q| q.name == p))
                .unwrap_or(usize::MAX)
        };
        let mut children: Vec<(&PortRef, &PortRef)> = spec
            .attachments
            .iter()
            .filter_map(|(a, b)| {
                if a.instance == inst {
                    Some((a, b))
                } else if b.instance == inst {
                    Some((b, a))
                } else {
                    None
                }
            })
            .filter(|(_, child)| {
                via.is_none_or(|(p, _): (&PortRef, &PortRef)| p.instance != child.instance)
            })
            .collect();
        children.sort_by_key(|(mine, child)| (port_rank(&mine.port), child.instance.clone()));
        // reversed so the first port is visited first
        for (mine, child) in children.into_iter().rev() {
            stack.push((child.instance.as_str(), Some((mine, child))));
        }
    }
    out
}

pub fn derive_kinematics(
    spec: &AssemblySpec,
    registry: &ModuleRegistry,
) -> Result<RobotDescription, AssemblyError> {
    check(spec, registry)?;
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for (inst, via) in walk(spec, registry) {
        let module = module_of(spec, registry, inst);
        let mut chain = module_chain(inst, module);
        if let Some((parent_side, child_side)) = via {
            let parent_module = module_of(spec, registry, &parent_side.instance);
            let pp = parent_module
                .port(&parent_side.port)
                .expect("validated port");
            let cp = module.port(&child_side.port).expect("validated port");
            chain[0].parent = Some(LinkParent {
                link: link_name(&parent_side.instance, &pp.link),
                joint: format!("{inst}/mount"),
                joint_type: JointType::Fixed,
                axis: [0.0, 0.0, 1.0],
                offset: [
                    pp.offset[0] - cp.offset[0],
                    pp.offset[1] - cp.offset[1],
                    pp.offset[2] - cp.offset[2],
                ],
            });
        }
        joints.extend(module.joints.iter().map(|j| joint_name(inst, &j.name)));
        links.extend(chain);
    }
    Ok(RobotDescription {
        name: spec.name.clone(),
        root: link_name(&spec.root, BASE_LINK),
        links,
        joints,
    })
}

fn module_of<'a>(
    spec: &AssemblySpec,
    registry: &'a ModuleRegistry,
    inst: &str,
) -> &'a ModuleDescriptor {
    let i = spec.instance(inst).expect("validated instance");
    registry.get(&i.module).expect("validated module")
}

/// The root when it is actuated, otherwise whatever hangs from the root's
/// first used port. Chosen from the root alone so that editing any other
/// module never moves the role.
fn world_publisher<'a>(
    spec: &AssemblySpec,
    registry: &ModuleRegistry,
    order: &[(&'a str, Option<(&PortRef, &PortRef)>)],
) -> Option<&'a str> {
    let (root, _) = order.first()?;
    if module_of(spec, registry, root).is_active() {
        return Some(root);
    }
    let (first, via) = order.get(1)?;
    let active = via.is_some_and(|(p, _)| p.instance == *root)
        && module_of(spec, registry, first).is_active();
    active.then_some(*first)
}

/// One configuration per computer, in host name order.
pub fn derive_host_configs(
    spec: &AssemblySpec,
    registry: &ModuleRegistry,
) -> Result<Vec<HostConfig>, AssemblyError> {
    let description = derive_kinematics(spec, registry)?;
    let mut hosts: BTreeMap<String, HostConfig> = BTreeMap::new();
    let order = walk(spec, registry);
    let world_publisher = world_publisher(spec, registry, &order);
    for (inst_id, _) in order {
        let inst = spec.instance(inst_id).expect("validated instance");
        let module = module_of(spec, registry, inst_id);
        let Some(host) = spec.host_of(inst, registry) else {
            continue;
        };
        let publishes_world = world_publisher == Some(inst_id);
        let cfg = hosts.entry(host.to_owned()).or_insert_with(|| HostConfig {
            host: host.to_owned(),
            components: Vec::new(),
            joints_under_control: Vec::new(),
            parameters: BTreeMap::new(),
        });
        cfg.components.extend(module_roster(
            spec,
            inst,
            module,
            &description,
            publishes_world,
        ));
        cfg.joints_under_control
            .extend(module.joints.iter().map(|j| joint_name(inst_id, &j.name)));
        let p = &mut cfg.parameters;
        p.insert(format!("{inst_id}.module"), Value::from(module.id.clone()));
        p.insert(
            format!("{inst_id}.family"),
            Value::from(module.family.clone()),
        );
        p.insert(
            format!("{inst_id}.revision"),
            Value::from(module.revision.clone()),
        );
        for (k, v) in &module.calibration {
            p.insert(format!("{inst_id}.{k}"), v.clone());
        }
    }
    Ok(hosts.into_values().collect())
}
