//! Random input generators. These build inputs only; they check nothing.

use std::collections::BTreeMap;

use modstack_core::assembly::{
    AssemblySpec, Instance, JointDesc, ModuleDescriptor, ModuleKind, ModuleRegistry, Port, PortRef,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const CHILD_PORTS: [&str; 3] = ["p0", "p1", "p2"];

fn unit_axis(rng: &mut impl Rng) -> [f64; 3] {
    *[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .choose(rng)
        .unwrap()
}

fn vec3(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    ]
}

/// A module with a `mount` port on its base and three child ports, some of
/// them on moving links.
pub fn random_module(rng: &mut impl Rng, id: &str) -> ModuleDescriptor {
    let dof = rng.gen_range(0..=4);
    let joints: Vec<JointDesc> = (0..dof)
        .map(|k| JointDesc {
            name: format!("j{k}"),
            axis: unit_axis(rng),
            offset: vec3(rng),
        })
        .collect();
    let mut ports = vec![Port {
        name: "mount".into(),
        link: "base".into(),
        offset: [0.0; 3],
    }];
    for p in CHILD_PORTS {
        let link = if dof > 0 && rng.gen_bool(0.5) {
            format!("j{}", rng.gen_range(0..dof))
        } else {
            "base".into()
        };
        ports.push(Port {
            name: p.into(),
            link,
            offset: vec3(rng),
        });
    }
    let kind = if dof == 0 {
        ModuleKind::Base
    } else {
        *[ModuleKind::Limb, ModuleKind::Wheel, ModuleKind::Other]
            .choose(rng)
            .unwrap()
    };
    ModuleDescriptor {
        id: id.into(),
        family: ["H-line", "G-line"].choose(rng).unwrap().to_string(),
        revision: ["V1", "V2"].choose(rng).unwrap().to_string(),
        kind,
        dof,
        joints,
        host: (dof > 0).then(|| format!("{id}_pc")),
        ports,
        calibration: [(
            "gain".to_owned(),
            serde_json::Value::from(rng.gen_range(1..100)),
        )]
        .into_iter()
        .collect(),
        injections: vec![],
        overrides: vec![],
    }
}

/// A valid tree assembly of up to `max_instances` instances over a fresh
/// random registry. Hosts are sometimes shared.
pub fn random_assembly(rng: &mut impl Rng, max_instances: usize) -> (ModuleRegistry, AssemblySpec) {
    let kinds = rng.gen_range(1..=4);
    let modules: Vec<ModuleDescriptor> = (0..kinds)
        .map(|k| random_module(rng, &format!("mod{k}")))
        .collect();
    let n = rng.gen_range(1..=max_instances);
    let shared_hosts = rng.gen_bool(0.5);
    let mut instances = Vec::new();
    let mut attachments = Vec::new();
    let mut free: Vec<PortRef> = Vec::new();
    for i in 0..n {
        let id = format!("m{i:02}");
        let module = modules.choose(rng).unwrap();
        let host = if shared_hosts && module.is_active() {
            Some(format!("pc{}", rng.gen_range(0..3)))
        } else {
            None
        };
        if i > 0 {
            let k = rng.gen_range(0..free.len());
            let parent = free.swap_remove(k);
            attachments.push(if rng.gen_bool(0.5) {
                (parent, PortRef::new(&id, "mount"))
            } else {
                (PortRef::new(&id, "mount"), parent)
            });
        }
        free.extend(CHILD_PORTS.iter().map(|p| PortRef::new(&id, *p)));
        instances.push(Instance {
            id,
            module: module.id.clone(),
            host,
        });
    }
    let registry = modules.into_iter().collect();
    (
        registry,
        AssemblySpec {
            name: "random".into(),
            instances,
            attachments,
            root: "m00".into(),
        },
    )
}

/// Random DAG over `n` tasks named `t00..`; edges only point to lower
/// indices, then ids are shuffled so index order is not lexicographic order.
pub fn random_dag(rng: &mut impl Rng, n: usize) -> BTreeMap<String, Vec<String>> {
    let mut names: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
    names.shuffle(rng);
    let density = rng.gen_range(0.0..0.3);
    (0..n)
        .map(|i| {
            let deps = (0..i)
                .filter(|_| rng.gen_bool(density))
                .map(|j| names[j].clone())
                .collect();
            (names[i].clone(), deps)
        })
        .collect()
}
