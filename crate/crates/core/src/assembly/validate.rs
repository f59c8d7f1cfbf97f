use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{AssemblySpec, ModuleRegistry, PortRef, BASE_LINK};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateInstance {
        instance: String,
    },
    UnknownModule {
        instance: String,
        module: String,
    },
    UnknownRoot {
        root: String,
    },
    UnknownInstance {
        port: PortRef,
    },
    UnknownPort {
        port: PortRef,
    },
    PortReused {
        port: PortRef,
    },
    SelfAttachment {
        instance: String,
    },
    CycleDetected {
        instances: Vec<String>,
    },
    Disconnected {
        instances: Vec<String>,
    },
    /// A child module must hang from a port on its own base link.
    ChildPortNotOnBase {
        port: PortRef,
    },
    DofMismatch {
        module: String,
        dof: usize,
        joints: usize,
    },
    DuplicatePortName {
        module: String,
        port: String,
    },
    DuplicateJointName {
        module: String,
        joint: String,
    },
    PortOnUnknownLink {
        module: String,
        port: String,
    },
    /// An actuated module needs a computer to run its components.
    NoHost {
        instance: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

pub fn validate_assembly(spec: &AssemblySpec, registry: &ModuleRegistry) -> ValidationReport {
    let mut out = Vec::new();

    let mut seen = BTreeSet::new();
    for inst in &spec.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(Violation::DuplicateInstance {
                instance: inst.id.clone(),
            });
        }
        match registry.get(&inst.module) {
            None => out.push(Violation::UnknownModule {
                instance: inst.id.clone(),
                module: inst.module.clone(),
            }),
            Some(m) if m.is_active() && spec.host_of(inst, registry).is_none() => {
                out.push(Violation::NoHost {
                    instance: inst.id.clone(),
                })
            }
            Some(_) => {}
        }
    }
    let used_modules: BTreeSet<&str> = spec.instances.iter().map(|i| i.module.as_str()).collect();
    for m in used_modules.iter().filter_map(|m| registry.get(m)) {
        if m.dof != m.joints.len() {
            out.push(Violation::DofMismatch {
                module: m.id.clone(),
                dof: m.dof,
                joints: m.joints.len(),
            });
        }
        let mut names = BTreeSet::new();
        for p in &m.ports {
            if !names.insert(&p.name) {
                out.push(Violation::DuplicatePortName {
                    module: m.id.clone(),
                    port: p.name.clone(),
                });
            }
            if p.link != BASE_LINK && !m.joints.iter().any(|j| j.name == p.link) {
                out.push(Violation::PortOnUnknownLink {
                    module: m.id.clone(),
                    port: p.name.clone(),
                });
            }
        }
        let mut joints = BTreeSet::new();
        for j in &m.joints {
            if !joints.insert(&j.name) {
                out.push(Violation::DuplicateJointName {
                    module: m.id.clone(),
                    joint: j.name.clone(),
                });
            }
        }
    }
    if spec.instance(&spec.root).is_none() {
        out.push(Violation::UnknownRoot {
            root: spec.root.clone(),
        });
    }

    // edges that reference real ports
    let mut used_ports = BTreeSet::new();
    let mut adj: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for (idx, (a, b)) in spec.attachments.iter().enumerate() {
        let mut ok = true;
        for p in [a, b] {
            match spec.instance(&p.instance) {
                None => {
                    out.push(Violation::UnknownInstance { port: p.clone() });
                    ok = false;
                }
                Some(inst) => {
                    let known = registry
                        .get(&inst.module)
                        .is_none_or(|m| m.port(&p.port).is_some());
                    if !known {
                        out.push(Violation::UnknownPort { port: p.clone() });
                        ok = false;
                    }
                }
            }
            if !used_ports.insert(p.clone()) {
                out.push(Violation::PortReused { port: p.clone() });
            }
        }
        if a.instance == b.instance {
            out.push(Violation::SelfAttachment {
                instance: a.instance.clone(),
            });
            continue;
        }
        if ok {
            adj.entry(&a.instance).or_default().push((&b.instance, idx));
            adj.entry(&b.instance).or_default().push((&a.instance, idx));
        }
    }

    // union-find over the attachment edges: an edge inside one component closes a loop
    let mut dsu: BTreeMap<&str, &str> = spec
        .instances
        .iter()
        .map(|i| (i.id.as_str(), i.id.as_str()))
        .collect();
    fn find<'a>(d: &BTreeMap<&'a str, &'a str>, mut x: &'a str) -> &'a str {
        while d[x] != x {
            x = d[x];
        }
        x
    }
    let mut loop_members = BTreeSet::new();
    for (a, b) in &spec.attachments {
        if a.instance == b.instance
            || !dsu.contains_key(a.instance.as_str())
            || !dsu.contains_key(b.instance.as_str())
        {
            continue;
        }
        let (ra, rb) = (find(&dsu, &a.instance), find(&dsu, &b.instance));
        if ra == rb {
            loop_members.insert(a.instance.clone());
            loop_members.insert(b.instance.clone());
        } else {
            dsu.insert(ra, rb);
        }
    }
    if !loop_members.is_empty() {
        out.push(Violation::CycleDetected {
            instances: loop_members.into_iter().collect(),
        });
    }

    // breadth-first walk from the root orients every edge parent -> child
    if spec.instance(&spec.root).is_some() {
        let mut reached = BTreeSet::from([spec.root.as_str()]);
        let mut queue = VecDeque::from([spec.root.as_str()]);
        let mut visited_edges = BTreeSet::new();
        while let Some(u) = queue.pop_front() {
            for &(v, edge) in adj.get(u).map(Vec::as_slice).unwrap_or(&[]) {
                if !visited_edges.insert(edge) || !reached.insert(v) {
                    continue;
                }
                let (a, b) = &spec.attachments[edge];
                let child_side = if a.instance == v { a } else { b };
                let on_base = spec
                    .instance(v)
                    .and_then(|i| registry.get(&i.module))
                    .and_then(|m| m.port(&child_side.port))
                    .is_none_or(|p| p.link == BASE_LINK);
                if !on_base {
                    out.push(Violation::ChildPortNotOnBase {
                        port: child_side.clone(),
                    });
                }
                queue.push_back(v);
            }
        }
        let unreached: BTreeSet<String> = spec
            .instances
            .iter()
            .filter(|i| !reached.contains(i.id.as_str()))
            .map(|i| i.id.clone())
            .collect();
        if !unreached.is_empty() {
            out.push(Violation::Disconnected {
                instances: unreached.into_iter().collect(),
            });
        }
    }

    out.sort();
    out.dedup();
    ValidationReport { violations: out }
}
