//! Property checks that drive the implementation against the oracles in
//! this directory. Each returns `Err` with a description of the first
//! counterexample.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use modstack_core::assembly::{
    derive_host_configs, derive_kinematics, validate_assembly, HostConfig, JointType, LinkNode,
    LinkParent, RobotDescription,
};
use modstack_core::buildgraph::{execute, Action, RecordingRunner, TaskSpec};
use modstack_core::runtime::{
    compose, forward_kinematics, relative_pose, sync_targets, ComponentSpec, ComposedComponent,
    CoreDef, JointState, JointTarget, PointKind, Registry, RuntimeError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gen::{random_assembly, random_dag};
use super::{chain_matrix, is_topological, quat_matrix, reverse_reachable};

// -------------------------------------------------------------- assembly

pub fn serialized(configs: &[HostConfig]) -> BTreeMap<String, String> {
    configs
        .iter()
        .map(|c| (c.host.clone(), c.to_json()))
        .collect()
}

/// Joint-count sum rule, host partition and byte-identical re-derivation.
pub fn check_random_assembly(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (reg, spec) = random_assembly(&mut rng, 12);
    let report = validate_assembly(&spec, &reg);
    if !report.is_valid() {
        return Err(format!(
            "seed {seed}: generator produced invalid assembly: {report}"
        ));
    }
    let d = derive_kinematics(&spec, &reg).map_err(|e| e.to_string())?;
    let dof: usize = spec
        .instances
        .iter()
        .map(|i| reg.get(&i.module).unwrap().dof)
        .sum();
    if d.joints.len() != dof {
        return Err(format!(
            "seed {seed}: {} joints, expected {dof}",
            d.joints.len()
        ));
    }
    if d.links.len() != dof + spec.instances.len() {
        return Err(format!("seed {seed}: link count"));
    }
    let mut seen = BTreeSet::new();
    for l in &d.links {
        if let Some(p) = &l.parent {
            if !seen.contains(&p.link) {
                return Err(format!("seed {seed}: {} precedes its parent", l.name));
            }
        }
        seen.insert(l.name.clone());
    }
    if d.links.iter().filter(|l| l.parent.is_none()).count() != 1 {
        return Err(format!("seed {seed}: root count"));
    }
    let configs = derive_host_configs(&spec, &reg).map_err(|e| e.to_string())?;
    let mut controlled: Vec<&String> = configs
        .iter()
        .flat_map(|c| &c.joints_under_control)
        .collect();
    controlled.sort();
    let mut joints: Vec<&String> = d.joints.iter().collect();
    joints.sort();
    if controlled != joints {
        return Err(format!(
            "seed {seed}: joints are not partitioned across hosts"
        ));
    }
    let again_d = derive_kinematics(&spec, &reg).unwrap();
    let again_c = derive_host_configs(&spec, &reg).unwrap();
    if again_d.to_json() != d.to_json() || serialized(&again_c) != serialized(&configs) {
        return Err(format!("seed {seed}: re-derivation differs"));
    }
    Ok(())
}

// ------------------------------------------------------------ build graph

pub fn write_file(root: &Path, rel: &str, text: &str) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

pub fn tasks_of(dag: &BTreeMap<String, Vec<String>>) -> Vec<TaskSpec> {
    dag.iter()
        .map(|(id, deps)| TaskSpec {
            id: id.clone(),
            deps: deps.clone(),
            inputs: vec![format!("src/{id}.txt")],
            outputs: vec![format!("out/{id}.txt")],
            action: Action::Concat,
        })
        .collect()
}

pub fn seed_inputs(root: &Path, tasks: &[TaskSpec]) {
    for t in tasks {
        write_file(root, &t.inputs[0], &t.id);
    }
}

/// First run executes everything, a second executes nothing, and touching
/// one input executes exactly its reverse-reachable set.
pub fn incremental_check(rng: &mut impl Rng) -> Result<(), String> {
    let n = rng.gen_range(1..=50);
    let dag = random_dag(rng, n);
    let tasks = tasks_of(&dag);
    let dir = tempfile::tempdir().unwrap();
    seed_inputs(dir.path(), &tasks);

    let first = execute(&tasks, None, dir.path(), &mut RecordingRunner::default()).unwrap();
    if first.executed.len() != n || !is_topological(&first.executed, &dag) {
        return Err("first run".into());
    }
    let second = execute(
        &tasks,
        Some(&first),
        dir.path(),
        &mut RecordingRunner::default(),
    )
    .unwrap();
    if !second.executed.is_empty() || second.skipped.len() != n {
        return Err(format!("idempotence: {:?}", second.executed));
    }
    let victim = dag.keys().nth(rng.gen_range(0..n)).unwrap().clone();
    write_file(dir.path(), &format!("src/{victim}.txt"), "changed");
    let third = execute(
        &tasks,
        Some(&second),
        dir.path(),
        &mut RecordingRunner::default(),
    )
    .unwrap();
    let ran: BTreeSet<String> = third.executed.iter().cloned().collect();
    if ran != reverse_reachable(&dag, &victim) {
        return Err(format!("minimality: touched {victim}, ran {ran:?}"));
    }
    let skipped: BTreeSet<String> = third.skipped.iter().cloned().collect();
    if !ran.is_disjoint(&skipped) || ran.len() + skipped.len() != n {
        return Err("executed and skipped must partition the tasks".into());
    }
    Ok(())
}

// ----------------------------------------------------------- composition

pub fn origins(c: &ComposedComponent, point: &str) -> Vec<String> {
    c.slot(point).iter().map(|h| h.origin.clone()).collect()
}

/// Core `c` with a Subscribe point `a` (one default handler) and an Internal
/// point `b` (two), plus injections and overrides `i0..i3`, `o0..o3`; even
/// indices target `a`, odd ones `b`.
pub fn law_registry() -> Registry {
    let mut r = Registry::empty();
    r.add_core(
        CoreDef::new("c", |_| Box::new(()))
            .point("a", PointKind::Subscribe)
            .point("b", PointKind::Internal)
            .on("a", |_, _| Ok(()))
            .on("b", |_, _| Ok(()))
            .on("b", |_, _| Ok(())),
    );
    for i in 0..4 {
        r.add_injection(&format!("i{i}"), law_point(i), |_, _| Ok(()));
        r.add_override(&format!("o{i}"), law_point(i), |_, _| Ok(()));
    }
    r
}

fn law_point(i: usize) -> &'static str {
    if i.is_multiple_of(2) {
        "a"
    } else {
        "b"
    }
}

/// Injections append after the core in declaration order, an override
/// replaces its slot, and two overrides on one slot conflict.
pub fn composition_law(
    reg: &Registry,
    injections: &[usize],
    overrides: &BTreeSet<usize>,
) -> Result<(), String> {
    let mut spec = ComponentSpec::new("x", "c");
    for i in injections {
        spec = spec.inject(&format!("i{i}"));
    }
    for o in overrides {
        spec = spec.override_with(&format!("o{o}"));
    }
    let per_point = |p: &str| overrides.iter().filter(|o| law_point(**o) == p).count();
    let conflict = per_point("a") > 1 || per_point("b") > 1;
    let case = format!("injections {injections:?}, overrides {overrides:?}");
    match compose(&spec, reg) {
        Err(RuntimeError::OverrideConflict { .. }) if conflict => Ok(()),
        Err(e) => Err(format!("{case}: {e}")),
        Ok(_) if conflict => Err(format!("{case}: conflict not detected")),
        Ok(c) => {
            for point in ["a", "b"] {
                let got = origins(&c, point);
                let want = match overrides.iter().find(|o| law_point(**o) == point) {
                    Some(o) => vec![format!("override:o{o}")],
                    None => {
                        let mut w = vec!["core:c".to_owned(); if point == "a" { 1 } else { 2 }];
                        w.extend(
                            injections
                                .iter()
                                .filter(|i| law_point(**i) == point)
                                .map(|i| format!("injection:i{i}")),
                        );
                        w
                    }
                };
                if got != want {
                    return Err(format!("{case}: slot {point} is {got:?}, want {want:?}"));
                }
            }
            Ok(())
        }
    }
}

/// Source-level scan: core implementations reach the outside world only
/// through `Ctx`, which exposes bindings and nothing about other components.
pub fn isolation_violations() -> Vec<String> {
    let src = include_str!("../../src/runtime/cores.rs");
    let tokens: BTreeSet<&str> = src
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .collect();
    let mut out: Vec<String> = [
        "Runtime",
        "ComponentId",
        "Network",
        "EndpointId",
        "thread_local",
        "Mutex",
        "RwLock",
        "OnceLock",
    ]
    .into_iter()
    .filter(|f| tokens.contains(f))
    .map(|f| format!("cores.rs mentions `{f}`"))
    .collect();
    if src.contains("static mut") {
        out.push("cores.rs has a `static mut`".into());
    }
    let ctx = include_str!("../../src/runtime/context.rs");
    for field in ctx
        .lines()
        .filter(|l| l.trim_start().starts_with("pub(crate)"))
    {
        if field.contains("Runtime") || field.contains("Running") || field.contains("Network") {
            out.push(format!("Ctx exposes `{}`", field.trim()));
        }
    }
    out
}

// -------------------------------------------------------------- numerics

/// `l0 -j0-> l1 -j1-> ...`, joint k at `offset` then rotating about `axis`.
pub fn serial_chain(joints: &[([f64; 3], [f64; 3])]) -> RobotDescription {
    let mut links = vec![LinkNode {
        name: "l0".into(),
        parent: None,
    }];
    for (k, (axis, offset)) in joints.iter().enumerate() {
        links.push(LinkNode {
            name: format!("l{}", k + 1),
            parent: Some(LinkParent {
                link: format!("l{k}"),
                joint: format!("j{k}"),
                joint_type: JointType::Revolute,
                axis: *axis,
                offset: *offset,
            }),
        });
    }
    RobotDescription {
        name: "chain".into(),
        root: "l0".into(),
        links,
        joints: (0..joints.len()).map(|k| format!("j{k}")).collect(),
    }
}

fn random_axis(rng: &mut impl Rng) -> [f64; 3] {
    let v: [f64; 3] = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Largest deviation between FK and the matrix oracle over one random chain.
pub fn fk_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let joints: Vec<([f64; 3], f64, [f64; 3])> = (0..n)
        .map(|_| {
            let offset = [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ];
            (random_axis(&mut rng), rng.gen_range(-3.2..3.2), offset)
        })
        .collect();
    let d = serial_chain(&joints.iter().map(|(a, _, o)| (*a, *o)).collect::<Vec<_>>());
    let positions: BTreeMap<String, f64> = joints
        .iter()
        .enumerate()
        .map(|(k, (_, q, _))| (format!("j{k}"), *q))
        .collect();
    let tf = forward_kinematics(&d, &positions, &format!("l{n}")).unwrap();
    let m = chain_matrix(&joints);
    let r = quat_matrix(tf.rotation);
    let mut err: f64 = (tf.rotation_norm() - 1.0).abs();
    for i in 0..3 {
        err = err.max((tf.translation[i] - m[i][3]).abs());
        for j in 0..3 {
            err = err.max((r[i][j] - m[i][j]).abs());
        }
    }
    // sub-chain composition
    let mid = rng.gen_range(0..=n);
    let head = forward_kinematics(&d, &positions, &format!("l{mid}")).unwrap();
    let tail = relative_pose(&d, &positions, &format!("l{mid}"), &format!("l{n}")).unwrap();
    let joined = head.then(&tail);
    for i in 0..3 {
        err = err.max((joined.translation[i] - tf.translation[i]).abs());
    }
    for i in 0..4 {
        err = err.max((joined.rotation[i] - tf.rotation[i]).abs());
    }
    err
}

pub fn states(positions: &[(String, f64)]) -> BTreeMap<String, JointState> {
    positions
        .iter()
        .map(|(j, p)| (j.clone(), JointState::at(j.clone(), *p)))
        .collect()
}

/// Iterates to convergence; checks the step bound and that every joint
/// arrives on iteration ceil(max distance / max_step).
pub fn sync_check(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let max_step = rng.gen_range(0.01..0.5);
    let start: Vec<(String, f64)> = (0..n)
        .map(|k| (format!("j{k}"), rng.gen_range(-3.0..3.0)))
        .collect();
    let goals: Vec<JointTarget> = start
        .iter()
        .map(|(j, _)| JointTarget::at(j.clone(), rng.gen_range(-3.0..3.0)))
        .collect();
    let far = goals
        .iter()
        .zip(&start)
        .map(|(g, (_, p))| (g.position - p).abs())
        .fold(0.0, f64::max);
    let expected = (far / max_step).ceil() as usize;
    let mut current = start.clone();
    let mut arrived = vec![None; n];
    for iter in 1..=expected + 5 {
        let out = sync_targets(&goals, &states(&current), max_step).map_err(|e| e.to_string())?;
        for (k, t) in out.iter().enumerate() {
            if (t.position - current[k].1).abs() > max_step + 1e-12 {
                return Err(format!("seed {seed}: step exceeds max_step"));
            }
            current[k].1 = t.position;
            if arrived[k].is_none() && t.position == goals[k].position {
                arrived[k] = Some(iter);
            }
        }
    }
    if arrived.iter().any(|a| *a != Some(expected)) {
        return Err(format!(
            "seed {seed}: arrivals {arrived:?}, expected {expected}"
        ));
    }
    Ok(())
}
