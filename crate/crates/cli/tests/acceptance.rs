//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::checks::{
    check_random_assembly, composition_law, fk_error, incremental_check, isolation_violations,
    law_registry, origins, sync_check, tasks_of,
};
use common::gen::random_dag;
use common::{
    enumerate_exprs, enumerate_keys, is_topological, key_matches, loglog_slope, split,
    workspace_dir,
};
use modstack_core::assembly::{derive_kinematics, AssemblySpec, ComponentRole, ModuleRegistry};
use modstack_core::bench::{capacity_sweep, compare, run_scenario, ScenarioSpec, AGGREGATE_TF_KEY};
use modstack_core::buildgraph::resolve_order;
use modstack_core::fabric::{
    EndpointKind, LinkSpec, Mode, Network, NodeSpec, Role, SimTime, TopologySpec,
};
use modstack_core::runtime::{compose, ComponentSpec, Registry, RuntimeError};
use modstack_core::KeyExpr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&workspace_dir().join(format!("scenarios/{name}.json"))).unwrap()
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// ---------------------------------------------------------------- 1. keys

fn key_matching_oracle() -> Verdict {
    let t = Instant::now();
    let exprs = enumerate_exprs(&["a", "b", "c", "*", "**"], 4);
    let keys = enumerate_keys(&["a", "b", "c"], 5);
    let parsed_keys: Vec<KeyExpr> = keys.iter().map(|k| KeyExpr::parse(k).unwrap()).collect();
    let mut disagreements = 0usize;
    let mut checked = 0usize;
    for e in &exprs {
        let pe = KeyExpr::parse(e).unwrap();
        for (k, pk) in keys.iter().zip(&parsed_keys) {
            let m = key_matches(&split(e), &split(k));
            disagreements += usize::from(pe.intersects(pk) != m);
            disagreements += usize::from(pk.intersects(&pe) != m);
            disagreements += usize::from(pe.includes(pk) != m);
            checked += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        disagreements == 0 && secs < 60.0,
        format!("{} expressions x {} keys = {checked} pairs, {disagreements} disagreements, {secs:.1} s (limit 60 s)", exprs.len(), keys.len()),
    )
}

// ----------------------------------------------------------- 2. scaling

fn star(n: usize, mode: Mode) -> TopologySpec {
    let mut nodes = vec![NodeSpec::new("hub", Role::Router)];
    let mut links = Vec::new();
    for i in 0..n {
        nodes.push(NodeSpec::new(format!("p{i}"), Role::Peer));
        links.push(LinkSpec::new("hub", format!("p{i}"), 2.0, 10_000.0));
    }
    TopologySpec {
        nodes,
        links,
        mode,
        seed: 0,
    }
}

fn storm_bytes(n: usize, mode: Mode) -> f64 {
    let mut net = Network::new(star(n, mode)).unwrap();
    for i in 0..n {
        let node = format!("p{i}");
        let own = KeyExpr::parse(&format!("robot/{i}/state")).unwrap();
        net.declare_endpoint(&node, EndpointKind::Publisher, own)
            .unwrap();
        net.declare_endpoint(
            &node,
            EndpointKind::Subscriber,
            KeyExpr::parse("robot/*/state").unwrap(),
        )
        .unwrap();
    }
    net.run_until(SimTime::from_millis(5_000))
        .global
        .control_bytes as f64
}

fn discovery_scaling() -> Verdict {
    let exponent = |mode| {
        let points: Vec<(f64, f64)> = [2usize, 4, 8, 16]
            .iter()
            .map(|&n| (n as f64, storm_bytes(n, mode)))
            .collect();
        loglog_slope(&points)
    };
    let mesh = exponent(Mode::FullMesh);
    let routed = exponent(Mode::Routed);
    ensure(
        mesh >= 1.8 && routed <= 1.2,
        format!("declaration-bytes exponent full_mesh {mesh:.2} (min 1.8), routed {routed:.2} (max 1.2)"),
    )
}

// ------------------------------------------------------------ 3. storm

fn startup_storm() -> Verdict {
    let t = Instant::now();
    let report = compare(&scenario("storm7"), &SEEDS).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let r = |m: &str| report.ratios.get(m).copied().unwrap_or(f64::NAN);
    let (bytes, time, stutter) = (r("startup_bytes"), r("startup_time_ms"), r("stutter_ms"));
    ensure(
        bytes >= 10.0 && time >= 5.0 && stutter >= 5.0 && secs < 120.0,
        format!(
            "median full_mesh/routed over {} seeds: startup bytes {bytes:.1} (min 10), startup time {time:.1} (min 5), stutter {stutter:.1} (min 5); {secs:.0} s (limit 120 s)",
            SEEDS.len()
        ),
    )
}

// --------------------------------------------------------- 4. recovery

fn recovery_ordering() -> Verdict {
    let report = compare(&scenario("flap7"), &SEEDS).map_err(|e| e.to_string())?;
    let pairs: Vec<(f64, f64)> = report
        .runs
        .iter()
        .map(|[mesh, routed]| (mesh.values["recovery_ms"], routed.values["recovery_ms"]))
        .collect();
    let ok = pairs.len() == SEEDS.len() && pairs.iter().all(|(m, r)| r < m);
    let shown: Vec<String> = pairs
        .iter()
        .map(|(m, r)| format!("{r:.0}<{m:.0}"))
        .collect();
    ensure(
        ok,
        format!(
            "routed<full_mesh recovery ms per seed: {}",
            shown.join(", ")
        ),
    )
}

// --------------------------------------------------------- 5. capacity

const CAPS_KBPS: [f64; 3] = [1000.0, 2000.0, 4000.0];
const REFERENCE_CAP_KBPS: f64 = 2000.0;
const MAX_ROBOTS: usize = 12;

fn max_stable_count() -> Verdict {
    let points = capacity_sweep(&scenario("capacity"), &CAPS_KBPS, MAX_ROBOTS, 0)
        .map_err(|e| e.to_string())?;
    let reference = points
        .iter()
        .find(|p| p.wifi_kbps == REFERENCE_CAP_KBPS)
        .unwrap();
    let ratio_ok =
        reference.routed as f64 >= 2.5 * reference.full_mesh as f64 && reference.full_mesh > 0;
    let monotone = points
        .windows(2)
        .all(|w| w[0].full_mesh <= w[1].full_mesh && w[0].routed <= w[1].routed);
    let shown: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "{} kbps: {} vs {}{}",
                p.wifi_kbps,
                p.full_mesh,
                p.routed,
                if p.routed == MAX_ROBOTS { "+" } else { "" }
            )
        })
        .collect();
    ensure(
        ratio_ok && monotone,
        format!("full_mesh vs routed max stable robots ({}); routed >= 2.5x at {REFERENCE_CAP_KBPS} kbps: {ratio_ok}; monotone in cap: {monotone}", shown.join("; ")),
    )
}

// ------------------------------------------------------- 6. transforms

fn scoped_transforms() -> Verdict {
    let scoped =
        run_scenario(&scenario("dragon_x2"), Mode::Routed, 0).map_err(|e| e.to_string())?;
    let aggregate = run_scenario(&scenario("dragon_x2_aggregate"), Mode::Routed, 0)
        .map_err(|e| e.to_string())?;
    let published = scoped
        .published_bytes
        .get("tf/world/robot1_base")
        .copied()
        .unwrap_or(0);
    let received = scoped
        .received_bytes
        .get("gc/monitor_tf_robot1")
        .copied()
        .unwrap_or(0);
    let flood = aggregate
        .received_bytes
        .get("gc/monitor_tf_robot1")
        .copied()
        .unwrap_or(0);
    let all = aggregate
        .published_bytes
        .get(AGGREGATE_TF_KEY)
        .copied()
        .unwrap_or(0);
    ensure(
        published > 0 && received == published && flood >= 7 * published,
        format!("scoped subscriber got {received} of {published} published bytes; aggregate subscriber got {flood} ({:.1}x, min 7x; aggregate stream {all})", flood as f64 / published.max(1) as f64),
    )
}

// ------------------------------------------------------------ 7. roster

fn table_roster() -> Verdict {
    let run = run_scenario(&scenario("dragon_x2"), Mode::Routed, 0).map_err(|e| e.to_string())?;
    let mut roles: BTreeMap<ComponentRole, usize> = BTreeMap::new();
    for c in &run.components {
        *roles
            .entry(ComponentRole::of_core(&c.core).ok_or(format!("unknown core {}", c.core))?)
            .or_default() += 1;
    }
    let expected: BTreeMap<ComponentRole, usize> = [
        (ComponentRole::MotorInterface, 8),
        (ComponentRole::JointManager, 8),
        (ComponentRole::KinematicsManager, 4),
        (ComponentRole::HealthMonitor, 8),
        (ComponentRole::LocationPublisher, 16),
        (ComponentRole::HumanOperator, 3),
        (ComponentRole::AutonomousOperator, 6),
        (ComponentRole::DataMonitor, 5),
        (ComponentRole::Archiver, 2),
    ]
    .into_iter()
    .collect();
    let names: BTreeSet<&str> = run.components.iter().map(|c| c.name.as_str()).collect();
    ensure(
        run.components.len() == 60 && names.len() == 60 && roles == expected,
        format!(
            "{} components ({} distinct), per-role {:?}",
            run.components.len(),
            names.len(),
            roles.values().collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------- 8. assembly

fn owner(link: &str) -> &str {
    link.split('/').next().unwrap()
}

fn instance_parents(spec_name: &str, reg: &ModuleRegistry) -> BTreeMap<String, String> {
    let text =
        std::fs::read_to_string(workspace_dir().join(format!("assemblies/{spec_name}.json")))
            .unwrap();
    let d = derive_kinematics(&AssemblySpec::from_json(&text).unwrap(), reg).unwrap();
    d.links
        .iter()
        .filter_map(|l| {
            let p = l.parent.as_ref()?;
            (owner(&p.link) != owner(&l.name))
                .then(|| (owner(&l.name).to_owned(), owner(&p.link).to_owned()))
        })
        .collect()
}

fn assembly_correctness() -> Verdict {
    let failures: Vec<String> = (0..1000)
        .filter_map(|s| check_random_assembly(s).err())
        .collect();
    let reg = ModuleRegistry::load_dir(&workspace_dir().join("modules")).unwrap();
    let dragon = instance_parents("dragon", &reg);
    let dragon_ok = dragon.keys().map(String::as_str).collect::<BTreeSet<_>>()
        == BTreeSet::from(["limb1", "limb2", "wheel1", "wheel2"])
        && dragon.values().all(|p| p == "base");
    let tricycle = instance_parents("tricycle", &reg);
    let expected: BTreeMap<String, String> = [
        ("front", "hub"),
        ("left", "hub"),
        ("right", "hub"),
        ("left_wheel", "left"),
        ("right_wheel", "right"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_owned(), b.to_owned()))
    .collect();
    let tricycle_ok = tricycle == expected;
    ensure(
        failures.is_empty() && dragon_ok && tricycle_ok,
        format!(
            "1000 random assemblies, {} failures{}; dragon branches {dragon_ok}; tricycle branches {tricycle_ok}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------- 9. build graph

fn build_graph() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad_order = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..=50);
        let dag = random_dag(&mut rng, n);
        match resolve_order(&tasks_of(&dag)) {
            Ok(order) if is_topological(&order, &dag) => {}
            _ => bad_order += 1,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let failures: Vec<String> = (0..1000)
        .filter_map(|_| incremental_check(&mut rng).err())
        .collect();
    ensure(
        bad_order == 0 && failures.is_empty(),
        format!(
            "1000 DAGs: {bad_order} invalid orders; 1000 DAGs: {} idempotence/minimality failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------ 10. composition

fn composition_laws() -> Verdict {
    let reg = Registry::builtin();
    let mut fixture_failures = Vec::new();
    let jm = ComponentSpec::new("jm", "joint_manager");
    match compose(&jm.clone().inject("telemetry"), &reg) {
        Ok(c) if origins(&c, "dispatch") == ["core:joint_manager", "injection:telemetry"] => {}
        other => fixture_failures.push(format!(
            "telemetry append: {:?}",
            other.map(|c| origins(&c, "dispatch")).err()
        )),
    }
    match compose(
        &jm.clone().inject("telemetry").override_with("broken_joint"),
        &reg,
    ) {
        Ok(c) if origins(&c, "dispatch") == ["override:broken_joint"] => {}
        _ => fixture_failures.push("broken_joint override".into()),
    }
    match compose(
        &jm.clone()
            .override_with("broken_joint")
            .override_with("hold_position"),
        &reg,
    ) {
        Err(RuntimeError::OverrideConflict { point, .. }) if point == "dispatch" => {}
        _ => fixture_failures.push("override conflict".into()),
    }

    let law = law_registry();
    let mut sequences: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier = sequences.clone();
    for _ in 0..4 {
        frontier = frontier
            .iter()
            .flat_map(|s| (0..4).map(move |i| [s.as_slice(), &[i]].concat()))
            .collect();
        sequences.extend(frontier.iter().cloned());
    }
    let mut cases = 0;
    let mut law_failures = Vec::new();
    for mask in 0u32..16 {
        let overrides: BTreeSet<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        for inj in &sequences {
            cases += 1;
            if let Err(e) = composition_law(&law, inj, &overrides) {
                law_failures.push(e);
            }
        }
    }
    let isolation = isolation_violations();
    ensure(
        fixture_failures.is_empty() && law_failures.is_empty() && isolation.is_empty(),
        format!(
            "fixture failures {fixture_failures:?}; {cases} exhaustive cases, {} failures; {} direct component references",
            law_failures.len(),
            isolation.len()
        ),
    )
}

// --------------------------------------------------------- 11. numerics

fn numerics() -> Verdict {
    let worst = (0..1000).map(fk_error).fold(0.0, f64::max);
    let sync_failures: Vec<String> = (0..1000).filter_map(|s| sync_check(s).err()).collect();
    ensure(
        worst < 1e-9 && sync_failures.is_empty(),
        format!("FK worst deviation {worst:.2e} over 1000 chains (limit 1e-9); sync_targets {} failures over 1000 goal sets", sync_failures.len()),
    )
}

// ---------------------------------------------------- 12. three actions

fn copy_tree(from: &Path, to: &Path) {
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if name == "generated" || name == "build" {
            continue;
        }
        let target = to.join(&name);
        if entry.file_type().unwrap().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

fn three_actions() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&workspace_dir(), dir.path());
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_modstack"))
            .args(args)
            .current_dir(dir.path())
            .env_remove("MODSTACK_HOST")
            .output()
            .unwrap()
    };
    for step in [&["update"][..], &["build"][..]] {
        let out = run(step);
        if !out.status.success() {
            return Err(format!(
                "`{}` exited {:?}: {}",
                step[0],
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let out = run(&[
        "launch",
        "--assembly",
        "assemblies/dragon.json",
        "--host",
        "dev_workstation",
        "--sim",
        "--duration-ms",
        "10000",
    ]);
    let secs = t.elapsed().as_secs_f64();
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).map_err(|e| format!("launch output: {e}"))?;
    let components = summary["components"].as_array().map_or(0, Vec::len);
    let running = summary["components"].as_array().map_or(0, |c| {
        c.iter()
            .filter(|c| c["state"] == "running" && c["virtual"] == true)
            .count()
    });
    let alive = summary["alive"].as_u64().unwrap_or(0) as usize;
    ensure(
        out.status.success() && components > 0 && running == components && alive == components && secs < 60.0,
        format!("update+build+launch --sim: {running}/{components} running on virtual hardware, {alive} heartbeats alive after 10 simulated s; {secs:.1} s wall (limit 60 s)"),
    )
}

// ------------------------------------------------------- 13. determinism

fn determinism() -> Verdict {
    let mut storm = scenario("storm7").with_robot_count(3);
    storm.duration_ms = 4_000;
    let a = compare(&storm, &[7]).map_err(|e| e.to_string())?.to_json();
    let b = compare(&storm, &[7]).map_err(|e| e.to_string())?.to_json();
    let dragon = scenario("dragon_x2");
    let run_json =
        || serde_json::to_string(&run_scenario(&dragon, Mode::FullMesh, 7).unwrap()).unwrap();
    let (c, d) = (run_json(), run_json());
    ensure(
        a == b && c == d,
        format!(
            "storm report re-run identical: {}; Dragon x2 run re-run identical: {} ({} bytes)",
            a == b,
            c == d,
            c.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("key matching oracle equivalence", key_matching_oracle),
        ("discovery scaling", discovery_scaling),
        ("startup-storm ratio", startup_storm),
        ("recovery ordering", recovery_ordering),
        ("max stable robot count", max_stable_count),
        ("scoped transforms", scoped_transforms),
        ("Dragon x2 roster", table_roster),
        ("assembly correctness", assembly_correctness),
        ("build graph", build_graph),
        ("composition laws", composition_laws),
        ("numerics", numerics),
        ("three-action integration", three_actions),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = format_duration(t.elapsed());
        match verdict {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{took}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn format_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
