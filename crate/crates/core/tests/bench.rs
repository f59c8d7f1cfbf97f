mod common;

use std::collections::BTreeMap;

use common::workspace_dir;
use modstack_core::assembly::ComponentRole;
use modstack_core::bench::{
    compare, compare_modes, run_scenario, BenchError, ScenarioSpec, ScriptEvent, AGGREGATE_TF_KEY,
};
use modstack_core::fabric::{LinkState, Mode};

fn scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&workspace_dir().join(format!("scenarios/{name}.json"))).unwrap()
}

fn short_storm(robots: usize) -> ScenarioSpec {
    let mut s = scenario("storm7").with_robot_count(robots);
    s.duration_ms = 4_000;
    s
}

fn roles(run: &modstack_core::bench::ScenarioRun) -> BTreeMap<ComponentRole, usize> {
    let mut out = BTreeMap::new();
    for c in &run.components {
        *out.entry(ComponentRole::of_core(&c.core).expect("known core"))
            .or_default() += 1;
    }
    out
}

#[test]
fn dragon_pair_spawns_the_sixty_component_roster() {
    let run = run_scenario(&scenario("dragon_x2"), Mode::Routed, 0).unwrap();
    assert_eq!(run.components.len(), 60);
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
    assert_eq!(roles(&run), expected);
    let mut names: Vec<&str> = run.components.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), 60);
}

#[test]
fn operators_drive_the_joints_they_are_assigned() {
    let run = run_scenario(&scenario("dragon_x2"), Mode::Routed, 0).unwrap();
    for key in [
        "joints/robot1_limb1/j2/target",
        "joints/robot2_wheel2/drive/target",
    ] {
        assert!(
            run.published_bytes.get(key).copied().unwrap_or(0) > 0,
            "{key} never commanded"
        );
    }
}

#[test]
fn scoped_base_transform_subscriber_gets_exactly_that_stream() {
    for mode in [Mode::FullMesh, Mode::Routed] {
        let run = run_scenario(&scenario("dragon_x2"), mode, 3).unwrap();
        let published = run.published_bytes["tf/world/robot1_base"];
        assert!(published > 0);
        assert_eq!(
            run.received_bytes["gc/monitor_tf_robot1"], published,
            "{mode:?}"
        );
    }
}

#[test]
fn aggregate_transform_subscriber_gets_every_pose() {
    let scoped = run_scenario(&scenario("dragon_x2"), Mode::Routed, 3).unwrap();
    let aggregate = run_scenario(&scenario("dragon_x2_aggregate"), Mode::Routed, 3).unwrap();
    let wanted = scoped.published_bytes["tf/world/robot1_base"];
    let got = aggregate.received_bytes["gc/monitor_tf_robot1"];
    assert_eq!(got, aggregate.published_bytes[AGGREGATE_TF_KEY]);
    assert!(got >= 7 * wanted, "aggregate {got} vs scoped {wanted}");
}

#[test]
fn empty_scenario_document_has_zero_metrics() {
    let run = run_scenario(&scenario("empty"), Mode::FullMesh, 0).unwrap();
    assert!(run.components.is_empty());
    let g = &run.metrics.global;
    assert_eq!(
        (g.published, g.delivered, g.control_bytes, g.data_bytes),
        (0, 0, 0, 0)
    );
    assert_eq!(g.startup_time_ms, 0.0);
}

#[test]
fn unresolvable_references_fail_before_running() {
    let mut s = scenario("storm7");
    s.robots[0].assembly = "../assemblies/missing.json".into();
    assert!(matches!(s.resolve(), Err(BenchError::Io { .. })));

    let mut s = scenario("storm7");
    s.events.push(ScriptEvent::Link {
        at_ms: 10,
        a: "base".into(),
        b: "nowhere".into(),
        state: LinkState::Down,
    });
    assert!(matches!(s.resolve(), Err(BenchError::Resolve { .. })));

    let mut s = scenario("storm7");
    s.services[0].host = "ghost".into();
    s.topology = modstack_core::bench::TopologySource::Inline {
        spec: modstack_core::fabric::TopologySpec {
            nodes: vec![],
            links: vec![],
            mode: Mode::Routed,
            seed: 0,
        },
    };
    assert!(matches!(
        run_scenario(&s, Mode::Routed, 0),
        Err(BenchError::Resolve { .. })
    ));
}

#[test]
fn a_mode_compared_with_itself_gives_unit_ratios() {
    let report = compare_modes(&short_storm(2), &[1, 2], [Mode::Routed, Mode::Routed]).unwrap();
    assert_eq!(report.ratios.len(), 4);
    for (k, v) in &report.ratios {
        assert_eq!(*v, 1.0, "{k}");
    }
}

#[test]
fn identical_inputs_give_byte_identical_reports() {
    let s = short_storm(3);
    let a = compare(&s, &[4]).unwrap().to_json();
    let b = compare(&s, &[4]).unwrap().to_json();
    assert_eq!(a, b);
    let c = compare(&s, &[5]).unwrap().to_json();
    assert_ne!(a, c, "the seed drives launch jitter");
}

#[test]
fn reports_are_written_per_metric() {
    let s = short_storm(2);
    let report = compare(&s, &[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = report.write(&s, dir.path()).unwrap();
    assert_eq!(written.len(), s.metrics_of_interest.len() + 1);
    let csv = std::fs::read_to_string(dir.path().join("startup_bytes.csv")).unwrap();
    assert!(csv.starts_with("seed,full_mesh,routed\n0,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["scenario"], "storm7");
    assert!(summary["checks"].as_array().unwrap().len() == 3);
}

#[test]
fn full_mesh_startup_costs_more_even_for_a_small_fleet() {
    let report = compare(&short_storm(3), &[0]).unwrap();
    assert!(report.ratios["startup_bytes"] > 1.0);
}
