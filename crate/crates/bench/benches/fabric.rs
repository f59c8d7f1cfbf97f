use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use modstack_bench::{star_storm, workspace_dir};
use modstack_core::assembly::{
    derive_host_configs, derive_kinematics, AssemblySpec, ModuleRegistry,
};
use modstack_core::bench::{run_resolved, RunOptions, ScenarioSpec};
use modstack_core::fabric::{Mode, SimTime};
use modstack_core::KeyExpr;

fn keys(c: &mut Criterion) {
    let exprs: Vec<KeyExpr> = [
        "robot1/joints/**",
        "robot*/*/state",
        "**/tf/**",
        "a/**/b/*/c",
        "status/gc/fleet",
    ]
    .iter()
    .map(|e| KeyExpr::parse(e).unwrap())
    .collect();
    let concrete = KeyExpr::parse("robot1/joints/limb1/j3/state").unwrap();
    c.bench_function("keyexpr/intersects", |b| {
        b.iter(|| {
            exprs
                .iter()
                .filter(|e| e.intersects(black_box(&concrete)))
                .count()
        })
    });
    c.bench_function("keyexpr/parse", |b| {
        b.iter(|| KeyExpr::parse(black_box("a/**/**/b/*/c/**")).unwrap())
    });
}

fn storms(c: &mut Criterion) {
    let mut group = c.benchmark_group("startup_storm");
    for n in [4usize, 16] {
        for mode in [Mode::FullMesh, Mode::Routed] {
            group.bench_with_input(BenchmarkId::new(mode.as_str(), n), &n, |b, &n| {
                b.iter(|| {
                    let mut net = star_storm(n, mode);
                    net.run_until(SimTime::from_millis(5_000))
                        .global
                        .control_bytes
                })
            });
        }
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let ws = workspace_dir();
    let reg = ModuleRegistry::load_dir(&ws.join("modules")).unwrap();
    let spec = AssemblySpec::from_json(
        &std::fs::read_to_string(ws.join("assemblies/dragon.json")).unwrap(),
    )
    .unwrap();
    c.bench_function("assembly/derive_dragon", |b| {
        b.iter(|| {
            (
                derive_kinematics(&spec, &reg).unwrap(),
                derive_host_configs(&spec, &reg).unwrap(),
            )
        })
    });
}

fn scenario(c: &mut Criterion) {
    let mut spec = ScenarioSpec::load(&workspace_dir().join("scenarios/dragon_x2.json")).unwrap();
    spec.duration_ms = 5_000;
    spec.events.clear();
    let resolved = spec.resolve().unwrap();
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    group.bench_function("dragon_x2_5s_routed", |b| {
        b.iter(|| run_resolved(&resolved, Mode::Routed, 0, RunOptions { traces: false }).unwrap())
    });
    group.finish();
}

criterion_group!(benches, keys, storms, assembly, scenario);
criterion_main!(benches);
