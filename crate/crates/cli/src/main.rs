//! `modstack`: update, build, assemble and launch robot assemblies, and run
//! simulated network scenarios.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use modstack_core::assembly::{
    derive_host_configs, derive_kinematics, emit_generated, AssemblyError, AssemblySpec,
    ModuleRegistry,
};
use modstack_core::bench::{
    capacity_sweep, compare, run_resolved, BenchError, RunOptions, ScenarioSpec, TopologySource,
};
use modstack_core::buildgraph::{
    execute, verify_manifest, BuildError, BuildReport, EntryStatus, FsRunner, Manifest, TaskFile,
    REPORT_PATH,
};
use modstack_core::fabric::{EndpointKind, Mode, Network, SimTime};
use modstack_core::launcher::{
    default_host, lan_topology, liveness, plan_launch, start, stop, LaunchError, LaunchOptions,
    LaunchState, HOST_ENV,
};
use modstack_core::runtime::{HealthReport, Registry, Runtime};
use modstack_core::KeyExpr;

#[derive(Parser)]
#[command(name = "modstack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every pinned source against its manifest hash.
    Update {
        #[arg(long, default_value = "manifest.json")]
        manifest: PathBuf,
    },
    /// Run the stale tasks of a task graph.
    Build {
        #[arg(long, default_value = "tasks.json")]
        tasks: PathBuf,
    },
    /// Derive the robot description and per-host configurations of an assembly.
    Assemble {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to `generated/<assembly name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Module descriptors; defaults to `modules/` next to the assembly's directory.
        #[arg(long)]
        modules: Option<PathBuf>,
    },
    /// Start the components this host owns and report their health.
    Launch {
        #[arg(long)]
        assembly: PathBuf,
        #[arg(long, env = HOST_ENV)]
        host: Option<String>,
        /// Run the whole assembly on this host against virtual hardware.
        #[arg(long)]
        sim: bool,
        #[arg(long)]
        modules: Option<PathBuf>,
        /// Simulated time to run before reporting.
        #[arg(long, default_value_t = 10_000)]
        duration_ms: u64,
    },
    /// Run one scenario on a given network.
    Sim {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Defaults to the topology's own mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the run as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare full-mesh and routed discovery on a scenario.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Also sweep the max stable robot count over these radio caps.
        #[arg(long, value_delimiter = ',')]
        capacity_kbps: Vec<f64>,
        #[arg(long, default_value_t = 12)]
        max_robots: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FullMesh,
    Routed,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FullMesh => Mode::FullMesh,
            ModeArg::Routed => Mode::Routed,
        }
    }
}

enum Failure {
    /// Bad input, or a check that did not pass.
    Invalid(String),
    /// Something broke while running.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Update { manifest } => update(&manifest),
        Command::Build { tasks } => build(&tasks),
        Command::Assemble { spec, out, modules } => {
            assemble(&spec, out.as_deref(), modules.as_deref())
        }
        Command::Launch {
            assembly,
            host,
            sim,
            modules,
            duration_ms,
        } => launch(
            &assembly,
            host.unwrap_or_else(default_host),
            sim,
            modules.as_deref(),
            duration_ms,
        ),
        Command::Sim {
            topology,
            scenario,
            mode,
            seed,
            out,
        } => sim(
            &topology,
            &scenario,
            mode.map(Mode::from),
            seed,
            out.as_deref(),
        ),
        Command::Bench {
            scenario,
            out,
            seeds,
            capacity_kbps,
            max_robots,
        } => bench(&scenario, &out, &seeds, &capacity_kbps, max_robots),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn workspace_of(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn build_failure(e: BuildError) -> Failure {
    match e {
        BuildError::Io { .. } => Failure::Runtime(e.to_string()),
        _ => Failure::Invalid(e.to_string()),
    }
}

fn assembly_failure(e: AssemblyError) -> Failure {
    match e {
        AssemblyError::Io { .. } => Failure::Runtime(e.to_string()),
        _ => Failure::Invalid(e.to_string()),
    }
}

fn bench_failure(e: BenchError) -> Failure {
    Failure::Invalid(e.to_string())
}

fn write(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------------ update

fn update(manifest: &Path) -> Outcome {
    let m = Manifest::load(manifest).map_err(build_failure)?;
    let report = verify_manifest(&m, &workspace_of(manifest)).map_err(build_failure)?;
    for (name, status) in &report.entries {
        match status {
            EntryStatus::Match => println!("ok       {name}"),
            EntryStatus::Mismatch { actual } => println!("changed  {name} (now {actual})"),
            EntryStatus::Missing => println!("missing  {name}"),
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invalid(
            "workspace does not match the manifest".into(),
        ))
    }
}

// ------------------------------------------------------------------- build

fn build(tasks: &Path) -> Outcome {
    let specs = TaskFile::load(tasks).map_err(build_failure)?;
    let ws = workspace_of(tasks);
    let prior = BuildReport::load(&ws).map_err(build_failure)?;
    let report = execute(&specs, prior.as_ref(), &ws, &mut FsRunner).map_err(build_failure)?;
    report.save(&ws).map_err(build_failure)?;
    for id in &report.executed {
        println!("built    {id}");
    }
    for id in &report.skipped {
        println!("current  {id}");
    }
    println!("report   {}", ws.join(REPORT_PATH).display());
    match report.failed {
        None => Ok(()),
        Some(f) => Err(Failure::Runtime(format!(
            "task `{}` failed: {}",
            f.task, f.reason
        ))),
    }
}

// ---------------------------------------------------------------- assemble

fn load_assembly(
    path: &Path,
    modules: Option<&Path>,
) -> Result<(ModuleRegistry, AssemblySpec), Failure> {
    let modules = modules
        .map(Path::to_path_buf)
        .unwrap_or_else(|| workspace_of(path).join("../modules"));
    let registry = ModuleRegistry::load_dir(&modules).map_err(assembly_failure)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let spec = AssemblySpec::from_json(&text)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok((registry, spec))
}

fn assemble(spec: &Path, out: Option<&Path>, modules: Option<&Path>) -> Outcome {
    let (registry, assembly) = load_assembly(spec, modules)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new("generated").join(&assembly.name));
    let written = emit_generated(&assembly, &registry, &out).map_err(assembly_failure)?;
    for p in written {
        println!("wrote    {}", p.display());
    }
    Ok(())
}

// ------------------------------------------------------------------ launch

fn launch(
    path: &Path,
    host: String,
    sim: bool,
    modules: Option<&Path>,
    duration_ms: u64,
) -> Outcome {
    let (registry, mut assembly) = load_assembly(path, modules)?;
    if sim {
        for i in &mut assembly.instances {
            i.host = Some(host.clone());
        }
    }
    let configs = derive_host_configs(&assembly, &registry).map_err(assembly_failure)?;
    let opts = if sim {
        LaunchOptions::simulated()
    } else {
        LaunchOptions::on_robots(&configs)
    };
    let plan = plan_launch(&assembly, &registry, &host, &opts).map_err(|e| match e {
        LaunchError::Assembly(a) => assembly_failure(a),
        other => Failure::Invalid(other.to_string()),
    })?;

    let mut hosts: BTreeSet<String> = configs.iter().map(|c| c.host.clone()).collect();
    hosts.insert(host.clone());
    let hosts: Vec<String> = hosts.into_iter().collect();
    let net = Network::new(lan_topology(&hosts, Mode::Routed, 0))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut rt = Runtime::new(net, Registry::builtin()).without_traces();
    rt.add_description(derive_kinematics(&assembly, &registry).map_err(assembly_failure)?);
    let status_key = KeyExpr::parse("status/**").expect("literal key");
    let watch = rt
        .network_mut()
        .declare_endpoint(&host, EndpointKind::Subscriber, status_key)
        .map_err(|e| Failure::Runtime(e.to_string()))?;

    let mut status = start(&plan, &mut rt, &host);
    rt.run_until(SimTime::from_millis(duration_ms));
    status.refresh(&rt);
    let reports: Vec<HealthReport> = rt
        .network_mut()
        .drain(watch)
        .iter()
        .filter_map(|d| serde_json::from_slice(&d.sample.payload).ok())
        .collect();
    let (alive, dead) = liveness(&reports);
    let expected: BTreeSet<String> = plan
        .entries
        .iter()
        .map(|e| e.component.name.clone())
        .collect();
    let silent: Vec<&String> = expected.difference(&alive).collect();
    let not_running = status.count(LaunchState::Pending)
        + status.count(LaunchState::Quarantined)
        + status.count(LaunchState::Stopped);

    let summary = json!({
        "host": host,
        "sim": sim,
        "simulated_ms": duration_ms,
        "components": plan.entries.iter().zip(&status.entries).map(|(p, s)| json!({
            "name": s.name,
            "core": p.component.core,
            "virtual": p.virtual_substitution,
            "state": s.state,
            "error": s.error,
        })).collect::<Vec<_>>(),
        "alive": alive.intersection(&expected).count(),
        "silent": silent,
        "dead": dead,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    stop(status, &mut rt);

    if not_running == 0 && silent.is_empty() && dead.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{not_running} not running, {} silent, {} dead",
            silent.len(),
            dead.len()
        )))
    }
}

// --------------------------------------------------------------------- sim

fn sim(
    topology: &Path,
    scenario: &Path,
    mode: Option<Mode>,
    seed: u64,
    out: Option<&Path>,
) -> Outcome {
    let mut spec = ScenarioSpec::load(scenario).map_err(bench_failure)?;
    let topology = std::path::absolute(topology)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", topology.display())))?;
    spec.topology = TopologySource::File {
        path: topology.display().to_string(),
    };
    let resolved = spec.resolve().map_err(bench_failure)?;
    let mode = mode.unwrap_or(resolved.topology.mode);
    let run = run_resolved(&resolved, mode, seed, RunOptions { traces: false })
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let text = serde_json::to_string_pretty(&run).expect("run serializes");
    match out {
        Some(path) => {
            write(path, &text)?;
            println!("wrote    {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

// ------------------------------------------------------------------- bench

fn bench(
    scenario: &Path,
    out: &Path,
    seeds: &[u64],
    capacity_kbps: &[f64],
    max_robots: usize,
) -> Outcome {
    let spec = ScenarioSpec::load(scenario).map_err(bench_failure)?;
    let report = compare(&spec, seeds).map_err(bench_failure)?;
    let written = report
        .write(&spec, out)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    for p in written {
        println!("wrote    {}", p.display());
    }
    for (name, value) in &report.ratios {
        println!("ratio    {name} = {value:.3}");
    }
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let value = c.value.map_or("n/a".to_owned(), |v| format!("{v:.3}"));
        println!("{verdict}     {} = {value} (min {})", c.ratio, c.min);
    }
    if !capacity_kbps.is_empty() {
        let points = capacity_sweep(
            &spec,
            capacity_kbps,
            max_robots,
            seeds.first().copied().unwrap_or(0),
        )
        .map_err(bench_failure)?;
        let mut csv = String::from("wifi_kbps,full_mesh,routed\n");
        for p in &points {
            csv.push_str(&format!("{},{},{}\n", p.wifi_kbps, p.full_mesh, p.routed));
            println!(
                "capacity {} kbps: full_mesh {}, routed {}{}",
                p.wifi_kbps,
                p.full_mesh,
                p.routed,
                if p.routed == max_robots { "+" } else { "" }
            );
        }
        let path = out.join("max_stable_robots.csv");
        write(&path, &csv)?;
        println!("wrote    {}", path.display());
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "scenario `{}` missed a threshold",
            report.scenario
        )))
    }
}
