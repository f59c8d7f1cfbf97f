use serde::Serialize;

use super::compare::TIME_FLOOR_MS;
use super::{run_resolved, BenchError, RunOptions, ScenarioSpec};
use crate::fabric::Mode;

/// Length of the steady-state window at the end of a run.
pub const STEADY_WINDOW_MS: u64 = 30_000;
/// Longest tolerated startup stutter: three heartbeat periods, after which
/// health monitors start declaring components dead.
pub const STABLE_STUTTER_MS: f64 = 3_000.0;
/// Allowed steady-state latency relative to the one-robot baseline.
pub const LATENCY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stability {
    pub robots: usize,
    pub mode: Mode,
    pub wifi_kbps: Option<f64>,
    pub all_started: bool,
    pub stutter_ms: f64,
    pub median_latency_ms: f64,
    pub baseline_latency_ms: f64,
    pub heartbeats_dropped: u64,
    pub stable: bool,
}

fn wifi_kbps(spec: &ScenarioSpec) -> Option<f64> {
    match &spec.topology {
        super::TopologySource::Fleet(f) => Some(f.wifi_kbps),
        _ => None,
    }
}

/// Runs `spec` with `robots` copies of its first robot and judges the run
/// against `baseline_latency_ms` (the one-robot median; `None` measures it).
pub fn stability(
    spec: &ScenarioSpec,
    mode: Mode,
    robots: usize,
    seed: u64,
    baseline_latency_ms: Option<f64>,
) -> Result<Stability, BenchError> {
    let scaled = spec.with_robot_count(robots);
    let run = run_resolved(&scaled.resolve()?, mode, seed, RunOptions { traces: false })?;
    let g = &run.metrics.global;
    let latency = run.steady.median_latency_ms;
    let baseline = match baseline_latency_ms {
        Some(b) => b,
        None if robots == 1 => latency,
        None => stability(spec, mode, 1, seed, None)?.median_latency_ms,
    };
    let stable = g.all_started()
        && g.stutter_ms <= STABLE_STUTTER_MS
        && latency <= LATENCY_FACTOR * baseline.max(TIME_FLOOR_MS)
        && run.steady.heartbeats_dropped == 0;
    Ok(Stability {
        robots,
        mode,
        wifi_kbps: wifi_kbps(spec),
        all_started: g.all_started(),
        stutter_ms: g.stutter_ms,
        median_latency_ms: latency,
        baseline_latency_ms: baseline,
        heartbeats_dropped: run.steady.heartbeats_dropped,
        stable,
    })
}

/// Largest N such that every fleet of 1..=N robots is stable, searched up to
/// `max_robots`. Returns the count and every evaluated point.
pub fn max_stable_count(
    spec: &ScenarioSpec,
    mode: Mode,
    max_robots: usize,
    seed: u64,
) -> Result<(usize, Vec<Stability>), BenchError> {
    let base = stability(spec, mode, 1, seed, None)?;
    let baseline = base.median_latency_ms;
    if !base.stable {
        return Ok((0, vec![base]));
    }
    let mut points = vec![base];
    let mut count = 1;
    for n in 2..=max_robots {
        let s = stability(spec, mode, n, seed, Some(baseline))?;
        let ok = s.stable;
        points.push(s);
        if !ok {
            break;
        }
        count = n;
    }
    Ok((count, points))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub wifi_kbps: f64,
    pub full_mesh: usize,
    pub routed: usize,
}

/// Max stable count of both regimes at each radio bandwidth cap.
pub fn capacity_sweep(
    spec: &ScenarioSpec,
    caps_kbps: &[f64],
    max_robots: usize,
    seed: u64,
) -> Result<Vec<CapacityPoint>, BenchError> {
    let jobs: Vec<(f64, Mode)> = caps_kbps
        .iter()
        .flat_map(|&c| [Mode::FullMesh, Mode::Routed].map(|m| (c, m)))
        .collect();
    let counts: Vec<Result<usize, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(cap, mode)| {
                let s = spec.with_wifi_kbps(cap);
                scope.spawn(move || max_stable_count(&s, mode, max_robots, seed).map(|(n, _)| n))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stability run panicked"))
            .collect()
    });
    let mut out = Vec::new();
    for (i, &cap) in caps_kbps.iter().enumerate() {
        let full_mesh = match &counts[2 * i] {
            Ok(n) => *n,
            Err(e) => {
                return Err(BenchError::Resolve {
                    scenario: spec.name.clone(),
                    message: e.to_string(),
                })
            }
        };
        let routed = match &counts[2 * i + 1] {
            Ok(n) => *n,
            Err(e) => {
                return Err(BenchError::Resolve {
                    scenario: spec.name.clone(),
                    message: e.to_string(),
                })
            }
        };
        out.push(CapacityPoint {
            wifi_kbps: cap,
            full_mesh,
            routed,
        });
    }
    Ok(out)
}
