use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{run_resolved, BenchError, RunOptions, ScenarioRun, ScenarioSpec};
use crate::fabric::Mode;

/// Metrics reported as first-mode / second-mode ratios.
pub const RATIO_METRICS: [&str; 4] = [
    "startup_bytes",
    "startup_time_ms",
    "stutter_ms",
    "recovery_ms",
];
/// Time metrics below this are treated as this, so a zero stutter still gives a finite ratio.
pub const TIME_FLOOR_MS: f64 = 1.0;

const METRICS: [&str; 11] = [
    "startup_bytes",
    "startup_time_ms",
    "stutter_ms",
    "recovery_ms",
    "control_bytes",
    "data_bytes",
    "median_latency_ms",
    "peak_bandwidth_kbps",
    "avg_received_kbps",
    "messages_dropped",
    "components",
];

pub(crate) fn median_u64(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[values.len() / 2])
}

/// Median of `values`; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Headline values of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRun {
    pub mode: Mode,
    pub seed: u64,
    pub completed: bool,
    pub values: BTreeMap<String, f64>,
}

impl ModeRun {
    fn from_run(run: &ScenarioRun) -> Self {
        let g = &run.metrics.global;
        let peers: Vec<_> = run
            .metrics
            .nodes
            .iter()
            .filter(|n| n.bytes_sent > 0 || n.bytes_received > 0)
            .collect();
        let secs = (run.duration_ms as f64 / 1000.0).max(1e-9);
        let avg_rx = if peers.is_empty() {
            0.0
        } else {
            peers
                .iter()
                .map(|n| n.bytes_received as f64 * 8.0 / 1000.0 / secs)
                .sum::<f64>()
                / peers.len() as f64
        };
        let values: BTreeMap<String, f64> = [
            ("startup_bytes", g.startup_bytes as f64),
            ("startup_time_ms", g.startup_time_ms),
            ("stutter_ms", g.stutter_ms),
            ("recovery_ms", g.worst_recovery_ms().unwrap_or(0.0)),
            ("control_bytes", g.control_bytes as f64),
            ("data_bytes", g.data_bytes as f64),
            ("median_latency_ms", g.median_latency_ms),
            ("peak_bandwidth_kbps", g.peak_bandwidth_kbps),
            ("avg_received_kbps", avg_rx),
            ("messages_dropped", g.messages_dropped as f64),
            ("components", run.components.len() as f64),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        ModeRun {
            mode: run.mode,
            seed: run.seed,
            completed: g.all_started(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub ratio: String,
    pub min: f64,
    pub value: Option<f64>,
    pub passed: bool,
}

/// Both regimes over the same seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub modes: [Mode; 2],
    pub runs: Vec<[ModeRun; 2]>,
    /// Per-seed first/second ratios, for seeds where both runs completed.
    pub per_seed_ratios: BTreeMap<String, Vec<f64>>,
    /// Median of the per-seed ratios.
    pub ratios: BTreeMap<String, f64>,
    pub checks: Vec<RatioCheck>,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Metrics written as CSV: the scenario's metrics of interest, or all of them.
    pub fn metric_names(&self, spec: &ScenarioSpec) -> Vec<String> {
        if spec.metrics_of_interest.is_empty() {
            METRICS.iter().map(|m| (*m).to_owned()).collect()
        } else {
            spec.metrics_of_interest.clone()
        }
    }

    pub fn metric_csv(&self, metric: &str) -> String {
        let mut out = format!(
            "seed,{},{}\n",
            self.modes[0].as_str(),
            self.modes[1].as_str()
        );
        for [a, b] in &self.runs {
            let v = |r: &ModeRun| {
                r.values
                    .get(metric)
                    .map_or(String::new(), |v| format!("{v}"))
            };
            out.push_str(&format!("{},{},{}\n", a.seed, v(a), v(b)));
        }
        out
    }

    /// Writes `<metric>.csv` for each metric and `summary.json` under `dir`.
    pub fn write(&self, spec: &ScenarioSpec, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for m in self.metric_names(spec) {
            let path = dir.join(format!("{m}.csv"));
            std::fs::write(&path, self.metric_csv(&m))?;
            written.push(path);
        }
        let path = dir.join("summary.json");
        std::fs::write(&path, self.to_json())?;
        written.push(path);
        Ok(written)
    }
}

/// Runs `spec` in both regimes for every seed. Runs execute in parallel, one
/// network per run.
pub fn compare(spec: &ScenarioSpec, seeds: &[u64]) -> Result<ComparisonReport, BenchError> {
    compare_modes(spec, seeds, [Mode::FullMesh, Mode::Routed])
}

pub fn compare_modes(
    spec: &ScenarioSpec,
    seeds: &[u64],
    modes: [Mode; 2],
) -> Result<ComparisonReport, BenchError> {
    let resolved = spec.resolve()?;
    let jobs: Vec<(u64, Mode)> = seeds.iter().flat_map(|&s| modes.map(|m| (s, m))).collect();
    let results: Vec<Result<ScenarioRun, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(seed, mode)| {
                let r = &resolved;
                scope.spawn(move || run_resolved(r, mode, seed, RunOptions { traces: false }))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario run panicked"))
            .collect()
    });
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        summaries.push(ModeRun::from_run(&r?));
    }
    let mut runs = Vec::new();
    let mut it = summaries.into_iter();
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        runs.push([a, b]);
    }

    let mut per_seed_ratios: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in RATIO_METRICS {
        let floor = if m.ends_with("_ms") {
            TIME_FLOOR_MS
        } else {
            1.0
        };
        let values: Vec<f64> = runs
            .iter()
            .filter(|[a, b]| a.completed && b.completed)
            .map(|[a, b]| a.values[m].max(floor) / b.values[m].max(floor))
            .collect();
        per_seed_ratios.insert(m.to_owned(), values);
    }
    let ratios: BTreeMap<String, f64> = per_seed_ratios
        .iter()
        .filter_map(|(k, v)| median(v).map(|m| (k.clone(), m)))
        .collect();
    let checks: Vec<RatioCheck> = spec
        .expect
        .iter()
        .map(|e| {
            let value = ratios.get(&e.ratio).copied();
            RatioCheck {
                ratio: e.ratio.clone(),
                min: e.min,
                value,
                passed: value.is_some_and(|v| v >= e.min),
            }
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(ComparisonReport {
        scenario: spec.name.clone(),
        seeds: seeds.to_vec(),
        modes,
        runs,
        per_seed_ratios,
        ratios,
        checks,
        passed,
    })
}
