//! Orchestrator stages one and two: pinned sources and an incremental,
//! offline task graph.

mod exec;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use exec::{execute, BuildReport, FsRunner, RecordingRunner, TaskRunner, REPORT_PATH};
pub use manifest::{
    hash_path, verify_manifest, EntryStatus, Manifest, ManifestEntry, VerificationReport,
    HASH_HEX_LEN,
};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("cannot read workspace {path}: {message}")]
    UnreadableWorkspace { path: String, message: String },
    #[error("dependency cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("task `{task}` depends on unknown task `{dep}`")]
    UnknownDependency { task: String, dep: String },
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// What a task does, interpreted by a [`TaskRunner`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Concatenate every input file into the single output.
    Concat,
    /// Write the content hash of every input, one per line.
    Digest,
    /// Write fixed text into every output.
    Write { text: String },
    /// Run the robot assembler: `assembly` document against the `modules`
    /// directory, into `out`.
    Assemble {
        assembly: String,
        modules: String,
        out: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    #[serde(default)]
    pub deps: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub action: Action,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, action: Action) -> Self {
        TaskSpec {
            id: id.into(),
            deps: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            action,
        }
    }

    pub fn dep(mut self, id: &str) -> Self {
        self.deps.push(id.to_owned());
        self
    }

    pub fn input(mut self, path: &str) -> Self {
        self.inputs.push(path.to_owned());
        self
    }

    pub fn output(mut self, path: &str) -> Self {
        self.outputs.push(path.to_owned());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub tasks: Vec<TaskSpec>,
}

impl TaskFile {
    pub fn load(path: &std::path::Path) -> Result<Vec<TaskSpec>, BuildError> {
        let text = std::fs::read_to_string(path).map_err(|e| BuildError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let file: TaskFile = serde_json::from_str(&text).map_err(|e| BuildError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(file.tasks)
    }
}

/// Kahn's algorithm; among ready tasks the lexicographically smallest id
/// goes first.
pub fn resolve_order(tasks: &[TaskSpec]) -> Result<Vec<String>, BuildError> {
    let mut ids = BTreeSet::new();
    for t in tasks {
        if !ids.insert(t.id.as_str()) {
            return Err(BuildError::DuplicateTask(t.id.clone()));
        }
    }
    let mut pending: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for t in tasks {
        let deps: BTreeSet<&str> = t.deps.iter().map(String::as_str).collect();
        for d in &deps {
            if !ids.contains(d) {
                return Err(BuildError::UnknownDependency {
                    task: t.id.clone(),
                    dep: (*d).to_owned(),
                });
            }
            dependents.entry(d).or_default().push(&t.id);
        }
        pending.insert(&t.id, deps.len());
    }
    let mut ready: BTreeSet<&str> = pending
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(t, _)| *t)
        .collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(t) = ready.pop_first() {
        order.push(t.to_owned());
        for d in dependents.get(t).into_iter().flatten() {
            let n = pending.get_mut(d).expect("known task");
            *n -= 1;
            if *n == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < tasks.len() {
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        return Err(BuildError::CycleDetected(find_cycle(tasks, &done)));
    }
    Ok(order)
}

/// Every unresolved task has an unresolved dep, so walking deps from any
/// of them must revisit a task.
fn find_cycle(tasks: &[TaskSpec], done: &BTreeSet<&str>) -> Vec<String> {
    let by_id: BTreeMap<&str, &TaskSpec> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut path: Vec<&str> = Vec::new();
    let mut cur = tasks
        .iter()
        .map(|t| t.id.as_str())
        .filter(|t| !done.contains(t))
        .min()
        .expect("stuck task");
    loop {
        if let Some(pos) = path.iter().position(|t| *t == cur) {
            let mut cycle: Vec<String> = path[pos..].iter().map(|t| (*t).to_owned()).collect();
            cycle.sort();
            return cycle;
        }
        path.push(cur);
        cur = by_id[cur]
            .deps
            .iter()
            .map(String::as_str)
            .filter(|d| !done.contains(d))
            .min()
            .expect("stuck dep");
    }
}
