use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hash_path, resolve_order, Action, BuildError, TaskSpec};
use crate::assembly::{emit_generated, AssemblySpec, ModuleRegistry};

/// Where `build` persists its report, relative to the workspace root.
pub const REPORT_PATH: &str = "generated/build-report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub task: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    /// In execution order, which is a topological order.
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Option<Failure>,
    /// Content hash of every task input and output present after the run.
    pub fingerprints: BTreeMap<String, String>,
}

impl BuildReport {
    pub fn succeeded(&self) -> bool {
        self.failed.is_none()
    }

    pub fn load(workspace: &Path) -> Result<Option<Self>, BuildError> {
        let path = workspace.join(REPORT_PATH);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| BuildError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BuildError::Io {
                path: path.display().to_string(),
                source: e,
            }),
        }
    }

    pub fn save(&self, workspace: &Path) -> Result<(), BuildError> {
        let path = workspace.join(REPORT_PATH);
        let io = |e| BuildError::Io {
            path: path.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(path.parent().expect("report has a parent")).map_err(io)?;
        std::fs::write(
            &path,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
        .map_err(io)
    }
}

/// Carries out one task's action.
pub trait TaskRunner {
    fn run(&mut self, task: &TaskSpec, workspace: &Path) -> Result<(), String>;
}

/// Runs tasks whose inputs changed, whose outputs are missing, or whose
/// dependencies ran; skips the rest. Stops at the first failure.
pub fn execute(
    tasks: &[TaskSpec],
    prior: Option<&BuildReport>,
    workspace: &Path,
    runner: &mut dyn TaskRunner,
) -> Result<BuildReport, BuildError> {
    let order = resolve_order(tasks)?;
    let by_id: BTreeMap<&str, &TaskSpec> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let seen: BTreeSet<&str> = prior
        .map(|p| {
            p.executed
                .iter()
                .chain(&p.skipped)
                .map(String::as_str)
                .collect()
        })
        .unwrap_or_default();
    let mut report = BuildReport::default();
    let mut ran: BTreeSet<&str> = BTreeSet::new();
    for id in &order {
        let task = by_id[id.as_str()];
        let stale = match prior {
            None => true,
            Some(p) => {
                !seen.contains(id.as_str())
                    || task.deps.iter().any(|d| ran.contains(d.as_str()))
                    || inputs_changed(task, p, workspace)?
                    || task.outputs.iter().any(|o| !workspace.join(o).exists())
            }
        };
        if !stale {
            report.skipped.push(id.clone());
            continue;
        }
        if let Err(reason) = runner.run(task, workspace) {
            report.failed = Some(Failure {
                task: id.clone(),
                reason,
            });
            break;
        }
        ran.insert(id);
        report.executed.push(id.clone());
    }
    for path in tasks.iter().flat_map(|t| t.inputs.iter().chain(&t.outputs)) {
        if let Some(h) = hash_path(&workspace.join(path))? {
            report.fingerprints.insert(path.clone(), h);
        }
    }
    Ok(report)
}

fn inputs_changed(
    task: &TaskSpec,
    prior: &BuildReport,
    workspace: &Path,
) -> Result<bool, BuildError> {
    for input in &task.inputs {
        if hash_path(&workspace.join(input))?.as_ref() != prior.fingerprints.get(input) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Interprets [`Action`]s against the filesystem.
#[derive(Debug, Default)]
pub struct FsRunner;

impl TaskRunner for FsRunner {
    fn run(&mut self, task: &TaskSpec, workspace: &Path) -> Result<(), String> {
        let read = |p: &String| std::fs::read(workspace.join(p)).map_err(|e| format!("{p}: {e}"));
        let write = |p: &String, bytes: &[u8]| {
            let path = workspace.join(p);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| format!("{p}: {e}"))?;
            }
            std::fs::write(&path, bytes).map_err(|e| format!("{p}: {e}"))
        };
        match &task.action {
            Action::Concat => {
                let mut out = Vec::new();
                for i in &task.inputs {
                    out.extend(read(i)?);
                }
                for o in &task.outputs {
                    write(o, &out)?;
                }
            }
            Action::Digest => {
                let mut out = String::new();
                for i in &task.inputs {
                    let h = hash_path(&workspace.join(i))
                        .map_err(|e| e.to_string())?
                        .ok_or(format!("{i}: missing"))?;
                    out.push_str(&format!("{h}  {i}\n"));
                }
                for o in &task.outputs {
                    write(o, out.as_bytes())?;
                }
            }
            Action::Write { text } => {
                for o in &task.outputs {
                    write(o, text.as_bytes())?;
                }
            }
            Action::Assemble {
                assembly,
                modules,
                out,
            } => {
                let registry = ModuleRegistry::load_dir(&workspace.join(modules))
                    .map_err(|e| e.to_string())?;
                let text =
                    String::from_utf8(read(assembly)?).map_err(|e| format!("{assembly}: {e}"))?;
                let spec =
                    AssemblySpec::from_json(&text).map_err(|e| format!("{assembly}: {e}"))?;
                emit_generated(&spec, &registry, &workspace.join(out))
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

/// Records which tasks ran and writes each output with the task id, so
/// tests can drive [`execute`] without real actions.
#[derive(Debug, Default)]
pub struct RecordingRunner {
    pub ran: Vec<String>,
    pub fail: BTreeSet<String>,
}

impl TaskRunner for RecordingRunner {
    fn run(&mut self, task: &TaskSpec, workspace: &Path) -> Result<(), String> {
        self.ran.push(task.id.clone());
        if self.fail.contains(&task.id) {
            return Err("scripted failure".into());
        }
        for o in &task.outputs {
            let path = workspace.join(o);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            }
            std::fs::write(path, task.id.as_bytes()).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}
