use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::BuildError;

/// Hex length of a SHA-256 digest.
pub const HASH_HEX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Directory (or file) relative to the workspace root.
    pub source: String,
    pub hash: String,
}

/// Pinned content per component.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path).map_err(|e| BuildError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| BuildError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (name, e) in &m.entries {
            if e.hash.len() != HASH_HEX_LEN || !e.hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(BuildError::Parse {
                    path: path.display().to_string(),
                    message: format!("entry `{name}`: hash must be {HASH_HEX_LEN} hex digits"),
                });
            }
        }
        Ok(m)
    }

    /// Pins every entry to what is currently on disk.
    pub fn pin(
        workspace: &Path,
        sources: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, BuildError> {
        let mut entries = BTreeMap::new();
        for (name, source) in sources {
            let hash = hash_path(&workspace.join(&source))?.ok_or_else(|| {
                BuildError::UnreadableWorkspace {
                    path: source.clone(),
                    message: "missing".into(),
                }
            })?;
            entries.insert(name, ManifestEntry { source, hash });
        }
        Ok(Manifest { entries })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EntryStatus {
    Match,
    Mismatch { actual: String },
    Missing,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: BTreeMap<String, EntryStatus>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.entries.values().all(|s| *s == EntryStatus::Match)
    }
}

/// SHA-256 over a file's bytes, or over a directory's sorted
/// `(relative path, file hash)` listing. `None` when the path is absent.
pub fn hash_path(path: &Path) -> Result<Option<String>, BuildError> {
    let io = |e: std::io::Error| BuildError::UnreadableWorkspace {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let meta = match std::fs::metadata(path) {
        Ok(m) => m,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io(e)),
    };
    if meta.is_file() {
        return Ok(Some(hex::encode(Sha256::digest(
            std::fs::read(path).map_err(io)?,
        ))));
    }
    let mut tree = Sha256::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| BuildError::UnreadableWorkspace {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(path)
            .expect("walk stays under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let file = Sha256::digest(std::fs::read(entry.path()).map_err(io)?);
        tree.update(rel.as_bytes());
        tree.update([0]);
        tree.update(hex::encode(file).as_bytes());
        tree.update(b"\n");
    }
    Ok(Some(hex::encode(tree.finalize())))
}

pub fn verify_manifest(
    manifest: &Manifest,
    workspace: &Path,
) -> Result<VerificationReport, BuildError> {
    std::fs::read_dir(workspace).map_err(|e| BuildError::UnreadableWorkspace {
        path: workspace.display().to_string(),
        message: e.to_string(),
    })?;
    let mut entries = BTreeMap::new();
    for (name, e) in &manifest.entries {
        let status = match hash_path(&workspace.join(&e.source))? {
            None => EntryStatus::Missing,
            Some(h) if h == e.hash => EntryStatus::Match,
            Some(actual) => EntryStatus::Mismatch { actual },
        };
        entries.insert(name.clone(), status);
    }
    Ok(VerificationReport { entries })
}
