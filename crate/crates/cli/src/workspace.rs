//! Artifact directory. File names carry a hash of everything that determines
//! their content, so identical runs land on identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const REGISTRY_FILE: &str = "registry.json";

pub fn content_hash(key: &serde_json::Value) -> String {
    hex::encode(&Sha256::digest(key.to_string().as_bytes())[..8])
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file's bytes, for keys that depend on an input file.
pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    Ok(bytes_hash(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    /// Path relative to the workspace root.
    pub classifier: String,
    pub target: String,
}

pub type Registry = BTreeMap<String, RegistryEntry>;

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| {
            CliError::user(format!("cannot create workspace {}: {e}", root.display()))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn artifact_path(&self, kind: &str, ext: &str, key: &serde_json::Value) -> PathBuf {
        self.root
            .join(format!("{kind}-{}.{ext}", content_hash(key)))
    }

    /// Writes through a temporary file so readers never see a partial file.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    pub fn load_registry(&self) -> Result<Registry, CliError> {
        let path = self.root.join(REGISTRY_FILE);
        if !path.exists() {
            return Ok(Registry::new());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }

    pub fn save_registry(&self, registry: &Registry) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(registry)
            .map_err(|e| CliError::internal(e.to_string()))?;
        text.push('\n');
        self.write(&self.root.join(REGISTRY_FILE), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn names_depend_only_on_key() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let a = ws.artifact_path("dataset", "jsonl", &json!({"seed": 1, "count": 4}));
        let b = ws.artifact_path("dataset", "jsonl", &json!({"count": 4, "seed": 1}));
        let c = ws.artifact_path("dataset", "jsonl", &json!({"count": 4, "seed": 2}));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(ws.relative(&a).starts_with("dataset-"));
    }

    #[test]
    fn registry_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(&dir.path().join("nested")).unwrap();
        assert!(ws.load_registry().unwrap().is_empty());
        let mut r = Registry::new();
        r.insert(
            "positive".into(),
            RegistryEntry {
                classifier: "classifier-00.json".into(),
                target: "positive".into(),
            },
        );
        ws.save_registry(&r).unwrap();
        assert_eq!(ws.load_registry().unwrap(), r);
    }
}
