//! Artifact directory with content-hashed stage keys.
//!
//! A stage's key is the SHA-256 of its name, the config schema version, its
//! config subsection (as JSON) and the bytes of every input artifact. Keys
//! live in `<out>/.cache/<stage>.key`; a stage whose stored key matches and
//! whose outputs all exist is skipped.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn open(dir: &Path) -> Result<Self> {
        if dir.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("output directory path is empty".into()));
        }
        std::fs::create_dir_all(dir.join(".cache")).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn read_bytes(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                name: name.to_string(),
                path,
            });
        }
        std::fs::read(&path).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(&self, name: &str) -> Result<String> {
        String::from_utf8(self.read_bytes(name)?).map_err(|e| Error::Serde(format!("{name}: {e}")))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(&self.read_bytes(name)?).map_err(|e| Error::Serde(format!("{name}: {e}")))
    }

    pub fn write_text(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.write_text(name, &serde_json::to_string(value)?)
    }

    fn key_path(&self, stage: &str) -> PathBuf {
        self.dir.join(".cache").join(format!("{stage}.key"))
    }

    /// Key over the stage name, its config subsection and its inputs.
    /// Errors name the first missing input.
    pub fn stage_key<C: Serialize>(&self, stage: &str, section: &C, inputs: &[&str]) -> Result<String> {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(stage.as_bytes());
        field(&super::CONFIG_VERSION.to_le_bytes());
        field(serde_json::to_string(section)?.as_bytes());
        for name in inputs {
            field(name.as_bytes());
            field(&Sha256::digest(self.read_bytes(name)?));
        }
        Ok(hex(&h.finalize()))
    }

    /// Stored key matches and every output exists.
    pub fn is_fresh(&self, stage: &str, key: &str, outputs: &[&str]) -> bool {
        std::fs::read_to_string(self.key_path(stage)).is_ok_and(|k| k.trim() == key)
            && outputs.iter().all(|o| self.exists(o))
    }

    pub fn record(&self, stage: &str, key: &str) -> Result<()> {
        let path = self.key_path(stage);
        std::fs::write(&path, key).map_err(|e| Error::io(path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
