//! On-disk layout: `service.json` for microtask bookkeeping and one
//! directory per session holding `session.json`, the uploaded image and,
//! once finished, the result artifacts. Every write goes to a temporary file
//! that is then renamed over the target.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ServiceError, ServiceResult};

pub const SERVICE_FILE: &str = "service.json";
pub const SESSION_FILE: &str = "session.json";
pub const INPUT_FILE: &str = "input.img";
pub const RESULT_PNG: &str = "result.png";
pub const PARAMS_CSV: &str = "params.csv";
pub const TRACE_CSV: &str = "trace.csv";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> ServiceResult<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn session_file(&self, id: &str, name: &str) -> PathBuf {
        self.session_dir(id).join(name)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> ServiceResult<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(write_atomic(path, &bytes)?)
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> ServiceResult<T> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::Storage(format!("corrupt state file {}: {e}", path.display())))
    }

    pub fn write_session_file(&self, id: &str, name: &str, bytes: &[u8]) -> ServiceResult<()> {
        fs::create_dir_all(self.session_dir(id))?;
        Ok(write_atomic(&self.session_file(id, name), bytes)?)
    }

    pub fn read_session_file(&self, id: &str, name: &str) -> ServiceResult<Vec<u8>> {
        Ok(fs::read(self.session_file(id, name))?)
    }

    /// Session ids with a state file, sorted.
    pub fn session_ids(&self) -> ServiceResult<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let entry = entry?;
            if entry.path().join(SESSION_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
