use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{digest, ChatRequest, ChatResponse, GatewayError};

const MANIFEST: &str = "manifest.json";

/// One recorded exchange, stored as `<dir>/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub request: serde_json::Value,
    pub response: ChatResponse,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    model_id: Option<String>,
}

/// Directory of recorded responses keyed by request digest.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        Ok(FixtureStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<FixtureRecord>, GatewayError> {
        let path = self.path_for(digest);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Fixture(e.to_string())),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).exists()
    }

    /// Writes the record atomically (temp file then rename).
    pub fn save(&self, request: &ChatRequest, response: &ChatResponse) -> Result<String, GatewayError> {
        let key = digest(request);
        let record = FixtureRecord {
            digest: key.clone(),
            request: request.canonical_value(),
            response: response.clone(),
        };
        let body = serde_json::to_vec_pretty(&record).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        write_atomic(&self.dir, &self.path_for(&key), &body)?;
        if self.model_id().is_none() {
            self.set_model_id(&request.model_id)?;
        }
        Ok(key)
    }

    /// Model id the fixtures were recorded with, if known.
    pub fn model_id(&self) -> Option<String> {
        let bytes = std::fs::read(self.dir.join(MANIFEST)).ok()?;
        serde_json::from_slice::<Manifest>(&bytes).ok()?.model_id
    }

    pub fn set_model_id(&self, model_id: &str) -> Result<(), GatewayError> {
        let body = serde_json::to_vec_pretty(&Manifest {
            model_id: Some(model_id.to_string()),
        })
        .map_err(|e| GatewayError::Fixture(e.to_string()))?;
        write_atomic(&self.dir, &self.dir.join(MANIFEST), &body)
    }

    /// Digests of every recorded fixture, sorted.
    pub fn digests(&self) -> Result<Vec<String>, GatewayError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.dir).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(stem) = name.strip_suffix(".json") {
                if stem.len() == 64 && stem.chars().all(|c| c.is_ascii_hexdigit()) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

fn write_atomic(dir: &Path, target: &Path, body: &[u8]) -> Result<(), GatewayError> {
    let err = |e: std::io::Error| GatewayError::Fixture(e.to_string());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(body).map_err(err)?;
    tmp.persist(target).map_err(|e| err(e.error))?;
    Ok(())
}
