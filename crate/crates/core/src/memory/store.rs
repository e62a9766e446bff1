//! Persisted memory documents, keyed by the manifest's content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MemoryError, NarrativeMemory};
use crate::prompts::TEMPLATE_VERSION;

pub const MEMORY_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDocument {
    pub schema_version: String,
    pub template_version: String,
    pub manifest_hash: String,
    pub memory: NarrativeMemory,
}

pub fn memory_path(dir: &Path, source_id: &str) -> PathBuf {
    dir.join(format!("{source_id}.memory.json"))
}

fn store_err(path: &Path, message: impl ToString) -> MemoryError {
    MemoryError::Store {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Writes the document via a temporary file so readers never see a partial write.
pub fn save_memory(path: &Path, manifest_hash: &str, memory: &NarrativeMemory) -> Result<(), MemoryError> {
    let doc = MemoryDocument {
        schema_version: MEMORY_SCHEMA_VERSION.into(),
        template_version: TEMPLATE_VERSION.into(),
        manifest_hash: manifest_hash.into(),
        memory: memory.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("memory serializes");
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| store_err(path, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| store_err(path, e))?;
    std::fs::rename(&tmp, path).map_err(|e| store_err(path, e))?;
    Ok(())
}

/// Loads a persisted memory if it exists and was built from the same
/// manifest content with the current templates. Stale documents yield `None`.
pub fn load_memory(path: &Path, manifest_hash: &str) -> Result<Option<NarrativeMemory>, MemoryError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(store_err(path, e)),
    };
    let doc: MemoryDocument = serde_json::from_str(&text).map_err(|e| store_err(path, e))?;
    if doc.schema_version != MEMORY_SCHEMA_VERSION {
        return Err(store_err(path, format!("unsupported schema version {}", doc.schema_version)));
    }
    if doc.manifest_hash != manifest_hash || doc.template_version != TEMPLATE_VERSION {
        return Ok(None);
    }
    doc.memory
        .check()
        .map_err(|m| MemoryError::Inconsistent(doc.memory.source_id.clone(), m))?;
    Ok(Some(doc.memory))
}
