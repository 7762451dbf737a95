//! Run manifest: which resolved config produced an output directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::output::write_json;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the stored `config.json`, hex encoded.
    pub config_digest: String,
    pub seed: u64,
    pub timestamp: String,
    pub tool_version: String,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stores the resolved config next to the results and a manifest pointing
/// at it.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let text = cfg.to_canonical_json();
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, &text).map_err(|e| CliError::io(&cfg_path, e))?;
    let manifest = RunManifest {
        command: command.into(),
        config_digest: digest(text.as_bytes()),
        seed: cfg.seed,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Recomputes the digest of the stored config and compares it with the
/// manifest.
pub fn verify_manifest(dir: &Path) -> Result<bool, CliError> {
    let m_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&m_path).map_err(|e| CliError::io(&m_path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Run(format!("bad manifest {}: {e}", m_path.display())))?;
    let c_path = dir.join(CONFIG_FILE);
    let cfg = fs::read(&c_path).map_err(|e| CliError::io(&c_path, e))?;
    Ok(digest(&cfg) == manifest.config_digest)
}
