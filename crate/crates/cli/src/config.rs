use std::path::{Path, PathBuf};

use dvss::experiment::RunConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Reads a TOML (or `.json`) run config and resolves its relative paths.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    cfg.resolve_paths(&base);
    Ok(cfg)
}

/// SHA-256 of the canonical JSON form, ignoring the output path.
pub fn hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out = None;
    let canonical = serde_json::to_string(&c).expect("config serialises");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
