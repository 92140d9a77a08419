//! Run directories and report files.
//!
//! A run directory is named by a hash of the resolved config, so identical
//! configs land in the same place. Markdown reports start with a single
//! timestamp header line; everything after it (the body) is deterministic
//! for a fixed config and seed. CSV artifacts carry no timestamp at all.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub struct RunDir {
    pub path: PathBuf,
    pub config_hash: String,
}

impl RunDir {
    /// Create (or reuse) the run directory for a config.
    pub fn create(cfg: &Config) -> Result<RunDir, CliError> {
        let resolved = cfg.to_toml();
        let hash = config_hash(&resolved);
        let path = Path::new(&cfg.output.dir).join(&hash);
        std::fs::create_dir_all(&path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        std::fs::write(path.join("config.toml"), &resolved)
            .map_err(|e| CliError::Runtime(format!("cannot write config: {e}")))?;
        Ok(RunDir {
            path,
            config_hash: hash,
        })
    }

    /// Write a markdown report: one timestamp header line, then the body.
    pub fn write_markdown(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let path = self.path.join(name);
        let text = format!("<!-- generated at unix {stamp} -->\n{body}");
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Write a timestamp-free artifact (CSV, checkpoint).
    pub fn write_plain(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path.join(name);
        std::fs::write(&path, body)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

pub fn config_hash(resolved_toml: &str) -> String {
    let digest = Sha256::digest(resolved_toml.as_bytes());
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// The part of a markdown report that must be byte-identical across runs
/// with the same config and seed (everything past the timestamp line).
pub fn report_body(text: &str) -> &str {
    match text.split_once('\n') {
        Some((first, rest)) if first.starts_with("<!-- generated at unix") => rest,
        _ => text,
    }
}

/// Config block embedded at the end of every markdown report.
pub fn config_footer(cfg: &Config) -> String {
    format!("\n## Resolved config\n\n```toml\n{}```\n", cfg.to_toml())
}
