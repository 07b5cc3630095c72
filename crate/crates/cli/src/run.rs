//! Run directories: every output of one command under one folder named by
//! verb, UTC timestamp and config hash.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::config::Config;

pub struct RunDir {
    pub path: PathBuf,
    started: String,
}

impl RunDir {
    /// Creates the directory and writes the effective `config.toml`.
    pub fn create(
        root: &Path,
        explicit: Option<&Path>,
        verb: &str,
        cfg: &Config,
    ) -> Result<RunDir> {
        let now = Utc::now();
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => root.join(format!(
                "{verb}-{}-{}",
                now.format("%Y%m%dT%H%M%SZ"),
                cfg.hash()
            )),
        };
        std::fs::create_dir_all(&path)
            .with_context(|| format!("creating run directory {}", path.display()))?;
        let dir = RunDir {
            path,
            started: now.to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        dir.write("config.toml", cfg.to_toml())?;
        Ok(dir)
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Wall-clock facts live in their own file so every other output is
    /// reproducible byte for byte.
    pub fn finish(&self, elapsed: Duration) -> Result<()> {
        self.write_json(
            "timing.json",
            &serde_json::json!({
                "started": self.started,
                "finished": Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
                "seconds": elapsed.as_secs_f64(),
            }),
        )
    }
}
