//! Run-stamped output directories and their manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use cmgnn_core::harness::TrainingConfig;
use serde_json::json;

pub const GIT_DESCRIBE: &str = env!("CMGNN_GIT_DESCRIBE");

/// Output directory of one command invocation.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    outputs: Vec<String>,
}

impl RunDir {
    /// `out` when given, otherwise a fresh `<workdir>/<command>-<unix>-<hash>`.
    pub fn create(workdir: &Path, out: Option<&Path>, command: &str, cfg: &TrainingConfig) -> Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let secs = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                let base = format!("{command}-{secs}-{}", cfg.hash());
                let mut candidate = workdir.join(&base);
                let mut k = 2;
                while candidate.exists() {
                    candidate = workdir.join(format!("{base}-{k}"));
                    k += 1;
                }
                candidate
            }
        };
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path,
            command: command.to_string(),
            outputs: Vec::new(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records `name` as an output written by the caller.
    pub fn record(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.file(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.record(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes `config.txt` and `manifest.json`.
    pub fn finish(mut self, cfg: &TrainingConfig, extra: serde_json::Value) -> Result<PathBuf> {
        self.write("config.txt", &cfg.render())?;
        let manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "git_describe": GIT_DESCRIBE,
            "config_hash": cfg.hash(),
            "config": cfg.render(),
            "outputs": self.outputs,
            "details": extra,
        });
        let path = self.file("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.path)
    }
}
