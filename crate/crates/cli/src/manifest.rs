//! Run manifest: the resolved configuration plus every file the command
//! produced, written as `manifest.json` under the output directory.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;

pub struct Manifest {
    command: &'static str,
    config: serde_json::Value,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Self {
        Manifest {
            command,
            config: cfg.resolved_json(),
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("manifest.json");
        self.outputs.sort();
        let doc = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "outputs": self.outputs,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
        Ok(path)
    }
}
