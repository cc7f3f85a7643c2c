//! Run manifests: a JSON sidecar written next to every output file, carrying
//! the full parameter set so a run can be reproduced bit-exactly. Only the
//! `duration_seconds` and `created_unix` fields may differ between reruns.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use curl_lab_core::textfmt::to_json_pretty;

pub struct Manifest {
    subcommand: &'static str,
    args: Map<String, Value>,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    started: std::time::Instant,
}

impl Manifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            args: Map::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            started: std::time::Instant::now(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Writes `<first output>.manifest.json`.
    pub fn write(&self) -> anyhow::Result<()> {
        let Some(primary) = self.outputs.first() else {
            return Ok(());
        };
        let path = manifest_path(primary);
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let value = json!({
            "tool": "curl-lab",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "args": Value::Object(self.args.clone()),
            "seeds": self.seeds,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "duration_seconds": self.started.elapsed().as_secs_f64(),
            "created_unix": created,
        });
        std::fs::write(path, to_json_pretty(&value))?;
        Ok(())
    }
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary_output.with_file_name(name)
}
