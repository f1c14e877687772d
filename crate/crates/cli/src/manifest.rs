use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: Option<serde_json::Value>,
    pub dataset_fingerprint: Option<String>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(args: &[String], out: &Path) -> Self {
        Self {
            command: args.first().cloned().unwrap_or_default(),
            args: args.to_vec(),
            config: None,
            dataset_fingerprint: None,
            seeds: Vec::new(),
            output_dir: out.display().to_string(),
            version: env!("IGREC_VERSION").to_string(),
        }
    }

    pub fn with_config(mut self, config: &igrec::config::TrainConfig) -> Self {
        self.config = Some(serde_json::to_value(config).expect("config serialises"));
        self
    }

    pub fn with_dataset(mut self, ds: &igrec::data::Dataset) -> Self {
        self.dataset_fingerprint = Some(ds.fingerprint());
        self
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = seeds.to_vec();
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The recorded arguments with every output directory replaced by `out`.
    pub fn args_with_out(&self, out: &Path) -> Vec<String> {
        let out = out.display().to_string();
        let mut args = Vec::with_capacity(self.args.len());
        let mut it = self.args.iter();
        while let Some(a) = it.next() {
            if a == "--out" {
                args.push(a.clone());
                args.push(out.clone());
                it.next();
            } else if a.starts_with("--out=") {
                args.push(format!("--out={out}"));
            } else {
                args.push(a.clone());
            }
        }
        args
    }
}
